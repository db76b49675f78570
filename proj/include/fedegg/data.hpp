#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedegg/dataset.hpp"
#include "fedegg/errors.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/rng.hpp"

namespace fedegg {

// ---------------------------------------------------------------------------
// Synthetic data

/// Isotropic Gaussian class-conditionals N(mean_c, spread^2 I).
struct GaussianMixture {
    std::vector<ParamVector> means;
    double spread = 1.0;

    std::size_t num_classes() const noexcept { return means.size(); }
    std::size_t dim() const noexcept { return means.empty() ? 0 : means.front().size(); }

    /// Exactly n_per_class examples per class, class-major order.
    Dataset sample(std::size_t n_per_class, RngStream& rng) const {
        return sample_classes(std::vector<ParamVector>(means), n_per_class, rng);
    }

    /// Same spread, caller-supplied class means (label c draws around means[c]).
    Dataset sample_classes(const std::vector<ParamVector>& class_means, std::size_t n_per_class,
                           RngStream& rng) const {
        if (n_per_class == 0) throw DomainError("GaussianMixture::sample: n_per_class must be >= 1");
        const std::size_t d = class_means.front().size();
        std::vector<double> feats;
        std::vector<int> labels;
        feats.reserve(class_means.size() * n_per_class * d);
        labels.reserve(class_means.size() * n_per_class);
        for (std::size_t c = 0; c < class_means.size(); ++c) {
            for (std::size_t i = 0; i < n_per_class; ++i) {
                for (std::size_t j = 0; j < d; ++j) feats.push_back(class_means[c][j] + spread * rng.normal());
                labels.push_back(static_cast<int>(c));
            }
        }
        return Dataset(d, class_means.size(), std::move(feats), std::move(labels));
    }
};

/// Class means are N(0, I) draws with `shift` added to every coordinate. A
/// positive shift puts all classes in a common cone, mimicking nonnegative
/// image embeddings.
inline GaussianMixture draw_mixture(std::size_t k, std::size_t d, double spread, double shift, RngStream& rng) {
    if (k < 2) throw DomainError("draw_mixture: need k >= 2 classes");
    if (d < 1) throw DimensionError("draw_mixture: need d >= 1");
    if (!(spread >= 0.0)) throw DomainError("draw_mixture: spread must be >= 0");
    GaussianMixture gm;
    gm.spread = spread;
    gm.means.reserve(k);
    for (std::size_t c = 0; c < k; ++c) {
        ParamVector m(d);
        for (auto& v : m) v = rng.normal() + shift;
        gm.means.push_back(std::move(m));
    }
    return gm;
}

inline Dataset gen_gaussian_mixture(std::size_t k, std::size_t d, std::size_t n_per_class, double spread,
                                    double shift, RngStream& rng) {
    return draw_mixture(k, d, spread, shift, rng).sample(n_per_class, rng);
}

// ---------------------------------------------------------------------------
// Partitioning

/// Disjoint per-client index lists covering a dataset, with client weights p_k.
struct Partition {
    std::vector<std::vector<std::size_t>> client_indices;
    std::vector<double> weights;

    std::size_t num_clients() const noexcept { return client_indices.size(); }

    /// Throws unless the lists are an exact cover of {0..n-1} and weights sum to 1.
    void validate(std::size_t n) const {
        std::vector<char> seen(n, 0);
        std::size_t total = 0;
        for (const auto& idx : client_indices) {
            for (std::size_t i : idx) {
                if (i >= n) throw DomainError("Partition: index out of range");
                if (seen[i]) throw DomainError("Partition: index assigned twice");
                seen[i] = 1;
                ++total;
            }
        }
        if (total != n) throw DomainError("Partition: not every index is assigned");
        if (weights.size() != client_indices.size()) throw DomainError("Partition: weight count mismatch");
        double s = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw DomainError("Partition: negative weight");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-12) throw DomainError("Partition: weights do not sum to 1");
    }
};

namespace detail {

inline void finish_partition(Partition& p, std::size_t n) {
    p.weights.assign(p.client_indices.size(), 0.0);
    for (std::size_t k = 0; k < p.client_indices.size(); ++k) {
        std::sort(p.client_indices[k].begin(), p.client_indices[k].end());
        p.weights[k] = static_cast<double>(p.client_indices[k].size()) / static_cast<double>(n);
    }
}

/// Splits `total` into integer counts proportional to `shares` by largest
/// remainder; ties go to the lower index.
inline std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> shares) {
    std::vector<std::size_t> counts(shares.size());
    std::vector<double> rem(shares.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < shares.size(); ++i) {
        const double exact = static_cast<double>(total) * shares[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        rem[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    // floor() of rounded products can overshoot by one in pathological cases
    while (assigned > total) {
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    std::vector<std::size_t> order(shares.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
        ++counts[order[i]];
        ++assigned;
    }
    return counts;
}

}  // namespace detail

/// Per-class Dirichlet split: for every class c, q_c ~ Dir(alpha * 1_N) and the
/// class's (shuffled) examples are dealt to clients in largest-remainder
/// proportion to q_c. Any client left empty receives one example taken from
/// the currently largest client (lowest id on ties).
inline Partition dirichlet_partition(std::span<const int> labels, std::size_t num_clients, double alpha,
                                     RngStream& rng) {
    const std::size_t n = labels.size();
    if (num_clients < 1) throw DomainError("dirichlet_partition: need at least one client");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("dirichlet_partition: alpha must be > 0");
    if (num_clients > n) throw DomainError("dirichlet_partition: more clients than examples");

    int max_label = 0;
    for (int y : labels) {
        if (y < 0) throw DomainError("dirichlet_partition: negative label");
        max_label = std::max(max_label, y);
    }
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

    Partition p;
    p.client_indices.resize(num_clients);
    for (auto& members : by_class) {
        if (members.empty()) continue;
        rng.shuffle(std::span<std::size_t>(members));
        const auto shares = rng.dirichlet(alpha, num_clients);
        const auto counts = detail::largest_remainder(members.size(), shares);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < num_clients; ++k) {
            for (std::size_t j = 0; j < counts[k]; ++j) p.client_indices[k].push_back(members[pos++]);
        }
    }

    for (std::size_t k = 0; k < num_clients; ++k) {
        if (!p.client_indices[k].empty()) continue;
        std::size_t donor = 0;
        for (std::size_t j = 1; j < num_clients; ++j) {
            if (p.client_indices[j].size() > p.client_indices[donor].size()) donor = j;
        }
        p.client_indices[k].push_back(p.client_indices[donor].back());
        p.client_indices[donor].pop_back();
    }

    detail::finish_partition(p, n);
    return p;
}

/// Random permutation cut into N chunks whose sizes differ by at most one.
inline Partition iid_partition(std::size_t n, std::size_t num_clients, RngStream& rng) {
    if (num_clients < 1) throw DomainError("iid_partition: need at least one client");
    if (num_clients > n) throw DomainError("iid_partition: more clients than examples");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    Partition p;
    p.client_indices.resize(num_clients);
    const std::size_t base = n / num_clients;
    const std::size_t extra = n % num_clients;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
        const std::size_t len = base + (k < extra ? 1 : 0);
        p.client_indices[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                                   perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    detail::finish_partition(p, n);
    return p;
}

/// Largest single-class fraction of each client's examples.
inline std::vector<double> max_class_shares(const Partition& p, std::span<const int> labels, std::size_t k) {
    std::vector<double> out;
    out.reserve(p.num_clients());
    std::vector<std::size_t> hist(k);
    for (const auto& idx : p.client_indices) {
        std::fill(hist.begin(), hist.end(), 0);
        for (std::size_t i : idx) ++hist[static_cast<std::size_t>(labels[i])];
        const auto mx = *std::max_element(hist.begin(), hist.end());
        out.push_back(idx.empty() ? 0.0 : static_cast<double>(mx) / static_cast<double>(idx.size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Guiding-set construction

/// Fraction of guiding classes drawn from the clients' own class-conditionals.
/// LH = 1.0, MH = 0.5, HH = 0.0.
struct GuidingSetSpec {
    double overlap = 1.0;
    std::size_t per_class = 20;
    /// Displacement applied to the non-shared classes of a synthetic guiding set.
    double shift = 4.0;

    static double overlap_for(const std::string& level) {
        if (level == "LH") return 1.0;
        if (level == "MH") return 0.5;
        if (level == "HH") return 0.0;
        throw DomainError("unknown heterogeneity level '" + level + "' (expected LH, MH or HH)");
    }

    std::size_t shared_classes(std::size_t k) const {
        return static_cast<std::size_t>(std::lround(overlap * static_cast<double>(k)));
    }

    void validate() const {
        if (!(overlap >= 0.0 && overlap <= 1.0)) throw DomainError("GuidingSetSpec: overlap must lie in [0, 1]");
        if (per_class == 0) throw DomainError("GuidingSetSpec: per_class must be >= 1");
        if (!std::isfinite(shift)) throw DomainError("GuidingSetSpec: shift must be finite");
    }
};

/// Ranks candidates by their best cosine similarity to any client class mean,
/// descending; equal scores keep ascending candidate id. Returns the first top_k ids.
inline std::vector<std::size_t> select_similar_classes(std::span<const ParamVector> client_class_means,
                                                       std::span<const ParamVector> candidate_class_means,
                                                       std::size_t top_k) {
    if (top_k > candidate_class_means.size()) throw DomainError("select_similar_classes: top_k exceeds candidates");
    if (client_class_means.empty()) throw DomainError("select_similar_classes: no client classes");
    std::vector<double> score(candidate_class_means.size());
    for (std::size_t c = 0; c < candidate_class_means.size(); ++c) {
        double best = -2.0;
        for (const auto& m : client_class_means) best = std::max(best, cosine_similarity(candidate_class_means[c], m));
        score[c] = best;
    }
    std::vector<std::size_t> order(candidate_class_means.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    order.resize(top_k);
    return order;
}

/// Synthetic guiding set. Classes [0, s) with s = round(overlap * k) are drawn
/// from the clients' class-conditionals; the remaining classes are translated
/// by `shift` along a unit direction orthogonal to the mean of all class means.
inline Dataset build_guiding_set(const GuidingSetSpec& spec, const GaussianMixture& client_distribution,
                                 RngStream& rng) {
    spec.validate();
    const std::size_t k = client_distribution.num_classes();
    const std::size_t d = client_distribution.dim();
    const std::size_t shared = spec.shared_classes(k);

    ParamVector direction(d);
    if (shared < k) {
        const ParamVector centre = mean_vector(client_distribution.means);
        const double cn = norm(centre);
        for (int attempt = 0;; ++attempt) {
            for (auto& v : direction) v = rng.normal();
            if (cn > 0.0 && d > 1) direction.axpy(-dot(direction, centre) / (cn * cn), centre);
            const double nd = norm(direction);
            if (nd > 1e-8) {
                direction *= 1.0 / nd;
                break;
            }
            if (attempt > 100) throw DegenerateInputError("build_guiding_set: cannot pick a shift direction");
        }
    }

    std::vector<ParamVector> guide_means = client_distribution.means;
    for (std::size_t c = shared; c < k; ++c) guide_means[c].axpy(spec.shift, direction);
    return client_distribution.sample_classes(guide_means, spec.per_class, rng);
}

/// Guiding set drawn from a pool of candidate embeddings (e.g. a FEDF file).
/// The round(overlap * k) candidate classes most similar to the client class
/// means are taken first, the remainder from the least similar end. Each chosen
/// candidate class is relabelled to its most similar client class.
inline Dataset build_guiding_set(const GuidingSetSpec& spec, const Dataset& client_data, const Dataset& candidates,
                                 RngStream& rng) {
    spec.validate();
    require_same_dim(client_data.dim(), candidates.dim(), "build_guiding_set");
    const std::size_t k = client_data.num_classes();

    std::vector<ParamVector> client_means;
    std::vector<int> client_ids;
    {
        auto means = client_data.class_means();
        for (std::size_t c = 0; c < means.size(); ++c) {
            if (means[c].empty()) continue;
            client_means.push_back(std::move(means[c]));
            client_ids.push_back(static_cast<int>(c));
        }
    }
    const auto cand_means_all = candidates.class_means();
    std::vector<ParamVector> cand_means;
    std::vector<std::size_t> cand_ids;
    for (std::size_t c = 0; c < cand_means_all.size(); ++c) {
        if (cand_means_all[c].empty()) continue;
        cand_means.push_back(cand_means_all[c]);
        cand_ids.push_back(c);
    }
    if (cand_means.size() < k) throw DomainError("build_guiding_set: fewer candidate classes than client classes");

    const auto ranking = select_similar_classes(client_means, cand_means, cand_means.size());
    const std::size_t shared = spec.shared_classes(k);
    std::vector<std::size_t> chosen(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(shared));
    for (std::size_t i = 0; i < k - shared; ++i) chosen.push_back(ranking[ranking.size() - 1 - i]);

    std::vector<std::vector<std::size_t>> members(cand_means_all.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) members[static_cast<std::size_t>(candidates.label(i))].push_back(i);

    std::vector<double> feats;
    std::vector<int> labels;
    for (std::size_t pos : chosen) {
        const std::size_t cid = cand_ids[pos];
        const auto& pool = members[cid];
        if (spec.per_class > pool.size()) {
            throw DomainError("build_guiding_set: candidate class " + std::to_string(cid) + " has " +
                              std::to_string(pool.size()) + " examples, " + std::to_string(spec.per_class) +
                              " requested");
        }
        std::size_t best = 0;
        double best_cos = -2.0;
        for (std::size_t j = 0; j < client_means.size(); ++j) {
            const double cs = cosine_similarity(cand_means[pos], client_means[j]);
            if (cs > best_cos) {
                best_cos = cs;
                best = j;
            }
        }
        for (std::size_t pick : rng.sample_without_replacement(pool.size(), spec.per_class)) {
            auto r = candidates.row(pool[pick]);
            feats.insert(feats.end(), r.begin(), r.end());
            labels.push_back(client_ids[best]);
        }
    }
    return Dataset(client_data.dim(), k, std::move(feats), std::move(labels));
}

}  // namespace fedegg
