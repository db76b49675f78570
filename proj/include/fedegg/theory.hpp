#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "fedegg/errors.hpp"
#include "fedegg/federation.hpp"
#include "fedegg/matrix.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/objectives.hpp"
#include "fedegg/rng.hpp"
#include "fedegg/schedule.hpp"

namespace fedegg::theory {

/// Constants and step sizes for a one-step comparison. sigma_g and sigma_k
/// bound the expected squared norm of the gradient noise (E||xi||^2 <= sigma^2),
/// so in d dimensions each coordinate gets standard deviation sigma / sqrt(d).
struct TheoryParams {
    double mu = 1.0;
    double L = 1.0;
    double gamma = 0.0;
    double eta = 0.0;
    double sigma_g = 0.0;
    std::vector<double> sigma_k;  // empty: noiseless clients
};

/// Federated quadratic clients with weights p_k, plus the server's guiding quadratic.
struct TaskPair {
    std::vector<QuadraticTask> clients;
    std::vector<double> weights;
    QuadraticTask guide;

    std::size_t dim() const { return guide.dim(); }

    /// f = sum_k p_k f_k
    QuadraticTask combined() const { return weighted_sum(clients, weights); }

    void validate() const {
        if (clients.empty()) throw DomainError("TaskPair: no clients");
        require_same_dim(clients.size(), weights.size(), "TaskPair weights");
        double s = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw DomainError("TaskPair: negative weight");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-12) throw DomainError("TaskPair: weights must sum to 1");
        for (const auto& c : clients) require_same_dim(guide.dim(), c.dim(), "TaskPair");
    }
};

/// Smallest and largest curvature over every client, the combined objective and the guide.
inline CurvatureBounds pair_curvature(const TaskPair& pair) {
    CurvatureBounds cb = curvature_bounds(pair.guide);
    auto fold = [&](const QuadraticTask& t) {
        const auto c = curvature_bounds(t);
        cb.mu = std::min(cb.mu, c.mu);
        cb.L = std::max(cb.L, c.L);
    };
    for (const auto& c : pair.clients) fold(c);
    fold(pair.combined());
    return cb;
}

/// Gamma_g = f* - F*
inline double gamma_g(const TaskPair& pair) {
    return quad_optimum(pair.combined()).f_star - quad_optimum(pair.guide).f_star;
}

/// Pi = f* - F(w_bar)
inline double pi(double f_star, const QuadraticTask& guide, const ParamVector& w_bar) {
    return f_star - guide.loss(w_bar);
}

/// eps = gamma^2 sigma_g^2 + 2 (1/mu - 2 gamma (1 - L gamma)) Gamma_g + 4 gamma (1 - L gamma) Pi
inline double epsilon(const TheoryParams& p, double gamma_g_value, double pi_value) {
    const double g = p.gamma;
    const double shrink = g * (1.0 - p.L * g);
    return g * g * p.sigma_g * p.sigma_g + 2.0 * (1.0 / p.mu - 2.0 * shrink) * gamma_g_value + 4.0 * shrink * pi_value;
}

/// The same quantity expanded: gamma^2 sigma_g^2 + (2/mu + 4 L gamma^2 - 4 gamma) Gamma_g + (4 gamma - 4 L gamma^2) Pi
inline double epsilon_expanded(const TheoryParams& p, double gamma_g_value, double pi_value) {
    const double g = p.gamma;
    return g * g * p.sigma_g * p.sigma_g + (2.0 / p.mu + 4.0 * p.L * g * g - 4.0 * g) * gamma_g_value +
           (4.0 * g - 4.0 * p.L * g * g) * pi_value;
}

/// Upper bound on Pi under which eps < 0:
///   -(1 / (2 mu gamma (1 - L gamma)) - 1) Gamma_g - gamma^2 sigma_g^2 / (4 gamma (1 - L gamma))
/// Requires 0 < gamma < 1/L.
inline double pi_upper_bound(const TheoryParams& p, double gamma_g_value) {
    if (!(p.gamma > 0.0) || !(p.gamma * p.L < 1.0)) {
        throw DomainError("pi_upper_bound: requires 0 < gamma < 1/L");
    }
    const double shrink = p.gamma * (1.0 - p.L * p.gamma);
    return -(1.0 / (2.0 * p.mu * shrink) - 1.0) * gamma_g_value -
           p.gamma * p.gamma * p.sigma_g * p.sigma_g / (4.0 * shrink);
}

/// 2 mu gamma (1 - L gamma). The side condition that this exceed 1 cannot hold
/// when mu <= L (the expression peaks at mu / (2L)); it is reported, never enforced.
inline double contraction_coefficient(const TheoryParams& p) {
    return 2.0 * p.mu * p.gamma * (1.0 - p.L * p.gamma);
}

struct OneStepResult {
    double delta_fedegg = 0.0;
    double delta_fedavg = 0.0;
    double epsilon_closed = 0.0;
    double gamma_g = 0.0;
    double pi = 0.0;
    double stderr_ = 0.0;  // standard error of the paired difference
    bool holds = false;
};

struct OneStepOptions {
    std::size_t trials = 1;
    std::uint64_t seed = 0;
    std::uint64_t instance = 0;  // folded into the per-trial stream path
    double tolerance = 1e-9;
    double stderr_multiplier = 3.0;
    std::size_t workers = 1;
};

namespace detail {

inline void add_noise(ParamVector& g, double sigma, RngStream& rng) {
    if (sigma <= 0.0) return;
    const double per_coord = sigma / std::sqrt(static_cast<double>(g.size()));
    for (auto& x : g) x += per_coord * rng.normal();
}

struct Iterates {
    ParamVector fedegg;
    ParamVector fedavg;
};

/// One full-participation step: g = sum_k p_k (grad f_k(w_t) + xi_k),
/// q = grad F(w_bar) + xi_g with w_bar = w_t - eta * g_bar (deterministic).
inline Iterates one_step_iterates(const TaskPair& pair, const TheoryParams& p, const ParamVector& w_t,
                                  const ParamVector& q_bar, RngStream& rng) {
    ParamVector g(w_t.size());
    for (std::size_t k = 0; k < pair.clients.size(); ++k) {
        ParamVector gk = pair.clients[k].grad(w_t);
        if (k < p.sigma_k.size()) add_noise(gk, p.sigma_k[k], rng);
        g.axpy(pair.weights[k], gk);
    }
    ParamVector q = q_bar;
    add_noise(q, p.sigma_g, rng);
    Iterates it;
    it.fedavg = w_t;
    it.fedavg.axpy(-p.eta, g);
    it.fedegg = it.fedavg;
    it.fedegg.axpy(-p.gamma, q);
    return it;
}

inline bool noiseless(const TheoryParams& p) {
    return p.sigma_g == 0.0 && std::all_of(p.sigma_k.begin(), p.sigma_k.end(), [](double s) { return s == 0.0; });
}

inline void check_params(const TaskPair& pair, const TheoryParams& p, const ParamVector& w_t) {
    pair.validate();
    require_same_dim(pair.dim(), w_t.size(), "one_step_experiment w_t");
    if (!(p.mu > 0.0) || !(p.L >= p.mu)) throw DomainError("one_step_experiment: need 0 < mu <= L");
    if (!(p.eta >= 0.0) || p.eta * 4.0 * p.L > 1.0 + 1e-12) {
        throw DomainError("one_step_experiment: need 0 <= eta <= 1/(4L)");
    }
    if (!(p.gamma >= 0.0)) throw DomainError("one_step_experiment: gamma must be >= 0");
    if (!(p.sigma_g >= 0.0)) throw DomainError("one_step_experiment: sigma_g must be >= 0");
    for (double s : p.sigma_k) {
        if (!(s >= 0.0)) throw DomainError("one_step_experiment: sigma_k must be >= 0");
    }
}

}  // namespace detail

/// Monte Carlo estimate of the one-step squared distances to w* for FedEGG
/// (aggregate step plus one guiding step) and FedAvg, sharing every noise
/// draw between the two arms, against the closed-form correction eps with Pi
/// evaluated at w_bar = w_t - eta * g_bar.
inline OneStepResult one_step_experiment(const TaskPair& pair, const TheoryParams& p, const ParamVector& w_t,
                                         const OneStepOptions& opt) {
    detail::check_params(pair, p, w_t);
    if (opt.trials < 1) throw DomainError("one_step_experiment: need at least one trial");
    const QuadraticTask f = pair.combined();
    const auto fl_opt = quad_optimum(f);

    ParamVector w_bar = w_t;
    w_bar.axpy(-p.eta, f.grad(w_t));
    const ParamVector q_bar = pair.guide.grad(w_bar);

    OneStepResult res;
    res.gamma_g = fl_opt.f_star - quad_optimum(pair.guide).f_star;
    res.pi = pi(fl_opt.f_star, pair.guide, w_bar);
    res.epsilon_closed = epsilon(p, res.gamma_g, res.pi);

    const std::size_t trials = detail::noiseless(p) ? 1 : opt.trials;
    std::vector<double> egg(trials), avg(trials);
    parallel_for(trials, opt.workers, [&](std::size_t i) {
        auto rng = derive_stream(opt.seed, "theory", opt.instance, i);
        const auto it = detail::one_step_iterates(pair, p, w_t, q_bar, rng);
        egg[i] = squared_distance(it.fedegg, fl_opt.w_star);
        avg[i] = squared_distance(it.fedavg, fl_opt.w_star);
    });

    double se = 0.0, sa = 0.0, sd = 0.0;
    for (std::size_t i = 0; i < trials; ++i) {
        se += egg[i];
        sa += avg[i];
        sd += egg[i] - avg[i];
    }
    const double n = static_cast<double>(trials);
    res.delta_fedegg = se / n;
    res.delta_fedavg = sa / n;
    if (trials > 1) {
        const double mean_diff = sd / n;
        double ss = 0.0;
        for (std::size_t i = 0; i < trials; ++i) {
            const double d = egg[i] - avg[i] - mean_diff;
            ss += d * d;
        }
        res.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    res.holds = res.delta_fedegg <= res.delta_fedavg + res.epsilon_closed + opt.stderr_multiplier * res.stderr_ +
                                       opt.tolerance;
    return res;
}

/// True iff the FedEGG and FedAvg one-step iterates coincide on every trial
/// under shared noise streams (expected exactly when gamma = 0).
inline bool consistency_check(const TaskPair& pair, const TheoryParams& p, const ParamVector& w_t,
                              std::size_t trials = 16, std::uint64_t seed = 0) {
    detail::check_params(pair, p, w_t);
    const QuadraticTask f = pair.combined();
    ParamVector w_bar = w_t;
    w_bar.axpy(-p.eta, f.grad(w_t));
    const ParamVector q_bar = pair.guide.grad(w_bar);
    for (std::size_t i = 0; i < trials; ++i) {
        auto rng = derive_stream(seed, "consistency", 0, i);
        const auto it = detail::one_step_iterates(pair, p, w_t, q_bar, rng);
        if (!(it.fedegg == it.fedavg)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Instances

struct Instance {
    TaskPair pair;
    TheoryParams params;
    ParamVector w_t;
};

/// Two clients 1/2 (w - 1)^2 and 1/2 (w + 1)^2 with equal weight, guide
/// 1/2 (w - 2)^2, mu = L = 1, eta = gamma = 0.1, w_t = 0.
inline Instance running_example(double sigma_g = 0.0) {
    Instance in{TaskPair{{QuadraticTask::isotropic(1.0, ParamVector{1.0}, 0.0),
                          QuadraticTask::isotropic(1.0, ParamVector{-1.0}, 0.0)},
                         {0.5, 0.5},
                         QuadraticTask::isotropic(1.0, ParamVector{2.0}, 0.0)},
                TheoryParams{}, ParamVector{0.0}};
    in.params.mu = 1.0;
    in.params.L = 1.0;
    in.params.eta = 0.1;
    in.params.gamma = 0.1;
    in.params.sigma_g = sigma_g;
    return in;
}

/// Random strongly convex instance in d dimensions. Client and guide Hessians
/// have spectra in [1, kappa] with kappa ~ U[1, 10]; mu and L are the extreme
/// eigenvalues over every task involved. eta ~ U(0, 1/(4L)], gamma ~ U(0, 1/(2L)].
///
/// The guide's offset is set so that F(w*) = f* - s with s >= 0 (s = 0 on
/// every fourth instance): the guiding loss at the federated optimum never
/// exceeds the federated optimal value. The one-step bound relies on that; it
/// can fail without it (see the theory tests).
inline Instance random_instance(std::size_t d, RngStream& rng) {
    if (d < 1) throw DimensionError("random_instance: d must be >= 1");
    auto random_spd = [&](double kappa) {
        std::vector<double> ev(d);
        for (auto& e : ev) e = 1.0 + (kappa - 1.0) * rng.uniform();
        return spd_from_spectrum(ev, rng);
    };
    auto random_vec = [&](double scale) {
        ParamVector v(d);
        for (auto& x : v) x = scale * rng.normal();
        return v;
    };

    Instance in{TaskPair{{}, {}, QuadraticTask::isotropic(1.0, ParamVector(d), 0.0)}, TheoryParams{}, ParamVector{}};
    const std::size_t clients = 1 + rng.below(4);
    const double kappa = 1.0 + 9.0 * rng.uniform();
    for (std::size_t k = 0; k < clients; ++k) {
        in.pair.clients.emplace_back(random_spd(kappa), random_vec(1.0), rng.normal());
    }
    in.pair.weights = rng.dirichlet(1.0, clients);
    const auto fl = quad_optimum(in.pair.combined());

    QuadraticTask guide(random_spd(kappa), random_vec(1.0), 0.0);
    const double slack = (rng.below(4) == 0) ? 0.0 : -std::log(rng.uniform_open());
    in.pair.guide = guide.with_offset(fl.f_star - slack - guide.loss(fl.w_star));

    const auto cb = pair_curvature(in.pair);
    in.params.mu = cb.mu;
    in.params.L = cb.L;
    in.params.eta = (1.0 - rng.uniform()) / (4.0 * cb.L);
    in.params.gamma = (1.0 - rng.uniform()) / (2.0 * cb.L);
    in.w_t = fl.w_star;
    in.w_t += random_vec(2.0);
    return in;
}

// ---------------------------------------------------------------------------
// Suite + CSV

struct TheoryRow {
    std::size_t instance_id = 0;
    std::size_t d = 0;
    TheoryParams params;
    OneStepResult result;
};

inline const char* kTheoryCsvHeader =
    "instance_id,d,mu,L,eta,gamma,sigma_g,gamma_g,pi,epsilon,delta_fedegg,delta_fedavg,stderr,holds";

inline void write_theory_csv(std::ostream& os, const std::vector<TheoryRow>& rows) {
    os << kTheoryCsvHeader << '\n';
    for (const auto& r : rows) {
        os << r.instance_id << ',' << r.d << ',' << format_double(r.params.mu) << ',' << format_double(r.params.L)
           << ',' << format_double(r.params.eta) << ',' << format_double(r.params.gamma) << ','
           << format_double(r.params.sigma_g) << ',' << format_double(r.result.gamma_g) << ','
           << format_double(r.result.pi) << ',' << format_double(r.result.epsilon_closed) << ','
           << format_double(r.result.delta_fedegg) << ',' << format_double(r.result.delta_fedavg) << ','
           << format_double(r.result.stderr_) << ',' << (r.result.holds ? "true" : "false") << '\n';
    }
}

struct SuiteOptions {
    std::size_t instances = 1000;
    std::size_t trials = 100000;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::vector<double> stochastic_sigmas{0.5, 1.0};
};

/// Noiseless random instances with d cycling through {1, 2, 10}, followed by
/// the running example at each stochastic sigma_g with `trials` Monte Carlo draws.
inline std::vector<TheoryRow> run_theory_suite(const SuiteOptions& opt) {
    static constexpr std::size_t dims[] = {1, 2, 10};
    std::vector<TheoryRow> rows;
    rows.reserve(opt.instances + opt.stochastic_sigmas.size());
    for (std::size_t i = 0; i < opt.instances; ++i) {
        const std::size_t d = dims[i % 3];
        auto rng = derive_stream(opt.seed, "theory-instance", i, d);
        const auto in = random_instance(d, rng);
        OneStepOptions o;
        o.seed = opt.seed;
        o.instance = i;
        rows.push_back({i, d, in.params, one_step_experiment(in.pair, in.params, in.w_t, o)});
    }
    for (std::size_t j = 0; j < opt.stochastic_sigmas.size(); ++j) {
        const std::size_t id = opt.instances + j;
        const auto in = running_example(opt.stochastic_sigmas[j]);
        OneStepOptions o;
        o.trials = opt.trials;
        o.seed = opt.seed;
        o.instance = id;
        o.workers = opt.workers;
        rows.push_back({id, 1, in.params, one_step_experiment(in.pair, in.params, in.w_t, o)});
    }
    return rows;
}

}  // namespace fedegg::theory
