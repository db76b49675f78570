#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedegg/data.hpp"
#include "fedegg/dataset.hpp"
#include "fedegg/errors.hpp"
#include "fedegg/federation.hpp"
#include "fedegg/guidance.hpp"
#include "fedegg/io.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/objectives.hpp"
#include "fedegg/rng.hpp"
#include "fedegg/schedule.hpp"
#include "fedegg/strategies.hpp"

namespace fedegg {

struct DataSpec {
    std::string source = "synthetic";  // synthetic | cifar10 | features
    std::size_t classes = 10;
    std::size_t dim = 32;
    std::size_t train_per_class = 500;
    std::size_t test_per_class = 100;
    double spread = 1.0;
    double shift = 1.0;
    std::string train_path;
    std::string test_path;
};

struct ModelSpec {
    std::string kind = "logreg";  // logreg | mlp
    std::size_t hidden = 32;
    double init_scale = 0.1;
};

struct PartitionSpec {
    std::string kind = "dirichlet";  // dirichlet | iid
    double alpha = 0.1;
};

struct GuideSpec {
    bool enabled = false;
    GuidanceConfig config;
    double overlap = 1.0;
    std::optional<std::size_t> size_per_class;  // unset: 2 * mean client size / classes, rounded up
    double shift = 4.0;
    std::string source = "synthetic";  // synthetic | mirror | features
    std::string candidates_path;
    std::optional<double> tau;  // unset: computed from feature similarity
};

struct SimulationConfig {
    std::uint64_t seed = 0;
    std::size_t rounds = 300;
    std::size_t clients_total = 100;
    std::size_t clients_sampled = 20;
    std::size_t eval_every = 1;
    std::size_t tail_window = 50;
    std::size_t workers = 1;
    bool timing = false;
    bool track_train_loss = false;
    ModelSpec model;
    DataSpec data;
    PartitionSpec partition;
    StrategyConfig strategy;
    GuideSpec guidance;
    std::size_t pretrain_steps = 0;

    void validate() const {
        if (clients_total < 1) throw ConfigError("clients.total", 0, "must be >= 1");
        if (clients_sampled < 1 || clients_sampled > clients_total) {
            throw ConfigError("clients.sampled", 0, "must lie in [1, clients.total]");
        }
        if (eval_every < 1) throw ConfigError("eval_every", 0, "must be >= 1");
        if (tail_window < 1) throw ConfigError("tail_window", 0, "must be >= 1");
        if (workers < 1) throw ConfigError("workers", 0, "must be >= 1");
        if (model.kind != "logreg" && model.kind != "mlp") throw ConfigError("model.kind", 0, "expected logreg or mlp");
        if (model.kind == "mlp" && model.hidden < 1) throw ConfigError("model.hidden", 0, "must be >= 1");
        if (!(model.init_scale >= 0.0)) throw ConfigError("model.init_scale", 0, "must be >= 0");
        if (data.source != "synthetic" && data.source != "cifar10" && data.source != "features") {
            throw ConfigError("data.source", 0, "expected synthetic, cifar10 or features");
        }
        if (data.source == "synthetic") {
            if (data.classes < 2) throw ConfigError("data.classes", 0, "must be >= 2");
            if (data.dim < 1) throw ConfigError("data.dim", 0, "must be >= 1");
            if (data.train_per_class < 1) throw ConfigError("data.train_per_class", 0, "must be >= 1");
            if (data.test_per_class < 1) throw ConfigError("data.test_per_class", 0, "must be >= 1");
            if (!(data.spread >= 0.0)) throw ConfigError("data.spread", 0, "must be >= 0");
        } else {
            if (data.train_path.empty()) throw ConfigError("data.train_path", 0, "required for this data.source");
            if (data.test_path.empty()) throw ConfigError("data.test_path", 0, "required for this data.source");
        }
        if (partition.kind != "dirichlet" && partition.kind != "iid") {
            throw ConfigError("partition.kind", 0, "expected dirichlet or iid");
        }
        if (partition.kind == "dirichlet" && !(partition.alpha > 0.0)) {
            throw ConfigError("partition.alpha", 0, "must be > 0");
        }
        try {
            strategy.validate();
        } catch (const DomainError& e) {
            throw ConfigError("strategy", 0, e.what());
        }
        if (guidance.enabled) {
            try {
                guidance.config.validate();
            } catch (const DomainError& e) {
                throw ConfigError("guidance", 0, e.what());
            }
            if (!(guidance.overlap >= 0.0 && guidance.overlap <= 1.0)) {
                throw ConfigError("guidance.overlap", 0, "must lie in [0, 1]");
            }
            if (guidance.size_per_class && *guidance.size_per_class < 1) {
                throw ConfigError("guidance.size_per_class", 0, "must be >= 1");
            }
            if (guidance.source != "synthetic" && guidance.source != "mirror" && guidance.source != "features") {
                throw ConfigError("guidance.source", 0, "expected synthetic, mirror or features");
            }
            if (guidance.source == "synthetic" && data.source != "synthetic") {
                throw ConfigError("guidance.source", 0, "synthetic guiding sets need data.source=synthetic");
            }
            if (guidance.source == "features" && guidance.candidates_path.empty()) {
                throw ConfigError("guidance.candidates_path", 0, "required for guidance.source=features");
            }
            if (guidance.tau && std::isnan(*guidance.tau)) throw ConfigError("guidance.tau", 0, "must not be NaN");
        }
    }
};

struct RoundMetrics {
    std::size_t round = 0;
    double mean_local_loss = 0.0;
    std::optional<double> loss_c;
    std::optional<double> loss_g;
    std::optional<double> llr;
    std::optional<double> tau;
    std::optional<bool> gate_open;
    std::optional<std::size_t> guide_steps;
    std::optional<double> test_loss;
    std::optional<double> test_acc;
    std::optional<double> wall_ms;
    /// Global model's loss on the union of client training data. Not exported.
    std::optional<double> train_loss;
};

struct SimulationResult {
    std::vector<RoundMetrics> metrics;
    ParamVector final_model;
    std::optional<double> tau;  // the gate threshold in force, when guidance ran
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Mean cross-entropy and argmax accuracy; argmax ties go to the lowest class id.
inline EvalResult evaluate(const Classifier& model, const ParamVector& w, const Dataset& test) {
    if (test.size() == 0) throw DomainError("evaluate: empty test set");
    std::vector<double> logits(model.num_classes()), scratch(model.num_classes());
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        model.logits(w, test.row(i), logits);
        total += detail::softmax_xent(logits, test.label(i), scratch);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c) {
            if (logits[c] > logits[best]) best = c;
        }
        if (static_cast<int>(best) == test.label(i)) ++correct;
    }
    const double n = static_cast<double>(test.size());
    return {total * (1.0 / n), static_cast<double>(correct) / n};
}

/// Everything a run needs before its first round.
struct Setup {
    std::shared_ptr<const Dataset> train;
    std::shared_ptr<const Dataset> test;
    Partition partition;
    Classifier model;
    ParamVector w0;
    std::shared_ptr<const Dataset> guide;  // null when guidance is disabled
    std::vector<double> client_taus;
    std::optional<double> tau;
};

namespace detail {

inline Classifier make_model(const SimulationConfig& cfg, std::size_t input_dim, std::size_t classes) {
    if (cfg.model.kind == "mlp") return Classifier(MlpTask{input_dim, cfg.model.hidden, classes});
    return Classifier(LogRegTask{classes, input_dim});
}

inline ParamVector initial_model(const SimulationConfig& cfg, const Classifier& model) {
    ParamVector w(model.param_count());
    if (!model.is_mlp() || cfg.model.init_scale == 0.0) return w;
    auto rng = derive_stream(cfg.seed, "init", 0, 0);
    for (auto& v : w) v = cfg.model.init_scale * rng.normal();
    return w;
}

inline std::size_t guide_size_per_class(const SimulationConfig& cfg, std::size_t n_train, std::size_t classes) {
    if (cfg.guidance.size_per_class) return *cfg.guidance.size_per_class;
    const double mean_client = static_cast<double>(n_train) / static_cast<double>(cfg.clients_total);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(2.0 * mean_client / static_cast<double>(classes))));
}

}  // namespace detail

/// Builds data, partition, model and (when enabled) the guiding set and tau.
inline Setup prepare(const SimulationConfig& cfg) {
    cfg.validate();
    std::optional<GaussianMixture> mixture;
    Dataset train = [&] {
        if (cfg.data.source == "synthetic") {
            auto mrng = derive_stream(cfg.seed, "mixture", 0, 0);
            mixture = draw_mixture(cfg.data.classes, cfg.data.dim, cfg.data.spread, cfg.data.shift, mrng);
            auto drng = derive_stream(cfg.seed, "data", 0, 0);
            return mixture->sample(cfg.data.train_per_class, drng);
        }
        if (cfg.data.source == "cifar10") return load_cifar10_bin(cfg.data.train_path);
        return load_feature_file(cfg.data.train_path);
    }();
    Dataset test = [&] {
        if (mixture) {
            auto drng = derive_stream(cfg.seed, "data", 0, 1);
            return mixture->sample(cfg.data.test_per_class, drng);
        }
        if (cfg.data.source == "cifar10") return load_cifar10_bin(cfg.data.test_path);
        return load_feature_file(cfg.data.test_path);
    }();
    require_same_dim(train.dim(), test.dim(), "train/test feature dimension");

    Setup s{nullptr, nullptr, {}, detail::make_model(cfg, train.dim(), train.num_classes()), {}, nullptr, {}, {}};
    {
        auto prng = derive_stream(cfg.seed, "partition", 0, 0);
        s.partition = cfg.partition.kind == "iid" ? iid_partition(train.size(), cfg.clients_total, prng)
                                                  : dirichlet_partition(train.labels(), cfg.clients_total,
                                                                        cfg.partition.alpha, prng);
    }
    s.w0 = detail::initial_model(cfg, s.model);

    if (cfg.guidance.enabled) {
        GuidingSetSpec gs;
        gs.overlap = cfg.guidance.overlap;
        gs.shift = cfg.guidance.shift;
        gs.per_class = detail::guide_size_per_class(cfg, train.size(), train.num_classes());
        auto grng = derive_stream(cfg.seed, "guide-set", 0, 0);
        if (cfg.guidance.source == "mirror") {
            s.guide = std::make_shared<const Dataset>(train);
        } else if (cfg.guidance.source == "synthetic") {
            s.guide = std::make_shared<const Dataset>(build_guiding_set(gs, *mixture, grng));
        } else {
            const Dataset candidates = load_feature_file(cfg.guidance.candidates_path);
            s.guide = std::make_shared<const Dataset>(build_guiding_set(gs, train, candidates, grng));
        }

        const ParamVector guide_feat = client_mean_feature(s.model, s.w0, *s.guide);
        s.client_taus.resize(cfg.clients_total);
        parallel_for(cfg.clients_total, cfg.workers, [&](std::size_t k) {
            const ParamVector f = client_mean_feature(s.model, s.w0, train, s.partition.client_indices[k]);
            s.client_taus[k] = tau_k(f, guide_feat, cfg.guidance.config);
        });
        s.tau = cfg.guidance.tau ? *cfg.guidance.tau : tau_threshold(s.client_taus, cfg.guidance.config);
    }
    s.train = std::make_shared<const Dataset>(std::move(train));
    s.test = std::make_shared<const Dataset>(std::move(test));
    return s;
}

/// Full-batch gradient steps on the guiding set.
inline ParamVector pretrain_on_guide(const Classifier& model, const Dataset& guide, ParamVector w, std::size_t steps,
                                     double step_size) {
    for (std::size_t i = 0; i < steps; ++i) w.axpy(-step_size, model.loss_grad(w, guide).grad);
    return w;
}

namespace detail {

inline SimulationResult run_prepared(const SimulationConfig& cfg, const Setup& s, ParamVector w0, bool use_guidance) {
    std::vector<DataObjective> clients;
    clients.reserve(cfg.clients_total);
    for (const auto& idx : s.partition.client_indices) clients.emplace_back(s.model, s.train, idx);

    FederationSettings fs;
    fs.sampled = cfg.clients_sampled;
    fs.strategy = cfg.strategy;
    fs.seed = cfg.seed;
    fs.workers = cfg.workers;
    if (cfg.strategy.kind == StrategyKind::FedNova && cfg.strategy.fednova_variable_steps) {
        const double mean_size = static_cast<double>(s.train->size()) / static_cast<double>(cfg.clients_total);
        for (const auto& idx : s.partition.client_indices) {
            const double scaled = static_cast<double>(cfg.strategy.local_steps) * static_cast<double>(idx.size()) / mean_size;
            fs.client_steps.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scaled))));
        }
    }
    std::optional<DataObjective> guide;
    if (use_guidance) {
        fs.guidance = cfg.guidance.config;
        guide.emplace(s.model, s.guide);
    }

    Federation<DataObjective> fed(std::move(clients), std::move(guide), std::move(fs), std::move(w0));
    if (use_guidance) fed.set_tau(*s.tau);

    SimulationResult out;
    out.metrics.reserve(cfg.rounds);
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        const auto start = std::chrono::steady_clock::now();
        const RoundRecord rec = fed.run_round();
        RoundMetrics m;
        m.round = rec.round;
        m.mean_local_loss = rec.mean_local_loss;
        if (use_guidance) {
            m.loss_c = rec.loss_c;
            m.loss_g = rec.loss_g;
            m.llr = rec.llr;
            m.tau = rec.tau;
            m.gate_open = rec.gate_open;
            m.guide_steps = rec.guide_steps;
        }
        if (t % cfg.eval_every == 0 || t == cfg.rounds) {
            const auto ev = evaluate(s.model, fed.model(), *s.test);
            m.test_loss = ev.loss;
            m.test_acc = ev.accuracy;
        }
        if (cfg.track_train_loss) m.train_loss = s.model.loss(fed.model(), *s.train);
        if (cfg.timing) {
            m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        }
        out.metrics.push_back(std::move(m));
    }
    out.final_model = fed.model();
    if (use_guidance) out.tau = s.tau;
    return out;
}

}  // namespace detail

/// Setup phase (guiding set, per-client similarities, tau) followed by
/// cfg.rounds server rounds. Deterministic in cfg.seed; independent of cfg.workers.
inline SimulationResult run_simulation(const SimulationConfig& cfg) {
    const Setup s = prepare(cfg);
    return detail::run_prepared(cfg, s, s.w0, cfg.guidance.enabled);
}

/// Offline baseline: W_0 takes pretrain_steps full-batch steps on the guiding
/// set (step size gamma at round 0, or the client rate when gamma follows it),
/// then the base strategy runs with guidance disabled.
inline SimulationResult run_offline_pretrain(const SimulationConfig& cfg, std::size_t pretrain_steps) {
    if (!cfg.guidance.enabled) throw ConfigError("guidance.enabled", 0, "offline pretraining needs a guiding set");
    const Setup s = prepare(cfg);
    const auto& g = cfg.guidance.config;
    const double step = g.gamma ? g.gamma->at(0) : cfg.strategy.lr.at(0);
    ParamVector w0 = pretrain_on_guide(s.model, *s.guide, s.w0, pretrain_steps, step);
    return detail::run_prepared(cfg, s, std::move(w0), false);
}

// ---------------------------------------------------------------------------
// Metrics output

inline const char* kMetricsCsvHeader =
    "round,mean_local_loss,loss_c,loss_g,llr,tau,gate_open,guide_steps,test_loss,test_acc,wall_ms";

inline void write_metrics_csv(std::ostream& os, std::span<const RoundMetrics> rows) {
    auto opt = [&](const std::optional<double>& v) {
        os << ',';
        if (v) os << format_double(*v);
    };
    os << kMetricsCsvHeader << '\n';
    for (const auto& r : rows) {
        os << r.round << ',' << format_double(r.mean_local_loss);
        opt(r.loss_c);
        opt(r.loss_g);
        opt(r.llr);
        opt(r.tau);
        os << ',';
        if (r.gate_open) os << (*r.gate_open ? '1' : '0');
        os << ',';
        if (r.guide_steps) os << *r.guide_steps;
        opt(r.test_loss);
        opt(r.test_acc);
        opt(r.wall_ms);
        os << '\n';
    }
}

/// Mean of a field over the last `window` rows where it is present.
inline double tail_mean(std::span<const RoundMetrics> rows, std::size_t window,
                        const std::function<std::optional<double>(const RoundMetrics&)>& field) {
    if (window < 1) throw DomainError("tail_mean: window must be >= 1");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = rows.size(); i > 0 && count < window; --i) {
        if (auto v = field(rows[i - 1])) {
            sum += *v;
            ++count;
        }
    }
    if (count == 0) throw DomainError("tail_mean: no rows carry the field");
    return sum / static_cast<double>(count);
}

inline double tail_accuracy(std::span<const RoundMetrics> rows, std::size_t window) {
    return tail_mean(rows, window, [](const RoundMetrics& r) { return r.test_acc; });
}

}  // namespace fedegg
