#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>

#include "fedegg/dataset.hpp"
#include "fedegg/errors.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/objectives.hpp"
#include "fedegg/rng.hpp"
#include "fedegg/schedule.hpp"

namespace fedegg {

/// Server-side guiding-task settings.
struct GuidanceConfig {
    double rho = 2.0;    // temperature on the mean client log-similarity
    double iota = -0.5;  // threshold offset
    double log_base = 2.0;
    double beta = 0.9;   // momentum on the client loss
    std::size_t steps = 1;       // guiding steps per gated round (T_g)
    std::size_t batch_size = 64;
    std::optional<PiecewiseSchedule> gamma;  // unset: follow the client learning rate
    double cos_floor = 1e-6;

    void validate() const {
        if (!std::isfinite(rho) || !std::isfinite(iota)) throw DomainError("guidance: rho and iota must be finite");
        if (!(log_base > 1.0) || !std::isfinite(log_base)) throw DomainError("guidance: log_base must be > 1");
        if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("guidance: beta must lie in [0, 1]");
        if (steps < 1) throw DomainError("guidance: at least one guiding step per gated round");
        if (batch_size < 1) throw DomainError("guidance: batch_size must be >= 1");
        if (!(cos_floor > 0.0 && cos_floor <= 1.0)) throw DomainError("guidance: cos_floor must lie in (0, 1]");
    }
};

/// Mutable guidance state owned by the server loop.
struct GuidanceState {
    double tau = 0.0;
    double loss_c = 0.0;  // momentum client loss
    double loss_g = 0.0;  // guiding loss at the last refresh
    bool loss_c_initialized = false;
    std::size_t steps_taken_total = 0;
};

inline constexpr double kLossFloor = 1e-12;

inline double log_in_base(double x, double base) {
    if (base == 2.0) return std::log2(x);
    return std::log(x) / std::log(base);
}

/// Mean of the model's penultimate features over a dataset.
template <typename Task>
ParamVector client_mean_feature(const Task& task, const ParamVector& w0, const Dataset& data) {
    if (data.size() == 0) throw DomainError("client_mean_feature: empty dataset");
    ParamVector acc = features(task, w0, data.row(0));
    for (std::size_t i = 1; i < data.size(); ++i) acc += features(task, w0, data.row(i));
    acc *= 1.0 / static_cast<double>(data.size());
    return acc;
}

/// Same, over an index subset of a dataset.
template <typename Task>
ParamVector client_mean_feature(const Task& task, const ParamVector& w0, const Dataset& data,
                                std::span<const std::size_t> indices) {
    if (indices.empty()) throw DomainError("client_mean_feature: empty dataset");
    ParamVector acc = features(task, w0, data.row(indices[0]));
    for (std::size_t i = 1; i < indices.size(); ++i) acc += features(task, w0, data.row(indices[i]));
    acc *= 1.0 / static_cast<double>(indices.size());
    return acc;
}

/// Per-client log-similarity: log_base(max(cos(client, guide), cos_floor)).
inline double tau_k(const ParamVector& client_feat, const ParamVector& guide_feat, const GuidanceConfig& cfg) {
    const double c = cosine_similarity(client_feat, guide_feat);
    return log_in_base(std::max(c, cfg.cos_floor), cfg.log_base);
}

/// rho * mean(tau_k) + iota
inline double tau_threshold(std::span<const double> taus, const GuidanceConfig& cfg) {
    if (taus.empty()) throw DomainError("tau_threshold: no client similarities");
    return cfg.rho * mean(taus) + cfg.iota;
}

/// Log loss ratio log_base(loss_c / loss_g).
inline double llr(double loss_c, double loss_g, double log_base) {
    if (!(loss_c > 0.0) || !(loss_g > 0.0)) throw DomainError("llr: losses must be positive");
    return log_in_base(loss_c / loss_g, log_base);
}

inline bool gate_open(double llr_value, double tau) { return llr_value < tau; }

/// One guiding step w - gamma * grad F(w, xi_g).
template <ClientObjective Guide>
ParamVector guiding_step(const ParamVector& w, const Guide& guide, std::size_t batch, double gamma, RngStream& rng) {
    if (!(gamma >= 0.0)) throw DomainError("guiding_step: gamma must be >= 0");
    require_same_dim(guide.dim(), w.size(), "guiding_step");
    ParamVector out = w;
    out.axpy(-gamma, guide.stochastic_grad(w, batch, rng));
    return out;
}

/// beta * previous + (1 - beta) * mean local loss
inline double update_momentum_loss(double loss_c_prev, double mean_local_loss, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("update_momentum_loss: beta must lie in [0, 1]");
    return beta * loss_c_prev + (1.0 - beta) * mean_local_loss;
}

}  // namespace fedegg
