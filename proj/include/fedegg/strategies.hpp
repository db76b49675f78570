#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedegg/errors.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/objectives.hpp"
#include "fedegg/rng.hpp"
#include "fedegg/schedule.hpp"

namespace fedegg {

enum class StrategyKind { FedAvg, FedProx, Scaffold, FedNova };

inline std::string to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::FedAvg: return "fedavg";
        case StrategyKind::FedProx: return "fedprox";
        case StrategyKind::Scaffold: return "scaffold";
        case StrategyKind::FedNova: return "fednova";
    }
    return "?";
}

inline StrategyKind parse_strategy_kind(const std::string& s) {
    if (s == "fedavg") return StrategyKind::FedAvg;
    if (s == "fedprox") return StrategyKind::FedProx;
    if (s == "scaffold") return StrategyKind::Scaffold;
    if (s == "fednova") return StrategyKind::FedNova;
    throw DomainError("unknown strategy '" + s + "' (expected fedavg, fedprox, scaffold or fednova)");
}

struct StrategyConfig {
    StrategyKind kind = StrategyKind::FedAvg;
    std::size_t local_steps = 5;
    std::size_t batch_size = 32;
    PiecewiseSchedule lr{{{0, 1e-2}, {100, 1e-3}, {200, 1e-4}}};
    double mu_prox = 0.01;
    /// FedNova only: client k runs round(local_steps * |D_k| / mean |D|) steps
    /// (at least one) instead of a fixed count.
    bool fednova_variable_steps = false;

    void validate() const {
        if (local_steps < 1) throw DomainError("strategy: local_steps must be >= 1");
        if (batch_size < 1) throw DomainError("strategy: batch_size must be >= 1");
        if (!(mu_prox >= 0.0)) throw DomainError("strategy: mu_prox must be >= 0");
    }
};

/// Step count, batch size and learning rate of one local run.
struct LocalRun {
    std::size_t steps = 1;
    std::size_t batch_size = 32;
    double eta = 0.0;
};

struct ClientUpdate {
    ParamVector new_params;
    double final_local_loss = 0.0;
    std::size_t steps_taken = 0;
    std::optional<ParamVector> control_delta;  // SCAFFOLD only
};

namespace detail {

template <ClientObjective Obj, typename Correction>
ClientUpdate run_local_sgd(const ParamVector& w_global, const Obj& task, const LocalRun& run, RngStream& rng,
                           Correction&& correct) {
    if (run.steps < 1) throw DomainError("local update: steps must be >= 1");
    require_same_dim(task.dim(), w_global.size(), "local update");
    ParamVector v = w_global;
    for (std::size_t s = 0; s < run.steps; ++s) {
        ParamVector g = task.stochastic_grad(v, run.batch_size, rng);
        correct(g, v);
        v.axpy(-run.eta, g);
    }
    ClientUpdate out;
    out.final_local_loss = task.full_loss(v);
    out.new_params = std::move(v);
    out.steps_taken = run.steps;
    return out;
}

}  // namespace detail

/// Plain local SGD starting from the global model.
template <ClientObjective Obj>
ClientUpdate local_update_sgd(const ParamVector& w_global, const Obj& task, const LocalRun& run, RngStream& rng) {
    return detail::run_local_sgd(w_global, task, run, rng, [](ParamVector&, const ParamVector&) {});
}

/// Local SGD on f_k(v) + mu/2 ||v - w_global||^2.
template <ClientObjective Obj>
ClientUpdate local_update_prox(const ParamVector& w_global, const Obj& task, const LocalRun& run, double mu_prox,
                               RngStream& rng) {
    if (!(mu_prox >= 0.0)) throw DomainError("local_update_prox: mu_prox must be >= 0");
    return detail::run_local_sgd(w_global, task, run, rng, [&](ParamVector& g, const ParamVector& v) {
        if (mu_prox == 0.0) return;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += mu_prox * (v[i] - w_global[i]);
    });
}

/// SCAFFOLD client: steps follow grad - c_k + c_global; afterwards
/// c_k' = c_k - c_global + (w_global - v) / (steps * eta), and the returned
/// control_delta is c_k' - c_k.
template <ClientObjective Obj>
ClientUpdate local_update_scaffold(const ParamVector& w_global, const Obj& task, const LocalRun& run,
                                   const ParamVector& c_global, const ParamVector& c_k, RngStream& rng) {
    require_same_dim(w_global.size(), c_global.size(), "local_update_scaffold c_global");
    require_same_dim(w_global.size(), c_k.size(), "local_update_scaffold c_k");
    ParamVector correction = c_global;
    correction -= c_k;
    ClientUpdate out = detail::run_local_sgd(w_global, task, run, rng,
                                             [&](ParamVector& g, const ParamVector&) { g += correction; });
    ParamVector delta(w_global.size());
    if (run.eta > 0.0) {
        // c_k' - c_k = -c_global + (w_global - v) / (steps * eta)
        const double scale = 1.0 / (static_cast<double>(run.steps) * run.eta);
        for (std::size_t i = 0; i < delta.size(); ++i) {
            delta[i] = -c_global[i] + (w_global[i] - out.new_params[i]) * scale;
        }
    }
    out.control_delta = std::move(delta);
    return out;
}

/// Unweighted mean of the clients' models, summed in list order.
inline ParamVector aggregate_mean(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw DomainError("aggregate_mean: no updates");
    // identical models come back unchanged, without rounding from the sum
    if (std::all_of(updates.begin(), updates.end(),
                    [&](const ClientUpdate& u) { return u.new_params == updates.front().new_params; })) {
        return updates.front().new_params;
    }
    std::vector<ParamVector> models;
    models.reserve(updates.size());
    for (const auto& u : updates) models.push_back(u.new_params);
    return mean_vector(models);
}

/// FedNova: normalized deltas d_k = (w - v_k) / tau_k are averaged with
/// weights p_k (uniform when omitted) and applied with the effective step
/// sum_k p_k tau_k. Equal step counts with uniform weights reduce exactly to
/// aggregate_mean, and that case is returned through it.
inline ParamVector aggregate_fednova(std::span<const ClientUpdate> updates, const ParamVector& w_global,
                                     std::span<const double> weights = {}) {
    if (updates.empty()) throw DomainError("aggregate_fednova: no updates");
    if (!weights.empty()) require_same_dim(updates.size(), weights.size(), "aggregate_fednova weights");
    for (const auto& u : updates) {
        if (u.steps_taken < 1) throw DomainError("aggregate_fednova: step counts must be >= 1");
        require_same_dim(w_global.size(), u.new_params.size(), "aggregate_fednova");
    }
    const bool equal_steps = std::all_of(updates.begin(), updates.end(), [&](const ClientUpdate& u) {
        return u.steps_taken == updates.front().steps_taken;
    });
    if (equal_steps && weights.empty()) return aggregate_mean(updates);

    const double uniform = 1.0 / static_cast<double>(updates.size());
    ParamVector direction(w_global.size());
    double tau_eff = 0.0;
    for (std::size_t i = 0; i < updates.size(); ++i) {
        const double p = weights.empty() ? uniform : weights[i];
        const double tau = static_cast<double>(updates[i].steps_taken);
        tau_eff += p * tau;
        for (std::size_t j = 0; j < direction.size(); ++j) {
            direction[j] += p * (w_global[j] - updates[i].new_params[j]) / tau;
        }
    }
    ParamVector out = w_global;
    out.axpy(-tau_eff, direction);
    return out;
}

}  // namespace fedegg
