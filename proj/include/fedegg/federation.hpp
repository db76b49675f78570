#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

#include "fedegg/errors.hpp"
#include "fedegg/guidance.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/objectives.hpp"
#include "fedegg/rng.hpp"
#include "fedegg/strategies.hpp"

namespace fedegg {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
/// handled exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// What one round of the server loop produced.
struct RoundRecord {
    std::size_t round = 0;  // 1-based
    std::vector<std::size_t> sampled;
    double eta = 0.0;
    double mean_local_loss = 0.0;
    ParamVector aggregated;  // W-bar before any guiding step
    // guidance fields, set only when a guiding task is configured
    std::optional<double> loss_c;
    std::optional<double> loss_g;
    std::optional<double> llr;
    std::optional<double> tau;
    bool gate_open = false;
    std::size_t guide_steps = 0;
    std::optional<double> gamma;
};

struct FederationSettings {
    std::size_t sampled = 1;
    StrategyConfig strategy;
    std::optional<GuidanceConfig> guidance;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    /// Per-client local step counts; empty means strategy.local_steps for all.
    std::vector<std::size_t> client_steps;
};

/// The federated server loop over a fixed set of client objectives and an
/// optional guiding objective. Each round: sample m clients, run local
/// updates, aggregate, update the momentum client loss, test the LLR gate and,
/// when open, take the guiding steps and refresh the guiding loss.
///
/// Randomness comes from streams derived from the seed: ("sample", t, 0) for
/// client selection, ("client", t, k) for client k's minibatches and
/// ("guide", t, 0) for guiding minibatches, so guidance never perturbs the
/// client trajectory's draws.
template <ClientObjective Obj, ClientObjective GuideObj = Obj>
class Federation {
public:
    Federation(std::vector<Obj> clients, std::optional<GuideObj> guide, FederationSettings settings, ParamVector w0)
        : clients_(std::move(clients)), guide_(std::move(guide)), settings_(std::move(settings)), model_(std::move(w0)) {
        if (clients_.empty()) throw DomainError("Federation: no clients");
        if (settings_.sampled < 1 || settings_.sampled > clients_.size()) {
            throw DomainError("Federation: sampled clients must lie in [1, N]");
        }
        settings_.strategy.validate();
        for (const auto& c : clients_) require_same_dim(c.dim(), model_.size(), "Federation client");
        if (!settings_.client_steps.empty()) {
            require_same_dim(clients_.size(), settings_.client_steps.size(), "Federation client_steps");
        }
        if (settings_.guidance.has_value() != guide_.has_value()) {
            throw DomainError("Federation: guidance config and guiding task must be given together");
        }
        if (settings_.guidance) {
            settings_.guidance->validate();
            require_same_dim(guide_->dim(), model_.size(), "Federation guide");
            state_.loss_g = guide_->full_loss(model_);
        }
        if (settings_.strategy.kind == StrategyKind::Scaffold) {
            c_global_ = ParamVector(model_.size());
            c_clients_.assign(clients_.size(), ParamVector(model_.size()));
        }
    }

    /// Sets the gate threshold computed in the setup phase.
    void set_tau(double tau) { state_.tau = tau; }

    const ParamVector& model() const noexcept { return model_; }
    const GuidanceState& guidance_state() const noexcept { return state_; }
    std::size_t rounds_completed() const noexcept { return round_; }
    std::size_t num_clients() const noexcept { return clients_.size(); }
    const Obj& client(std::size_t k) const { return clients_.at(k); }
    const std::optional<GuideObj>& guide() const noexcept { return guide_; }

    RoundRecord run_round() {
        const std::size_t t = ++round_;
        const std::size_t r0 = t - 1;
        RoundRecord rec;
        rec.round = t;
        rec.eta = settings_.strategy.lr.at(r0);

        {
            auto rng = derive_stream(settings_.seed, "sample", t, 0);
            rec.sampled = rng.sample_without_replacement(clients_.size(), settings_.sampled);
            std::sort(rec.sampled.begin(), rec.sampled.end());
        }

        std::vector<ClientUpdate> updates(rec.sampled.size());
        parallel_for(rec.sampled.size(), settings_.workers, [&](std::size_t i) {
            const std::size_t k = rec.sampled[i];
            auto rng = derive_stream(settings_.seed, "client", t, k);
            const LocalRun run{steps_for(k), settings_.strategy.batch_size, rec.eta};
            switch (settings_.strategy.kind) {
                case StrategyKind::FedAvg:
                case StrategyKind::FedNova:
                    updates[i] = local_update_sgd(model_, clients_[k], run, rng);
                    break;
                case StrategyKind::FedProx:
                    updates[i] = local_update_prox(model_, clients_[k], run, settings_.strategy.mu_prox, rng);
                    break;
                case StrategyKind::Scaffold:
                    updates[i] = local_update_scaffold(model_, clients_[k], run, c_global_, c_clients_[k], rng);
                    break;
            }
        });

        ParamVector aggregated = settings_.strategy.kind == StrategyKind::FedNova
                                     ? aggregate_fednova(updates, model_)
                                     : aggregate_mean(updates);

        if (settings_.strategy.kind == StrategyKind::Scaffold) {
            // c_global tracks the mean of all N client controls.
            const double inv_n = 1.0 / static_cast<double>(clients_.size());
            for (std::size_t i = 0; i < updates.size(); ++i) {
                const auto& delta = *updates[i].control_delta;
                c_clients_[rec.sampled[i]] += delta;
                c_global_.axpy(inv_n, delta);
            }
        }

        std::vector<double> losses;
        losses.reserve(updates.size());
        for (const auto& u : updates) losses.push_back(u.final_local_loss);
        rec.mean_local_loss = mean(losses);
        rec.aggregated = aggregated;

        if (settings_.guidance) {
            const auto& g = *settings_.guidance;
            if (!state_.loss_c_initialized) {
                state_.loss_c = rec.mean_local_loss;
                state_.loss_c_initialized = true;
            } else {
                state_.loss_c = update_momentum_loss(state_.loss_c, rec.mean_local_loss, g.beta);
            }
            const double ratio = llr(std::max(state_.loss_c, kLossFloor), std::max(state_.loss_g, kLossFloor), g.log_base);
            rec.loss_c = state_.loss_c;
            rec.llr = ratio;
            rec.tau = state_.tau;
            rec.gate_open = gate_open(ratio, state_.tau);
            if (rec.gate_open) {
                const double gamma = g.gamma ? g.gamma->at(r0) : rec.eta;
                rec.gamma = gamma;
                auto rng = derive_stream(settings_.seed, "guide", t, 0);
                for (std::size_t s = 0; s < g.steps; ++s) {
                    aggregated = guiding_step(aggregated, *guide_, g.batch_size, gamma, rng);
                }
                rec.guide_steps = g.steps;
                state_.steps_taken_total += g.steps;
                state_.loss_g = guide_->full_loss(aggregated);
            }
            rec.loss_g = state_.loss_g;
        }

        if (!aggregated.all_finite()) {
            throw Error("round " + std::to_string(t) + ": global model diverged (non-finite parameters)");
        }
        model_ = std::move(aggregated);
        return rec;
    }

private:
    std::size_t steps_for(std::size_t k) const {
        return settings_.client_steps.empty() ? settings_.strategy.local_steps : settings_.client_steps[k];
    }

    std::vector<Obj> clients_;
    std::optional<GuideObj> guide_;
    FederationSettings settings_;
    ParamVector model_;
    GuidanceState state_;
    ParamVector c_global_;
    std::vector<ParamVector> c_clients_;
    std::size_t round_ = 0;
};

}  // namespace fedegg
