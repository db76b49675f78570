#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "fedegg/federation.hpp"

using namespace fedegg;

namespace {

std::vector<QuadraticObjective> skewed_clients(double sigma) {
    std::vector<QuadraticObjective> out;
    for (int k = 0; k < 6; ++k) {
        const double a = 1.0 + 0.5 * k;
        const double c = (k % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.25 * k);
        out.emplace_back(QuadraticTask::isotropic(a, ParamVector{c, -c}, 0.0), sigma);
    }
    return out;
}

FederationSettings base_settings(std::size_t sampled, std::uint64_t seed) {
    FederationSettings s;
    s.sampled = sampled;
    s.seed = seed;
    s.strategy.local_steps = 3;
    s.strategy.lr = PiecewiseSchedule(0.05);
    return s;
}

using QuadFed = Federation<QuadraticObjective>;

QuadFed guided(double tau, double sigma, std::uint64_t seed, std::size_t workers = 1) {
    auto s = base_settings(3, seed);
    s.workers = workers;
    s.guidance = GuidanceConfig{};
    QuadraticObjective guide(QuadraticTask::isotropic(1.0, ParamVector{0.5, 0.5}, 0.0), sigma);
    QuadFed fed(skewed_clients(sigma), guide, s, ParamVector{3.0, -2.0});
    fed.set_tau(tau);
    return fed;
}

}  // namespace

TEST(ParallelFor, VisitsEveryIndexOnce) {
    for (std::size_t workers : {1u, 2u, 7u, 64u}) {
        std::vector<int> hits(37, 0);
        parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i] += 1; });
        for (int h : hits) EXPECT_EQ(h, 1);
    }
    EXPECT_THROW(parallel_for(5, 3, [](std::size_t i) {
                     if (i == 3) throw DomainError("boom");
                 }),
                 DomainError);
}

TEST(Federation, RejectsBadSettings) {
    auto s = base_settings(7, 0);
    EXPECT_THROW(QuadFed(skewed_clients(0.0), std::nullopt, s, ParamVector(2)), DomainError);
    s.sampled = 2;
    EXPECT_THROW(QuadFed(skewed_clients(0.0), std::nullopt, s, ParamVector(3)), DimensionError);
    s.guidance = GuidanceConfig{};
    EXPECT_THROW(QuadFed(skewed_clients(0.0), std::nullopt, s, ParamVector(2)), DomainError);
}

TEST(Federation, SamplesDistinctSortedClients) {
    QuadFed fed(skewed_clients(0.1), std::nullopt, base_settings(4, 3), ParamVector(2));
    for (int t = 0; t < 20; ++t) {
        const auto rec = fed.run_round();
        ASSERT_EQ(rec.sampled.size(), 4u);
        for (std::size_t i = 1; i < rec.sampled.size(); ++i) EXPECT_LT(rec.sampled[i - 1], rec.sampled[i]);
        EXPECT_LT(rec.sampled.back(), 6u);
        EXPECT_FALSE(rec.loss_c.has_value());
        EXPECT_FALSE(rec.gate_open);
    }
}

TEST(Federation, GateSoundnessAndModelContinuity) {
    const GuidanceConfig g;
    for (double tau : {-2.0, -0.5, 0.0, 1.0}) {
        auto fed = guided(tau, 0.3, 11);
        double loss_c = 0.0;
        double loss_g = fed.guidance_state().loss_g;
        for (int t = 1; t <= 40; ++t) {
            const auto rec = fed.run_round();
            loss_c = t == 1 ? rec.mean_local_loss : update_momentum_loss(loss_c, rec.mean_local_loss, g.beta);
            ASSERT_TRUE(rec.loss_c && rec.llr && rec.tau && rec.loss_g);
            EXPECT_EQ(*rec.loss_c, loss_c);
            EXPECT_EQ(*rec.llr, llr(std::max(loss_c, kLossFloor), std::max(loss_g, kLossFloor), 2.0));
            EXPECT_EQ(*rec.tau, tau);
            EXPECT_EQ(rec.gate_open, *rec.llr < tau);
            EXPECT_EQ(rec.guide_steps, rec.gate_open ? g.steps : 0u);
            if (rec.gate_open) {
                EXPECT_EQ(*rec.loss_g, fed.guide()->full_loss(fed.model()));
                loss_g = *rec.loss_g;
            } else {
                EXPECT_EQ(fed.model(), rec.aggregated);
                EXPECT_EQ(*rec.loss_g, loss_g);
            }
        }
    }
}

TEST(Federation, InfiniteThresholdsPinTheGate) {
    auto open = guided(INFINITY, 0.2, 5);
    auto shut = guided(-INFINITY, 0.2, 5);
    QuadFed plain(skewed_clients(0.2), std::nullopt, base_settings(3, 5), ParamVector{3.0, -2.0});
    for (int t = 0; t < 30; ++t) {
        EXPECT_TRUE(open.run_round().gate_open);
        EXPECT_FALSE(shut.run_round().gate_open);
        plain.run_round();
        EXPECT_EQ(shut.model(), plain.model());
    }
    EXPECT_EQ(open.guidance_state().steps_taken_total, 30u);
    EXPECT_EQ(shut.guidance_state().steps_taken_total, 0u);
}

TEST(Federation, GuidingLossRefreshUsesFloor) {
    // gamma = 1 on a unit quadratic lands exactly on the guide optimum: loss 0.
    auto s = base_settings(2, 0);
    GuidanceConfig g;
    g.gamma = PiecewiseSchedule(1.0);
    s.guidance = g;
    QuadFed fed(skewed_clients(0.0), QuadraticObjective(QuadraticTask::isotropic(1.0, ParamVector{0.5, 0.5}, 0.0)),
                s, ParamVector{3.0, -2.0});
    fed.set_tau(INFINITY);
    const auto r1 = fed.run_round();
    EXPECT_EQ(*r1.loss_g, 0.0);
    EXPECT_EQ(fed.model(), (ParamVector{0.5, 0.5}));
    const auto r2 = fed.run_round();
    EXPECT_TRUE(std::isfinite(*r2.llr));
    EXPECT_DOUBLE_EQ(*r2.llr, std::log2(*r2.loss_c / kLossFloor));
}

TEST(Federation, WorkerCountDoesNotChangeTrajectory) {
    for (auto kind : {StrategyKind::FedAvg, StrategyKind::FedProx, StrategyKind::Scaffold, StrategyKind::FedNova}) {
        std::vector<ParamVector> models[2];
        for (int w = 0; w < 2; ++w) {
            auto s = base_settings(4, 21);
            s.strategy.kind = kind;
            s.workers = w == 0 ? 1 : 4;
            s.guidance = GuidanceConfig{};
            if (kind == StrategyKind::FedNova) s.client_steps = {1, 2, 3, 4, 5, 6};
            QuadFed fed(skewed_clients(0.4), QuadraticObjective(QuadraticTask::isotropic(1.0, ParamVector{0.0, 1.0}, 0.0), 0.4),
                        s, ParamVector{1.0, 1.0});
            fed.set_tau(0.0);
            for (int t = 0; t < 25; ++t) {
                fed.run_round();
                models[w].push_back(fed.model());
            }
        }
        EXPECT_EQ(models[0], models[1]) << to_string(kind);
    }
}

TEST(Federation, RoundAggregateMatchesReductionChain) {
    auto s = base_settings(3, 8);
    QuadFed fed(skewed_clients(0.5), std::nullopt, s, ParamVector{1.0, 2.0});
    for (int t = 1; t <= 5; ++t) {
        const ParamVector w = fed.model();
        const auto rec = fed.run_round();
        std::vector<ClientUpdate> ups;
        std::vector<double> losses;
        for (std::size_t k : rec.sampled) {
            auto rng = derive_stream(8, "client", t, k);
            ups.push_back(local_update_sgd(w, fed.client(k), LocalRun{3, 32, 0.05}, rng));
            losses.push_back(ups.back().final_local_loss);
        }
        EXPECT_EQ(rec.aggregated, aggregate_mean(ups));
        EXPECT_EQ(rec.mean_local_loss, mean(losses));
    }
}

TEST(Federation, ScaffoldRemovesClientDrift) {
    // Noiseless clients with unequal curvature: multi-step local SGD drifts
    // away from the federated optimum, SCAFFOLD's control variates do not.
    std::vector<QuadraticObjective> clients{QuadraticObjective(QuadraticTask::isotropic(1.0, ParamVector{1.0}, 0.0)),
                                            QuadraticObjective(QuadraticTask::isotropic(3.0, ParamVector{-1.0}, 0.0))};
    const double w_star = -0.5;
    auto final_gap = [&](StrategyKind kind) {
        FederationSettings s;
        s.sampled = 2;
        s.strategy.kind = kind;
        s.strategy.local_steps = 5;
        s.strategy.lr = PiecewiseSchedule(0.1);
        QuadFed fed(clients, std::nullopt, s, ParamVector{2.0});
        for (int t = 0; t < 300; ++t) fed.run_round();
        return std::abs(fed.model()[0] - w_star);
    };
    EXPECT_LT(final_gap(StrategyKind::Scaffold), 1e-9);
    EXPECT_GT(final_gap(StrategyKind::FedAvg), 1e-3);
}
