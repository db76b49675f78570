#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "fedegg/objectives.hpp"

using namespace fedegg;

namespace {

double rel_error(const ParamVector& a, const ParamVector& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

Dataset random_dataset(std::size_t n, std::size_t d, std::size_t k, RngStream& rng) {
    std::vector<double> f(n * d);
    std::vector<int> y(n);
    for (auto& v : f) v = rng.normal();
    for (auto& l : y) l = static_cast<int>(rng.below(k));
    return Dataset(d, k, std::move(f), std::move(y));
}

}  // namespace

TEST(Quadratic, LossGradOptimum) {
    // f(w) = 1/2 (w - 1)^2 + 3
    const auto t = QuadraticTask::isotropic(1.0, ParamVector{1.0}, 3.0);
    EXPECT_DOUBLE_EQ(t.loss(ParamVector{1.0}), 3.0);
    EXPECT_DOUBLE_EQ(t.loss(ParamVector{3.0}), 5.0);
    EXPECT_EQ(t.grad(ParamVector{0.0}), (ParamVector{-1.0}));
    const auto opt = quad_optimum(t);
    EXPECT_DOUBLE_EQ(opt.w_star[0], 1.0);
    EXPECT_DOUBLE_EQ(opt.f_star, 3.0);
    EXPECT_DOUBLE_EQ(t.with_offset(0.0).loss(ParamVector{0.0}), 0.0);
}

TEST(Quadratic, RejectsAsymmetric) {
    Matrix a = Matrix::identity(2);
    a(0, 1) = 0.5;
    EXPECT_THROW(QuadraticTask(a, ParamVector{0.0, 0.0}, 0.0), DomainError);
}

TEST(Quadratic, CurvatureAndWeightedSum) {
    Matrix a = Matrix::identity(2);
    a(0, 0) = 4.0;
    const QuadraticTask t1(a, ParamVector{1.0, 0.0}, 0.0);
    const auto cb = curvature_bounds(t1);
    EXPECT_NEAR(cb.mu, 1.0, 1e-15);
    EXPECT_NEAR(cb.L, 4.0, 1e-15);

    // f = 1/2 f_1 + 1/2 f_2 with f_1,2 = 1/2 (w -+ 1)^2  ->  1/2 w^2 + 1/2
    const std::vector<QuadraticTask> ts{QuadraticTask::isotropic(1.0, ParamVector{1.0}, 0.0),
                                        QuadraticTask::isotropic(1.0, ParamVector{-1.0}, 0.0)};
    const std::vector<double> p{0.5, 0.5};
    const auto f = weighted_sum(ts, p);
    const auto opt = quad_optimum(f);
    EXPECT_DOUBLE_EQ(opt.w_star[0], 0.0);
    EXPECT_DOUBLE_EQ(opt.f_star, 0.5);
}

TEST(Quadratic, NoisyGradientIsUnbiased) {
    const auto t = QuadraticTask::isotropic(2.0, ParamVector{1.0, -1.0}, 0.0);
    auto rng = derive_stream(1, "noise", 0, 0);
    ParamVector acc(2);
    const int n = 20000;
    for (int i = 0; i < n; ++i) acc += quad_loss_grad(t, ParamVector{0.0, 0.0}, 0.5, rng).grad;
    acc *= 1.0 / n;
    EXPECT_NEAR(acc[0], -2.0, 0.02);
    EXPECT_NEAR(acc[1], 2.0, 0.02);
    EXPECT_THROW(quad_loss_grad(t, ParamVector{0.0, 0.0}, -1.0, rng), DomainError);
}

TEST(LogReg, MatchesReferenceValues) {
    // Reference: numpy softmax cross-entropy (tests/oracles/oracle_values.py).
    const LogRegTask task{3, 2};
    const ParamVector w{0.1, -0.2, 0.3, 0.4, -0.5, 0.2, 0.1, 0.0, -0.1};
    const Dataset data(2, 3, {1.0, 2.0, -1.0, 0.5}, {2, 0});
    const auto lg = logreg_loss_grad(task, w, data);
    EXPECT_NEAR(lg.loss, 1.537934997086799, 1e-12);
    const double expected[9] = {0.45737686839026803, -0.008202530336988756, 0.19279378376049375,
                                0.7126313004034626,  -0.6501706521507618,   -0.7044287700664739,
                                -0.2809881453037518, 0.45442877006647386,   -0.173440624762722};
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(lg.grad[i], expected[i], 1e-12);
}

TEST(Mlp, MatchesReferenceValues) {
    const MlpTask task{2, 3, 2};
    const ParamVector w{0.2,  -0.1, 0.4, 0.3, -0.3, 0.5,   // W1
                        0.05, -0.05, 0.0,                  // b1
                        0.6,  -0.4, 0.2, -0.1, 0.3, 0.5,   // W2
                        0.0,  0.1};                        // b2
    ASSERT_EQ(w.size(), task.param_count());
    const Dataset data(2, 2, {1.0, -1.0, 0.5, 2.0}, {1, 0});
    EXPECT_NEAR(mlp_loss_grad(task, w, data).loss, 1.0081311451349717, 1e-12);
    const auto h = features(task, w, data.row(0));
    EXPECT_NEAR(h[0], 0.33637554433633227, 1e-15);
    EXPECT_NEAR(h[1], 0.04995837495788, 1e-15);
    EXPECT_NEAR(h[2], -0.664036770267849, 1e-15);
}

TEST(GradientCheck, QuadraticAtRandomPoints) {
    auto rng = derive_stream(11, "gc", 0, 0);
    std::vector<double> eig{1.0, 2.5, 7.0};
    const QuadraticTask t(spd_from_spectrum(eig, rng), ParamVector{0.3, -1.0, 2.0}, 0.7);
    for (int i = 0; i < 20; ++i) {
        ParamVector w(3);
        for (auto& v : w) v = 2.0 * rng.normal();
        const auto fd = finite_diff_grad([&](const ParamVector& x) { return t.loss(x); }, w, 1e-5);
        EXPECT_LT(rel_error(t.grad(w), fd), 1e-5);
    }
}

TEST(GradientCheck, LogRegAtRandomPoints) {
    auto rng = derive_stream(12, "gc", 0, 0);
    const LogRegTask task{4, 5};
    const Dataset data = random_dataset(30, 5, 4, rng);
    for (int i = 0; i < 20; ++i) {
        ParamVector w(task.param_count());
        for (auto& v : w) v = 0.5 * rng.normal();
        const auto fd = finite_diff_grad([&](const ParamVector& x) { return logreg_loss_grad(task, x, data).loss; }, w, 1e-5);
        EXPECT_LT(rel_error(logreg_loss_grad(task, w, data).grad, fd), 1e-5);
    }
}

TEST(GradientCheck, MlpAtRandomPoints) {
    auto rng = derive_stream(13, "gc", 0, 0);
    const MlpTask task{4, 6, 3};
    const Dataset data = random_dataset(25, 4, 3, rng);
    for (int i = 0; i < 20; ++i) {
        ParamVector w(task.param_count());
        for (auto& v : w) v = 0.5 * rng.normal();
        const auto fd = finite_diff_grad([&](const ParamVector& x) { return mlp_loss_grad(task, x, data).loss; }, w, 1e-5);
        EXPECT_LT(rel_error(mlp_loss_grad(task, w, data).grad, fd), 1e-5);
    }
}

TEST(Classifier, ForwardLossAgreesWithLossGrad) {
    auto rng = derive_stream(14, "cls", 0, 0);
    const Dataset data = random_dataset(40, 3, 3, rng);
    for (const Classifier c : {Classifier(LogRegTask{3, 3}), Classifier(MlpTask{3, 4, 3})}) {
        ParamVector w(c.param_count());
        for (auto& v : w) v = 0.3 * rng.normal();
        EXPECT_DOUBLE_EQ(c.loss(w, data), c.loss_grad(w, data).loss);
    }
}

TEST(Classifier, RejectsBadBatches) {
    const Classifier c(LogRegTask{2, 3});
    const Dataset data(3, 2, {1.0, 2.0, 3.0}, {1});
    const ParamVector w(c.param_count());
    std::vector<std::size_t> bad{1};
    EXPECT_THROW(c.loss_grad(w, data, bad), DomainError);
    EXPECT_THROW(c.loss_grad(ParamVector(3), data), DimensionError);
    const Dataset wrong_dim(2, 2, {1.0, 2.0}, {0});
    EXPECT_THROW(c.loss(w, wrong_dim), DimensionError);
}

TEST(SoftmaxXent, StableForLargeLogits) {
    const LogRegTask task{2, 1};
    const Dataset data(1, 2, {1.0}, {0});
    const ParamVector w{1000.0, -1000.0, 0.0, 0.0};
    const auto lg = logreg_loss_grad(task, w, data);
    EXPECT_TRUE(std::isfinite(lg.loss));
    EXPECT_NEAR(lg.loss, 0.0, 1e-12);
    EXPECT_TRUE(lg.grad.all_finite());
}

TEST(Features, LogRegIsIdentity) {
    const LogRegTask task{2, 3};
    const std::vector<double> x{1.0, -2.0, 0.5};
    EXPECT_EQ(features(task, ParamVector(task.param_count()), x), (ParamVector{1.0, -2.0, 0.5}));
}

TEST(DataObjective, FullBatchConsumesNoDraws) {
    auto rng = derive_stream(15, "do", 0, 0);
    auto data = std::make_shared<const Dataset>(random_dataset(10, 2, 2, rng));
    const DataObjective obj(Classifier(LogRegTask{2, 2}), data, {0, 3, 5});
    ParamVector w(obj.dim(), 0.1);
    auto a = derive_stream(1, "x", 0, 0);
    auto b = derive_stream(1, "x", 0, 0);
    EXPECT_EQ(obj.stochastic_grad(w, 32, a), obj.full_grad(w));
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_THROW(obj.stochastic_grad(w, 0, a), DomainError);
    EXPECT_THROW(DataObjective(Classifier(LogRegTask{2, 2}), data, {}), DomainError);
    EXPECT_THROW(DataObjective(Classifier(LogRegTask{2, 2}), data, {10}), DomainError);
}

TEST(DataObjective, MinibatchGradientIsUnbiased) {
    auto rng = derive_stream(16, "do", 0, 0);
    auto data = std::make_shared<const Dataset>(random_dataset(20, 3, 2, rng));
    const DataObjective obj(Classifier(LogRegTask{2, 3}), data);
    ParamVector w(obj.dim());
    for (auto& v : w) v = 0.2 * rng.normal();
    ParamVector acc(obj.dim());
    const int n = 20000;
    for (int i = 0; i < n; ++i) acc += obj.stochastic_grad(w, 5, rng);
    acc *= 1.0 / n;
    EXPECT_LT(rel_error(acc, obj.full_grad(w)), 0.02);
}
