#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedegg/dataset.hpp"
#include "fedegg/errors.hpp"
#include "fedegg/matrix.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/rng.hpp"

namespace fedegg {

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};

// ---------------------------------------------------------------------------
// Quadratic tasks: loss(w) = 1/2 w^T A w - b^T w + c

class QuadraticTask {
public:
    QuadraticTask(Matrix a, ParamVector b, double c) : a_(std::move(a)), b_(std::move(b)), c_(c) {
        require_same_dim(a_.dim(), b_.size(), "QuadraticTask");
        if (a_.dim() == 0) throw DimensionError("QuadraticTask: empty dimension");
        if (a_.max_asymmetry() > 1e-12) throw DomainError("QuadraticTask: A is not symmetric");
    }

    /// 1/2 * curvature * ||w - center||^2 + offset, the isotropic special case.
    static QuadraticTask isotropic(double curvature, const ParamVector& center, double offset) {
        Matrix a = Matrix::identity(center.size());
        a *= curvature;
        ParamVector b = center;
        b *= curvature;
        const double c = offset + 0.5 * curvature * squared_norm(center);
        return QuadraticTask(std::move(a), std::move(b), c);
    }

    std::size_t dim() const noexcept { return b_.size(); }
    const Matrix& a() const noexcept { return a_; }
    const ParamVector& b() const noexcept { return b_; }
    double c() const noexcept { return c_; }

    double loss(const ParamVector& w) const {
        require_same_dim(dim(), w.size(), "QuadraticTask::loss");
        return 0.5 * dot(w, a_ * w) - dot(b_, w) + c_;
    }

    ParamVector grad(const ParamVector& w) const {
        require_same_dim(dim(), w.size(), "QuadraticTask::grad");
        ParamVector g = a_ * w;
        g -= b_;
        return g;
    }

    QuadraticTask with_offset(double c) const { return QuadraticTask(a_, b_, c); }

private:
    Matrix a_;
    ParamVector b_;
    double c_;
};

/// Per-client and guiding gradient-noise standard deviations.
struct NoiseModel {
    double sigma_client = 0.0;
    double sigma_guide = 0.0;
};

/// Exact loss and gradient.
inline LossGrad quad_loss_grad(const QuadraticTask& task, const ParamVector& w) {
    return {task.loss(w), task.grad(w)};
}

/// Loss and gradient with additive N(0, sigma^2 I) gradient noise.
inline LossGrad quad_loss_grad(const QuadraticTask& task, const ParamVector& w, double sigma, RngStream& rng) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("quad_loss_grad: sigma must be finite and >= 0");
    LossGrad out = quad_loss_grad(task, w);
    if (sigma > 0.0) {
        for (auto& g : out.grad) g += sigma * rng.normal();
    }
    return out;
}

struct QuadOptimum {
    ParamVector w_star;
    double f_star = 0.0;
};

inline QuadOptimum quad_optimum(const QuadraticTask& task) {
    ParamVector w = cholesky_solve(task.a(), task.b());
    const double f = task.c() - 0.5 * dot(task.b(), w);
    return {std::move(w), f};
}

struct CurvatureBounds {
    double mu = 0.0;  // smallest Hessian eigenvalue
    double L = 0.0;   // largest Hessian eigenvalue
};

inline CurvatureBounds curvature_bounds(const QuadraticTask& task) {
    const auto ev = symmetric_eigenvalues(task.a());
    return {ev.front(), ev.back()};
}

/// Probability-weighted sum of quadratics, itself a quadratic.
inline QuadraticTask weighted_sum(std::span<const QuadraticTask> tasks, std::span<const double> weights) {
    if (tasks.empty()) throw DomainError("weighted_sum: no tasks");
    require_same_dim(tasks.size(), weights.size(), "weighted_sum weights");
    const std::size_t d = tasks.front().dim();
    Matrix a(d);
    ParamVector b(d);
    double c = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        require_same_dim(d, tasks[i].dim(), "weighted_sum");
        Matrix ai = tasks[i].a();
        ai *= weights[i];
        a += ai;
        b.axpy(weights[i], tasks[i].b());
        c += weights[i] * tasks[i].c();
    }
    // Summation can leave rounding-level asymmetry; average it away.
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t q = r + 1; q < d; ++q) {
            const double s = 0.5 * (a(r, q) + a(q, r));
            a(r, q) = s;
            a(q, r) = s;
        }
    return QuadraticTask(std::move(a), std::move(b), c);
}

// ---------------------------------------------------------------------------
// Classifiers. Parameter layouts:
//   LogReg: W (k x d, row-major) then bias (k)
//   MLP:    W1 (h x d), b1 (h), W2 (k x h), b2 (k)

struct LogRegTask {
    std::size_t num_classes = 2;
    std::size_t input_dim = 1;

    std::size_t param_count() const noexcept { return num_classes * (input_dim + 1); }
};

struct MlpTask {
    std::size_t input_dim = 1;
    std::size_t hidden = 1;
    std::size_t num_classes = 2;

    std::size_t param_count() const noexcept {
        return hidden * input_dim + hidden + num_classes * hidden + num_classes;
    }
};

namespace detail {

/// Softmax cross-entropy of one example; writes p - onehot(y) into dlogits.
inline double softmax_xent(std::span<const double> logits, int y, std::span<double> dlogits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        dlogits[c] = std::exp(logits[c] - mx);
        sum += dlogits[c];
    }
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < logits.size(); ++c) dlogits[c] /= sum;
    dlogits[static_cast<std::size_t>(y)] -= 1.0;
    return lse - logits[static_cast<std::size_t>(y)];
}

inline void check_batch(const Dataset& data, std::span<const std::size_t> batch, std::size_t input_dim,
                        std::size_t num_classes, const char* who) {
    if (batch.empty()) throw DomainError(std::string(who) + ": empty batch");
    require_same_dim(input_dim, data.dim(), who);
    if (data.num_classes() > num_classes) {
        throw DomainError(std::string(who) + ": dataset labels exceed the model's class count");
    }
    for (std::size_t i : batch) {
        if (i >= data.size()) throw DomainError(std::string(who) + ": batch index out of range");
    }
}

inline std::vector<std::size_t> all_indices(const Dataset& data) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

}  // namespace detail

inline void logreg_logits(const LogRegTask& task, const ParamVector& w, std::span<const double> x,
                          std::span<double> out) {
    const std::size_t d = task.input_dim;
    const std::size_t bias = task.num_classes * d;
    for (std::size_t c = 0; c < task.num_classes; ++c) {
        double z = w[bias + c];
        for (std::size_t j = 0; j < d; ++j) z += w[c * d + j] * x[j];
        out[c] = z;
    }
}

/// Mean softmax cross-entropy over the batch and its gradient.
inline LossGrad logreg_loss_grad(const LogRegTask& task, const ParamVector& w, const Dataset& data,
                                 std::span<const std::size_t> batch) {
    require_same_dim(task.param_count(), w.size(), "logreg_loss_grad");
    detail::check_batch(data, batch, task.input_dim, task.num_classes, "logreg_loss_grad");
    const std::size_t d = task.input_dim;
    const std::size_t k = task.num_classes;
    const std::size_t bias = k * d;
    LossGrad out{0.0, ParamVector(w.size())};
    std::vector<double> logits(k), dz(k);
    for (std::size_t i : batch) {
        auto x = data.row(i);
        logreg_logits(task, w, x, logits);
        out.loss += detail::softmax_xent(logits, data.label(i), dz);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t j = 0; j < d; ++j) out.grad[c * d + j] += dz[c] * x[j];
            out.grad[bias + c] += dz[c];
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.grad *= inv;
    return out;
}

inline LossGrad logreg_loss_grad(const LogRegTask& task, const ParamVector& w, const Dataset& data) {
    const auto idx = detail::all_indices(data);
    return logreg_loss_grad(task, w, data, idx);
}

/// Hidden activations tanh(W1 x + b1).
inline void mlp_hidden(const MlpTask& task, const ParamVector& w, std::span<const double> x, std::span<double> out) {
    const std::size_t d = task.input_dim;
    const std::size_t h = task.hidden;
    const std::size_t b1 = h * d;
    for (std::size_t u = 0; u < h; ++u) {
        double a = w[b1 + u];
        for (std::size_t j = 0; j < d; ++j) a += w[u * d + j] * x[j];
        out[u] = std::tanh(a);
    }
}

inline void mlp_logits_from_hidden(const MlpTask& task, const ParamVector& w, std::span<const double> hidden,
                                   std::span<double> out) {
    const std::size_t h = task.hidden;
    const std::size_t w2 = h * task.input_dim + h;
    const std::size_t b2 = w2 + task.num_classes * h;
    for (std::size_t c = 0; c < task.num_classes; ++c) {
        double z = w[b2 + c];
        for (std::size_t u = 0; u < h; ++u) z += w[w2 + c * h + u] * hidden[u];
        out[c] = z;
    }
}

/// Backprop gradient of mean cross-entropy for the d -> h -> k tanh network.
inline LossGrad mlp_loss_grad(const MlpTask& task, const ParamVector& w, const Dataset& data,
                              std::span<const std::size_t> batch) {
    require_same_dim(task.param_count(), w.size(), "mlp_loss_grad");
    detail::check_batch(data, batch, task.input_dim, task.num_classes, "mlp_loss_grad");
    const std::size_t d = task.input_dim;
    const std::size_t h = task.hidden;
    const std::size_t k = task.num_classes;
    const std::size_t b1 = h * d;
    const std::size_t w2 = b1 + h;
    const std::size_t b2 = w2 + k * h;
    LossGrad out{0.0, ParamVector(w.size())};
    std::vector<double> hid(h), logits(k), dz(k), da(h);
    for (std::size_t i : batch) {
        auto x = data.row(i);
        mlp_hidden(task, w, x, hid);
        mlp_logits_from_hidden(task, w, hid, logits);
        out.loss += detail::softmax_xent(logits, data.label(i), dz);
        std::fill(da.begin(), da.end(), 0.0);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t u = 0; u < h; ++u) {
                out.grad[w2 + c * h + u] += dz[c] * hid[u];
                da[u] += w[w2 + c * h + u] * dz[c];
            }
            out.grad[b2 + c] += dz[c];
        }
        for (std::size_t u = 0; u < h; ++u) {
            const double g = da[u] * (1.0 - hid[u] * hid[u]);
            for (std::size_t j = 0; j < d; ++j) out.grad[u * d + j] += g * x[j];
            out.grad[b1 + u] += g;
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.grad *= inv;
    return out;
}

inline LossGrad mlp_loss_grad(const MlpTask& task, const ParamVector& w, const Dataset& data) {
    const auto idx = detail::all_indices(data);
    return mlp_loss_grad(task, w, data, idx);
}

/// A classifier model family, logistic regression or tanh MLP.
class Classifier {
public:
    Classifier(LogRegTask t) : task_(t) {}  // NOLINT(google-explicit-constructor)
    Classifier(MlpTask t) : task_(t) {}     // NOLINT(google-explicit-constructor)

    std::size_t param_count() const {
        return std::visit([](const auto& t) { return t.param_count(); }, task_);
    }
    std::size_t input_dim() const {
        return std::visit([](const auto& t) { return t.input_dim; }, task_);
    }
    std::size_t num_classes() const {
        return std::visit([](const auto& t) { return t.num_classes; }, task_);
    }
    bool is_mlp() const noexcept { return std::holds_alternative<MlpTask>(task_); }
    const auto& variant() const noexcept { return task_; }

    LossGrad loss_grad(const ParamVector& w, const Dataset& data, std::span<const std::size_t> batch) const {
        return std::visit(
            [&](const auto& t) {
                if constexpr (std::is_same_v<std::decay_t<decltype(t)>, LogRegTask>) {
                    return logreg_loss_grad(t, w, data, batch);
                } else {
                    return mlp_loss_grad(t, w, data, batch);
                }
            },
            task_);
    }

    LossGrad loss_grad(const ParamVector& w, const Dataset& data) const {
        const auto idx = detail::all_indices(data);
        return loss_grad(w, data, idx);
    }

    /// Mean cross-entropy over the given examples (forward pass only).
    double loss(const ParamVector& w, const Dataset& data, std::span<const std::size_t> batch) const {
        require_same_dim(param_count(), w.size(), "Classifier::loss");
        detail::check_batch(data, batch, input_dim(), num_classes(), "Classifier::loss");
        std::vector<double> logits(num_classes()), scratch(num_classes());
        double total = 0.0;
        for (std::size_t i : batch) {
            this->logits(w, data.row(i), logits);
            total += detail::softmax_xent(logits, data.label(i), scratch);
        }
        return total * (1.0 / static_cast<double>(batch.size()));
    }

    double loss(const ParamVector& w, const Dataset& data) const {
        const auto idx = detail::all_indices(data);
        return loss(w, data, idx);
    }

    void logits(const ParamVector& w, std::span<const double> x, std::span<double> out) const {
        std::visit(
            [&](const auto& t) {
                if constexpr (std::is_same_v<std::decay_t<decltype(t)>, LogRegTask>) {
                    logreg_logits(t, w, x, out);
                } else {
                    std::vector<double> hid(t.hidden);
                    mlp_hidden(t, w, x, hid);
                    mlp_logits_from_hidden(t, w, hid, out);
                }
            },
            task_);
    }

private:
    std::variant<LogRegTask, MlpTask> task_;
};

// Feature maps used for the guidance similarity: the penultimate representation.

inline ParamVector features(const LogRegTask& task, const ParamVector&, std::span<const double> x) {
    require_same_dim(task.input_dim, x.size(), "features(LogRegTask)");
    return ParamVector(x);
}

inline ParamVector features(const MlpTask& task, const ParamVector& w, std::span<const double> x) {
    require_same_dim(task.input_dim, x.size(), "features(MlpTask)");
    require_same_dim(task.param_count(), w.size(), "features(MlpTask)");
    ParamVector h(task.hidden);
    mlp_hidden(task, w, x, h.span());
    return h;
}

/// Quadratic tasks carry no representation of their own; the raw input is used.
inline ParamVector features(const QuadraticTask&, const ParamVector&, std::span<const double> x) {
    return ParamVector(x);
}

inline ParamVector features(const Classifier& model, const ParamVector& w, std::span<const double> x) {
    return std::visit([&](const auto& t) { return features(t, w, x); }, model.variant());
}

/// Central differences (f(w + h e_i) - f(w - h e_i)) / 2h in every coordinate.
template <typename LossFn>
ParamVector finite_diff_grad(LossFn&& loss_fn, const ParamVector& w, double h) {
    if (!(h > 0.0)) throw DomainError("finite_diff_grad: step must be positive");
    ParamVector g(w.size());
    ParamVector probe = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
        probe[i] = w[i] + h;
        const double up = loss_fn(probe);
        probe[i] = w[i] - h;
        const double down = loss_fn(probe);
        probe[i] = w[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Client objectives: what a federated participant (or the server's guiding
// task) optimizes. Strategies and the round loop are generic over this.

template <typename T>
concept ClientObjective = requires(const T& obj, const ParamVector& w, std::size_t batch, RngStream& rng) {
    { obj.dim() } -> std::convertible_to<std::size_t>;
    { obj.num_examples() } -> std::convertible_to<std::size_t>;
    { obj.full_loss(w) } -> std::convertible_to<double>;
    { obj.full_grad(w) } -> std::same_as<ParamVector>;
    { obj.stochastic_grad(w, batch, rng) } -> std::same_as<ParamVector>;
};

/// A classifier evaluated on an index subset of a shared dataset.
class DataObjective {
public:
    DataObjective(Classifier model, std::shared_ptr<const Dataset> data, std::vector<std::size_t> indices)
        : model_(std::move(model)), data_(std::move(data)), indices_(std::move(indices)) {
        if (!data_) throw DomainError("DataObjective: null dataset");
        if (indices_.empty()) throw DomainError("DataObjective: empty index set");
        for (std::size_t i : indices_) {
            if (i >= data_->size()) throw DomainError("DataObjective: index out of range");
        }
    }

    /// Objective over every example of the dataset.
    DataObjective(Classifier model, std::shared_ptr<const Dataset> data)
        : DataObjective(std::move(model), data, data ? detail::all_indices(*data) : std::vector<std::size_t>{}) {}

    std::size_t dim() const { return model_.param_count(); }
    std::size_t num_examples() const noexcept { return indices_.size(); }
    const Classifier& model() const noexcept { return model_; }
    const Dataset& data() const noexcept { return *data_; }
    const std::vector<std::size_t>& indices() const noexcept { return indices_; }

    double full_loss(const ParamVector& w) const { return model_.loss(w, *data_, indices_); }
    ParamVector full_grad(const ParamVector& w) const { return model_.loss_grad(w, *data_, indices_).grad; }

    /// Gradient on a minibatch drawn uniformly without replacement. A batch at
    /// least as large as the index set is the full set, and consumes no draws.
    ParamVector stochastic_grad(const ParamVector& w, std::size_t batch, RngStream& rng) const {
        if (batch == 0) throw DomainError("stochastic_grad: batch size must be positive");
        if (batch >= indices_.size()) return full_grad(w);
        auto picks = rng.sample_without_replacement(indices_.size(), batch);
        for (auto& p : picks) p = indices_[p];
        return model_.loss_grad(w, *data_, picks).grad;
    }

private:
    Classifier model_;
    std::shared_ptr<const Dataset> data_;
    std::vector<std::size_t> indices_;
};

/// Quadratic task whose stochastic gradient is the exact gradient plus
/// N(0, sigma^2 I) noise. Batch size is ignored.
class QuadraticObjective {
public:
    QuadraticObjective(QuadraticTask task, double sigma = 0.0) : task_(std::move(task)), sigma_(sigma) {
        if (!(sigma_ >= 0.0) || !std::isfinite(sigma_)) throw DomainError("QuadraticObjective: bad sigma");
    }

    std::size_t dim() const noexcept { return task_.dim(); }
    std::size_t num_examples() const noexcept { return 1; }
    const QuadraticTask& task() const noexcept { return task_; }
    double sigma() const noexcept { return sigma_; }

    double full_loss(const ParamVector& w) const { return task_.loss(w); }
    ParamVector full_grad(const ParamVector& w) const { return task_.grad(w); }
    ParamVector stochastic_grad(const ParamVector& w, std::size_t, RngStream& rng) const {
        return quad_loss_grad(task_, w, sigma_, rng).grad;
    }

private:
    QuadraticTask task_;
    double sigma_;
};

static_assert(ClientObjective<DataObjective>);
static_assert(ClientObjective<QuadraticObjective>);

}  // namespace fedegg
