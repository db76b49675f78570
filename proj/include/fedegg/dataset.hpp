#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedegg/errors.hpp"
#include "fedegg/numerics.hpp"

namespace fedegg {

/// Labelled examples: an n x d row-major feature matrix plus n labels in [0, k).
/// Immutable once constructed; the constructor enforces n >= 1, labels < k and
/// finite features.
class Dataset {
public:
    Dataset(std::size_t dim, std::size_t num_classes, std::vector<double> features, std::vector<int> labels)
        : dim_(dim), num_classes_(num_classes), features_(std::move(features)), labels_(std::move(labels)) {
        if (dim_ == 0) throw DimensionError("Dataset: feature dimension must be positive");
        if (num_classes_ < 1) throw DomainError("Dataset: need at least one class");
        if (labels_.empty()) throw DomainError("Dataset: n must be >= 1");
        if (features_.size() != labels_.size() * dim_) {
            throw DimensionError("Dataset: feature buffer holds " + std::to_string(features_.size()) +
                                 " values, expected " + std::to_string(labels_.size() * dim_));
        }
        for (int y : labels_) {
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes_) {
                throw DomainError("Dataset: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes_) + ")");
            }
        }
        for (double v : features_) {
            if (!std::isfinite(v)) throw DomainError("Dataset: non-finite feature value");
        }
    }

    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t num_classes() const noexcept { return num_classes_; }

    std::span<const double> row(std::size_t i) const noexcept {
        return std::span<const double>(features_).subspan(i * dim_, dim_);
    }
    int label(std::size_t i) const noexcept { return labels_[i]; }

    const std::vector<double>& features() const noexcept { return features_; }
    const std::vector<int>& labels() const noexcept { return labels_; }

    Dataset subset(std::span<const std::size_t> indices) const {
        std::vector<double> feats;
        std::vector<int> labs;
        feats.reserve(indices.size() * dim_);
        labs.reserve(indices.size());
        for (std::size_t i : indices) {
            if (i >= size()) throw DomainError("Dataset::subset: index out of range");
            auto r = row(i);
            feats.insert(feats.end(), r.begin(), r.end());
            labs.push_back(labels_[i]);
        }
        return Dataset(dim_, num_classes_, std::move(feats), std::move(labs));
    }

    /// Per-class mean feature vectors. Classes without examples get an empty vector.
    std::vector<ParamVector> class_means() const {
        std::vector<ParamVector> sums(num_classes_, ParamVector(dim_));
        std::vector<std::size_t> counts(num_classes_, 0);
        for (std::size_t i = 0; i < size(); ++i) {
            auto& s = sums[static_cast<std::size_t>(labels_[i])];
            auto r = row(i);
            for (std::size_t j = 0; j < dim_; ++j) s[j] += r[j];
            ++counts[static_cast<std::size_t>(labels_[i])];
        }
        for (std::size_t c = 0; c < num_classes_; ++c) {
            if (counts[c] == 0) {
                sums[c] = ParamVector();
            } else {
                sums[c] *= 1.0 / static_cast<double>(counts[c]);
            }
        }
        return sums;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    std::size_t dim_;
    std::size_t num_classes_;
    std::vector<double> features_;
    std::vector<int> labels_;
};

/// Concatenates datasets that share dimension and class count.
inline Dataset concatenate(std::span<const Dataset> parts) {
    if (parts.empty()) throw DomainError("concatenate: no datasets");
    std::vector<double> feats;
    std::vector<int> labs;
    for (const auto& p : parts) {
        require_same_dim(parts.front().dim(), p.dim(), "concatenate");
        if (p.num_classes() != parts.front().num_classes()) throw DomainError("concatenate: class count differs");
        feats.insert(feats.end(), p.features().begin(), p.features().end());
        labs.insert(labs.end(), p.labels().begin(), p.labels().end());
    }
    return Dataset(parts.front().dim(), parts.front().num_classes(), std::move(feats), std::move(labs));
}

}  // namespace fedegg
