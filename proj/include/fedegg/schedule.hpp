#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedegg/errors.hpp"

namespace fedegg {

/// Shortest round-trip decimal form of a double ("inf", "-inf" for infinities).
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Parses a double, accepting "inf"/"-inf". Throws DomainError on junk.
inline double parse_double(std::string_view s) {
    if (s == "inf" || s == "+inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw DomainError("not a number: '" + std::string(s) + "'");
    }
    return v;
}

/// Piecewise-constant value over 0-based round index. Stages are
/// (first_round, value) pairs with strictly increasing first_round, the first
/// starting at round 0. Text form: "0:1e-2,100:1e-3,200:1e-4" or a bare value.
class PiecewiseSchedule {
public:
    PiecewiseSchedule() : stages_{{0, 0.0}} {}
    explicit PiecewiseSchedule(double constant) : stages_{{0, constant}} {}
    explicit PiecewiseSchedule(std::vector<std::pair<std::size_t, double>> stages) : stages_(std::move(stages)) {
        if (stages_.empty() || stages_.front().first != 0) throw DomainError("schedule must start at round 0");
        for (std::size_t i = 1; i < stages_.size(); ++i) {
            if (stages_[i].first <= stages_[i - 1].first) throw DomainError("schedule stages must increase");
        }
        for (const auto& [start, v] : stages_) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("schedule values must be finite and >= 0");
        }
    }

    double at(std::size_t round) const {
        double v = stages_.front().second;
        for (const auto& [start, value] : stages_) {
            if (start > round) break;
            v = value;
        }
        return v;
    }

    const auto& stages() const noexcept { return stages_; }

    static PiecewiseSchedule parse(std::string_view text) {
        if (text.find(':') == std::string_view::npos) return PiecewiseSchedule(parse_double(text));
        std::vector<std::pair<std::size_t, double>> stages;
        while (!text.empty()) {
            const auto comma = text.find(',');
            const auto item = text.substr(0, comma);
            const auto colon = item.find(':');
            if (colon == std::string_view::npos) throw DomainError("schedule stage needs 'round:value'");
            const double start = parse_double(item.substr(0, colon));
            if (start < 0 || start != std::floor(start)) throw DomainError("schedule round must be a whole number");
            stages.emplace_back(static_cast<std::size_t>(start), parse_double(item.substr(colon + 1)));
            if (comma == std::string_view::npos) break;
            text.remove_prefix(comma + 1);
        }
        return PiecewiseSchedule(std::move(stages));
    }

    std::string to_string() const {
        if (stages_.size() == 1) return format_double(stages_.front().second);
        std::string out;
        for (const auto& [start, v] : stages_) {
            if (!out.empty()) out += ',';
            out += std::to_string(start) + ':' + format_double(v);
        }
        return out;
    }

    friend bool operator==(const PiecewiseSchedule&, const PiecewiseSchedule&) = default;

private:
    std::vector<std::pair<std::size_t, double>> stages_;
};

}  // namespace fedegg
