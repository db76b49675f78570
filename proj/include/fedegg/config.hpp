#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedegg/engine.hpp"
#include "fedegg/errors.hpp"
#include "fedegg/schedule.hpp"
#include "fedegg/strategies.hpp"

namespace fedegg {

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::size_t parse_count(std::string_view v) {
    const double d = parse_double(v);
    if (!(d >= 0.0) || d != std::floor(d) || d > 9.007199254740992e15) {
        throw DomainError("expected a whole number, got '" + std::string(v) + "'");
    }
    return static_cast<std::size_t>(d);
}

inline std::uint64_t parse_u64(std::string_view v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw DomainError("expected an unsigned integer, got '" + std::string(v) + "'");
    }
    return out;
}

inline bool parse_bool(std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw DomainError("expected true or false, got '" + std::string(v) + "'");
}

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

struct ConfigKey {
    const char* name;
    std::function<void(SimulationConfig&, std::string_view)> set;
    std::function<std::string(const SimulationConfig&)> get;
};

// clang-format off
inline const std::vector<ConfigKey>& config_keys() {
    using C = SimulationConfig;
    using V = std::string_view;
    static const std::vector<ConfigKey> keys = {
        {"seed", [](C& c, V v) { c.seed = parse_u64(v); }, [](const C& c) { return std::to_string(c.seed); }},
        {"rounds", [](C& c, V v) { c.rounds = parse_count(v); }, [](const C& c) { return std::to_string(c.rounds); }},
        {"clients.total", [](C& c, V v) { c.clients_total = parse_count(v); }, [](const C& c) { return std::to_string(c.clients_total); }},
        {"clients.sampled", [](C& c, V v) { c.clients_sampled = parse_count(v); }, [](const C& c) { return std::to_string(c.clients_sampled); }},
        {"eval_every", [](C& c, V v) { c.eval_every = parse_count(v); }, [](const C& c) { return std::to_string(c.eval_every); }},
        {"tail_window", [](C& c, V v) { c.tail_window = parse_count(v); }, [](const C& c) { return std::to_string(c.tail_window); }},
        {"workers", [](C& c, V v) { c.workers = parse_count(v); }, [](const C& c) { return std::to_string(c.workers); }},
        {"metrics.timing", [](C& c, V v) { c.timing = parse_bool(v); }, [](const C& c) { return bool_str(c.timing); }},
        {"metrics.train_loss", [](C& c, V v) { c.track_train_loss = parse_bool(v); }, [](const C& c) { return bool_str(c.track_train_loss); }},

        {"model.kind", [](C& c, V v) { c.model.kind = std::string(v); }, [](const C& c) { return c.model.kind; }},
        {"model.hidden", [](C& c, V v) { c.model.hidden = parse_count(v); }, [](const C& c) { return std::to_string(c.model.hidden); }},
        {"model.init_scale", [](C& c, V v) { c.model.init_scale = parse_double(v); }, [](const C& c) { return format_double(c.model.init_scale); }},

        {"data.source", [](C& c, V v) { c.data.source = std::string(v); }, [](const C& c) { return c.data.source; }},
        {"data.classes", [](C& c, V v) { c.data.classes = parse_count(v); }, [](const C& c) { return std::to_string(c.data.classes); }},
        {"data.dim", [](C& c, V v) { c.data.dim = parse_count(v); }, [](const C& c) { return std::to_string(c.data.dim); }},
        {"data.train_per_class", [](C& c, V v) { c.data.train_per_class = parse_count(v); }, [](const C& c) { return std::to_string(c.data.train_per_class); }},
        {"data.test_per_class", [](C& c, V v) { c.data.test_per_class = parse_count(v); }, [](const C& c) { return std::to_string(c.data.test_per_class); }},
        {"data.spread", [](C& c, V v) { c.data.spread = parse_double(v); }, [](const C& c) { return format_double(c.data.spread); }},
        {"data.shift", [](C& c, V v) { c.data.shift = parse_double(v); }, [](const C& c) { return format_double(c.data.shift); }},
        {"data.train_path", [](C& c, V v) { c.data.train_path = std::string(v); }, [](const C& c) { return c.data.train_path; }},
        {"data.test_path", [](C& c, V v) { c.data.test_path = std::string(v); }, [](const C& c) { return c.data.test_path; }},

        {"partition.kind", [](C& c, V v) { c.partition.kind = std::string(v); }, [](const C& c) { return c.partition.kind; }},
        {"partition.alpha", [](C& c, V v) { c.partition.alpha = parse_double(v); }, [](const C& c) { return format_double(c.partition.alpha); }},

        {"strategy.kind", [](C& c, V v) { c.strategy.kind = parse_strategy_kind(std::string(v)); }, [](const C& c) { return to_string(c.strategy.kind); }},
        {"strategy.local_steps", [](C& c, V v) { c.strategy.local_steps = parse_count(v); }, [](const C& c) { return std::to_string(c.strategy.local_steps); }},
        {"strategy.batch_size", [](C& c, V v) { c.strategy.batch_size = parse_count(v); }, [](const C& c) { return std::to_string(c.strategy.batch_size); }},
        {"strategy.lr", [](C& c, V v) { c.strategy.lr = PiecewiseSchedule::parse(v); }, [](const C& c) { return c.strategy.lr.to_string(); }},
        {"strategy.mu_prox", [](C& c, V v) { c.strategy.mu_prox = parse_double(v); }, [](const C& c) { return format_double(c.strategy.mu_prox); }},
        {"strategy.fednova_variable_steps", [](C& c, V v) { c.strategy.fednova_variable_steps = parse_bool(v); }, [](const C& c) { return bool_str(c.strategy.fednova_variable_steps); }},

        {"guidance.enabled", [](C& c, V v) { c.guidance.enabled = parse_bool(v); }, [](const C& c) { return bool_str(c.guidance.enabled); }},
        {"guidance.rho", [](C& c, V v) { c.guidance.config.rho = parse_double(v); }, [](const C& c) { return format_double(c.guidance.config.rho); }},
        {"guidance.iota", [](C& c, V v) { c.guidance.config.iota = parse_double(v); }, [](const C& c) { return format_double(c.guidance.config.iota); }},
        {"guidance.log_base", [](C& c, V v) { c.guidance.config.log_base = parse_double(v); }, [](const C& c) { return format_double(c.guidance.config.log_base); }},
        {"guidance.beta", [](C& c, V v) { c.guidance.config.beta = parse_double(v); }, [](const C& c) { return format_double(c.guidance.config.beta); }},
        {"guidance.Tg", [](C& c, V v) { c.guidance.config.steps = parse_count(v); }, [](const C& c) { return std::to_string(c.guidance.config.steps); }},
        {"guidance.batch_size", [](C& c, V v) { c.guidance.config.batch_size = parse_count(v); }, [](const C& c) { return std::to_string(c.guidance.config.batch_size); }},
        {"guidance.gamma",
         [](C& c, V v) {
             if (v == "auto") c.guidance.config.gamma.reset();
             else c.guidance.config.gamma = PiecewiseSchedule::parse(v);
         },
         [](const C& c) { return c.guidance.config.gamma ? c.guidance.config.gamma->to_string() : std::string("auto"); }},
        {"guidance.cos_floor", [](C& c, V v) { c.guidance.config.cos_floor = parse_double(v); }, [](const C& c) { return format_double(c.guidance.config.cos_floor); }},
        {"guidance.overlap",
         [](C& c, V v) {
             if (v == "LH" || v == "MH" || v == "HH") c.guidance.overlap = GuidingSetSpec::overlap_for(std::string(v));
             else c.guidance.overlap = parse_double(v);
         },
         [](const C& c) { return format_double(c.guidance.overlap); }},
        {"guidance.size_per_class",
         [](C& c, V v) {
             if (v == "auto") c.guidance.size_per_class.reset();
             else c.guidance.size_per_class = parse_count(v);
         },
         [](const C& c) { return c.guidance.size_per_class ? std::to_string(*c.guidance.size_per_class) : std::string("auto"); }},
        {"guidance.shift", [](C& c, V v) { c.guidance.shift = parse_double(v); }, [](const C& c) { return format_double(c.guidance.shift); }},
        {"guidance.source", [](C& c, V v) { c.guidance.source = std::string(v); }, [](const C& c) { return c.guidance.source; }},
        {"guidance.candidates_path", [](C& c, V v) { c.guidance.candidates_path = std::string(v); }, [](const C& c) { return c.guidance.candidates_path; }},
        {"guidance.tau",
         [](C& c, V v) {
             if (v == "auto") c.guidance.tau.reset();
             else c.guidance.tau = parse_double(v);
         },
         [](const C& c) { return c.guidance.tau ? format_double(*c.guidance.tau) : std::string("auto"); }},

        {"offline.pretrain_steps", [](C& c, V v) { c.pretrain_steps = parse_count(v); }, [](const C& c) { return std::to_string(c.pretrain_steps); }},
    };
    return keys;
}
// clang-format on

inline const ConfigKey* find_key(std::string_view name) {
    for (const auto& k : config_keys()) {
        if (name == k.name) return &k;
    }
    return nullptr;
}

}  // namespace detail

/// Sets one key. Unknown keys and unparsable values raise ConfigError.
inline void apply_config_value(SimulationConfig& cfg, std::string_view key, std::string_view value, int line = 0) {
    const auto* k = detail::find_key(key);
    if (!k) throw ConfigError(std::string(key), line, "unknown key");
    try {
        k->set(cfg, value);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string(key), line, e.what());
    }
}

/// Parses flat `key = value` text on top of `base`. `#` starts a comment;
/// blank lines are ignored; a key may appear only once.
inline SimulationConfig parse_config(std::string_view text, SimulationConfig base = {}) {
    std::set<std::string, std::less<>> seen;
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("", line_no, "expected key=value");
        const auto key = detail::trim(line.substr(0, eq));
        const auto value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("", line_no, "missing key");
        if (!seen.insert(std::string(key)).second) throw ConfigError(std::string(key), line_no, "duplicate key");
        apply_config_value(base, key, value, line_no);
    }
    return base;
}

inline SimulationConfig load_config(const std::filesystem::path& path, SimulationConfig base = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("", 0, "cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

/// Every key with its effective value, one per line, in canonical order.
/// Parsing the output yields the same configuration.
inline std::string resolved_config_text(const SimulationConfig& cfg) {
    std::string out;
    for (const auto& k : detail::config_keys()) {
        out += k.name;
        out += '=';
        out += k.get(cfg);
        out += '\n';
    }
    return out;
}

}  // namespace fedegg
