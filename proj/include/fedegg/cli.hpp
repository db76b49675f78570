#pragma once

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedegg/config.hpp"
#include "fedegg/data.hpp"
#include "fedegg/engine.hpp"
#include "fedegg/errors.hpp"
#include "fedegg/schedule.hpp"
#include "fedegg/theory.hpp"

namespace fedegg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitViolation = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFailure = 3;

/// Output directory that refuses to clobber existing files unless forced.
/// All names are claimed before any work starts.
class OutputDir {
public:
    OutputDir(std::filesystem::path root, bool force) : root_(std::move(root)), force_(force) {}

    void claim(const std::string& name) {
        const auto p = root_ / name;
        if (!force_ && std::filesystem::exists(p)) {
            throw Error(p.string() + " already exists (pass --force to overwrite)");
        }
        claimed_.push_back(name);
    }

    void write(const std::string& name, const std::string& content) const {
        std::filesystem::create_directories(root_);
        std::ofstream out(root_ / name, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + (root_ / name).string());
        out << content;
        if (!out) throw Error("write failed for " + (root_ / name).string());
    }

    const std::filesystem::path& root() const noexcept { return root_; }

private:
    std::filesystem::path root_;
    bool force_;
    std::vector<std::string> claimed_;
};

struct CommonArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    bool force = false;
};

namespace detail {

inline SimulationConfig load_with_overrides(const CommonArgs& a) {
    SimulationConfig cfg = load_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.workers) cfg.workers = *a.workers;
    cfg.validate();
    return cfg;
}

inline std::string metrics_text(const std::vector<RoundMetrics>& rows) {
    std::ostringstream ss;
    write_metrics_csv(ss, rows);
    return ss.str();
}

inline std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline double tail_test_loss(const std::vector<RoundMetrics>& rows, std::size_t window) {
    return tail_mean(rows, window, [](const RoundMetrics& r) { return r.test_loss; });
}

inline std::size_t gated_rounds(const std::vector<RoundMetrics>& rows) {
    std::size_t n = 0;
    for (const auto& r : rows) n += (r.gate_open && *r.gate_open) ? 1 : 0;
    return n;
}

/// One run per configuration; run_i_metrics.csv and run_i_config.txt per
/// entry plus summary.csv with tail-window means.
template <typename Label>
int run_sweep(const CommonArgs& a, const std::vector<SimulationConfig>& configs, const std::string& label_header,
              Label&& label, std::ostream& out) {
    OutputDir dir(a.out, a.force);
    dir.claim("resolved_config.txt");
    dir.claim("summary.csv");
    for (std::size_t i = 0; i < configs.size(); ++i) {
        dir.claim("run_" + std::to_string(i) + "_metrics.csv");
        dir.claim("run_" + std::to_string(i) + "_config.txt");
    }
    const SimulationConfig base = load_with_overrides(a);
    dir.write("resolved_config.txt", resolved_config_text(base));

    std::string summary = label_header + ",tail_test_acc,tail_test_loss,gated_rounds\n";
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto res = run_simulation(configs[i]);
        dir.write("run_" + std::to_string(i) + "_metrics.csv", metrics_text(res.metrics));
        dir.write("run_" + std::to_string(i) + "_config.txt", resolved_config_text(configs[i]));
        std::string row = label(configs[i]);
        if (configs[i].rounds > 0) {
            const double acc = tail_accuracy(res.metrics, configs[i].tail_window);
            const double loss = tail_test_loss(res.metrics, configs[i].tail_window);
            row += ',' + format_double(acc) + ',' + format_double(loss);
            out << label_header << '=' << label(configs[i]) << "  tail_test_acc=" << format_double(acc) << '\n';
        } else {
            row += ",,";
        }
        row += ',' + std::to_string(gated_rounds(res.metrics));
        summary += row + '\n';
    }
    dir.write("summary.csv", summary);
    return kExitOk;
}

inline std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::string_view rest = text;
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        out.push_back(parse_double(fedegg::detail::trim(rest.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    if (out.empty()) throw DomainError("empty value list");
    return out;
}

}  // namespace detail

inline int cmd_run(const CommonArgs& a, std::ostream& out) {
    OutputDir dir(a.out, a.force);
    dir.claim("metrics.csv");
    dir.claim("resolved_config.txt");
    const SimulationConfig cfg = detail::load_with_overrides(a);
    dir.write("resolved_config.txt", resolved_config_text(cfg));
    const auto res = run_simulation(cfg);
    dir.write("metrics.csv", detail::metrics_text(res.metrics));
    out << "rounds=" << res.metrics.size();
    if (res.tau) out << "  tau=" << format_double(*res.tau);
    if (!res.metrics.empty()) out << "  tail_test_acc=" << format_double(tail_accuracy(res.metrics, cfg.tail_window));
    out << '\n';
    return kExitOk;
}

inline int cmd_sweep_tau(const CommonArgs& a, const std::string& taus, std::ostream& out) {
    const SimulationConfig base = detail::load_with_overrides(a);
    if (!base.guidance.enabled) throw ConfigError("guidance.enabled", 0, "sweep-tau needs guidance enabled");
    std::vector<SimulationConfig> configs;
    for (double t : detail::parse_list(taus)) {
        configs.push_back(base);
        configs.back().guidance.tau = t;
    }
    return detail::run_sweep(a, configs, "tau", [](const SimulationConfig& c) { return format_double(*c.guidance.tau); },
                             out);
}

inline int cmd_sweep_alpha(const CommonArgs& a, const std::string& alphas, std::ostream& out) {
    const SimulationConfig base = detail::load_with_overrides(a);
    std::vector<SimulationConfig> configs;
    for (double al : detail::parse_list(alphas)) {
        configs.push_back(base);
        configs.back().partition.kind = "dirichlet";
        configs.back().partition.alpha = al;
        configs.back().validate();
    }
    return detail::run_sweep(a, configs, "alpha",
                             [](const SimulationConfig& c) { return format_double(c.partition.alpha); }, out);
}

/// Sampled clients per round = max(1, round(rate * N)).
inline int cmd_sweep_participation(const CommonArgs& a, const std::string& rates, std::ostream& out) {
    const SimulationConfig base = detail::load_with_overrides(a);
    std::vector<SimulationConfig> configs;
    for (double r : detail::parse_list(rates)) {
        if (!(r > 0.0 && r <= 1.0)) throw DomainError("participation rates must lie in (0, 1]");
        configs.push_back(base);
        const auto m = std::lround(r * static_cast<double>(base.clients_total));
        configs.back().clients_sampled = static_cast<std::size_t>(std::max<long>(1, m));
    }
    return detail::run_sweep(a, configs, "sampled",
                             [](const SimulationConfig& c) { return std::to_string(c.clients_sampled); }, out);
}

struct TheoryArgs {
    std::size_t trials = 100000;
    std::size_t instances = 1000;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    bool force = false;
};

inline int cmd_verify_theory(const TheoryArgs& a, std::ostream& out) {
    OutputDir dir(a.out, a.force);
    dir.claim("theory.csv");
    dir.claim("resolved_config.txt");
    dir.write("resolved_config.txt", "command=verify-theory\nseed=" + std::to_string(a.seed) +
                                         "\ninstances=" + std::to_string(a.instances) +
                                         "\ntrials=" + std::to_string(a.trials) + '\n');
    theory::SuiteOptions opt;
    opt.instances = a.instances;
    opt.trials = a.trials;
    opt.seed = a.seed;
    opt.workers = a.workers;
    const auto rows = theory::run_theory_suite(opt);
    std::ostringstream ss;
    theory::write_theory_csv(ss, rows);
    dir.write("theory.csv", ss.str());
    std::size_t violations = 0;
    for (const auto& r : rows) violations += r.result.holds ? 0 : 1;
    out << "instances=" << rows.size() << "  violations=" << violations << "  " << (violations ? "FAIL" : "PASS")
        << '\n';
    return violations ? kExitViolation : kExitOk;
}

struct PartitionArgs {
    double alpha = 0.1;
    std::size_t clients = 100;
    std::size_t classes = 10;
    std::size_t per_class = 500;
    std::string out;
    std::uint64_t seed = 0;
    bool force = false;
};

/// Per-client label histograms of a Dir(alpha) split of a class-balanced label set.
inline int cmd_partition_stats(const PartitionArgs& a, std::ostream& out) {
    if (a.classes < 1 || a.per_class < 1) throw DomainError("partition-stats: classes and per-class must be >= 1");
    OutputDir dir(a.out, a.force);
    dir.claim("partition_stats.csv");
    dir.claim("resolved_config.txt");
    dir.write("resolved_config.txt", "command=partition-stats\nseed=" + std::to_string(a.seed) +
                                         "\nalpha=" + format_double(a.alpha) + "\nclients=" + std::to_string(a.clients) +
                                         "\nclasses=" + std::to_string(a.classes) +
                                         "\nper_class=" + std::to_string(a.per_class) + '\n');
    std::vector<int> labels;
    for (std::size_t c = 0; c < a.classes; ++c) labels.insert(labels.end(), a.per_class, static_cast<int>(c));
    auto rng = derive_stream(a.seed, "partition", 0, 0);
    const Partition p = dirichlet_partition(labels, a.clients, a.alpha, rng);
    const auto shares = max_class_shares(p, labels, a.classes);

    std::string csv = "client,size";
    for (std::size_t c = 0; c < a.classes; ++c) csv += ",class_" + std::to_string(c);
    csv += ",max_share\n";
    double mean_share = 0.0;
    for (std::size_t k = 0; k < a.clients; ++k) {
        std::vector<std::size_t> hist(a.classes);
        for (std::size_t i : p.client_indices[k]) ++hist[static_cast<std::size_t>(labels[i])];
        csv += std::to_string(k) + ',' + std::to_string(p.client_indices[k].size());
        for (auto h : hist) csv += ',' + std::to_string(h);
        csv += ',' + format_double(shares[k]) + '\n';
        mean_share += shares[k];
    }
    dir.write("partition_stats.csv", csv);
    out << "mean_max_class_share=" << format_double(mean_share / static_cast<double>(a.clients)) << '\n';
    return kExitOk;
}

/// Online guidance against offline pretraining on the guiding set, same seed.
inline int cmd_offline_vs_online(const CommonArgs& a, std::optional<std::size_t> pretrain_steps, std::ostream& out) {
    OutputDir dir(a.out, a.force);
    for (const char* n : {"online_metrics.csv", "offline_metrics.csv", "summary.csv", "resolved_config.txt"}) dir.claim(n);
    SimulationConfig cfg = detail::load_with_overrides(a);
    if (pretrain_steps) cfg.pretrain_steps = *pretrain_steps;
    cfg.guidance.enabled = true;  // both variants draw on the guiding set
    cfg.track_train_loss = true;
    cfg.validate();
    dir.write("resolved_config.txt", resolved_config_text(cfg));
    const auto online = run_simulation(cfg);
    const auto offline = run_offline_pretrain(cfg, cfg.pretrain_steps);
    dir.write("online_metrics.csv", detail::metrics_text(online.metrics));
    dir.write("offline_metrics.csv", detail::metrics_text(offline.metrics));
    std::string summary = "variant,tail_train_loss,tail_test_acc,tail_test_loss\n";
    for (const auto* run : {&online, &offline}) {
        const char* name = run == &online ? "online" : "offline";
        summary += name;
        if (cfg.rounds > 0) {
            const double tl = tail_mean(run->metrics, cfg.tail_window, [](const RoundMetrics& r) { return r.train_loss; });
            const double acc = tail_accuracy(run->metrics, cfg.tail_window);
            summary += ',' + format_double(tl) + ',' + format_double(acc) + ',' +
                       format_double(detail::tail_test_loss(run->metrics, cfg.tail_window));
            out << name << "  tail_train_loss=" << format_double(tl) << "  tail_test_acc=" << format_double(acc) << '\n';
        } else {
            summary += ",,";
        }
        summary += '\n';
    }
    dir.write("summary.csv", summary);
    return kExitOk;
}

/// Parses argv and runs the chosen subcommand. Returns the process exit code.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Federated learning simulator with server-side guidance, and its theory harness"};
    app.require_subcommand(1);

    auto add_common = [](CLI::App* sub, CommonArgs& a, bool needs_config) {
        auto* c = sub->add_option("--config", a.config, "Configuration file (key=value)");
        if (needs_config) c->required();
        sub->add_option("--out", a.out, "Output directory")->required();
        sub->add_option("--seed", a.seed, "Override the configured seed");
        sub->add_option("--workers", a.workers, "Worker threads for client updates")->check(CLI::PositiveNumber);
        sub->add_flag("--force", a.force, "Overwrite existing output files");
    };

    CommonArgs run_args, tau_args, alpha_args, part_args, ovo_args;
    std::string taus, alphas, rates;
    std::optional<std::size_t> pretrain;
    TheoryArgs theory_args;
    PartitionArgs pstats;

    auto* run = app.add_subcommand("run", "Run one simulation");
    add_common(run, run_args, true);

    auto* sweep_tau = app.add_subcommand("sweep-tau", "One run per gate threshold");
    add_common(sweep_tau, tau_args, true);
    sweep_tau->add_option("--taus", taus, "Comma-separated thresholds (inf, -inf allowed)")->required();

    auto* sweep_alpha = app.add_subcommand("sweep-alpha", "One run per Dirichlet concentration");
    add_common(sweep_alpha, alpha_args, true);
    sweep_alpha->add_option("--alphas", alphas, "Comma-separated alphas")->required();

    auto* sweep_part = app.add_subcommand("sweep-participation", "One run per participation rate");
    add_common(sweep_part, part_args, true);
    sweep_part->add_option("--rates", rates, "Comma-separated rates in (0, 1]")->required();

    auto* verify = app.add_subcommand("verify-theory", "Check the one-step bound on random quadratic instances");
    verify->add_option("--trials", theory_args.trials, "Monte Carlo trials for the stochastic cases");
    verify->add_option("--instances", theory_args.instances, "Random noiseless instances");
    verify->add_option("--out", theory_args.out, "Output directory")->required();
    verify->add_option("--seed", theory_args.seed, "Master seed");
    verify->add_option("--workers", theory_args.workers, "Worker threads")->check(CLI::PositiveNumber);
    verify->add_flag("--force", theory_args.force, "Overwrite existing output files");

    auto* pstat = app.add_subcommand("partition-stats", "Per-client label histograms of a Dirichlet split");
    pstat->add_option("--alpha", pstats.alpha, "Dirichlet concentration")->required();
    pstat->add_option("--clients", pstats.clients, "Number of clients")->required();
    pstat->add_option("--classes", pstats.classes, "Number of classes")->required();
    pstat->add_option("--per-class", pstats.per_class, "Examples per class");
    pstat->add_option("--out", pstats.out, "Output directory")->required();
    pstat->add_option("--seed", pstats.seed, "Master seed");
    pstat->add_flag("--force", pstats.force, "Overwrite existing output files");

    auto* ovo = app.add_subcommand("offline-vs-online", "Online guidance against offline pretraining");
    add_common(ovo, ovo_args, true);
    ovo->add_option("--pretrain-steps", pretrain, "Full-batch steps on the guiding set before training");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (run->parsed()) return cmd_run(run_args, out);
        if (sweep_tau->parsed()) return cmd_sweep_tau(tau_args, taus, out);
        if (sweep_alpha->parsed()) return cmd_sweep_alpha(alpha_args, alphas, out);
        if (sweep_part->parsed()) return cmd_sweep_participation(part_args, rates, out);
        if (verify->parsed()) return cmd_verify_theory(theory_args, out);
        if (pstat->parsed()) return cmd_partition_stats(pstats, out);
        if (ovo->parsed()) return cmd_offline_vs_online(ovo_args, pretrain, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace fedegg::cli
