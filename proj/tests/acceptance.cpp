// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedegg/cli.hpp"
#include "fedegg/fedegg.hpp"

using namespace fedegg;
namespace fs = std::filesystem;

namespace {

const char* kBenchmark =
    "rounds=150\n"
    "clients.total=20\n"
    "clients.sampled=4\n"
    "data.classes=10\n"
    "data.dim=20\n"
    "data.train_per_class=100\n"
    "data.test_per_class=50\n"
    "data.shift=3\n"
    "data.spread=1.5\n"
    "partition.alpha=0.1\n"
    "strategy.lr=0.1\n"
    "guidance.overlap=LH\n"
    "guidance.size_per_class=20\n"
    "offline.pretrain_steps=150\n"
    "tail_window=50\n"
    "metrics.train_loss=true\n";

const char* kSmall =
    "rounds=30\n"
    "clients.total=10\n"
    "clients.sampled=3\n"
    "data.classes=5\n"
    "data.dim=8\n"
    "data.train_per_class=40\n"
    "data.test_per_class=20\n"
    "data.shift=3\n"
    "data.spread=1.5\n"
    "strategy.lr=0.1\n"
    "strategy.batch_size=16\n"
    "guidance.size_per_class=10\n"
    "tail_window=10\n";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string csv_of(const std::vector<RoundMetrics>& rows) {
    std::ostringstream os;
    write_metrics_csv(os, rows);
    return os.str();
}

std::string base_columns(const std::vector<RoundMetrics>& rows) {
    std::ostringstream os;
    for (const auto& m : rows) {
        os << m.round << ',' << format_double(m.mean_local_loss) << ',' << format_double(*m.test_loss) << ','
           << format_double(*m.test_acc) << '\n';
    }
    return os.str();
}

struct Report {
    int failures = 0;

    void line(int id, bool pass, const std::string& what, const std::string& detail) {
        std::cout << "criterion " << (id < 10 ? " " : "") << id << ": " << (pass ? "PASS" : "FAIL") << "  " << what
                  << "  [" << detail << "]" << std::endl;
        if (!pass) ++failures;
    }
};

// Every metrics row produced by criteria 4 to 9, for the gate check.
std::vector<RoundMetrics> g_rows;

SimulationResult track(SimulationResult r) {
    g_rows.insert(g_rows.end(), r.metrics.begin(), r.metrics.end());
    return r;
}

// FedAvg written out by hand from the building blocks, with the engine's stream layout.
std::vector<RoundMetrics> reference_fedavg(const SimulationConfig& cfg) {
    const Setup s = prepare(cfg);
    std::vector<DataObjective> clients;
    for (const auto& idx : s.partition.client_indices) clients.emplace_back(s.model, s.train, idx);
    ParamVector w = s.w0;
    std::vector<RoundMetrics> rows;
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        auto srng = derive_stream(cfg.seed, "sample", t, 0);
        auto sampled = srng.sample_without_replacement(clients.size(), cfg.clients_sampled);
        std::sort(sampled.begin(), sampled.end());
        std::vector<ClientUpdate> ups;
        std::vector<double> losses;
        for (std::size_t k : sampled) {
            auto rng = derive_stream(cfg.seed, "client", t, k);
            ups.push_back(local_update_sgd(w, clients[k],
                                           LocalRun{cfg.strategy.local_steps, cfg.strategy.batch_size, cfg.strategy.lr.at(t - 1)},
                                           rng));
            losses.push_back(ups.back().final_local_loss);
        }
        w = aggregate_mean(ups);
        RoundMetrics m;
        m.round = t;
        m.mean_local_loss = mean(losses);
        const auto ev = evaluate(s.model, w, *s.test);
        m.test_loss = ev.loss;
        m.test_acc = ev.accuracy;
        rows.push_back(m);
    }
    return rows;
}

void criterion_1(Report& rep) {
    const auto t0 = Clock::now();
    theory::SuiteOptions opt;
    opt.instances = 1000;
    opt.stochastic_sigmas.clear();
    const auto rows = theory::run_theory_suite(opt);
    std::size_t bad = 0;
    double worst = -INFINITY;
    for (const auto& r : rows) {
        const double gap = r.result.delta_fedegg - r.result.delta_fedavg - r.result.epsilon_closed;
        worst = std::max(worst, gap);
        bad += gap > 1e-9;
    }
    const double secs = seconds_since(t0);
    rep.line(1, rows.size() == 1000 && bad == 0 && secs < 10.0, "one-step bound on 1000 noiseless instances",
             "violations=" + std::to_string(bad) + " max_gap=" + format_double(worst) + " secs=" + format_double(secs));
}

void criterion_2(Report& rep) {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string detail;
    for (double sigma : {0.5, 1.0}) {
        const auto in = theory::running_example(sigma);
        theory::OneStepOptions o;
        o.trials = 100000;
        o.instance = sigma == 0.5 ? 1 : 2;
        const auto r = theory::one_step_experiment(in.pair, in.params, in.w_t, o);
        const bool pass = r.delta_fedegg <= r.delta_fedavg + r.epsilon_closed + 3.0 * r.stderr_;
        ok = ok && pass;
        detail += "sigma=" + format_double(sigma) + " egg=" + format_double(r.delta_fedegg) +
                  " bound=" + format_double(r.delta_fedavg + r.epsilon_closed + 3.0 * r.stderr_) + " ";
    }
    const double secs = seconds_since(t0);
    rep.line(2, ok && secs < 30.0, "stochastic one-step bound, 1e5 trials", detail + "secs=" + format_double(secs));
}

void criterion_3(Report& rep) {
    const auto in = theory::running_example();
    const double eps = theory::epsilon(in.params, 0.5, -1.5);
    const auto r = theory::one_step_experiment(in.pair, in.params, in.w_t, {});
    const bool ok = std::abs(eps - 0.28) <= 1e-12 && std::abs(r.epsilon_closed - 0.28) <= 1e-12 &&
                    std::abs(r.gamma_g - 0.5) <= 1e-12 && std::abs(r.pi + 1.5) <= 1e-12 &&
                    std::abs(r.delta_fedegg - 0.04) <= 1e-12 && r.delta_fedavg == 0.0;
    rep.line(3, ok, "worked correction value and noiseless one-step distances",
             "eps=" + format_double(eps) + " egg=" + format_double(r.delta_fedegg) + " avg=" + format_double(r.delta_fedavg));
}

void criterion_4(Report& rep) {
    bool ok = true;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        auto cfg = parse_config(kSmall);
        cfg.seed = seed;
        const auto off = track(run_simulation(cfg));
        ok = ok && csv_of(off.metrics) == csv_of(reference_fedavg(cfg));

        auto inert = cfg;
        inert.guidance.enabled = true;
        inert.guidance.source = "mirror";  // guiding set = training data, so the task gap is zero
        inert.guidance.config.gamma = PiecewiseSchedule(0.0);
        inert.guidance.tau = INFINITY;
        const auto g = track(run_simulation(inert));
        ok = ok && base_columns(g.metrics) == base_columns(off.metrics) && g.final_model == off.final_model;
    }
    rep.line(4, ok, "guidance off, and zero-step guidance on a zero-gap set, reproduce FedAvg",
             "3 seeds, byte and bitwise comparison");
}

void criterion_5(Report& rep) {
    bool ok = true;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        auto cfg = parse_config(kSmall);
        cfg.seed = seed;
        const auto avg = track(run_simulation(cfg));

        auto prox = cfg;
        prox.strategy.kind = StrategyKind::FedProx;
        prox.strategy.mu_prox = 0.0;
        const auto p = track(run_simulation(prox));
        ok = ok && csv_of(p.metrics) == csv_of(avg.metrics) && p.final_model == avg.final_model;

        auto nova = cfg;
        nova.strategy.kind = StrategyKind::FedNova;
        const auto n = track(run_simulation(nova));
        ok = ok && csv_of(n.metrics) == csv_of(avg.metrics) && n.final_model == avg.final_model;

        auto one = cfg;
        one.rounds = 1;
        auto scaf = one;
        scaf.strategy.kind = StrategyKind::Scaffold;
        const auto a1 = run_simulation(one);
        const auto s1 = track(run_simulation(scaf));
        ok = ok && csv_of(s1.metrics) == csv_of(a1.metrics) && s1.final_model == a1.final_model;
    }
    rep.line(5, ok, "FedProx(mu=0), FedNova(equal steps), SCAFFOLD(round 1) equal FedAvg bitwise", "3 seeds");
}

void criterion_6(Report& rep) {
    auto rel = [](const ParamVector& a, const ParamVector& b) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += b[i] * b[i];
        }
        return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
    };
    auto rng = derive_stream(6, "acceptance", 0, 0);
    auto random_data = [&](std::size_t n, std::size_t d, std::size_t k) {
        std::vector<double> f(n * d);
        std::vector<int> y(n);
        for (auto& v : f) v = rng.normal();
        for (auto& l : y) l = static_cast<int>(rng.below(k));
        return Dataset(d, k, std::move(f), std::move(y));
    };
    double worst = 0.0;
    const QuadraticTask quad(spd_from_spectrum(std::vector<double>{1.0, 3.0, 9.0, 2.0}, rng),
                             ParamVector{1.0, -1.0, 0.5, 2.0}, 0.3);
    const LogRegTask lr{5, 6};
    const Dataset lr_data = random_data(40, 6, 5);
    const MlpTask mlp{6, 7, 4};
    const Dataset mlp_data = random_data(40, 6, 4);
    for (int i = 0; i < 20; ++i) {
        ParamVector wq(4), wl(lr.param_count()), wm(mlp.param_count());
        for (auto& v : wq) v = 2.0 * rng.normal();
        for (auto& v : wl) v = 0.5 * rng.normal();
        for (auto& v : wm) v = 0.5 * rng.normal();
        worst = std::max(worst, rel(quad.grad(wq), finite_diff_grad([&](const ParamVector& x) { return quad.loss(x); }, wq, 1e-5)));
        worst = std::max(worst, rel(logreg_loss_grad(lr, wl, lr_data).grad,
                                    finite_diff_grad([&](const ParamVector& x) { return logreg_loss_grad(lr, x, lr_data).loss; }, wl, 1e-5)));
        worst = std::max(worst, rel(mlp_loss_grad(mlp, wm, mlp_data).grad,
                                    finite_diff_grad([&](const ParamVector& x) { return mlp_loss_grad(mlp, x, mlp_data).loss; }, wm, 1e-5)));
    }
    rep.line(6, worst < 1e-5, "analytic gradients match central differences", "max_rel_err=" + format_double(worst));
}

void criterion_7(Report& rep) {
    std::vector<int> labels;
    for (int c = 0; c < 10; ++c) labels.insert(labels.end(), 500, c);
    auto mean_share = [&](double alpha) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto rng = derive_stream(seed, "partition", 0, 0);
            const auto shares = max_class_shares(dirichlet_partition(labels, 100, alpha, rng), labels, 10);
            total += mean(shares);
        }
        return total / 20.0;
    };
    const double s005 = mean_share(0.05), s1 = mean_share(1.0), s1000 = mean_share(1000.0);
    const bool ok = s005 >= 0.8 && std::abs(s1000 - 0.1) <= 0.05 && s005 > s1 && s1 > s1000;
    rep.line(7, ok, "Dirichlet concentration ordered in alpha",
             "alpha=0.05:" + format_double(s005) + " alpha=1:" + format_double(s1) + " alpha=1000:" + format_double(s1000));
}

int first_reach(const std::vector<RoundMetrics>& rows, double target) {
    for (const auto& r : rows) {
        if (*r.train_loss <= target) return static_cast<int>(r.round);
    }
    return static_cast<int>(rows.size()) + 1;
}

double tail_train_loss(const std::vector<RoundMetrics>& rows, std::size_t window) {
    return tail_mean(rows, window, [](const RoundMetrics& r) { return r.train_loss; });
}

void criteria_8_and_11(Report& rep) {
    const auto t0 = Clock::now();
    int faster = 0, acc_ok = 0, online_wins = 0;
    std::string rounds_detail, ovo_detail;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto cfg = parse_config(kBenchmark);
        cfg.seed = seed;
        const auto avg = track(run_simulation(cfg));
        auto egg_cfg = cfg;
        egg_cfg.guidance.enabled = true;
        const auto egg = track(run_simulation(egg_cfg));
        const auto off = track(run_offline_pretrain(egg_cfg, egg_cfg.pretrain_steps));

        const double target = *avg.metrics.back().train_loss;
        const int ra = first_reach(avg.metrics, target), re = first_reach(egg.metrics, target);
        faster += re < ra;
        acc_ok += tail_accuracy(egg.metrics, cfg.tail_window) >= tail_accuracy(avg.metrics, cfg.tail_window) - 0.005;
        online_wins += tail_train_loss(egg.metrics, cfg.tail_window) <= tail_train_loss(off.metrics, cfg.tail_window);
        rounds_detail += std::to_string(re) + "/" + std::to_string(ra) + " ";
    }
    const double secs = seconds_since(t0);
    rep.line(8, faster >= 8 && acc_ok == 10 && secs < 120.0, "guidance reaches the FedAvg final training loss sooner",
             "faster=" + std::to_string(faster) + "/10 acc_within_0.5pp=" + std::to_string(acc_ok) +
                 "/10 rounds(egg/avg)=" + rounds_detail + "secs=" + format_double(secs));
    rep.line(11, online_wins >= 8, "online guidance beats offline pretraining on tail training loss",
             "online_wins=" + std::to_string(online_wins) + "/10");
}

void criterion_9(Report& rep) {
    int ordered = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        double tau[3];
        const double overlaps[3] = {1.0, 0.5, 0.0};
        for (int i = 0; i < 3; ++i) {
            auto cfg = parse_config(kBenchmark);
            cfg.seed = seed;
            cfg.guidance.enabled = true;
            cfg.guidance.overlap = overlaps[i];
            if (i == 0) {
                tau[i] = *prepare(cfg).tau;  // the LH runs already ran under criterion 8
            } else {
                const auto r = track(run_simulation(cfg));
                tau[i] = *r.tau;
            }
        }
        ordered += tau[0] > tau[1] && tau[1] > tau[2];
        if (seed < 3) detail += format_double(tau[0]) + ">" + format_double(tau[1]) + ">" + format_double(tau[2]) + " ";
    }
    rep.line(9, ordered == 10, "tau ordered LH > MH > HH", "ordered=" + std::to_string(ordered) + "/10 e.g. " + detail);
}

void criterion_10(Report& rep) {
    std::size_t bad = 0, guided = 0, opened = 0;
    for (const auto& r : g_rows) {
        if (!r.gate_open) continue;
        ++guided;
        const bool open = *r.gate_open;
        opened += open;
        if ((*r.guide_steps > 0) != open) ++bad;
        if (open && !(*r.llr < *r.tau)) ++bad;
    }
    rep.line(10, bad == 0 && guided > 0 && opened > 0, "gate soundness over every guided row",
             "rows=" + std::to_string(g_rows.size()) + " guided=" + std::to_string(guided) +
                 " open=" + std::to_string(opened) + " violations=" + std::to_string(bad));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "fedegg_cli");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    return cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

void criterion_12(Report& rep) {
    const fs::path root = fs::temp_directory_path() / "fedegg_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "small.txt") << kSmall << "guidance.enabled=true\n";
    const std::string cfg = (root / "small.txt").string();

    bool ok = true;
    std::vector<std::string> runs;
    for (const char* workers : {"1", "4", "1"}) {
        const std::string dir = (root / ("run_w" + std::string(workers) + "_" + std::to_string(runs.size()))).string();
        ok = ok && cli({"run", "--config", cfg, "--out", dir, "--seed", "5", "--workers", workers}) == 0;
        runs.push_back(slurp(fs::path(dir) / "metrics.csv"));
    }
    ok = ok && !runs[0].empty() && runs[0] == runs[1] && runs[0] == runs[2];

    std::vector<std::string> sweeps;
    for (const char* workers : {"1", "3"}) {
        const std::string dir = (root / ("sweep_w" + std::string(workers))).string();
        ok = ok && cli({"sweep-alpha", "--config", cfg, "--alphas", "0.1,1", "--out", dir, "--workers", workers}) == 0;
        sweeps.push_back(slurp(fs::path(dir) / "run_0_metrics.csv") + slurp(fs::path(dir) / "run_1_metrics.csv") +
                         slurp(fs::path(dir) / "summary.csv"));
    }
    ok = ok && sweeps[0] == sweeps[1];
    rep.line(12, ok, "CLI outputs byte-identical across repeats and worker counts", "run x3, sweep-alpha x2");
    fs::remove_all(root);
}

}  // namespace

int main() {
    Report rep;
    const auto t0 = Clock::now();
    try {
        criterion_1(rep);
        criterion_2(rep);
        criterion_3(rep);
        criterion_4(rep);
        criterion_5(rep);
        criterion_6(rep);
        criterion_7(rep);
        criteria_8_and_11(rep);
        criterion_9(rep);
        criterion_10(rep);
        criterion_12(rep);
    } catch (const std::exception& e) {
        std::cout << "acceptance aborted: " << e.what() << std::endl;
        return 2;
    }
    std::cout << (rep.failures == 0 ? "ALL PASS" : std::to_string(rep.failures) + " FAILED") << " in "
              << format_double(seconds_since(t0)) << " s" << std::endl;
    return rep.failures == 0 ? 0 : 1;
}
