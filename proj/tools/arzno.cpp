// arzno: simulate / gen-dataset / train / eval / bench.

#include <arzno/arzno.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace arzno;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    return os;
}

fs::path meta_path(const fs::path& model) { return fs::path(model.string() + ".meta.json"); }

void warn_hash(const std::string& what, const std::string& stored, const std::string& expected) {
    if (!stored.empty() && stored != expected) {
        std::cerr << "WARNING: " << what << " was produced with config hash " << stored << " but the current config hashes to "
                  << expected << "; results may not correspond to this configuration\n";
    }
}

DeepONetModel load_model_checked(const std::string& path, const AppConfig& cfg) {
    if (path.empty()) throw ConfigError("--model is required");
    if (!fs::exists(path)) throw FormatError("model file not found: " + path);
    DeepONetModel m = load_model(path);
    if (m.m != cfg.controller.mesh.n) {
        throw ConfigError("model expects " + std::to_string(m.m) + " c samples but controller.mesh_n = " +
                          std::to_string(cfg.controller.mesh.n));
    }
    if (fs::exists(meta_path(path))) {
        std::ifstream is(meta_path(path));
        const auto meta = json::parse(is, nullptr, false);
        if (!meta.is_discarded()) warn_hash("model " + path, meta.value("data_hash", std::string()), data_hash(cfg));
    }
    return m;
}

SimTrace simulate(const AppConfig& cfg, const std::string& mode, const DeepONetModel* model) {
    ControllerConfig cc = cfg.controller;
    cc.open_loop = mode == "open-loop";
    cc.kernel_source = mode == "no" ? KernelSource::NeuralOperator : KernelSource::ClassicalSolver;
    return run_closed_loop(cfg.traffic, cc, cfg.grid, mode == "no" ? model : nullptr);
}

int cmd_simulate(const Common& c, const std::string& mode, const std::string& model_path, const std::string& out) {
    const AppConfig cfg = load_config(c.config);
    std::optional<DeepONetModel> model;
    if (mode == "no") model = load_model_checked(model_path, cfg);
    const std::string hash = config_hash(cfg);
    const SimTrace tr = simulate(cfg, mode, model ? &*model : nullptr);

    fs::create_directories(out);
    {
        auto os = open_out(fs::path(out) / "trace.csv");
        write_trace_csv(os, tr, hash);
    }
    {
        auto os = open_out(fs::path(out) / "snapshots.csv");
        write_snapshots_csv(os, tr, cfg.traffic, hash);
    }
    const json summary = run_summary(tr, mode, hash);
    write_json(fs::path(out) / "report.json", summary);

    const auto& f = summary["final"];
    std::printf("mode %s  t_end %.1f s\n", mode.c_str(), summary["t_end"].get<double>());
    std::printf("  amplitude ratio     %.4e\n", f["amplitude_ratio"].get<double>());
    std::printf("  ||rho-rho*|| rel    %.4e\n", f["rho_dev_rel"].get<double>());
    std::printf("  ||v-v*|| rel        %.4e\n", f["speed_dev_rel"].get<double>());
    std::printf("  converged (<=2%%)    %s\n", summary["converged"].get<bool>() ? "yes" : "no");
    std::printf("  kernel time         %.3f s over %zu refreshes\n", summary["timing"]["kernel_total_s"].get<double>(),
                summary["timing"]["kernel_refreshes"].get<std::size_t>());
    std::printf("  artifacts in        %s\n", out.c_str());
    return 0;
}

int cmd_gen_dataset(const Common& c, const std::string& out, std::size_t jobs) {
    AppConfig cfg = load_config(c.config);
    if (jobs) cfg.dataset.jobs = jobs;
    const auto man = generate(cfg.traffic, cfg.dataset, cfg.controller, cfg.grid, out, data_hash(cfg),
                              [](const FamilyEntry& f) {
                                  if (f.skipped) {
                                      std::printf("family %2zu tau %.3f SKIPPED: %s\n", f.index, f.tau, f.skip_reason.c_str());
                                  } else {
                                      std::printf("family %2zu tau %.3f records %zu\n", f.index, f.tau, f.records);
                                  }
                                  std::fflush(stdout);
                              });
    std::printf("%zu records in %s/manifest.json\n", man.total_records(), out.c_str());
    return 0;
}

struct Splits {
    std::vector<KernelSample> train, validation, test;
};

Splits load_splits(const AppConfig& cfg, const Manifest& man) {
    Splits s;
    std::size_t usable = 0;
    for (const auto& f : man.families) usable += f.skipped ? 0 : 1;
    if (usable >= 3) {
        const auto sp = split(man, cfg.split, cfg.dataset.seed);
        s.train = load_records(sp.train);
        s.validation = load_records(sp.validation);
        s.test = load_records(sp.test);
    } else {
        std::cerr << "WARNING: only " << usable
                  << " usable families; training on all records with a random validation hold-out and no test split\n";
        s.train = load_records(man);
    }
    return s;
}

int cmd_train(const Common& c, const std::string& data, const std::string& out, std::size_t epochs) {
    AppConfig cfg = load_config(c.config);
    if (epochs) cfg.train.epochs = epochs;
    const Manifest man = read_manifest(fs::path(data) / "manifest.json");
    warn_hash("dataset " + data, man.config_hash, data_hash(cfg));
    const Splits sp = load_splits(cfg, man);
    if (sp.train.empty()) throw ConfigError("dataset " + data + " has no usable records");

    const TrainingSet train_set = make_training_set(sp.train, cfg.arch.m);
    std::optional<TrainingSet> val_set;
    if (!sp.validation.empty()) val_set = make_training_set(sp.validation, cfg.arch.m);
    std::printf("training on %zu records, validating on %zu\n", train_set.size(),
                val_set ? val_set->size() : static_cast<std::size_t>(0));

    const fs::path model_path(out);
    if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
    auto hist = open_out(fs::path(out + ".history.csv"));
    hist << "epoch,train_loss,val_loss,val_rel_l2\n";
    double prev = 0.0;
    bool warned = false;
    const auto result = train(train_set, val_set ? &*val_set : nullptr, cfg.train, cfg.arch, [&](const EpochStats& e) {
        std::printf("epoch %4zu  train %.4e  val %.4e  val rel L2 %.4e\n", e.epoch, e.train_loss, e.val_loss, e.val_rel_l2);
        std::fflush(stdout);
        hist << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_rel_l2 << '\n';
        if (e.epoch > 1 && e.epoch <= 5 && e.train_loss > prev && !warned) {
            std::cerr << "WARNING: training loss increased at epoch " << e.epoch << "\n";
            warned = true;
        }
        prev = e.train_loss;
    });
    save_model(result.model, out);
    const auto& best = result.history[result.best_epoch - 1];
    write_json(meta_path(out), {{"config_hash", config_hash(cfg)},
                                {"data_hash", man.config_hash},
                                {"best_epoch", result.best_epoch},
                                {"train_loss", best.train_loss},
                                {"val_loss", best.val_loss},
                                {"val_rel_l2", best.val_rel_l2},
                                {"final_train_loss", result.history.back().train_loss}});
    std::printf("best epoch %zu  val rel L2 %.4e  -> %s\n", result.best_epoch, best.val_rel_l2, out.c_str());
    return 0;
}

int cmd_eval(const Common& c, const std::string& data, const std::string& model_path, const std::string& out,
             bool states) {
    const AppConfig cfg = load_config(c.config);
    const DeepONetModel model = load_model_checked(model_path, cfg);
    const Manifest man = read_manifest(fs::path(data) / "manifest.json");
    warn_hash("dataset " + data, man.config_hash, data_hash(cfg));
    const Splits sp = load_splits(cfg, man);
    const auto& test = sp.test.empty() ? sp.train : sp.test;
    const AccuracyReport acc = eval_accuracy(model, test);

    json j;
    j["config_hash"] = config_hash(cfg);
    j["test_records"] = acc.samples;
    j["kernel_Ku"] = {{"max", acc.ku_max}, {"mean", acc.ku_mean}, {"ref_max", 1.24e-3}, {"ref_mean", 1.06e-3}};
    j["kernel_Kv"] = {{"max", acc.kv_max}, {"mean", acc.kv_mean}, {"ref_max", 2.48e-3}, {"ref_mean", 2.33e-3}};

    std::printf("%-18s %12s %12s %12s %12s\n", "", "max", "mean", "ref max", "ref mean");
    std::printf("%-18s %12.4e %12.4e %12.4e %12.4e\n", "kernel Ku", acc.ku_max, acc.ku_mean, 1.24e-3, 1.06e-3);
    std::printf("%-18s %12.4e %12.4e %12.4e %12.4e\n", "kernel Kv", acc.kv_max, acc.kv_mean, 2.48e-3, 2.33e-3);
    if (states) {
        const SimTrace exact = simulate(cfg, "exact", nullptr);
        const SimTrace no = simulate(cfg, "no", &model);
        const StateErrorReport se = state_errors(no, exact);
        double gap = 0.0;
        for (const auto& [t, g] : trajectory_gap(no, exact, cfg.traffic)) gap = std::max(gap, g);
        j["density_veh_per_km"] = {{"max", se.density_max}, {"mean", se.density_mean}, {"ref_max", 1.32}, {"ref_mean", 0.51}};
        j["speed_km_per_h"] = {{"max", se.speed_max}, {"mean", se.speed_mean}, {"ref_max", 2.35}, {"ref_mean", 0.87}};
        j["max_relative_l2_gap"] = gap;
        std::printf("%-18s %12.4e %12.4e %12.4e %12.4e\n", "density (veh/km)", se.density_max, se.density_mean, 1.32, 0.51);
        std::printf("%-18s %12.4e %12.4e %12.4e %12.4e\n", "speed (km/h)", se.speed_max, se.speed_mean, 2.35, 0.87);
        std::printf("max relative L2 gap NO vs exact: %.4e\n", gap);
    }

    // Admissible approximation accuracy against the measured one.
    const LinearizedParams lp = derive_linearized(cfg.traffic);
    const Field c_mesh = true_c_sampler(lp, cfg.controller.mesh.n);
    const KernelPair kp = solve_kernels(c_mesh, lp, cfg.controller.mesh, cfg.controller.tol, cfg.controller.max_iter);
    const KernelPair inv = solve_inverse_kernels(kp, c_mesh, lp, cfg.controller.mesh, cfg.controller.tol, cfg.controller.max_iter);
    const double l_bar = std::max(sup_norm(inv.ku), sup_norm(inv.kv));
    const auto cc = certificate_constants(lp, cfg.controller.a3, cfg.controller.a4, cfg.controller.margin);
    const double eps0 = epsilon0_report(cc.d, lp.mu, cc.k, l_bar);
    j["epsilon0"] = {{"value", eps0}, {"measured_sup_error", acc.sup_error}, {"d", cc.d}, {"k", cc.k}, {"l_bar", l_bar}};
    std::printf("epsilon0 %.4e (d %.3f, k %.3f, L_bar %.3f)  measured sup error %.4e\n", eps0, cc.d, cc.k, l_bar,
                acc.sup_error);
    if (!out.empty()) write_json(out, j);
    return 0;
}

int cmd_bench(const Common& c, const std::string& model_path, std::optional<std::size_t> n_override,
              std::size_t jobs, bool e2e, const std::string& out) {
    AppConfig cfg = load_config(c.config);
    const std::size_t n = n_override.value_or(cfg.bench.n);
    if (jobs) cfg.bench.jobs = jobs;
    json j;
    j["config_hash"] = config_hash(cfg);
    j["n"] = n;
    if (n == 0) {
        std::printf("bench: N = 0, nothing timed\n");
        if (!out.empty()) write_json(out, j);
        return 0;
    }
    const DeepONetModel model = load_model_checked(model_path, cfg);
    const LinearizedParams lp = derive_linearized(cfg.traffic);
    const auto inputs = closed_loop_inputs(cfg.traffic, cfg.controller, cfg.grid, n);
    const auto rep = bench_kernels(model, lp, cfg.controller.mesh, inputs, cfg.bench.warmup, cfg.controller.tol,
                                   cfg.controller.max_iter);
    auto stats = [](const TimingStats& s) {
        return json{{"median_us", s.median_ns * 1e-3}, {"p10_us", s.p10_ns * 1e-3}, {"p90_us", s.p90_ns * 1e-3},
                    {"mean_us", s.mean_ns * 1e-3}};
    };
    j["solver"] = stats(rep.solver);
    j["neural_operator"] = stats(rep.no);
    j["speedup_median"] = rep.speedup;
    j["ref_speedup"] = 150.0;
    j["paired_max_abs_diff"] = rep.max_abs_diff;
    j["paired_mean_abs_diff"] = rep.mean_abs_diff;
    std::printf("kernel acquisition over %zu inputs, mesh n = %zu, tol = %.0e\n", n, cfg.controller.mesh.n,
                cfg.controller.tol);
    std::printf("  solver  median %9.1f us  p10 %9.1f  p90 %9.1f\n", rep.solver.median_ns * 1e-3,
                rep.solver.p10_ns * 1e-3, rep.solver.p90_ns * 1e-3);
    std::printf("  NO      median %9.1f us  p10 %9.1f  p90 %9.1f\n", rep.no.median_ns * 1e-3, rep.no.p10_ns * 1e-3,
                rep.no.p90_ns * 1e-3);
    std::printf("  speedup %.1fx (reference 150x)   paired |K_NO - K| max %.3e mean %.3e\n", rep.speedup,
                rep.max_abs_diff, rep.mean_abs_diff);

    if (e2e) {
        ControllerConfig cc = cfg.controller;
        cc.monitor_inverse = false;
        cc.snapshot_every = 0.0;
        auto run = [&](KernelSource src) {
            ControllerConfig k = cc;
            k.kernel_source = src;
            return run_closed_loop(cfg.traffic, k, cfg.grid, src == KernelSource::NeuralOperator ? &model : nullptr);
        };
        SimTrace ex, no;
        if (cfg.bench.jobs >= 2) {
            auto f = std::async(std::launch::async, run, KernelSource::ClassicalSolver);
            no = run(KernelSource::NeuralOperator);
            ex = f.get();
        } else {
            ex = run(KernelSource::ClassicalSolver);
            no = run(KernelSource::NeuralOperator);
        }
        j["closed_loop"] = {{"solver_wall_s", ex.wall_ns * 1e-9},
                            {"solver_kernel_s", ex.kernel_total_ns * 1e-9},
                            {"no_wall_s", no.wall_ns * 1e-9},
                            {"no_kernel_s", no.kernel_total_ns * 1e-9}};
        std::printf("  closed loop wall: solver %.2f s (kernels %.2f s), NO %.2f s (kernels %.2f s)\n",
                    ex.wall_ns * 1e-9, ex.kernel_total_ns * 1e-9, no.wall_ns * 1e-9, no.kernel_total_ns * 1e-9);
    }
    if (!out.empty()) write_json(out, j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive backstepping control of linearized ARZ traffic with DeepONet gain kernels"};
    app.require_subcommand(1);
    Common common;
    app.add_option("-c,--config", common.config, "INI config file (defaults match configs/reference.ini)");

    auto* sim = app.add_subcommand("simulate", "open-loop or closed-loop simulation");
    std::string mode = "exact", model_path, out = "run";
    sim->add_option("--mode", mode, "open-loop | exact | no")->check(CLI::IsMember({"open-loop", "exact", "no"}));
    sim->add_option("--model", model_path, "trained DeepONet (mode no)");
    sim->add_option("-o,--out", out, "output directory")->capture_default_str();

    auto* gen = app.add_subcommand("gen-dataset", "generate the (c_hat, K) training corpus");
    std::string data_out = "data";
    std::size_t jobs = 0;
    gen->add_option("-o,--out", data_out, "output directory")->capture_default_str();
    gen->add_option("-j,--jobs", jobs, "worker threads (default: dataset.jobs)");

    auto* tr = app.add_subcommand("train", "train the DeepONet on a generated corpus");
    std::string data_dir = "data", model_out = "model.bin";
    std::size_t epochs = 0;
    tr->add_option("-d,--data", data_dir, "dataset directory")->capture_default_str();
    tr->add_option("-o,--out", model_out, "model file")->capture_default_str();
    tr->add_option("--epochs", epochs, "override deeponet.epochs");

    auto* ev = app.add_subcommand("eval", "kernel and state error report");
    std::string eval_out;
    bool no_states = false;
    ev->add_option("-d,--data", data_dir, "dataset directory")->capture_default_str();
    ev->add_option("--model", model_path, "trained DeepONet")->required();
    ev->add_option("-o,--out", eval_out, "write the report as JSON");
    ev->add_flag("--no-states", no_states, "skip the closed-loop density/speed comparison");

    auto* be = app.add_subcommand("bench", "solver vs neural-operator timing");
    std::optional<std::size_t> bench_n;
    bool no_e2e = false;
    std::string bench_out;
    be->add_option("--model", model_path, "trained DeepONet");
    be->add_option("-n,--n", bench_n, "timed acquisitions per path (default: bench.n)");
    be->add_option("-j,--jobs", jobs, "worker threads for the closed-loop runs");
    be->add_flag("--no-closed-loop", no_e2e, "skip the end-to-end closed-loop timing");
    be->add_option("-o,--out", bench_out, "write the report as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        if (*sim) return cmd_simulate(common, mode, model_path, out);
        if (*gen) return cmd_gen_dataset(common, data_out, jobs);
        if (*tr) return cmd_train(common, data_dir, model_out, epochs);
        if (*ev) return cmd_eval(common, data_dir, model_path, eval_out, !no_states);
        if (*be) return cmd_bench(common, model_path, bench_n, jobs, !no_e2e, bench_out);
    } catch (const InstabilityError& e) {
        std::cerr << "error: numerical instability at t = " << e.time() << " s: " << e.what() << "\n";
        return static_cast<int>(e.exit_code());
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.exit_code());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    }
    return static_cast<int>(ExitCode::usage);
}
