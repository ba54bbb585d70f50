#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "controller.hpp"
#include "errors.hpp"
#include "kernel.hpp"
#include "model.hpp"

// Supervised corpus of (c_hat, K^u, K^v) pairs harvested from adaptive
// closed-loop runs, one binary file per tau family plus a JSON manifest.
//
// Record layout (little-endian): u32 m | m x f64 c_hat | kernel record
// (see write_kernel_record).

namespace arzno {

struct DatasetConfig {
    std::size_t n_families = 10;
    double tau_lo = 50.0;
    double tau_hi = 70.0;
    double t_end = 300.0;
    double subsample_dt = 0.1;
    std::uint64_t seed = 2024;
    bool equispaced = false;   // tau on an even grid over [lo, hi] instead of uniform draws
    bool true_c_inputs = false;  // store the ground-truth c instead of the identifier estimate
    std::size_t jobs = 1;

    void validate(double dt) const {
        if (n_families == 0) throw ConfigError("dataset: n_families must be positive");
        if (!(tau_lo > 0.0 && tau_hi >= tau_lo)) throw ConfigError("dataset: need 0 < tau_lo <= tau_hi");
        if (!(t_end > 0.0)) throw ConfigError("dataset: t_end must be positive");
        if (!(subsample_dt >= dt * (1.0 - 1e-12))) throw ConfigError("dataset: subsample_dt must be >= dt");
        if (jobs == 0) throw ConfigError("dataset: jobs must be positive");
    }
};

struct FamilyEntry {
    std::size_t index = 0;
    double tau = 0.0;
    std::string file;          // relative to the manifest directory
    std::size_t records = 0;
    bool skipped = false;
    std::string skip_reason;
    double skip_time = 0.0;
};

struct Manifest {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::size_t mesh_n = 0;
    std::size_t m = 0;
    bool true_c_inputs = false;
    std::vector<FamilyEntry> families;
    std::filesystem::path dir;  // where record files live (not serialized)

    std::size_t total_records() const {
        std::size_t n = 0;
        for (const auto& f : families) n += f.skipped ? 0 : f.records;
        return n;
    }
};

inline void to_json(nlohmann::json& j, const FamilyEntry& f) {
    j = {{"index", f.index}, {"tau", f.tau}, {"file", f.file}, {"records", f.records}, {"skipped", f.skipped}};
    if (f.skipped) {
        j["skip_reason"] = f.skip_reason;
        j["skip_time"] = f.skip_time;
    }
}

inline void from_json(const nlohmann::json& j, FamilyEntry& f) {
    f.index = j.at("index").get<std::size_t>();
    f.tau = j.at("tau").get<double>();
    f.file = j.at("file").get<std::string>();
    f.records = j.at("records").get<std::size_t>();
    f.skipped = j.value("skipped", false);
    f.skip_reason = j.value("skip_reason", std::string());
    f.skip_time = j.value("skip_time", 0.0);
}

inline nlohmann::json manifest_to_json(const Manifest& m) {
    return {{"format", "arzno-dataset"}, {"version", 1},          {"seed", m.seed},
            {"config_hash", m.config_hash}, {"mesh_n", m.mesh_n}, {"m", m.m},
            {"c_inputs", m.true_c_inputs ? "true" : "estimate"}, {"total_records", m.total_records()},
            {"families", m.families}};
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("manifest: cannot open " + path.string() + " for writing");
    os << manifest_to_json(m).dump(2) << '\n';
    if (!os) throw FormatError("manifest: write failed for " + path.string());
}

inline Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("manifest: cannot open " + path.string());
    Manifest m;
    try {
        const auto j = nlohmann::json::parse(is);
        if (j.value("format", std::string()) != "arzno-dataset") throw FormatError("manifest: not a dataset manifest");
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.mesh_n = j.at("mesh_n").get<std::size_t>();
        m.m = j.at("m").get<std::size_t>();
        m.true_c_inputs = j.value("c_inputs", std::string("estimate")) == "true";
        m.families = j.at("families").get<std::vector<FamilyEntry>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    m.dir = path.parent_path();
    return m;
}

inline void write_sample(std::ostream& os, std::span<const double> c, const KernelPair& kp, const LinearizedParams& lp) {
    io::put_u32(os, static_cast<std::uint32_t>(c.size()));
    io::put_f64s(os, c);
    write_kernel_record(os, kp, lp);
}

inline KernelSample read_sample(std::istream& is) {
    KernelSample s;
    const std::uint32_t m = io::get_u32(is, "c sample count");
    if (m == 0 || m > (1u << 20)) throw FormatError("dataset record: implausible c sample count");
    s.c = io::get_f64s(is, m, "c samples");
    s.k = read_kernel_record(is);
    return s;
}

/// FNV-1a 64-bit hash of a byte string.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t sample_hash(const KernelSample& s) {
    std::ostringstream os(std::ios::binary);
    io::put_f64s(os, s.c);
    io::put_f64s(os, s.k.ku);
    io::put_f64s(os, s.k.kv);
    return fnv1a(os.str());
}

/// tau per family: i.i.d. uniform on [lo, hi] from the seed, or an even grid.
inline std::vector<double> draw_taus(const DatasetConfig& cfg) {
    std::vector<double> taus(cfg.n_families);
    if (cfg.equispaced) {
        for (std::size_t f = 0; f < cfg.n_families; ++f) {
            taus[f] = cfg.n_families == 1 ? 0.5 * (cfg.tau_lo + cfg.tau_hi)
                                          : cfg.tau_lo + (cfg.tau_hi - cfg.tau_lo) * static_cast<double>(f) /
                                                             static_cast<double>(cfg.n_families - 1);
        }
    } else {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> dist(cfg.tau_lo, cfg.tau_hi);
        for (auto& t : taus) t = dist(rng);
    }
    return taus;
}

/// Runs one classical-solver adaptive loop per tau family and writes every
/// kernel acquisition (one per subsample_dt, t = 0 excluded) to `out_dir/family_XX.bin`,
/// then `out_dir/manifest.json`. A family whose run goes unstable is removed
/// and recorded as skipped. Families run on up to cfg.jobs threads.
inline Manifest generate(const TrafficParams& p, const DatasetConfig& cfg, ControllerConfig ctrl, GridSpec g,
                         const std::filesystem::path& out_dir, const std::string& config_hash = {},
                         const std::function<void(const FamilyEntry&)>& on_family = {}) {
    cfg.validate(g.dt);
    std::filesystem::create_directories(out_dir);
    ctrl.kernel_source = KernelSource::ClassicalSolver;
    ctrl.open_loop = false;
    ctrl.kernel_refresh_dt = cfg.subsample_dt;
    ctrl.snapshot_every = 0.0;
    ctrl.monitor_inverse = false;
    // Acquisitions at subsample_dt, 2 subsample_dt, ..., t_end. The one at t = 0
    // is dropped: c_hat(0) is the same prior for every family.
    g.t_end = cfg.t_end + cfg.subsample_dt;

    Manifest man;
    man.seed = cfg.seed;
    man.config_hash = config_hash;
    man.mesh_n = ctrl.mesh.n;
    man.m = ctrl.mesh.n;
    man.true_c_inputs = cfg.true_c_inputs;
    man.dir = out_dir;
    const auto taus = draw_taus(cfg);
    man.families.resize(taus.size());

    std::atomic<std::size_t> next{0};
    std::mutex report_mutex;
    auto worker = [&] {
        for (std::size_t f = next++; f < taus.size(); f = next++) {
            FamilyEntry& fam = man.families[f];
            fam.index = f;
            fam.tau = taus[f];
            char name[32];
            std::snprintf(name, sizeof(name), "family_%02zu.bin", f);
            fam.file = name;
            const auto path = out_dir / fam.file;
            TrafficParams pf = p;
            pf.tau = taus[f];
            try {
                const LinearizedParams lp = derive_linearized(pf);
                const Field c_mesh_true = true_c_sampler(lp, ctrl.mesh.n);
                std::ofstream os(path, std::ios::binary | std::ios::trunc);
                if (!os) throw FormatError("dataset: cannot open " + path.string());
                std::size_t count = 0;
                run_closed_loop(pf, ctrl, g, nullptr, [&](double t, std::span<const double> c_mesh, const KernelPair& kp) {
                    if (t == 0.0) return;
                    if (cfg.true_c_inputs) {
                        write_sample(os, c_mesh_true, solve_kernels(c_mesh_true, lp, ctrl.mesh, ctrl.tol, ctrl.max_iter), lp);
                    } else {
                        write_sample(os, c_mesh, kp, lp);
                    }
                    ++count;
                });
                os.close();
                if (!os) throw FormatError("dataset: write failed for " + path.string());
                fam.records = count;
            } catch (const InstabilityError& e) {
                fam.skipped = true;
                fam.skip_reason = e.what();
                fam.skip_time = e.time();
                fam.records = 0;
                std::filesystem::remove(path);
            } catch (const ConvergenceError& e) {
                fam.skipped = true;
                fam.skip_reason = e.what();
                fam.records = 0;
                std::filesystem::remove(path);
            }
            if (on_family) {
                std::lock_guard lock(report_mutex);
                on_family(fam);
            }
        }
    };
    const std::size_t n_threads = std::min(cfg.jobs, taus.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    write_manifest(man, out_dir / "manifest.json");
    return man;
}

/// All records of one family, in file order.
inline std::vector<KernelSample> load_family(const Manifest& man, const FamilyEntry& fam) {
    if (fam.skipped) return {};
    const auto path = man.dir / fam.file;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("dataset: cannot open " + path.string());
    std::vector<KernelSample> out;
    out.reserve(fam.records);
    for (std::size_t r = 0; r < fam.records; ++r) {
        try {
            out.push_back(read_sample(is));
        } catch (const FormatError& e) {
            throw FormatError(path.string() + " record " + std::to_string(r) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<KernelSample> load_records(const Manifest& man) {
    std::vector<KernelSample> out;
    out.reserve(man.total_records());
    for (const auto& fam : man.families) {
        auto part = load_family(man, fam);
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

struct SplitManifests {
    Manifest train, validation, test;
};

/// Family-stratified split: whole families are shuffled with `seed` and dealt
/// into train / validation / test by the given ratios (largest-remainder
/// rounding, each split getting at least one family).
inline SplitManifests split(const Manifest& man, std::array<double, 3> ratio, std::uint64_t seed) {
    for (double r : ratio) {
        if (!(r > 0.0)) throw ConfigError("split: ratios must be positive");
    }
    if (std::abs(ratio[0] + ratio[1] + ratio[2] - 1.0) > 1e-9) throw ConfigError("split: ratios must sum to 1");
    std::vector<std::size_t> usable;
    for (std::size_t f = 0; f < man.families.size(); ++f) {
        if (!man.families[f].skipped) usable.push_back(f);
    }
    if (usable.size() < 3) {
        throw ConfigError("split: need at least 3 usable families, have " + std::to_string(usable.size()));
    }
    std::mt19937_64 rng(seed);
    std::shuffle(usable.begin(), usable.end(), rng);

    const auto n = static_cast<double>(usable.size());
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double want = ratio[k] * n;
        counts[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(want)));
        rem[k] = want - std::floor(want);
        assigned += counts[k];
    }
    while (assigned < usable.size()) {
        const auto k = static_cast<std::size_t>(std::max_element(rem.begin(), rem.end()) - rem.begin());
        ++counts[k];
        rem[k] = -1.0;
        ++assigned;
    }
    while (assigned > usable.size()) {
        const auto k = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        --counts[k];
        --assigned;
    }

    SplitManifests out{man, man, man};
    for (Manifest* m : {&out.train, &out.validation, &out.test}) m->families.clear();
    std::size_t pos = 0;
    std::array<Manifest*, 3> dest{&out.train, &out.validation, &out.test};
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t c = 0; c < counts[k]; ++c) dest[k]->families.push_back(man.families[usable[pos++]]);
        std::sort(dest[k]->families.begin(), dest[k]->families.end(),
                  [](const FamilyEntry& a, const FamilyEntry& b) { return a.index < b.index; });
    }
    return out;
}

}  // namespace arzno
