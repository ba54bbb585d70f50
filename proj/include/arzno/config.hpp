#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "controller.hpp"
#include "dataset.hpp"
#include "deeponet.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "model.hpp"

// Flat INI configuration:
//
//   [section]
//   key = value   ; or # comments
//
// Densities are given in veh/km and converted to veh/m. Any key can be
// overridden from the environment as ARZNO_<SECTION>_<KEY> (upper case).

namespace arzno {

struct BenchConfig {
    std::size_t n = 100;        // timed acquisitions per path
    std::size_t warmup = 5;     // untimed runs before timing
    std::size_t jobs = 1;
};

struct AppConfig {
    TrafficParams traffic;
    GridSpec grid;
    ControllerConfig controller;
    ArchConfig arch;
    TrainConfig train;
    DatasetConfig dataset;
    std::array<double, 3> split{0.8, 0.1, 0.1};
    BenchConfig bench;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

/// Binds "section.key" names to typed fields of an AppConfig.
class Binder {
public:
    using Setter = std::function<void(const std::string&)>;
    using Getter = std::function<std::string()>;

    void add(const std::string& name, Setter set, Getter get) {
        order_.push_back(name);
        setters_[name] = std::move(set);
        getters_[name] = std::move(get);
    }

    bool has(const std::string& name) const { return setters_.count(name) != 0; }
    void set(const std::string& name, const std::string& value) const { setters_.at(name)(value); }
    const std::vector<std::string>& names() const { return order_; }
    std::string get(const std::string& name) const { return getters_.at(name)(); }

private:
    std::vector<std::string> order_;
    std::map<std::string, Setter> setters_;
    std::map<std::string, Getter> getters_;
};

inline double parse_double(const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) throw ConfigError("expected a number, got '" + v + "'");
    return out;
}

inline std::uint64_t parse_uint(const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& v) {
    const auto s = lower(v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("expected a boolean, got '" + v + "'");
}

inline std::string fmt_double(double d) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

inline Binder make_binder(AppConfig& c) {
    Binder b;
    auto num = [&b](const std::string& name, double& field, double scale = 1.0) {
        b.add(name, [&field, scale](const std::string& v) { field = parse_double(v) * scale; },
              [&field, scale] { return fmt_double(field / scale); });
    };
    auto count = [&b](const std::string& name, auto& field) {
        using T = std::remove_reference_t<decltype(field)>;
        b.add(name, [&field](const std::string& v) { field = static_cast<T>(parse_uint(v)); },
              [&field] { return std::to_string(field); });
    };
    auto flag = [&b](const std::string& name, bool& field) {
        b.add(name, [&field](const std::string& v) { field = parse_bool(v); },
              [&field] { return std::string(field ? "true" : "false"); });
    };

    num("traffic.v_f", c.traffic.v_f);
    num("traffic.rho_m", c.traffic.rho_m, 1e-3);
    num("traffic.rho_star", c.traffic.rho_star, 1e-3);
    num("traffic.tau", c.traffic.tau);
    num("traffic.gamma0", c.traffic.gamma0);
    num("traffic.length", c.traffic.length);

    count("grid.n_x", c.grid.n_x);
    num("grid.dt", c.grid.dt);
    num("grid.t_end", c.grid.t_end);

    num("controller.kernel_refresh_dt", c.controller.kernel_refresh_dt);
    num("controller.rho", c.controller.rho_gain);
    num("controller.gamma", c.controller.gamma);
    num("controller.gamma1", c.controller.gamma1);
    num("controller.tau_guess", c.controller.tau_guess);
    count("controller.mesh_n", c.controller.mesh.n);
    num("controller.tol", c.controller.tol);
    count("controller.max_iter", c.controller.max_iter);
    num("controller.snapshot_every", c.controller.snapshot_every);
    flag("controller.identifier_from_state", c.controller.identifier_from_state);
    flag("controller.monitor_inverse", c.controller.monitor_inverse);
    num("controller.amp_rho", c.controller.amp_rho);
    num("controller.amp_v", c.controller.amp_v);

    count("deeponet.m", c.arch.m);
    count("deeponet.width", c.arch.width);
    count("deeponet.depth", c.arch.depth);
    count("deeponet.latent", c.arch.latent);
    num("deeponet.learning_rate", c.train.learning_rate);
    count("deeponet.batch_size", c.train.batch_size);
    count("deeponet.epochs", c.train.epochs);
    num("deeponet.val_ratio", c.train.val_ratio);
    count("deeponet.seed", c.train.seed);
    num("deeponet.input_bound", c.train.input_bound);

    count("dataset.n_families", c.dataset.n_families);
    num("dataset.tau_lo", c.dataset.tau_lo);
    num("dataset.tau_hi", c.dataset.tau_hi);
    num("dataset.t_end", c.dataset.t_end);
    num("dataset.subsample_dt", c.dataset.subsample_dt);
    count("dataset.seed", c.dataset.seed);
    flag("dataset.equispaced", c.dataset.equispaced);
    flag("dataset.true_c_inputs", c.dataset.true_c_inputs);
    count("dataset.jobs", c.dataset.jobs);
    num("dataset.split_train", c.split[0]);
    num("dataset.split_validation", c.split[1]);
    num("dataset.split_test", c.split[2]);

    count("bench.n", c.bench.n);
    count("bench.warmup", c.bench.warmup);
    count("bench.jobs", c.bench.jobs);

    num("diagnostics.a3", c.controller.a3);
    num("diagnostics.a4", c.controller.a4);
    num("diagnostics.margin", c.controller.margin);
    return b;
}

}  // namespace detail

/// Canonical "section.key = value" listing of the settings whose section is in
/// `sections` (all when empty), in declaration order.
inline std::string canonical_config(const AppConfig& c, const std::vector<std::string>& sections = {}) {
    AppConfig copy = c;
    const auto binder = detail::make_binder(copy);
    std::string out;
    for (const auto& name : binder.names()) {
        const std::string sec = name.substr(0, name.find('.'));
        if (!sections.empty() && std::find(sections.begin(), sections.end(), sec) == sections.end()) continue;
        out += name + " = " + binder.get(name) + "\n";
    }
    return out;
}

/// 16 hex digits of the FNV-1a hash of the canonical listing.
inline std::string config_hash(const AppConfig& c, const std::vector<std::string>& sections = {}) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(canonical_config(c, sections))));
    return buf;
}

/// Hash of the settings that determine dataset content; stored in manifests
/// and models so downstream commands can detect mismatched inputs.
inline std::string data_hash(const AppConfig& c) {
    AppConfig copy = c;
    copy.dataset.jobs = 1;
    return config_hash(copy, {"traffic", "grid", "controller", "dataset"});
}

/// Checks cross-field invariants; throws ConfigError naming the offending key.
inline void validate_config(const AppConfig& c) {
    try {
        c.traffic.validate();
        c.grid.validate();
        const auto lp = derive_linearized(c.traffic);
        c.grid.check_cfl(lp.lambda_n(), lp.mu_n());
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    c.controller.validate(c.grid);
    try {
        c.train.validate();
    } catch (const DomainError& e) {
        throw ConfigError(std::string("[deeponet] ") + e.what());
    }
    if (c.arch.m < 2 || c.arch.width == 0 || c.arch.latent == 0) throw ConfigError("[deeponet] m >= 2, width, latent > 0");
    c.dataset.validate(c.grid.dt);
    double sum = 0.0;
    for (double r : c.split) {
        if (!(r > 0.0)) throw ConfigError("[dataset] split ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("[dataset] split ratios must sum to 1");
    if (c.bench.jobs == 0) throw ConfigError("[bench] jobs must be positive");
}

/// Applies INI text on top of `base`. `source` names the input in diagnostics.
inline AppConfig parse_config(std::istream& is, AppConfig base = {}, const std::string& source = "config") {
    auto binder = detail::make_binder(base);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find_first_of(";#");
        const std::string text = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
        auto where = [&] { return source + ":" + std::to_string(lineno) + ": "; };
        if (text.empty()) continue;
        if (text.front() == '[') {
            if (text.back() != ']') throw ConfigError(where() + "malformed section header '" + text + "'");
            section = detail::lower(detail::trim(text.substr(1, text.size() - 2)));
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ConfigError(where() + "expected 'key = value', got '" + text + "'");
        if (section.empty()) throw ConfigError(where() + "key outside of any [section]");
        const std::string key = section + "." + detail::lower(detail::trim(text.substr(0, eq)));
        const std::string value = detail::trim(text.substr(eq + 1));
        if (!binder.has(key)) throw ConfigError(where() + "unknown key '" + key + "'");
        try {
            binder.set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where() + key + ": " + e.what());
        }
    }
    return base;
}

/// Overrides from ARZNO_<SECTION>_<KEY> environment variables.
inline AppConfig apply_env_overrides(AppConfig c, const std::function<const char*(const char*)>& getenv_fn = ::getenv) {
    auto binder = detail::make_binder(c);
    for (const auto& name : binder.names()) {
        std::string var = "ARZNO_" + detail::upper(name);
        std::replace(var.begin(), var.end(), '.', '_');
        if (const char* v = getenv_fn(var.c_str())) {
            try {
                binder.set(name, detail::trim(v));
            } catch (const ConfigError& e) {
                throw ConfigError("environment " + var + ": " + e.what());
            }
        }
    }
    return c;
}

/// Defaults, then the file (if non-empty path), then the environment; validated.
inline AppConfig load_config(const std::string& path) {
    AppConfig c;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file " + path);
        c = parse_config(is, c, path);
    }
    c = apply_env_overrides(c);
    validate_config(c);
    return c;
}

}  // namespace arzno
