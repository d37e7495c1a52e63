#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "degboot/derivative.hpp"
#include "degboot/error.hpp"
#include "degboot/inference.hpp"
#include "degboot/io.hpp"
#include "degboot/parallel.hpp"
#include "degboot/resample.hpp"
#include "degboot/rng.hpp"
#include "degboot/simulate.hpp"
#include "degboot/version.hpp"

namespace degboot {

struct McConfig {
    DesignSpec design;
    std::vector<Eigen::Index> sample_sizes;
    int reps = 500;
    int b = 200;
    double alpha = 0.05;
    std::vector<KappaRule> kappa_rules;
    std::vector<DerivEstimator::Kind> est_kinds;
    bool restrict_complement = false;  // structural estimator variant, see DerivEstimator
    std::uint64_t base_seed = 1;
    unsigned workers = 1;
    BootstrapScheme scheme;
    ChTestOptions test_options;
    /// Optional edit applied to every simulated panel before testing.
    std::function<void(PanelData&)> panel_hook;

    void validate() const {
        design.validate();
        scheme.validate();
        detail::require(!sample_sizes.empty(), "mc: need at least one sample size");
        for (auto t : sample_sizes) detail::require(t >= 2, "mc: sample sizes must be at least 2");
        detail::require(reps >= 1, "mc: reps must be at least 1");
        detail::require(b >= 1, "mc: B must be at least 1");
        detail::require(alpha > 0.0 && alpha < 1.0, "mc: alpha must lie in (0, 1)");
        detail::require(!kappa_rules.empty(), "mc: need at least one kappa rule");
        for (const auto& r : kappa_rules)
            detail::require(r.exponent > 0.0 && r.exponent < 0.5, "mc: kappa rule exponent must lie in (0, 1/2)");
        detail::require(!est_kinds.empty(), "mc: need at least one estimator");
        for (auto e : est_kinds)
            detail::require(e == DerivEstimator::Kind::structural_ch || e == DerivEstimator::Kind::numerical,
                            "mc: estimators must be structural or numerical");
        detail::require(workers >= 1, "mc: workers must be at least 1");
    }
};

struct McRow {
    Eigen::Index t = 0;
    std::string rule;
    std::string estimator;
    int reps = 0;
    int rejections = 0;
    double reject_rate = 0.0;
    double mc_se = 0.0;
};

struct McTable {
    std::string design;
    int b = 0;
    double alpha = 0.0;
    std::vector<McRow> rows;
};

inline double mc_std_err(double rate, int reps) { return std::sqrt(rate * (1.0 - rate) / static_cast<double>(reps)); }

/// Seed for replication `rep` at sample size `t`.
inline std::uint64_t replication_seed(std::uint64_t base_seed, const std::string& design, Eigen::Index t, int rep) {
    return derive_seed(base_seed, design_id(design), static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(rep));
}

/**
 * Runs the replication study. Each replication simulates one panel and
 * tests it under every (rule, estimator) pair with one shared set of
 * bootstrap resamples. Replications run on `workers` threads; the table does
 * not depend on the worker count.
 */
inline McTable run_design(const McConfig& config) {
    config.validate();
    std::vector<ChTestConfig> tests;
    for (const auto& rule : config.kappa_rules)
        for (auto est : config.est_kinds)
            tests.push_back({rule, est, config.restrict_complement && est == DerivEstimator::Kind::structural_ch});

    McTable table;
    table.design = config.design.name;
    table.b = config.b;
    table.alpha = config.alpha;

    ChTestOptions opts = config.test_options;
    opts.workers = 1;
    const auto reps = static_cast<std::size_t>(config.reps);
    for (const Eigen::Index t : config.sample_sizes) {
        std::vector<std::vector<char>> rejected(reps, std::vector<char>(tests.size(), 0));
        parallel_for_index(reps, config.workers, [&](std::size_t i) {
            const std::uint64_t seed = replication_seed(config.base_seed, config.design.name, t, static_cast<int>(i));
            try {
                const RandomStream root(seed);
                PanelData panel = simulate_ch_panel(config.design, t, root.split(0));
                if (config.panel_hook) config.panel_hook(panel);
                const auto outcomes =
                    ch_feature_tests(panel, tests, config.b, config.alpha, config.scheme, root.split(1), opts);
                for (std::size_t c = 0; c < tests.size(); ++c) rejected[i][c] = outcomes[c].reject ? 1 : 0;
            } catch (const ValidationError& e) {
                throw ValidationError("replication " + std::to_string(i) + " (T=" + std::to_string(t) +
                                      ", seed=" + std::to_string(seed) + ") failed: " + e.what());
            } catch (const std::exception& e) {
                throw NumericalError("replication " + std::to_string(i) + " (T=" + std::to_string(t) +
                                     ", seed=" + std::to_string(seed) + ") failed: " + e.what());
            }
        });
        for (std::size_t c = 0; c < tests.size(); ++c) {
            McRow row;
            row.t = t;
            row.rule = tests[c].rule.name;
            row.estimator = tests[c].label();
            row.reps = config.reps;
            for (std::size_t i = 0; i < reps; ++i) row.rejections += rejected[i][c];
            row.reject_rate = static_cast<double>(row.rejections) / static_cast<double>(config.reps);
            row.mc_se = mc_std_err(row.reject_rate, row.reps);
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

inline constexpr const char* kTableHeader = "design,T,rule,estimator,reps,b,alpha,reject_rate,mc_se";

inline std::string format_fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline void write_table(std::ostream& out, const McTable& table, const std::vector<std::string>& comments = {}) {
    for (const auto& c : comments) out << "# " << c << '\n';
    out << kTableHeader << '\n';
    for (const auto& r : table.rows) {
        out << table.design << ',' << r.t << ',' << r.rule << ',' << r.estimator << ',' << r.reps << ',' << table.b
            << ',' << io::format_double(table.alpha) << ',' << format_fixed4(r.reject_rate) << ','
            << format_fixed4(r.mc_se) << '\n';
    }
}

inline void emit_table(const McTable& table, const std::string& path, const std::vector<std::string>& comments = {}) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    write_table(out, table, comments);
    if (!out) throw ValidationError("write failed for '" + path + "'");
}

/// Reads a table written by emit_table. Rates carry the 4-decimal rounding of the file.
inline McTable read_table(std::istream& in, const std::string& source = "<stream>") {
    McTable table;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        const std::string t = io::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (!header) {
            if (t != kTableHeader) throw ValidationError(source + ": unexpected table header");
            header = true;
            continue;
        }
        const auto cells = io::split(t, ',');
        if (cells.size() != 9) throw ValidationError(source + ": table rows need 9 fields");
        table.design = cells[0];
        McRow row;
        row.t = io::parse_int(cells[1], "T");
        row.rule = cells[2];
        row.estimator = cells[3];
        row.reps = static_cast<int>(io::parse_int(cells[4], "reps"));
        table.b = static_cast<int>(io::parse_int(cells[5], "b"));
        table.alpha = io::parse_double(cells[6], "alpha");
        row.reject_rate = io::parse_double(cells[7], "reject_rate");
        row.mc_se = io::parse_double(cells[8], "mc_se");
        row.rejections = static_cast<int>(std::lround(row.reject_rate * row.reps));
        table.rows.push_back(std::move(row));
    }
    if (!header) throw ValidationError(source + ": missing table header");
    return table;
}

inline McTable read_table(const std::string& path) {
    auto in = io::open_input(path);
    return read_table(in, path);
}

inline nlohmann::json design_to_json(const DesignSpec& d) {
    nlohmann::json loadings = nlohmann::json::array();
    for (Eigen::Index r = 0; r < d.loadings.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < d.loadings.cols(); ++c) row.push_back(d.loadings(r, c));
        loadings.push_back(row);
    }
    nlohmann::json garch = nlohmann::json::array();
    for (const auto& g : d.garch) garch.push_back({{"omega", g.omega}, {"alpha", g.alpha}, {"beta", g.beta}});
    return {{"name", d.name}, {"loadings", loadings}, {"garch", garch}, {"idio_var", d.idio_var}};
}

/// Provenance record of a study: the full configuration plus the library version.
inline nlohmann::json run_manifest(const McConfig& config) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : config.kappa_rules) rules.push_back({{"name", r.name}, {"exponent", r.exponent}});
    nlohmann::json ests = nlohmann::json::array();
    for (auto e : config.est_kinds) ests.push_back(to_string(e));
    return {{"code_version", kVersion},
            {"design", design_to_json(config.design)},
            {"sample_sizes", config.sample_sizes},
            {"reps", config.reps},
            {"b", config.b},
            {"alpha", config.alpha},
            {"kappa_rules", rules},
            {"est_kinds", ests},
            {"restrict_complement", config.restrict_complement},
            {"base_seed", config.base_seed},
            {"workers", config.workers},
            {"scheme", config.scheme.describe()},
            {"panel_hook", static_cast<bool>(config.panel_hook)}};
}

inline void write_manifest(const McConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << run_manifest(config).dump(2) << '\n';
}

/// Applies config-file keys (design, sample_sizes, reps, b, alpha, kappa_rules, est_kinds, base_seed, workers, scheme).
inline void apply_key_values(McConfig& config, const std::map<std::string, std::string>& kv, const std::string& source) {
    for (const auto& [key, value] : kv) {
        if (key == "design") {
            if (value.size() == 2 && value[0] == 'D')
                config.design = preset_design(value);
            else
                config.design = io::read_design_file(value);
        } else if (key == "sample_sizes") {
            config.sample_sizes.clear();
            for (const auto& s : io::split(value, ',')) config.sample_sizes.push_back(io::parse_int(s, "sample_sizes"));
        } else if (key == "reps") {
            config.reps = static_cast<int>(io::parse_int(value, "reps"));
        } else if (key == "b") {
            config.b = static_cast<int>(io::parse_int(value, "b"));
        } else if (key == "alpha") {
            config.alpha = io::parse_double(value, "alpha");
        } else if (key == "kappa_rules") {
            config.kappa_rules.clear();
            for (const auto& s : io::split(value, ',')) config.kappa_rules.push_back(KappaRule::parse(s));
        } else if (key == "est_kinds") {
            config.est_kinds.clear();
            for (const auto& s : io::split(value, ',')) config.est_kinds.push_back(parse_ch_estimator(s));
        } else if (key == "base_seed") {
            const long long s = io::parse_int(value, "base_seed");
            detail::require(s >= 0, "base_seed must be nonnegative");
            config.base_seed = static_cast<std::uint64_t>(s);
        } else if (key == "workers") {
            const long long w = io::parse_int(value, "workers");
            detail::require(w >= 1, "workers must be at least 1");
            config.workers = static_cast<unsigned>(w);
        } else if (key == "restrict_complement") {
            detail::require(value == "true" || value == "false", "restrict_complement must be true or false");
            config.restrict_complement = value == "true";
        } else if (key == "scheme") {
            config.scheme = BootstrapScheme::parse(value);
        } else {
            throw ValidationError(source + ": unknown key '" + key + "'");
        }
    }
}

/// Key = value rendering of a config, the same keys a config file accepts.
inline std::vector<std::string> describe_config(const McConfig& c) {
    auto join = [](const auto& items, auto fmt) {
        std::string s;
        for (const auto& x : items) s += (s.empty() ? "" : ",") + fmt(x);
        return s;
    };
    return {
        "design = " + c.design.name,
        "sample_sizes = " + join(c.sample_sizes, [](Eigen::Index t) { return std::to_string(t); }),
        "reps = " + std::to_string(c.reps),
        "b = " + std::to_string(c.b),
        "alpha = " + io::format_double(c.alpha),
        "kappa_rules = " + join(c.kappa_rules, [](const KappaRule& r) { return r.name; }),
        "est_kinds = " + join(c.est_kinds, [](DerivEstimator::Kind k) { return to_string(k); }),
        "base_seed = " + std::to_string(c.base_seed),
        "workers = " + std::to_string(c.workers),
        "restrict_complement = " + std::string(c.restrict_complement ? "true" : "false"),
        "scheme = " + c.scheme.describe(),
    };
}

}  // namespace degboot
