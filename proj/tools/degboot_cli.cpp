// Command-line front end: simulate panels, test a data file, run Monte Carlo
// studies and the brute-force oracle checks.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <degboot.hpp>
#include <degboot/oracle.hpp>

namespace {

using namespace degboot;

constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

std::string join_vec(const Vector& v) {
    std::string s = "(";
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + io::format_double(v(i));
    return s + ")";
}

// ---- simulate -------------------------------------------------------------

struct SimulateArgs {
    std::string design;
    std::string spec_file;
    long long horizon = 0;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
    if (a.design.empty() == a.spec_file.empty()) throw ValidationError("simulate: give exactly one of --design or --spec-file");
    const DesignSpec design = a.design.empty() ? io::read_design_file(a.spec_file) : preset_design(a.design);
    detail::require(a.horizon >= 2, "simulate: --T must be at least 2");
    const PanelData panel = simulate_ch_panel(design, a.horizon, RandomStream(a.seed));
    const std::vector<std::string> header = {
        "degboot " + std::string(kVersion) + " simulate",
        "design = " + design.name + (a.spec_file.empty() ? "" : " (" + a.spec_file + ")"),
        "T = " + std::to_string(a.horizon),
        "seed = " + std::to_string(a.seed),
    };
    for (const auto& h : header) std::cout << h << '\n';
    io::write_panel_csv(a.out, panel, header);
    std::cout << "wrote " << panel.size() << " rows to " << a.out << '\n';
    return 0;
}

// ---- test -----------------------------------------------------------------

struct TestArgs {
    std::string data;
    std::string kappa_rule = "T^-1/3";
    std::string estimator = "structural";
    int b = 200;
    double alpha = 0.05;
    std::string scheme = "iid";
    std::uint64_t seed = 1;
    unsigned workers = 1;
    bool restrict_complement = false;
};

int cmd_test(const TestArgs& a) {
    const KappaRule rule = KappaRule::parse(a.kappa_rule);
    const auto est = parse_ch_estimator(a.estimator);
    const BootstrapScheme scheme = BootstrapScheme::parse(a.scheme);
    detail::require(a.workers >= 1, "test: --workers must be at least 1");
    std::cout << "data = " << a.data << "\nkappa_rule = " << rule.name << "\nestimator = " << to_string(est)
              << "\nb = " << a.b << "\nalpha = " << io::format_double(a.alpha) << "\nscheme = " << scheme.describe()
              << "\nseed = " << a.seed << "\nrestrict_complement = " << (a.restrict_complement ? "true" : "false") << "\n";
    const PanelData panel = io::read_panel_csv(a.data);
    ChTestOptions opts;
    opts.workers = a.workers;
    const TestOutcome o =
        ch_feature_test(panel, rule, est, a.b, a.alpha, scheme, RandomStream(a.seed), opts, a.restrict_complement);

    std::cout << "T = " << panel.size() << ", k = " << panel.k() << ", m = " << panel.m() << '\n';
    std::cout << "statistic      " << io::format_double(o.statistic) << '\n';
    std::cout << "critical value " << io::format_double(o.crit_value) << '\n';
    std::cout << "decision       " << (o.reject ? "reject: no common CH feature" : "do not reject") << '\n';
    if (o.minimizer) std::cout << "minimizer      " << join_vec(o.minimizer->coords()) << '\n';
    std::cout << "kappa          " << io::format_double(o.tuning.kappa) << " (" << o.tuning.kappa_rule << ")\n";
    if (o.tuning.radius) std::cout << "ball radius    " << io::format_double(*o.tuning.radius) << '\n';
    if (o.tuning.step) std::cout << "step           " << io::format_double(*o.tuning.step) << '\n';
    if (o.tuning.set_points) std::cout << "set points     " << o.tuning.set_points << '\n';
    if (!o.tuning.optimizer_converged) std::cout << "warning: sphere minimizer did not meet its gradient tolerance\n";
    std::cout << "RESULT stat=" << io::format_double(o.statistic) << " crit=" << io::format_double(o.crit_value)
              << " reject=" << (o.reject ? 1 : 0) << '\n';
    return 0;
}

// ---- mc -------------------------------------------------------------------

struct McArgs {
    std::string config;
    std::optional<unsigned> workers;
    std::optional<int> reps;
    std::optional<int> b;
    std::optional<std::uint64_t> base_seed;
    std::string out;
    std::string manifest;
};

int cmd_mc(const McArgs& a) {
    McConfig config;
    config.kappa_rules = {KappaRule::quarter(), KappaRule::third(), KappaRule::two_fifths()};
    config.est_kinds = {DerivEstimator::Kind::structural_ch, DerivEstimator::Kind::numerical};
    apply_key_values(config, io::read_key_values(a.config), a.config);
    if (a.workers) config.workers = *a.workers;
    if (a.reps) config.reps = *a.reps;
    if (a.b) config.b = *a.b;
    if (a.base_seed) config.base_seed = *a.base_seed;
    config.validate();

    std::vector<std::string> resolved = describe_config(config);
    resolved.insert(resolved.begin(), "degboot " + std::string(kVersion) + " mc");
    for (const auto& line : resolved) std::cout << "# " << line << '\n';
    const McTable table = run_design(config);
    if (a.out.empty()) {
        write_table(std::cout, table);
    } else {
        emit_table(table, a.out, resolved);
        std::cout << "wrote " << table.rows.size() << " rows to " << a.out << '\n';
    }
    if (!a.manifest.empty()) write_manifest(config, a.manifest);
    return 0;
}

// ---- oracle ---------------------------------------------------------------

struct OracleArgs {
    std::string check;
    int trials = 100;
    std::uint64_t seed = 1;
    int k = 2;
    bool corrupt = false;
};

int check_sphere(const OracleArgs& a) {
    detail::require(a.k == 2 || a.k == 3, "oracle: --k must be 2 or 3 for the sphere check");
    int failures = 0;
    double worst = 0.0;
    const RandomStream root(a.seed);
    for (int i = 0; i < a.trials; ++i) {
        RandomStream rng = root.split(static_cast<std::uint64_t>(i));
        auto model = QuadMomentModel::from_deltas(oracle::random_deltas(a.k, a.k + 1, rng), 100);
        const auto fast = minimize_on_sphere(model);
        const auto slow = grid_oracle_sphere(model, a.k == 2 ? 2000 : 20000, 6);
        const double err = std::abs(fast.value - slow.value) / std::max(std::abs(slow.value), 1e-12);
        worst = std::max(worst, err);
        if (err > 1e-6) {
            ++failures;
            std::cout << "FAIL trial " << i << ": minimizer " << join_vec(fast.minimizer.coords()) << " value "
                      << fast.value << " vs grid " << slow.value << " at " << join_vec(slow.minimizer.coords()) << '\n';
        }
    }
    std::cout << "sphere check k=" << a.k << ": " << a.trials - failures << "/" << a.trials
              << " within 1e-6, worst relative error " << worst << '\n';
    return failures ? kExitNumerical : 0;
}

int check_representation(const OracleArgs& a) {
    int failures = 0;
    double worst = 0.0;
    const RandomStream root(a.seed);
    for (int i = 0; i < a.trials; ++i) {
        RandomStream rng = root.split(static_cast<std::uint64_t>(i));
        const Eigen::Index k = 2 + static_cast<Eigen::Index>(i % 2);
        const PanelData panel = oracle::random_panel(50, k, k, rng);
        QuadMomentModel model = fit_quadratic_moments(panel);
        if (a.corrupt) {
            std::vector<Matrix> d = model.deltas();
            d[0](0, 0) += 1e-3;
            model = QuadMomentModel::from_deltas(std::move(d), model.sample_size());
        }
        for (int g = 0; g < 100; ++g) {
            const Vector gamma = oracle::random_unit(k, rng);
            const Vector direct = oracle::direct_theta(panel, gamma);
            const Vector fast = eval_theta(model, SphereVec::normalize(gamma));
            const double err = (direct - fast).cwiseAbs().maxCoeff() / std::max(1.0, direct.cwiseAbs().maxCoeff());
            worst = std::max(worst, err);
            if (err > 1e-10) {
                ++failures;
                std::cout << "FAIL trial " << i << ": gamma " << join_vec(gamma) << " error " << err << '\n';
                break;
            }
        }
    }
    std::cout << "representation check: " << a.trials - failures << "/" << a.trials << " within 1e-10, worst error "
              << worst << '\n';
    return failures ? kExitNumerical : 0;
}

int check_derivative(const OracleArgs& a) {
    int failures = 0;
    double worst = 0.0;
    const RandomStream root(a.seed);
    for (int i = 0; i < a.trials; ++i) {
        RandomStream rng = root.split(static_cast<std::uint64_t>(i));
        const auto model = QuadMomentModel::from_deltas(oracle::random_deltas(2, 3, rng), 100);
        const auto star = QuadMomentModel::from_deltas(oracle::random_deltas(2, 3, rng), 100);
        const auto set = estimate_identified_set(model, 0.3, 100);
        const auto est = DerivEstimator::structural(0.3);
        const auto h = DirectionFn::quadratic(star.g_mat());
        const double fast = structural_deriv_ch(model, set, est, h);
        const double slow = oracle::structural_deriv_grid(model, set.points, h, est.ball_radius());
        const double err = std::abs(fast - slow) / std::max(std::abs(slow), 1e-12);
        worst = std::max(worst, err);
        if (err > 1e-4) {
            ++failures;
            std::cout << "FAIL trial " << i << ": structural " << fast << " vs grid " << slow << '\n';
        }
    }
    std::cout << "derivative check: " << a.trials - failures << "/" << a.trials << " within 1e-4, worst relative error "
              << worst << '\n';
    return failures ? kExitNumerical : 0;
}

int cmd_oracle(const OracleArgs& a) {
    detail::require(a.trials >= 1, "oracle: --trials must be at least 1");
    std::cout << "check = " << a.check << "\ntrials = " << a.trials << "\nseed = " << a.seed << '\n';
    if (a.check == "sphere") return check_sphere(a);
    if (a.check == "representation") return check_representation(a);
    if (a.check == "derivative") return check_derivative(a);
    throw ValidationError("oracle: unknown check '" + a.check + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Second-order bootstrap inference for degenerate functionals"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(degboot::kVersion));

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "simulate a factor-model panel and write it as CSV");
    simulate->add_option("--design", sim.design, "preset design D1..D5");
    simulate->add_option("--spec-file", sim.spec_file, "key = value design file");
    simulate->add_option("--T", sim.horizon, "number of aligned rows")->required();
    simulate->add_option("--seed", sim.seed, "random seed");
    simulate->add_option("--out", sim.out, "output CSV path")->required();

    TestArgs test;
    auto* test_cmd = app.add_subcommand("test", "test a panel CSV for a common CH feature");
    test_cmd->add_option("--data", test.data, "panel CSV (z_1..z_m,y_1..y_k)")->required();
    test_cmd->add_option("--kappa-rule", test.kappa_rule, "T^-1/4, T^-1/3, T^-2/5 or T^-<x>");
    test_cmd->add_option("--estimator", test.estimator, "structural or numerical");
    test_cmd->add_option("--b", test.b, "bootstrap replicates");
    test_cmd->add_option("--alpha", test.alpha, "nominal level");
    test_cmd->add_option("--scheme", test.scheme, "iid or block:<len>");
    test_cmd->add_option("--seed", test.seed, "random seed");
    test_cmd->add_option("--workers", test.workers, "threads for the bootstrap loop");
    test_cmd->add_flag("--restrict-complement", test.restrict_complement,
                       "confine the structural inner problem near the complement of the set estimate");

    McArgs mc;
    auto* mc_cmd = app.add_subcommand("mc", "run a Monte Carlo study from a config file");
    mc_cmd->add_option("--config", mc.config, "key = value config file")->required();
    mc_cmd->add_option("--workers", mc.workers, "worker threads");
    mc_cmd->add_option("--reps", mc.reps, "override reps");
    mc_cmd->add_option("--b", mc.b, "override b");
    mc_cmd->add_option("--seed", mc.base_seed, "override base_seed");
    mc_cmd->add_option("--out", mc.out, "table CSV path (default: stdout)");
    mc_cmd->add_option("--manifest", mc.manifest, "write a JSON run manifest here");

    OracleArgs orc;
    auto* oracle_cmd = app.add_subcommand("oracle", "cross-check fast paths against brute force");
    oracle_cmd->add_option("--check", orc.check, "sphere, representation or derivative")->required();
    oracle_cmd->add_option("--trials", orc.trials, "number of random trials");
    oracle_cmd->add_option("--seed", orc.seed, "random seed");
    oracle_cmd->add_option("--k", orc.k, "dimension for the sphere check (2 or 3)");
    oracle_cmd->add_flag("--corrupt", orc.corrupt, "perturb the model fixture (the check must then fail)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    try {
        if (*simulate) return cmd_simulate(sim);
        if (*test_cmd) return cmd_test(test);
        if (*mc_cmd) return cmd_mc(mc);
        if (*oracle_cmd) return cmd_oracle(orc);
    } catch (const degboot::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const degboot::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return kExitNumerical;
    }
    return 0;
}
