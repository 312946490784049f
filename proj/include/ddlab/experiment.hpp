// Experiment driver: resolves a plain-text config into a fully-defaulted
// canonical form, runs the replicated trajectories (optionally a sweep grid
// with shared data per replication), writes per-seed CSVs, a summary JSON
// with the median/IQR/min-max statistics, an aligned state-evolution CSV, and
// a manifest that reproduces the run bit-identically.
#pragma once

#include "ddlab/analysis.hpp"
#include "ddlab/config.hpp"
#include "ddlab/csv.hpp"
#include "ddlab/descent.hpp"
#include "ddlab/expectation.hpp"
#include "ddlab/mixture.hpp"
#include "ddlab/models.hpp"
#include "ddlab/state_evolution.hpp"
#include "ddlab/stats.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ddlab {

using nlohmann::json;

struct ExperimentConfig {
    std::string experiment;
    std::string algorithm;       // gd | pure-dd | damped-dd | general-dd
    std::string model_kind;
    int model_width = 3;
    int n = 0, d = 0, T = 0, replications = 0;
    std::uint64_t seed = 0;
    int holdout_n = 0;
    double eta = 0.05, gamma = 0.05;
    double eta0 = 1.0, eta1 = 0.05, gamma0 = 1.0, gamma1 = 0.0;
    double lambda = 4.0;
    std::vector<double> c_grid, eta0_grid, lambda_grid;
    std::string a_init;          // "gaussian" or a number
    NoiseKind noise = NoiseKind::gaussian;
    bool emit_se = false;
    std::string se_engine;       // "gh" | "mc"
    int se_samples = 200000;
    int se_gh_order = 64;
    std::uint64_t se_seed = 0;
    int se_max_time = 512;

    ConfigMap canonical;         // every knob materialized
    std::string hash;
};

namespace detail {

inline std::vector<double> default_c_grid() {
    // logarithmic in [0.25, 4]
    std::vector<double> g;
    for (int k = 0; k <= 8; ++k) g.push_back(0.25 * std::pow(2.0, 0.5 * k));
    return g;
}

inline void put(ConfigMap& cfg, const std::string& key, const std::string& v) { cfg[key] = v; }
inline void put(ConfigMap& cfg, const std::string& key, double v) { cfg[key] = format_double(v); }
inline void put(ConfigMap& cfg, const std::string& key, long v) { cfg[key] = std::to_string(v); }

}  // namespace detail

// Materializes defaults (per-experiment presets from the reference settings)
// and validates. The resulting canonical map fully determines the run.
inline ExperimentConfig resolve_experiment_config(const ConfigMap& raw) {
    ExperimentConfig ec;
    ec.experiment = get_string(raw, "experiment", "");
    const bool is_signalless = ec.experiment == "signalless";
    const bool is_c_sweep = ec.experiment == "signalless-c-sweep";
    const bool is_xor = ec.experiment == "xor";
    const bool is_eta0_sweep = ec.experiment == "xor-eta0-sweep";
    const bool is_universality = ec.experiment == "discrete-noise-universality";
    const bool is_se_vs_emp = ec.experiment == "se-vs-empirical";
    if (!(is_signalless || is_c_sweep || is_xor || is_eta0_sweep || is_universality ||
          is_se_vs_emp))
        throw ConfigError("experiment must be one of signalless | signalless-c-sweep | xor | "
                          "xor-eta0-sweep | discrete-noise-universality | se-vs-empirical (got '" +
                          ec.experiment + "')");

    // Presets.
    int def_n = 1000, def_d = 1000, def_T = 200, def_reps = 20;
    std::string def_alg = "pure-dd", def_model = "xor-bilinear", def_a_init = "gaussian";
    if (is_signalless) {
        def_n = 200; def_d = 800; def_T = 100; def_reps = 100;
        def_model = "linear-mse";
    } else if (is_c_sweep) {
        def_n = 800; def_d = 800; def_T = 100; def_reps = 100;
        def_model = "linear-mse"; def_alg = "damped-dd";
    } else if (is_eta0_sweep) {
        def_alg = "damped-dd"; def_a_init = "1";
    } else if (is_universality) {
        def_n = 800; def_d = 784; def_T = 100; def_model = "glm-ce";
    } else if (is_se_vs_emp) {
        def_n = 1000; def_d = 4000; def_T = 20; def_reps = 10;
        def_model = "linear-mse";
    }

    ec.algorithm = get_string(raw, "algorithm", def_alg);
    if (ec.algorithm != "gd" && ec.algorithm != "pure-dd" && ec.algorithm != "damped-dd" &&
        ec.algorithm != "general-dd")
        throw ConfigError("algorithm must be gd | pure-dd | damped-dd | general-dd");
    ec.model_kind = get_string(raw, "model", def_model);
    ec.model_width = static_cast<int>(get_int(raw, "model_width", 3));
    ec.n = static_cast<int>(get_int(raw, "n", def_n));
    ec.d = static_cast<int>(get_int(raw, "d", def_d));
    ec.T = static_cast<int>(get_int(raw, "T", def_T));
    ec.replications = static_cast<int>(get_int(raw, "replications", def_reps));
    if (ec.n < 1 || ec.d < 1 || ec.T < 1 || ec.replications < 1)
        throw ConfigError("n, d, T, replications must all be >= 1");
    ec.seed = static_cast<std::uint64_t>(get_int(raw, "seed", 1));
    ec.holdout_n = static_cast<int>(get_int(raw, "holdout_n", ec.n));
    ec.eta = get_double(raw, "eta", 0.05);
    ec.gamma = get_double(raw, "gamma", ec.eta);
    ec.eta0 = get_double(raw, "eta0", is_c_sweep ? 1.0 - ec.eta : 1.0);
    ec.eta1 = get_double(raw, "eta1", ec.eta);
    ec.gamma0 = get_double(raw, "gamma0", 1.0);
    ec.gamma1 = get_double(raw, "gamma1", is_eta0_sweep ? 0.0 : ec.eta);
    ec.lambda = get_double(raw, "lambda", is_universality ? 2.0 : 4.0);
    ec.a_init = get_string(raw, "a_init", def_a_init);
    ec.noise = noise_kind_from_string(get_string(raw, "noise", "gaussian"));

    if (is_c_sweep) ec.c_grid = get_double_list(raw, "c_grid", detail::default_c_grid());
    if (is_eta0_sweep) ec.eta0_grid = get_double_list(raw, "eta0_grid", {1.0, 0.9, 0.8});
    if (is_xor) ec.lambda_grid = get_double_list(raw, "lambda_grid", {1.0, 4.0, 8.0});
    if ((is_c_sweep && ec.c_grid.empty()) || (is_eta0_sweep && ec.eta0_grid.empty()) ||
        (is_xor && ec.lambda_grid.empty()))
        throw ConfigError("sweep experiments need a nonempty grid");

    ec.emit_se = get_int(raw, "se", is_se_vs_emp ? 1 : 0) != 0;
    const auto model_L = ec.model_kind == "xor-bilinear" ? 2
                         : ec.model_kind == "mlp2-tanh"  ? ec.model_width
                                                         : 1;
    ec.se_engine = get_string(raw, "se_engine", model_L == 1 ? "gh" : "mc");
    if (ec.se_engine != "gh" && ec.se_engine != "mc")
        throw ConfigError("se_engine must be gh | mc");
    if (ec.se_engine == "gh" && model_L != 1)
        throw ConfigError("gauss-hermite state evolution requires an L = 1 model");
    ec.se_samples = static_cast<int>(get_int(raw, "se_samples", 200000));
    ec.se_gh_order = static_cast<int>(get_int(raw, "se_gh_order", 64));
    ec.se_seed = static_cast<std::uint64_t>(get_int(raw, "se_seed", 777));
    ec.se_max_time = static_cast<int>(get_int(raw, "se_max_time", 512));
    if (ec.emit_se && ec.a_init == "gaussian" &&
        (ec.model_kind == "xor-bilinear" || ec.model_kind == "mlp2-tanh"))
        throw ConfigError("state evolution needs a deterministic head init: set a_init=<value>");
    if (ec.emit_se && ec.algorithm == "gd")
        throw ConfigError("state evolution describes the decoupled-descent family; se=1 "
                          "requires a dd algorithm");

    for (const auto& [k, v] : raw) {
        static const char* known[] = {
            "experiment", "algorithm", "model", "model_width", "n", "d", "T", "replications",
            "seed", "holdout_n", "eta", "gamma", "eta0", "eta1", "gamma0", "gamma1", "lambda",
            "c_grid", "eta0_grid", "lambda_grid", "a_init", "noise", "se", "se_engine",
            "se_samples", "se_gh_order", "se_seed", "se_max_time"};
        bool ok = false;
        for (const char* key : known) ok = ok || (k == key);
        if (!ok) throw ConfigError("unknown config key: " + k);
        (void)v;
    }

    ConfigMap c;
    detail::put(c, "experiment", ec.experiment);
    detail::put(c, "algorithm", ec.algorithm);
    detail::put(c, "model", ec.model_kind);
    detail::put(c, "model_width", static_cast<long>(ec.model_width));
    detail::put(c, "n", static_cast<long>(ec.n));
    detail::put(c, "d", static_cast<long>(ec.d));
    detail::put(c, "T", static_cast<long>(ec.T));
    detail::put(c, "replications", static_cast<long>(ec.replications));
    detail::put(c, "seed", static_cast<long>(ec.seed));
    detail::put(c, "holdout_n", static_cast<long>(ec.holdout_n));
    detail::put(c, "eta", ec.eta);
    detail::put(c, "gamma", ec.gamma);
    detail::put(c, "eta0", ec.eta0);
    detail::put(c, "eta1", ec.eta1);
    detail::put(c, "gamma0", ec.gamma0);
    detail::put(c, "gamma1", ec.gamma1);
    detail::put(c, "lambda", ec.lambda);
    if (is_c_sweep) detail::put(c, "c_grid", format_double_list(ec.c_grid));
    if (is_eta0_sweep) detail::put(c, "eta0_grid", format_double_list(ec.eta0_grid));
    if (is_xor) detail::put(c, "lambda_grid", format_double_list(ec.lambda_grid));
    detail::put(c, "a_init", ec.a_init);
    detail::put(c, "noise", to_string(ec.noise));
    detail::put(c, "se", static_cast<long>(ec.emit_se ? 1 : 0));
    detail::put(c, "se_engine", ec.se_engine);
    detail::put(c, "se_samples", static_cast<long>(ec.se_samples));
    detail::put(c, "se_gh_order", static_cast<long>(ec.se_gh_order));
    detail::put(c, "se_seed", static_cast<long>(ec.se_seed));
    detail::put(c, "se_max_time", static_cast<long>(ec.se_max_time));
    ec.canonical = std::move(c);
    ec.hash = config_hash(ec.canonical);
    return ec;
}

namespace detail {

inline MixtureSpec experiment_spec(const ExperimentConfig& ec, double lambda) {
    MixtureSpec spec;
    if (ec.experiment == "signalless" || ec.experiment == "signalless-c-sweep" ||
        (ec.experiment == "se-vs-empirical" && ec.model_kind == "linear-mse")) {
        spec = build_signalless_spec(ec.d);
    } else if (ec.experiment == "discrete-noise-universality") {
        // Two synthetic antipodal signal modes with binary labels.
        Eigen::VectorXd v = Eigen::VectorXd::Constant(ec.d, lambda);
        spec = MixtureSpec::create(ec.d, {v, -v}, Eigen::VectorXd::Constant(2, 0.5),
                                   {ResponseLaw::point_mass(0.0), ResponseLaw::point_mass(1.0)});
    } else {
        spec = build_xor_spec(ec.d, lambda);
    }
    spec.noise = ec.noise;
    spec.validate_and_finalize();
    return spec;
}

inline TrajectoryOptions trajectory_options(const ExperimentConfig& ec, double eta0_override,
                                            double eta1_override) {
    TrajectoryOptions opts;
    opts.holdout_n = ec.holdout_n;
    if (ec.a_init != "gaussian") {
        try {
            opts.fixed_a_init = std::stod(ec.a_init);
        } catch (const std::exception&) {
            throw ConfigError("a_init must be 'gaussian' or a number, got " + ec.a_init);
        }
    }
    if (ec.algorithm == "gd") {
        opts.algorithm = Algorithm::gd;
        opts.eta = ec.eta;
        opts.gamma = ec.gamma;
    } else if (ec.algorithm == "pure-dd") {
        opts.algorithm = Algorithm::pure_dd;
        opts.eta = ec.eta;
    } else {
        opts.algorithm = Algorithm::general_dd;
        opts.dd.eta0 = eta0_override;
        opts.dd.eta1 = eta1_override;
        opts.dd.gamma0 = ec.gamma0;
        opts.dd.gamma1 = ec.gamma1;
    }
    return opts;
}

inline std::vector<std::string> trajectory_header(int L, int J, int Lp) {
    std::vector<std::string> h = {"t", "train_error", "test_error_emp"};
    for (int i = 1; i <= L; ++i)
        for (int j = 1; j <= L; ++j)
            h.push_back("omega_" + std::to_string(i) + std::to_string(j));
    for (int j = 1; j <= J; ++j)
        for (int i = 1; i <= L; ++i)
            h.push_back("m_" + std::to_string(j) + "_" + std::to_string(i));
    for (int i = 1; i <= Lp; ++i) h.push_back("a_" + std::to_string(i));
    return h;
}

inline void write_trajectory_csv(const std::string& path, const std::vector<StepRecord>& traj,
                                 int L, int J, int Lp) {
    std::ofstream out(path + ".tmp");
    write_csv_header(out, trajectory_header(L, J, Lp));
    for (const auto& r : traj) {
        std::vector<double> row = {static_cast<double>(r.t), r.train_error, r.test_error_emp};
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j) row.push_back(r.overlaps.omega(i, j));
        for (int j = 0; j < J; ++j)
            for (int i = 0; i < L; ++i) row.push_back(r.overlaps.m[static_cast<std::size_t>(j)][i]);
        for (int i = 0; i < Lp; ++i) row.push_back(r.a_value[i]);
        write_csv_row(out, row);
    }
    out.close();
    std::filesystem::rename(path + ".tmp", path);
}

inline json summary_of_series(const std::vector<std::vector<double>>& curves, int T) {
    // Ragged-tolerant per-step summary; seeds that failed early simply stop
    // contributing past their failure step.
    json out;
    std::vector<double> med, q25, q75, mn, mx;
    std::vector<int> alive;
    for (int t = 0; t < T; ++t) {
        std::vector<double> col;
        for (const auto& c : curves)
            if (static_cast<int>(c.size()) > t) col.push_back(c[static_cast<std::size_t>(t)]);
        if (col.empty()) break;
        med.push_back(quantile(col, 0.5));
        q25.push_back(quantile(col, 0.25));
        q75.push_back(quantile(col, 0.75));
        mn.push_back(*std::min_element(col.begin(), col.end()));
        mx.push_back(*std::max_element(col.begin(), col.end()));
        alive.push_back(static_cast<int>(col.size()));
    }
    out["median"] = med;
    out["q25"] = q25;
    out["q75"] = q75;
    out["min"] = mn;
    out["max"] = mx;
    out["alive"] = alive;
    return out;
}

struct SeedOutcome {
    std::vector<StepRecord> records;   // possibly truncated on failure
    bool failed = false;
    int fail_step = 0;
    std::string message;
};

inline SeedOutcome run_one_seed(const MixtureSpec& spec, std::shared_ptr<const ModelLoss> model,
                                const ExperimentConfig& ec, const TrajectoryOptions& opts,
                                std::uint64_t seed) {
    SeedOutcome out;
    try {
        out.records = run_trajectory(spec, model, ec.n, ec.T, seed, opts);
    } catch (const NumericalError& err) {
        out.failed = true;
        out.fail_step = err.step;
        out.message = err.what();
        // Partial trajectories are re-run up to the failure point so the
        // summary still sees the seed's pre-failure steps.
        if (err.step > 1) {
            TrajectoryOptions trunc = opts;
            out.records = run_trajectory(spec, model, ec.n, err.step - 1, seed, trunc);
        }
    }
    return out;
}

// Summary JSON for one (grid point, algorithm) group of replicated runs.
inline json summarize_group(const std::vector<SeedOutcome>& outcomes, const ExperimentConfig& ec,
                            int L) {
    std::vector<std::vector<double>> train, test, gap;
    std::vector<std::vector<std::vector<double>>> omega;   // seed -> t -> L*L
    json failures = json::array();
    json final_train = json::array(), final_test = json::array();
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
        const auto& oc = outcomes[k];
        std::vector<double> tr, te, gp;
        std::vector<std::vector<double>> om;
        for (const auto& r : oc.records) {
            tr.push_back(r.train_error);
            te.push_back(r.test_error_emp);
            gp.push_back(std::abs(r.train_error - r.test_error_emp));
            std::vector<double> entries;
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < L; ++j) entries.push_back(r.overlaps.omega(i, j));
            om.push_back(std::move(entries));
        }
        train.push_back(std::move(tr));
        test.push_back(std::move(te));
        gap.push_back(std::move(gp));
        omega.push_back(std::move(om));
        if (oc.failed) {
            failures.push_back({{"seed_index", k},
                                {"step", oc.fail_step},
                                {"message", oc.message}});
            final_train.push_back(nullptr);
            final_test.push_back(nullptr);
        } else {
            final_train.push_back(oc.records.back().train_error);
            final_test.push_back(oc.records.back().test_error_emp);
        }
    }
    json out;
    out["series"]["train"] = summary_of_series(train, ec.T);
    out["series"]["test_emp"] = summary_of_series(test, ec.T);
    out["series"]["gap"] = summary_of_series(gap, ec.T);
    // median of each Omega_tt entry per step
    std::vector<std::vector<double>> omega_median;
    for (int t = 0; t < ec.T; ++t) {
        std::vector<std::vector<double>> cols(static_cast<std::size_t>(L * L));
        for (const auto& seed_curve : omega)
            if (static_cast<int>(seed_curve.size()) > t)
                for (int e = 0; e < L * L; ++e)
                    cols[static_cast<std::size_t>(e)].push_back(
                        seed_curve[static_cast<std::size_t>(t)][static_cast<std::size_t>(e)]);
        if (cols[0].empty()) break;
        std::vector<double> med;
        for (int e = 0; e < L * L; ++e) med.push_back(quantile(cols[static_cast<std::size_t>(e)], 0.5));
        omega_median.push_back(std::move(med));
    }
    out["omega_tt_median"] = omega_median;
    out["failures"] = failures;
    out["final_train_per_seed"] = final_train;
    out["final_test_per_seed"] = final_test;
    return out;
}

inline void write_text_atomic(const std::string& path, const std::string& text) {
    std::ofstream out(path + ".tmp");
    out << text;
    out.close();
    std::filesystem::rename(path + ".tmp", path);
}

}  // namespace detail

// --- state evolution trajectory ----------------------------------------------

struct SeTrajectoryRow {
    int t = 0;
    double test_se = 0.0;
    Eigen::MatrixXd omega_tt;
    Eigen::MatrixXd xi_tt;
    std::vector<Eigen::VectorXd> m;
    Eigen::VectorXd abar;
};

// Runs the state evolution matching an experiment config: theta_1 ~ N(0, I_d)
// gives bar_theta_sq = I_L and m_{j,1} = 0; the head limit comes from the
// fixed a_init.
inline std::vector<SeTrajectoryRow> run_se_trajectory(const ExperimentConfig& ec,
                                                      double lambda_override = -1.0) {
    const double lambda = lambda_override > 0 ? lambda_override : ec.lambda;
    const MixtureSpec spec = detail::experiment_spec(ec, lambda);
    auto model = make_model(ec.model_kind, ec.model_width);
    const int L = model->preact_width();
    const int Lp = model->head_width();

    Eigen::VectorXd a1(Lp);
    if (Lp > 0) {
        if (ec.a_init == "gaussian")
            throw ConfigError("state evolution needs a deterministic head init");
        a1.setConstant(std::stod(ec.a_init));
    }
    std::vector<Eigen::VectorXd> m1(static_cast<std::size_t>(spec.modes()),
                                    Eigen::VectorXd::Zero(L));
    SEState st = se_init(Eigen::MatrixXd::Identity(L, L), m1, a1, spec.chi, spec.p);
    st.max_time = std::max(ec.se_max_time, ec.T + 1);

    ExpectationEngine engine = ec.se_engine == "gh"
                                   ? ExpectationEngine::gauss_hermite(ec.se_gh_order)
                                   : ExpectationEngine::monte_carlo(ec.se_samples, ec.se_seed);

    double eta0 = ec.eta0, eta1 = ec.eta1, gamma0 = ec.gamma0, gamma1 = ec.gamma1;
    if (ec.algorithm == "pure-dd") {
        eta0 = gamma0 = 1.0;
        eta1 = gamma1 = ec.eta;
    } else if (ec.algorithm == "gd") {
        throw ConfigError("state evolution describes the decoupled-descent family, not gd");
    }
    const double alpha = static_cast<double>(ec.n) / ec.d;
    const ActivationPair gf = loss_gradient_pair(model);

    std::vector<SeTrajectoryRow> rows;
    rows.reserve(static_cast<std::size_t>(ec.T));
    for (int t = 1; t <= ec.T; ++t) {
        SeTrajectoryRow row;
        row.t = t;
        row.omega_tt = st.omega_block(t, t);
        row.m = st.m[static_cast<std::size_t>(t - 1)];
        row.abar = st.abar[static_cast<std::size_t>(t - 1)];
        row.test_se = test_functional(row.m, row.omega_tt, row.abar, *model, spec.laws, spec.p,
                                      engine);
        se_step(st, gf, eta0, eta1, gamma0, gamma1, alpha, spec.laws, engine);
        row.xi_tt = st.xi_block(t, t);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_se_csv(const std::string& path, const std::vector<SeTrajectoryRow>& rows,
                         int L, int J, int Lp) {
    std::vector<std::string> header = {"t", "test_se"};
    for (int i = 1; i <= L; ++i)
        for (int j = 1; j <= L; ++j) header.push_back("omega_" + std::to_string(i) + std::to_string(j));
    for (int i = 1; i <= L; ++i)
        for (int j = 1; j <= L; ++j) header.push_back("xi_" + std::to_string(i) + std::to_string(j));
    for (int j = 1; j <= J; ++j)
        for (int i = 1; i <= L; ++i)
            header.push_back("m_" + std::to_string(j) + "_" + std::to_string(i));
    for (int i = 1; i <= Lp; ++i) header.push_back("a_" + std::to_string(i));

    std::ostringstream out;
    write_csv_header(out, header);
    for (const auto& r : rows) {
        std::vector<double> row = {static_cast<double>(r.t), r.test_se};
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j) row.push_back(r.omega_tt(i, j));
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j) row.push_back(r.xi_tt(i, j));
        for (int j = 0; j < J; ++j)
            for (int i = 0; i < L; ++i) row.push_back(r.m[static_cast<std::size_t>(j)][i]);
        for (int i = 0; i < Lp; ++i) row.push_back(r.abar[i]);
        write_csv_row(out, row);
    }
    detail::write_text_atomic(path, out.str());
}

// --- analysis JSON records ----------------------------------------------------

inline json taylor_breakdown_json(int t, const TaylorBreakdown& tb) {
    return {{"t", t},
            {"a_damp", tb.a_damp},
            {"a_descent", tb.a_descent},
            {"th_damp", tb.th_damp},
            {"th_signal", tb.th_signal},
            {"om_damp", tb.om_damp},
            {"om_cross", tb.om_cross},
            {"predicted_delta", tb.predicted_delta},
            {"actual_delta", tb.actual_delta},
            {"residual", tb.residual}};
}

inline json fixed_point_residual_json(int t, const FixedPointResidual& res) {
    json rm = json::array();
    for (const auto& r : res.r_m) rm.push_back(std::vector<double>(r.data(), r.data() + r.size()));
    return {{"t", t},
            {"r_m", rm},
            {"r_a", std::vector<double>(res.r_a.data(), res.r_a.data() + res.r_a.size())},
            {"max_norm", res.max_norm()}};
}

// --- empirical-vs-SE deviation report ----------------------------------------

struct CompareSeReport {
    std::vector<double> train_dev, test_dev, omega_dev;
    double max_train_dev = 0.0, max_test_dev = 0.0, max_omega_dev = 0.0;
};

// Per-step |median_empirical - se| for the train error, the empirical test
// error (both against the SE test functional) and the Omega_tt entries.
inline CompareSeReport compare_se(const json& summary, const CsvTable& se) {
    const auto& train_med = summary.at("series").at("train").at("median");
    const auto& test_med = summary.at("series").at("test_emp").at("median");
    const auto& omega_med = summary.at("omega_tt_median");
    if (se.rows.size() != train_med.size())
        throw std::invalid_argument("compare_se: trajectory lengths are misaligned");

    const int test_col = se.column("test_se");
    if (test_col < 0) throw std::invalid_argument("compare_se: se csv lacks test_se");
    std::vector<int> omega_cols;
    for (std::size_t i = 0; i < se.header.size(); ++i)
        if (se.header[i].rfind("omega_", 0) == 0) omega_cols.push_back(static_cast<int>(i));
    const auto entries = omega_med.empty() ? 0 : omega_med.at(0).size();
    if (omega_cols.size() != entries)
        throw std::invalid_argument("compare_se: omega entry counts are misaligned");

    CompareSeReport rep;
    for (std::size_t t = 0; t < se.rows.size(); ++t) {
        const double se_test = se.rows[t][static_cast<std::size_t>(test_col)];
        rep.train_dev.push_back(std::abs(train_med.at(t).get<double>() - se_test));
        rep.test_dev.push_back(std::abs(test_med.at(t).get<double>() - se_test));
        double om = 0.0;
        for (std::size_t e = 0; e < omega_cols.size(); ++e)
            om = std::max(om, std::abs(omega_med.at(t).at(e).get<double>() -
                                       se.rows[t][static_cast<std::size_t>(omega_cols[e])]));
        rep.omega_dev.push_back(om);
        rep.max_train_dev = std::max(rep.max_train_dev, rep.train_dev.back());
        rep.max_test_dev = std::max(rep.max_test_dev, rep.test_dev.back());
        rep.max_omega_dev = std::max(rep.max_omega_dev, om);
    }
    return rep;
}

// --- run driver ----------------------------------------------------------------

struct ExperimentResult {
    std::string run_dir;
    json summary;
};

inline ExperimentResult run_experiment(const ConfigMap& raw, const std::string& out_root,
                                       int workers = 1) {
    const ExperimentConfig ec = resolve_experiment_config(raw);
    auto model = make_model(ec.model_kind, ec.model_width);
    const int L = model->preact_width();
    const int Lp = model->head_width();

    namespace fs = std::filesystem;
    const fs::path run_dir = fs::path(out_root) / ec.experiment / ec.hash;
    fs::create_directories(run_dir);

    // Grid setup: (key, values, subdir naming). Single-config experiments use
    // a one-point grid.
    std::string grid_key;
    std::vector<double> grid;
    if (ec.experiment == "signalless-c-sweep") {
        grid_key = "c";
        grid = ec.c_grid;
    } else if (ec.experiment == "xor-eta0-sweep") {
        grid_key = "eta0";
        grid = ec.eta0_grid;
    } else if (ec.experiment == "xor") {
        grid_key = "lambda";
        grid = ec.lambda_grid;
    } else if (ec.experiment == "discrete-noise-universality") {
        grid_key = "noise";
        grid = {0.0, 1.0};   // gaussian, three-point
    } else {
        grid_key = "single";
        grid = {0.0};
    }
    const int G = static_cast<int>(grid.size());
    const int R = ec.replications;

    // Shared data across grid points: replication k always uses run seed
    // seed + k, so every grid point sees the same noise realization.
    std::vector<std::vector<detail::SeedOutcome>> outcomes(
        static_cast<std::size_t>(G), std::vector<detail::SeedOutcome>(static_cast<std::size_t>(R)));

    std::atomic<int> next_job{0};
    const int total_jobs = G * R;
    auto worker = [&]() {
        for (;;) {
            const int job = next_job.fetch_add(1);
            if (job >= total_jobs) return;
            const int g = job / R;
            const int k = job % R;

            ExperimentConfig local = ec;
            double lambda = ec.lambda;
            if (grid_key == "c") {
                local.algorithm = "general-dd";
                local.eta0 = 1.0 - ec.eta;
                local.eta1 = grid[static_cast<std::size_t>(g)] * ec.eta;
                local.gamma0 = 1.0;
                local.gamma1 = 0.0;
            } else if (grid_key == "eta0") {
                local.algorithm = "general-dd";
                local.eta0 = grid[static_cast<std::size_t>(g)];
                local.eta1 = ec.eta1;
            } else if (grid_key == "lambda") {
                lambda = grid[static_cast<std::size_t>(g)];
            } else if (grid_key == "noise") {
                local.noise = g == 0 ? NoiseKind::gaussian : NoiseKind::three_point;
            }
            const MixtureSpec spec = detail::experiment_spec(local, lambda);
            const TrajectoryOptions opts =
                detail::trajectory_options(local, local.eta0, local.eta1);
            outcomes[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)] =
                detail::run_one_seed(spec, model, local, opts,
                                     ec.seed + static_cast<std::uint64_t>(k));
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // Per-grid-point CSVs and summaries.
    json top;
    top["experiment"] = ec.experiment;
    top["config_hash"] = ec.hash;
    top["config"] = json::object();
    for (const auto& [k, v] : ec.canonical) top["config"][k] = v;
    json points = json::array();
    const int J = detail::experiment_spec(ec, ec.lambda).modes();
    for (int g = 0; g < G; ++g) {
        fs::path dir = run_dir;
        std::string label = "single";
        if (grid_key == "noise") {
            label = g == 0 ? "noise-gaussian" : "noise-three-point";
            dir /= label;
        } else if (grid_key != "single") {
            label = grid_key + "-" + std::to_string(g);
            dir /= label;
        }
        fs::create_directories(dir);
        for (int k = 0; k < R; ++k)
            detail::write_trajectory_csv(
                (dir / ("seed-" + std::to_string(k) + ".csv")).string(),
                outcomes[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)].records, L, J,
                Lp);
        json point = detail::summarize_group(outcomes[static_cast<std::size_t>(g)], ec, L);
        point["label"] = label;
        if (grid_key != "single" && grid_key != "noise")
            point[grid_key] = grid[static_cast<std::size_t>(g)];
        detail::write_text_atomic((dir / "summary.json").string(), point.dump(1));
        points.push_back(point);
    }

    // Zero-cost validation tally for sweeps: per replication, does the
    // train-error-optimal grid point match the test-error-optimal one?
    if (G > 1 && grid_key != "noise" && grid_key != "lambda") {
        int agree = 0;
        json train_arg = json::array(), test_arg = json::array();
        for (int k = 0; k < R; ++k) {
            std::vector<double> ft, fe;
            for (int g = 0; g < G; ++g) {
                const auto& oc = outcomes[static_cast<std::size_t>(g)][static_cast<std::size_t>(k)];
                const double inf = std::numeric_limits<double>::infinity();
                ft.push_back(oc.failed ? inf : oc.records.back().train_error);
                fe.push_back(oc.failed ? inf : oc.records.back().test_error_emp);
            }
            const int at = select_candidate(ft);
            const int ae = select_candidate(fe);
            train_arg.push_back(at);
            test_arg.push_back(ae);
            if (at == ae) ++agree;
        }
        top["zero_cost"] = {{"agreement_fraction", static_cast<double>(agree) / R},
                            {"train_argmin", train_arg},
                            {"test_argmin", test_arg}};
    }

    // Universality: compare gap statistics across the two noise kinds.
    if (grid_key == "noise") {
        const auto& ga = points.at(0)["series"]["gap"];
        const auto& gb = points.at(1)["series"]["gap"];
        const std::size_t T = std::min(ga["median"].size(), gb["median"].size());
        double max_diff = 0.0;
        bool pass = true;
        for (std::size_t t = 0; t < T; ++t) {
            const double med_a = ga["median"].at(t).get<double>();
            const double med_b = gb["median"].at(t).get<double>();
            const double iqr_a = ga["q75"].at(t).get<double>() - ga["q25"].at(t).get<double>();
            const double iqr_b = gb["q75"].at(t).get<double>() - gb["q25"].at(t).get<double>();
            const double diff = std::abs(med_a - med_b);
            max_diff = std::max(max_diff, diff);
            if (diff > 2.0 * std::max(iqr_a, iqr_b)) pass = false;
        }
        top["universality"] = {{"max_median_gap_diff", max_diff}, {"pass", pass}};
    }

    // State-evolution trajectory aligned with the empirical CSVs.
    if (ec.emit_se) {
        const auto rows = run_se_trajectory(ec);
        write_se_csv((run_dir / "se.csv").string(), rows, L, J, Lp);
        if (grid_key == "single") {
            const CsvTable se = read_csv_file((run_dir / "se.csv").string());
            const CompareSeReport rep = compare_se(points.at(0), se);
            top["se_deviation"] = {{"max_train_dev", rep.max_train_dev},
                                   {"max_test_dev", rep.max_test_dev},
                                   {"max_omega_dev", rep.max_omega_dev},
                                   {"train_dev", rep.train_dev},
                                   {"test_dev", rep.test_dev},
                                   {"omega_dev", rep.omega_dev}};
        }
    }

    top["points"] = points;
    detail::write_text_atomic((run_dir / "summary.json").string(), top.dump(1));

    // Manifest: the canonical config, re-runnable as-is; seed list appended
    // as comments (stripped on parse, so the hash is unchanged).
    std::string manifest = canonical_text(ec.canonical);
    manifest += "# config_hash=" + ec.hash + "\n# seeds=";
    for (int k = 0; k < R; ++k)
        manifest += (k ? "," : "") + std::to_string(ec.seed + static_cast<std::uint64_t>(k));
    manifest += "\n";
    detail::write_text_atomic((run_dir / "manifest.cfg").string(), manifest);

    ExperimentResult res;
    res.run_dir = run_dir.string();
    res.summary = std::move(top);
    return res;
}

}  // namespace ddlab
