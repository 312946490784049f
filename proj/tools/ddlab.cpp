// ddlab command-line driver.
//
//   ddlab run     --config <file> [--set key=value]... --out <dir> [--workers N]
//   ddlab se      --config <file> [--set key=value]... [--out <file>]
//   ddlab compare --emp <summary.json> --se <se.csv>
//   ddlab check
//
// Exit codes: 0 success, 1 configuration error, 2 numerical failure.

#include "ddlab/analysis.hpp"
#include "ddlab/config.hpp"
#include "ddlab/csv.hpp"
#include "ddlab/experiment.hpp"
#include "ddlab/models.hpp"
#include "ddlab/rng.hpp"
#include "ddlab/state_evolution.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

int run_command(const std::string& config_path, const std::vector<std::string>& sets,
                const std::string& out_dir, int workers) {
    ddlab::ConfigMap cfg = ddlab::load_config_file(config_path);
    for (const auto& s : sets) ddlab::apply_override(cfg, s);
    const ddlab::ExperimentResult res = ddlab::run_experiment(cfg, out_dir, workers);
    std::cout << "run complete: " << res.run_dir << "\n";
    if (res.summary.contains("zero_cost"))
        std::cout << "zero-cost agreement: "
                  << res.summary["zero_cost"]["agreement_fraction"].get<double>() << "\n";
    if (res.summary.contains("universality"))
        std::cout << "universality pass: " << res.summary["universality"]["pass"].get<bool>()
                  << " (max median gap diff "
                  << res.summary["universality"]["max_median_gap_diff"].get<double>() << ")\n";
    if (res.summary.contains("se_deviation"))
        std::cout << "max deviation vs SE: train "
                  << res.summary["se_deviation"]["max_train_dev"].get<double>() << ", test "
                  << res.summary["se_deviation"]["max_test_dev"].get<double>() << ", omega "
                  << res.summary["se_deviation"]["max_omega_dev"].get<double>() << "\n";
    return 0;
}

int se_command(const std::string& config_path, const std::vector<std::string>& sets,
               const std::string& out_file) {
    ddlab::ConfigMap cfg = ddlab::load_config_file(config_path);
    for (const auto& s : sets) ddlab::apply_override(cfg, s);
    ddlab::ExperimentConfig ec = ddlab::resolve_experiment_config(cfg);
    const auto rows = ddlab::run_se_trajectory(ec);
    auto model = ddlab::make_model(ec.model_kind, ec.model_width);
    const int J = static_cast<int>(rows.front().m.size());
    if (out_file.empty()) {
        const std::string tmp =
            (std::filesystem::temp_directory_path() / "ddlab-se.csv").string();
        ddlab::write_se_csv(tmp, rows, model->preact_width(), J, model->head_width());
        std::ifstream in(tmp);
        std::cout << in.rdbuf();
    } else {
        ddlab::write_se_csv(out_file, rows, model->preact_width(), J, model->head_width());
        std::cout << "wrote " << out_file << "\n";
    }
    return 0;
}

int compare_command(const std::string& emp_path, const std::string& se_path) {
    std::ifstream in(emp_path);
    if (!in) throw ddlab::ConfigError("cannot open summary: " + emp_path);
    ddlab::json summary = ddlab::json::parse(in);
    if (summary.contains("points")) summary = summary["points"].at(0);
    const ddlab::CsvTable se = ddlab::read_csv_file(se_path);
    const ddlab::CompareSeReport rep = ddlab::compare_se(summary, se);
    std::printf("%6s %14s %14s %14s\n", "t", "train_dev", "test_dev", "omega_dev");
    for (std::size_t t = 0; t < rep.train_dev.size(); ++t)
        std::printf("%6zu %14.6g %14.6g %14.6g\n", t + 1, rep.train_dev[t], rep.test_dev[t],
                    rep.omega_dev[t]);
    std::printf("%6s %14.6g %14.6g %14.6g\n", "max", rep.max_train_dev, rep.max_test_dev,
                rep.max_omega_dev);
    return 0;
}

int check_command() {
    using namespace ddlab;
    bool ok = true;

    // Gradient self-test across the catalog.
    for (const auto& kind : {"linear-mse", "glm-ce", "xor-bilinear", "mlp2-tanh"}) {
        auto model = make_model(kind, 3);
        Rng rng(20240517);
        double worst = 0.0;
        for (int rep = 0; rep < 25; ++rep) {
            Eigen::VectorXd h(model->preact_width());
            Eigen::VectorXd a(model->head_width());
            for (int i = 0; i < h.size(); ++i) h[i] = rng.gaussian();
            for (int i = 0; i < a.size(); ++i) a[i] = rng.gaussian();
            const double y = std::string(kind) == "linear-mse" ? rng.gaussian()
                                                               : (rng.uniform() < 0.5 ? 0.0 : 1.0);
            worst = std::max(worst, finite_diff_check(*model, h, y, a, 1e-5).max_err());
        }
        const bool pass = worst < 1e-5;
        ok = ok && pass;
        std::printf("[%s] gradients %-12s max rel err %.3g\n", pass ? "PASS" : "FAIL", kind,
                    worst);
    }

    // State-evolution oracle self-test (hand-derived checkpoints).
    {
        const double eta = 0.05, alpha = 0.25;
        const auto oracle = signalless_closed_form(1.0, eta, alpha, 1.0, 3);
        const double om2 = 1.0 + eta * eta * alpha;
        const double om3 = 1.0 + 4.0 * eta * eta * alpha +
                           std::pow(eta, 4) * alpha * alpha;
        bool pass = std::abs(oracle[1].omega_tt - om2) < 1e-12 &&
                    std::abs(oracle[2].omega_tt - om3) < 1e-12;

        auto model = make_model("linear-mse");
        SEState st = se_init(Eigen::MatrixXd::Identity(1, 1), {Eigen::VectorXd::Zero(1)},
                             Eigen::VectorXd(0), Eigen::MatrixXd::Zero(1, 1),
                             Eigen::VectorXd::Constant(1, 1.0));
        ExpectationEngine gh = ExpectationEngine::gauss_hermite(64);
        const std::vector<ResponseLaw> laws = {ResponseLaw::point_mass(0.0)};
        double max_dev = 0.0;
        for (int t = 1; t < 10; ++t) {
            pure_dd_se_step(st, model, eta, alpha, laws, gh);
            max_dev = std::max(max_dev, std::abs(st.omega_block(t + 1, t + 1)(0, 0) -
                                                 signalless_closed_form(1.0, eta, alpha, 1.0,
                                                                        t + 1)[t].omega_tt));
        }
        pass = pass && max_dev < 1e-10;
        ok = ok && pass;
        std::printf("[%s] state-evolution oracle (quadrature dev %.3g)\n", pass ? "PASS" : "FAIL",
                    max_dev);
    }

    std::printf("%s\n", ok ? "all checks passed" : "CHECKS FAILED");
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"decoupled-descent laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, out_file, emp_path, se_path;
    std::vector<std::string> sets;
    int workers = 1;

    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("--config", config_path, "config file")->required();
    run->add_option("--set", sets, "override key=value (repeatable)");
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--workers", workers, "concurrent replications");

    auto* se = app.add_subcommand("se", "emit the state-evolution trajectory CSV");
    se->add_option("--config", config_path, "config file")->required();
    se->add_option("--set", sets, "override key=value (repeatable)");
    se->add_option("--out", out_file, "output csv (default stdout)");

    auto* cmp = app.add_subcommand("compare", "empirical summary vs SE trajectory");
    cmp->add_option("--emp", emp_path, "summary.json from a run")->required();
    cmp->add_option("--se", se_path, "se.csv")->required();

    app.add_subcommand("check", "run gradient/oracle self-tests");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_command(config_path, sets, out_dir, workers);
        if (se->parsed()) return se_command(config_path, sets, out_file);
        if (cmp->parsed()) return compare_command(emp_path, se_path);
        return check_command();
    } catch (const ddlab::ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const ddlab::NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
}
