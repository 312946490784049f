// Full-batch trainers: plain GD, the general decoupled-descent family
//
//   h_t      = X theta_t + eta1 * M_t,          M_t = sum_s eta0^{(t-1)-s} hhat_s
//   hhat_t   = g(h_t, y, a_t)
//   Jbar     = (1/n) sum_i grad_h g(h_{t,i}, y_i, a_t)          (L x L)
//   tilde    = X^T hhat_t - alpha * theta_t * Jbar^T
//   theta'   = eta0 * theta_t - eta1 * tilde
//   a'       = gamma0 * a_t - (gamma1/n) sum_i f(h_{t,i}, y_i, a_t)
//   M'       = eta0 * M_t + hhat_t
//
// and pure DD (g = grad_h Psi, f = grad_a Psi, eta0 = gamma0 = 1,
// eta1 = gamma1 = eta). The memory is kept as the single running matrix M;
// opt-in history retention exists for debugging the recursion.
#pragma once

#include "ddlab/activations.hpp"
#include "ddlab/mixture.hpp"
#include "ddlab/models.hpp"
#include "ddlab/rng.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddlab {

struct DDConfig {
    double eta0 = 1.0;
    double eta1 = 0.0;
    double gamma0 = 1.0;
    double gamma1 = 0.0;
    double alpha = 0.0;        // n / d

    bool use_memory = true;    // debug switches; disabling both with unit
    bool use_onsager = true;   // damping reproduces plain GD bit-for-bit
    bool retain_hhat_history = false;

    void validate() const {
        if (!(eta0 >= 0.0 && eta0 <= 1.0))
            throw std::invalid_argument("DDConfig: eta0 must be in [0,1]");
        if (eta1 < 0.0 || gamma1 < 0.0)
            throw std::invalid_argument("DDConfig: eta1 and gamma1 must be >= 0");
        if (!(alpha > 0.0)) throw std::invalid_argument("DDConfig: alpha must be > 0");
    }
};

struct TrainerState {
    Eigen::MatrixXd theta;    // d x L
    Eigen::VectorXd a;        // L'
    Eigen::MatrixXd memory;   // n x L, all zeros at t = 1
    int t = 1;
    std::vector<Eigen::MatrixXd> hhat_history;   // filled only when retained
};

inline TrainerState init_trainer(int n, int d, int L, int Lp, std::uint64_t seed,
                                 std::optional<double> fixed_a = std::nullopt) {
    TrainerState st;
    Rng rng(seed);
    st.theta.resize(d, L);
    rng.fill_gaussian(st.theta);
    st.a.resize(Lp);
    if (fixed_a.has_value()) {
        st.a.setConstant(*fixed_a);
    } else {
        rng.fill_gaussian(st.a);
    }
    st.memory = Eigen::MatrixXd::Zero(n, L);
    st.t = 1;
    return st;
}

struct DDStepResult {
    Eigen::MatrixXd h;             // pre-activations actually fed to the loss
    Eigen::MatrixXd hhat;          // g(h, y, a)
    Eigen::MatrixXd theta_tilde;   // update direction before damping
};

namespace detail {

inline void check_finite(const Eigen::MatrixXd& m, const char* what, int step) {
    if (!m.allFinite())
        throw NumericalError(std::string("non-finite ") + what + " at step " +
                                 std::to_string(step),
                             step);
}

}  // namespace detail

inline DDStepResult dd_step(TrainerState& st, const Dataset& data, const ActivationPair& gf,
                            const DDConfig& cfg) {
    cfg.validate();
    const int n = data.n();
    const int L = gf.L;
    if (st.theta.rows() != data.d() || st.theta.cols() != L)
        throw std::invalid_argument("dd_step: theta shape mismatch");
    if (st.memory.rows() != n || st.memory.cols() != L)
        throw std::invalid_argument("dd_step: memory shape mismatch");

    DDStepResult res;
    res.h = data.X * st.theta;
    if (cfg.use_memory && cfg.eta1 != 0.0) res.h += cfg.eta1 * st.memory;
    detail::check_finite(res.h, "pre-activations", st.t);

    res.hhat = gf.g(res.h, data.y, st.a);
    detail::check_finite(res.hhat, "g(h)", st.t);

    res.theta_tilde = data.X.transpose() * res.hhat;
    if (cfg.use_onsager) {
        const Eigen::MatrixXd dg = gf.dg(res.h, data.y, st.a);
        if (dg.cols() != L * L)
            throw std::invalid_argument("dd_step: Jacobian width must be L*L");
        const Eigen::VectorXd mean_dg = dg.colwise().mean();
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                             Eigen::RowMajor>>
            jbar(mean_dg.data(), L, L);
        res.theta_tilde -= cfg.alpha * st.theta * jbar.transpose();
    }

    Eigen::MatrixXd theta_next = cfg.eta0 * st.theta - cfg.eta1 * res.theta_tilde;
    detail::check_finite(theta_next, "theta update", st.t);

    if (st.a.size() > 0) {
        const Eigen::VectorXd mean_f = gf.f(res.h, data.y, st.a).colwise().mean();
        st.a = cfg.gamma0 * st.a - cfg.gamma1 * mean_f;
        detail::check_finite(st.a, "a update", st.t);
    }

    if (cfg.retain_hhat_history) st.hhat_history.push_back(res.hhat);
    st.memory = cfg.eta0 * st.memory + res.hhat;
    st.theta = std::move(theta_next);
    st.t += 1;
    return res;
}

inline DDStepResult pure_dd_step(TrainerState& st, const Dataset& data,
                                 std::shared_ptr<const ModelLoss> model, double eta,
                                 const DDConfig& base = DDConfig{}) {
    DDConfig cfg = base;
    cfg.eta0 = 1.0;
    cfg.gamma0 = 1.0;
    cfg.eta1 = eta;
    cfg.gamma1 = eta;
    if (cfg.alpha <= 0.0) cfg.alpha = static_cast<double>(data.n()) / data.d();
    return dd_step(st, data, loss_gradient_pair(std::move(model)), cfg);
}

// Plain full-batch GD; the eta0 = gamma0 = 1 member of the family with the
// memory and Onsager terms zeroed.
inline DDStepResult gd_step(TrainerState& st, const Dataset& data,
                            std::shared_ptr<const ModelLoss> model, double eta, double gamma) {
    const int L = model->preact_width();
    if (st.theta.rows() != data.d() || st.theta.cols() != L)
        throw std::invalid_argument("gd_step: theta shape mismatch");

    DDStepResult res;
    res.h = data.X * st.theta;
    detail::check_finite(res.h, "pre-activations", st.t);
    res.hhat = model->grad_h_rows(res.h, data.y, st.a);
    detail::check_finite(res.hhat, "loss gradient", st.t);
    res.theta_tilde = data.X.transpose() * res.hhat;

    Eigen::MatrixXd theta_next = st.theta - eta * res.theta_tilde;
    detail::check_finite(theta_next, "theta update", st.t);
    if (st.a.size() > 0) {
        const Eigen::VectorXd mean_f =
            model->grad_a_rows(res.h, data.y, st.a).colwise().mean();
        st.a = st.a - gamma * mean_f;
        detail::check_finite(st.a, "a update", st.t);
    }
    st.theta = std::move(theta_next);
    st.t += 1;
    return res;
}

struct StepRecord {
    int t = 0;
    double train_error = 0.0;      // mean Psi at the algorithm's pre-activations
    double test_error_emp = 0.0;   // mean Psi on the held-out dataset
    OverlapRecord overlaps;
    Eigen::VectorXd a_value;
};

enum class Algorithm { gd, pure_dd, general_dd };

struct TrajectoryOptions {
    Algorithm algorithm = Algorithm::pure_dd;
    double eta = 0.05;               // gd/pure-dd learning rate
    double gamma = 0.05;             // gd head rate
    DDConfig dd;                     // general_dd parameters (alpha filled in)
    int holdout_n = -1;              // default n
    std::optional<double> fixed_a_init;
    bool record_overlaps = true;
};

// Runs T steps from a fresh N(0,1) initialization, recording the iterate's
// errors and overlaps before each update. Dataset, holdout and initialization
// all derive deterministically from the run seed.
inline std::vector<StepRecord> run_trajectory(const MixtureSpec& spec,
                                              std::shared_ptr<const ModelLoss> model, int n,
                                              int T, std::uint64_t seed,
                                              const TrajectoryOptions& opts) {
    if (T < 1) throw std::invalid_argument("run_trajectory: T must be >= 1");
    constexpr std::uint64_t kData = 1, kHoldout = 2, kInit = 3;
    const Dataset data = sample_dataset(spec, n, derive_seed(seed, kData));
    const int holdout_n = opts.holdout_n > 0 ? opts.holdout_n : n;
    const Dataset holdout = sample_dataset(spec, holdout_n, derive_seed(seed, kHoldout));

    const int L = model->preact_width();
    const int Lp = model->head_width();
    TrainerState st = init_trainer(n, spec.d, L, Lp, derive_seed(seed, kInit),
                                   opts.fixed_a_init);

    DDConfig cfg = opts.dd;
    cfg.alpha = static_cast<double>(n) / spec.d;
    switch (opts.algorithm) {
        case Algorithm::gd:
            cfg.eta0 = cfg.gamma0 = 1.0;
            cfg.eta1 = opts.eta;
            cfg.gamma1 = opts.gamma;
            cfg.use_memory = cfg.use_onsager = false;
            break;
        case Algorithm::pure_dd:
            cfg.eta0 = cfg.gamma0 = 1.0;
            cfg.eta1 = cfg.gamma1 = opts.eta;
            cfg.use_memory = cfg.use_onsager = true;
            break;
        case Algorithm::general_dd:
            break;
    }
    const ActivationPair gf = loss_gradient_pair(model);

    std::vector<StepRecord> records;
    records.reserve(T);
    for (int t = 1; t <= T; ++t) {
        const Eigen::MatrixXd theta_t = st.theta;
        const Eigen::VectorXd a_t = st.a;
        DDStepResult res;
        try {
            res = dd_step(st, data, gf, cfg);
        } catch (NumericalError& err) {
            err.step = t;
            throw;
        }
        StepRecord rec;
        rec.t = t;
        rec.train_error = model->mean_psi(res.h, data.y, a_t);
        rec.test_error_emp = model->mean_psi(holdout.X * theta_t, holdout.y, a_t);
        if (opts.record_overlaps)
            rec.overlaps = empirical_overlaps(theta_t, res.theta_tilde, res.hhat, spec);
        rec.a_value = a_t;
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace ddlab
