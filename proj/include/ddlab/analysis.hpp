// First-order decomposition of the state-evolution test-error increment,
// fixed-point residuals of the damped family, and the zero-cost-validation
// selection rules (online/offline early stopping, candidate selection).
#pragma once

#include "ddlab/descent.hpp"
#include "ddlab/expectation.hpp"
#include "ddlab/state_evolution.hpp"
#include "ddlab/stats.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace ddlab {

// The six first-order terms of the test-error increment:
//   a_damp    = -(1-gamma0) sum_j p_j <E[grad_a Psi_j], abar_t>
//   a_descent = -gamma1 sum_{j,j'} p_j p_j' <E[grad_a Psi_j], E[f_j']>
//   th_damp   = -(1-eta0) sum_j p_j <E[grad_h Psi_j], m_{j,t}>
//   th_signal = -eta1 alpha sum_{j,j'} p_j chi_{j,j'} p_j' <E[grad_h Psi_j], E[g_j']>
//   om_damp   = -eta0 (1-eta0) sum_j p_j <E[hess_h Psi_j], Omega_tt>
//   om_cross  = -(eta0 eta1 / 2) sum_j p_j <E[hess_h Psi_j], Xi_tt + Xi_tt^T>
// predicted_delta is their sum and residual = actual_delta - predicted_delta
// holds as an exact bookkeeping identity.
struct TaylorBreakdown {
    double a_damp = 0.0;
    double a_descent = 0.0;
    double th_damp = 0.0;
    double th_signal = 0.0;
    double om_damp = 0.0;
    double om_cross = 0.0;
    double predicted_delta = 0.0;
    double actual_delta = 0.0;
    double residual = 0.0;
};

inline TaylorBreakdown taylor_terms(const SEState& state,
                                    std::shared_ptr<const ModelLoss> model,
                                    const ActivationPair& gf, double eta0, double eta1,
                                    double gamma0, double gamma1, double alpha,
                                    const std::vector<ResponseLaw>& laws,
                                    const ExpectationEngine& engine) {
    const int t = state.t;
    const int J = state.J;
    const int L = state.L;
    const Eigen::MatrixXd omega_tt = state.omega_block(t, t);

    const RowFn psi = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& a) -> Eigen::MatrixXd {
        return model->psi_rows(H, y, a);
    };
    const RowFn grad_h = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) { return model->grad_h_rows(H, y, a); };
    const RowFn grad_a = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) { return model->grad_a_rows(H, y, a); };
    const RowFn hess_h = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) { return model->hess_h_rows(H, y, a); };

    std::vector<Eigen::VectorXd> e_grad_h(J), e_grad_a(J), e_g(J), e_f(J);
    std::vector<Eigen::MatrixXd> e_hess(J);
    for (int j = 0; j < J; ++j) {
        const auto& mj = state.m[t - 1][j];
        const auto& ab = state.abar[t - 1];
        const auto sj = static_cast<std::uint64_t>(j);
        e_grad_h[j] = engine.expect(omega_tt, mj, ab, laws[j], grad_h, sj);
        e_g[j] = engine.expect(omega_tt, mj, ab, laws[j], gf.g, sj);
        if (model->head_width() > 0) {
            e_grad_a[j] = engine.expect(omega_tt, mj, ab, laws[j], grad_a, sj);
            e_f[j] = engine.expect(omega_tt, mj, ab, laws[j], gf.f, sj);
        } else {
            e_grad_a[j] = Eigen::VectorXd(0);
            e_f[j] = Eigen::VectorXd(0);
        }
        const Eigen::VectorXd hvec = engine.expect(omega_tt, mj, ab, laws[j], hess_h, sj);
        e_hess[j] = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                   Eigen::RowMajor>>(hvec.data(), L, L);
    }

    const double test_t = test_functional(state.m[t - 1], omega_tt, state.abar[t - 1], *model,
                                          laws, state.p, engine);

    // Advance a copy one step to obtain test_{t+1} and Xi[t,t] consistently.
    SEState next = state;
    next.max_time = std::max(next.max_time, t + 1);
    se_step(next, gf, eta0, eta1, gamma0, gamma1, alpha, laws, engine);
    const Eigen::MatrixXd xi_tt = next.xi_block(t, t);
    const double test_next = test_functional(next.m[t], next.omega_block(t + 1, t + 1),
                                             next.abar[t], *model, laws, state.p, engine);

    TaylorBreakdown out;
    for (int j = 0; j < J; ++j) {
        const double pj = state.p[j];
        if (model->head_width() > 0) {
            out.a_damp -= (1.0 - gamma0) * pj * e_grad_a[j].dot(state.abar[t - 1]);
            for (int k = 0; k < J; ++k)
                out.a_descent -= gamma1 * pj * state.p[k] * e_grad_a[j].dot(e_f[k]);
        }
        out.th_damp -= (1.0 - eta0) * pj * e_grad_h[j].dot(state.m[t - 1][j]);
        for (int k = 0; k < J; ++k)
            out.th_signal -=
                eta1 * alpha * pj * state.chi(j, k) * state.p[k] * e_grad_h[j].dot(e_g[k]);
        out.om_damp -= eta0 * (1.0 - eta0) * pj * (e_hess[j].array() * omega_tt.array()).sum();
        out.om_cross -= 0.5 * eta0 * eta1 * pj *
                        (e_hess[j].array() * (xi_tt + xi_tt.transpose()).array()).sum();
    }
    out.predicted_delta =
        out.a_damp + out.a_descent + out.th_damp + out.th_signal + out.om_damp + out.om_cross;
    out.actual_delta = test_next - test_t;
    out.residual = out.actual_delta - out.predicted_delta;
    return out;
}

inline TaylorBreakdown pure_dd_taylor_terms(const SEState& state,
                                            std::shared_ptr<const ModelLoss> model, double eta,
                                            double alpha, const std::vector<ResponseLaw>& laws,
                                            const ExpectationEngine& engine) {
    return taylor_terms(state, model, loss_gradient_pair(model), 1.0, eta, 1.0, eta, alpha,
                        laws, engine);
}

// The grouped pure-DD signal terms -eta ||G_t p||^2 and
// -eta alpha ||U_t (diag(p) chi diag(p))^{1/2}||_F^2, with chi PSD-projected
// (negative eigenvalues clipped to 0). Both are non-positive by construction.
struct PureDdSignalTerms {
    double head_term = 0.0;     // -eta ||G_t p||^2
    double signal_term = 0.0;   // -eta alpha ||U_t D^{1/2}||_F^2
};

inline PureDdSignalTerms pure_dd_signal_terms(const SEState& state,
                                              std::shared_ptr<const ModelLoss> model, double eta,
                                              double alpha, const std::vector<ResponseLaw>& laws,
                                              const ExpectationEngine& engine) {
    const int t = state.t;
    const int J = state.J;
    const Eigen::MatrixXd omega_tt = state.omega_block(t, t);
    const RowFn grad_h = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) { return model->grad_h_rows(H, y, a); };
    const RowFn grad_a = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) { return model->grad_a_rows(H, y, a); };

    Eigen::MatrixXd U(state.L, J);
    Eigen::MatrixXd Gmat(model->head_width(), J);
    for (int j = 0; j < J; ++j) {
        const auto sj = static_cast<std::uint64_t>(j);
        U.col(j) = engine.expect(omega_tt, state.m[t - 1][j], state.abar[t - 1], laws[j],
                                 grad_h, sj);
        if (model->head_width() > 0)
            Gmat.col(j) = engine.expect(omega_tt, state.m[t - 1][j], state.abar[t - 1], laws[j],
                                        grad_a, sj);
    }

    PureDdSignalTerms out;
    if (model->head_width() > 0) out.head_term = -eta * (Gmat * state.p).squaredNorm();

    const Eigen::MatrixXd D =
        state.p.asDiagonal() * state.chi * state.p.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (D + D.transpose()));
    Eigen::VectorXd evals = eig.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXd droot =
        eig.eigenvectors() * evals.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
    out.signal_term = -eta * alpha * (U * droot).squaredNorm();
    return out;
}

// Residuals of the damped-family fixed-point equations
//   r_m[j] = m_j* + c alpha sum_k chi_{j,k} p_k E[g(m_k* + G*, Y_k, abar*)]
//   r_a    = sum_j p_j E[f(m_j* + G*, Y_j, abar*)]
// with G* ~ N(0, Omega*) and g = grad_h Psi, f = grad_a Psi.
struct FixedPointResidual {
    std::vector<Eigen::VectorXd> r_m;
    Eigen::VectorXd r_a;

    double max_norm() const {
        double v = r_a.size() ? r_a.norm() : 0.0;
        for (const auto& r : r_m) v = std::max(v, r.norm());
        return v;
    }
};

inline FixedPointResidual fixed_point_residual(const std::vector<Eigen::VectorXd>& m_star,
                                               const Eigen::MatrixXd& omega_star,
                                               const Eigen::VectorXd& a_star, double c,
                                               double alpha, const Eigen::MatrixXd& chi,
                                               const Eigen::VectorXd& p,
                                               std::shared_ptr<const ModelLoss> model,
                                               const std::vector<ResponseLaw>& laws,
                                               const ExpectationEngine& engine) {
    const int J = static_cast<int>(p.size());
    const RowFn grad_h = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) { return model->grad_h_rows(H, y, a); };
    const RowFn grad_a = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) { return model->grad_a_rows(H, y, a); };

    std::vector<Eigen::VectorXd> e_g(J);
    for (int k = 0; k < J; ++k)
        e_g[k] = engine.expect(omega_star, m_star[k], a_star, laws[k], grad_h,
                               static_cast<std::uint64_t>(k));

    FixedPointResidual out;
    out.r_m.resize(J);
    for (int j = 0; j < J; ++j) {
        Eigen::VectorXd r = m_star[j];
        for (int k = 0; k < J; ++k) r += c * alpha * chi(j, k) * p[k] * e_g[k];
        out.r_m[j] = r;
    }
    out.r_a = Eigen::VectorXd::Zero(model->head_width());
    if (model->head_width() > 0)
        for (int j = 0; j < J; ++j)
            out.r_a += p[j] * engine.expect(omega_star, m_star[j], a_star, laws[j], grad_a,
                                            static_cast<std::uint64_t>(j));
    return out;
}

enum class StopMode { absolute, log };

// Online early stopping: the first t with E_{t+1} - E_t >= eps (absolute) or
// log E_{t+1} - log E_t >= log(1 - eps) (log). At eps = 0 both trigger at the
// first non-decrease, so the train error is non-increasing on [1, t].
inline std::optional<int> early_stop_online(const std::vector<double>& train_errors, double eps,
                                            StopMode mode = StopMode::absolute) {
    if (eps < 0.0) throw std::invalid_argument("early_stop_online: eps must be >= 0");
    const double log_thresh = std::log1p(-std::min(eps, 1.0));
    for (std::size_t t = 0; t + 1 < train_errors.size(); ++t) {
        if (mode == StopMode::absolute) {
            if (train_errors[t + 1] - train_errors[t] >= eps) return static_cast<int>(t + 1);
        } else {
            if (train_errors[t] <= 0.0 || train_errors[t + 1] <= 0.0)
                throw std::domain_error("early_stop_online: log mode needs positive errors");
            if (std::log(train_errors[t + 1]) - std::log(train_errors[t]) >= log_thresh)
                return static_cast<int>(t + 1);
        }
    }
    return std::nullopt;
}

// Offline rule: among the saved (1-based) indices, the one minimizing train
// error, ties broken toward smaller t.
inline int early_stop_offline(const std::vector<StepRecord>& records,
                              const std::vector<int>& saved_indices) {
    if (saved_indices.empty())
        throw std::invalid_argument("early_stop_offline: saved_indices empty");
    int best = -1;
    double best_err = std::numeric_limits<double>::infinity();
    for (int idx : saved_indices) {
        if (idx < 1 || idx > static_cast<int>(records.size()))
            throw std::out_of_range("early_stop_offline: index out of range");
        const double e = records[static_cast<std::size_t>(idx - 1)].train_error;
        if (e < best_err || (e == best_err && idx < best)) {
            best_err = e;
            best = idx;
        }
    }
    return best;
}

// 1-based argmin with ties toward the smallest index.
inline int select_candidate(const std::vector<double>& candidate_train_errors) {
    if (candidate_train_errors.empty())
        throw std::invalid_argument("select_candidate: empty candidate list");
    int best = 1;
    for (std::size_t i = 1; i < candidate_train_errors.size(); ++i)
        if (candidate_train_errors[i] < candidate_train_errors[static_cast<std::size_t>(best - 1)])
            best = static_cast<int>(i + 1);
    return best;
}

inline std::vector<double> gap_curve(const std::vector<StepRecord>& traj) {
    std::vector<double> out;
    out.reserve(traj.size());
    for (const auto& r : traj) out.push_back(std::abs(r.train_error - r.test_error_emp));
    return out;
}

// Per-step |train - test_emp| summarized across seeds (median, IQR, min/max).
inline SeriesSummary gap_diagnostics(const std::vector<std::vector<StepRecord>>& trajectories) {
    if (trajectories.empty()) throw std::invalid_argument("gap_diagnostics: no trajectories");
    std::vector<std::vector<double>> gaps;
    gaps.reserve(trajectories.size());
    const std::size_t T = trajectories.front().size();
    for (const auto& traj : trajectories) {
        if (traj.size() != T) throw std::invalid_argument("gap_diagnostics: length mismatch");
        gaps.push_back(gap_curve(traj));
    }
    return summarize_curves(gaps);
}

}  // namespace ddlab
