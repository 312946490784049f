// The low-dimensional state evolution of decoupled descent. The state at time
// t holds the block matrices Omega (times 1..t), Sigma and Xi (times 1..t-1),
// the per-mode overlaps m_{j,r}, the g-means l_{j,r} and the head limits
// abar_r. One step extends every block by one row/column:
//
//   Sigma[r,s]   = sum_j p_j E[ g(G^r + m_{j,r}, Y_j, abar_r)
//                               g(G^s + m_{j,s}, Y_j, abar_s)^T ]
//   l_{j,t}      = p_j E[ g(G^t + m_{j,t}, Y_j, abar_t) ]
//   V[r,s]       = alpha Sigma[r,s] + alpha^2 sum_{j,k} chi_{j,k} l_{j,r} l_{k,s}^T
//   Xi[1,s]      = alpha sum_j m_{j,1} l_{j,s}^T
//   Xi[r+1,s]    = eta0 Xi[r,s] - eta1 V[r,s]
//   Omega[1,s+1] = eta0 Omega[1,s] - eta1 Xi[1,s]
//   Omega[r+1,s+1] = eta0^2 Omega[r,s] - eta0 eta1 (Xi[r,s] + Xi[s,r]^T)
//                    + eta1^2 V[r,s]
//   m_{j,t+1}    = eta0 m_{j,t} - eta1 alpha sum_k chi_{j,k} l_{k,t}
//   abar_{t+1}   = gamma0 abar_t - gamma1 sum_j p_j E[ f(G^t + m_{j,t}, Y_j, abar_t) ]
//
// with G^t ~ N(0, Omega[t,t]) and pairs (G^r, G^s) drawn from the 2L x 2L
// covariance assembled from the Omega blocks. Earlier blocks never change, so
// Omega_T[t,t] = Omega_t[t,t] holds by construction.
#pragma once

#include "ddlab/activations.hpp"
#include "ddlab/expectation.hpp"
#include "ddlab/mixture.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <iostream>
#include <string>
#include <vector>

namespace ddlab {

struct SEState {
    int t = 0;    // current time, 1-based
    int L = 0;
    int Lp = 0;
    int J = 0;

    Eigen::MatrixXd omega;              // (tL) x (tL), blocks [1..t]
    Eigen::MatrixXd sigma;              // ((t-1)L)^2, blocks [1..t-1]
    Eigen::MatrixXd xi;                 // ((t-1)L)^2, blocks [1..t-1]
    std::vector<std::vector<Eigen::VectorXd>> m;   // m[r-1][j], r in [1..t]
    std::vector<std::vector<Eigen::VectorXd>> l;   // l[r-1][j], r in [1..t-1]
    std::vector<Eigen::VectorXd> abar;             // abar[r-1], r in [1..t]
    Eigen::MatrixXd chi;                // J x J signal Gram limit
    Eigen::VectorXd p;                  // class probabilities

    int max_time = 512;                 // growth cap; configurable

    Eigen::Block<Eigen::MatrixXd> omega_block(int r, int s) {
        return omega.block((r - 1) * L, (s - 1) * L, L, L);
    }
    Eigen::Block<const Eigen::MatrixXd> omega_block(int r, int s) const {
        return omega.block((r - 1) * L, (s - 1) * L, L, L);
    }
    Eigen::Block<Eigen::MatrixXd> sigma_block(int r, int s) {
        return sigma.block((r - 1) * L, (s - 1) * L, L, L);
    }
    Eigen::Block<const Eigen::MatrixXd> sigma_block(int r, int s) const {
        return sigma.block((r - 1) * L, (s - 1) * L, L, L);
    }
    Eigen::Block<Eigen::MatrixXd> xi_block(int r, int s) {
        return xi.block((r - 1) * L, (s - 1) * L, L, L);
    }
    Eigen::Block<const Eigen::MatrixXd> xi_block(int r, int s) const {
        return xi.block((r - 1) * L, (s - 1) * L, L, L);
    }

    Eigen::MatrixXd omega_tt() const { return omega_block(t, t); }

    // Xi/Sigma blocks at (r,r) exist for r <= t-1 (they are filled in by the
    // step that advances past r).
    int filled_xi_times() const { return static_cast<int>(l.size()); }
};

// Initialization: Omega[1,1] = bar_theta_sq (the limit of theta_1^T theta_1/d),
// abar_1 = a_1, m_{j,1} given; the Xi first-row rule is applied lazily as each
// later column appears.
inline SEState se_init(const Eigen::MatrixXd& bar_theta_sq,
                       const std::vector<Eigen::VectorXd>& m1, const Eigen::VectorXd& a1,
                       const Eigen::MatrixXd& chi, const Eigen::VectorXd& p) {
    SEState st;
    st.L = static_cast<int>(bar_theta_sq.rows());
    st.Lp = static_cast<int>(a1.size());
    st.J = static_cast<int>(p.size());
    if (bar_theta_sq.cols() != st.L)
        throw std::invalid_argument("se_init: bar_theta_sq must be square");
    if (static_cast<int>(m1.size()) != st.J || chi.rows() != st.J || chi.cols() != st.J)
        throw std::invalid_argument("se_init: chi/m1/p size mismatch");
    for (const auto& v : m1)
        if (v.size() != st.L) throw std::invalid_argument("se_init: m1 width mismatch");
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
            0.5 * (bar_theta_sq + bar_theta_sq.transpose()));
        if (eig.eigenvalues().minCoeff() < -1e-10)
            throw std::invalid_argument("se_init: bar_theta_sq must be PSD");
    }
    st.t = 1;
    st.omega = 0.5 * (bar_theta_sq + bar_theta_sq.transpose());
    st.sigma.resize(0, 0);
    st.xi.resize(0, 0);
    st.m.push_back(m1);
    st.abar.push_back(a1);
    st.chi = chi;
    st.p = p;
    return st;
}

namespace detail {

inline void warn_if_near_singular(const Eigen::MatrixXd& omega_tt, int t) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega_tt);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (lo <= 0.0 || hi / lo > 1e8)
        std::cerr << "[ddlab] warning: Omega[" << t << "," << t
                  << "] near singular (cond > 1e8); state-evolution limits may be unreliable\n";
}

}  // namespace detail

// Advances the recursion by one time step (in place).
inline void se_step(SEState& st, const ActivationPair& gf, double eta0, double eta1,
                    double gamma0, double gamma1, double alpha,
                    const std::vector<ResponseLaw>& laws, const ExpectationEngine& engine) {
    const int t = st.t;
    const int L = st.L;
    const int J = st.J;
    if (t < 1) throw std::invalid_argument("se_step: state not initialized");
    if (t + 1 > st.max_time)
        throw NumericalError("se_step: time cap exceeded (raise max_time)", t);
    if (static_cast<int>(laws.size()) != J)
        throw std::invalid_argument("se_step: one response law per mode required");
    if (gf.L != L || gf.Lp != st.Lp)
        throw std::invalid_argument("se_step: activation pair width mismatch");

    detail::warn_if_near_singular(st.omega_block(t, t), t);

    // Sigma row/column t.
    st.sigma.conservativeResize(t * L, t * L);
    for (int r = 1; r <= t; ++r) {
        Eigen::MatrixXd block = Eigen::MatrixXd::Zero(L, L);
        if (r == t) {
            for (int j = 0; j < J; ++j)
                block += st.p[j] * engine.expect_outer(st.omega_block(t, t), st.m[t - 1][j],
                                                       st.abar[t - 1], laws[j], gf.g,
                                                       static_cast<std::uint64_t>(j));
        } else {
            const std::string ctx =
                "Sigma pair (" + std::to_string(r) + "," + std::to_string(t) + ")";
            for (int j = 0; j < J; ++j)
                block += st.p[j] * engine.expect_pair_outer(
                                       st.omega_block(r, r), st.omega_block(r, t),
                                       st.omega_block(t, t), st.m[r - 1][j], st.m[t - 1][j],
                                       st.abar[r - 1], st.abar[t - 1], laws[j], gf.g,
                                       static_cast<std::uint64_t>(j), ctx);
        }
        st.sigma_block(r, t) = block;
        if (r != t) st.sigma_block(t, r) = block.transpose();
    }

    // l_{j,t} = p_j E[g(G^t + m_{j,t}, Y_j, abar_t)].
    std::vector<Eigen::VectorXd> lt(J);
    for (int j = 0; j < J; ++j)
        lt[j] = st.p[j] * engine.expect(st.omega_block(t, t), st.m[t - 1][j], st.abar[t - 1],
                                        laws[j], gf.g, static_cast<std::uint64_t>(j));
    st.l.push_back(lt);

    auto V = [&](int r, int s) {
        Eigen::MatrixXd acc = alpha * st.sigma_block(r, s);
        for (int j = 0; j < J; ++j)
            for (int k = 0; k < J; ++k)
                if (st.chi(j, k) != 0.0)
                    acc += alpha * alpha * st.chi(j, k) * st.l[r - 1][j] *
                           st.l[s - 1][k].transpose();
        return acc;
    };
    auto first_row_xi = [&](int s) {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(L, L);
        for (int j = 0; j < J; ++j)
            acc += alpha * st.m[0][j] * st.l[s - 1][j].transpose();
        return acc;
    };

    // Xi column t (downward from the first-row rule), then row t.
    st.xi.conservativeResize(t * L, t * L);
    st.xi_block(1, t) = first_row_xi(t);
    for (int r = 1; r < t; ++r)
        st.xi_block(r + 1, t) = eta0 * st.xi_block(r, t) - eta1 * V(r, t);
    for (int s = 1; s < t; ++s)
        st.xi_block(t, s) = eta0 * st.xi_block(t - 1, s) - eta1 * V(t - 1, s);

    // Omega row/column t+1.
    st.omega.conservativeResize((t + 1) * L, (t + 1) * L);
    st.omega_block(1, t + 1) = eta0 * st.omega_block(1, t) - eta1 * st.xi_block(1, t);
    for (int r = 1; r <= t; ++r)
        st.omega_block(r + 1, t + 1) =
            eta0 * eta0 * st.omega_block(r, t) -
            eta0 * eta1 * (st.xi_block(r, t) + st.xi_block(t, r).transpose()) +
            eta1 * eta1 * V(r, t);
    for (int r = 1; r <= t + 1; ++r)
        st.omega_block(t + 1, r) = st.omega_block(r, t + 1).transpose().eval();

    // m_{j,t+1} and abar_{t+1}.
    std::vector<Eigen::VectorXd> mt1(J);
    for (int j = 0; j < J; ++j) {
        Eigen::VectorXd v = eta0 * st.m[t - 1][j];
        for (int k = 0; k < J; ++k)
            if (st.chi(j, k) != 0.0) v -= eta1 * alpha * st.chi(j, k) * lt[k];
        mt1[j] = v;
    }
    st.m.push_back(mt1);

    Eigen::VectorXd a_next = st.abar[t - 1];
    if (st.Lp > 0 && gamma1 != 0.0) {
        Eigen::VectorXd drift = Eigen::VectorXd::Zero(st.Lp);
        for (int j = 0; j < J; ++j)
            drift += st.p[j] * engine.expect(st.omega_block(t, t), st.m[t - 1][j],
                                             st.abar[t - 1], laws[j], gf.f,
                                             static_cast<std::uint64_t>(j));
        a_next = gamma0 * st.abar[t - 1] - gamma1 * drift;
    } else if (st.Lp > 0) {
        a_next = gamma0 * st.abar[t - 1];
    }
    st.abar.push_back(a_next);

    if (!st.omega.allFinite())
        throw NumericalError("se_step: non-finite state evolution block", t);
    st.t = t + 1;
}

// Pure DD: g = grad_h Psi, f = grad_a Psi, unit damping, eta1 = gamma1 = eta.
// The V term above then reads alpha Sigma[r,s] + alpha^2 sum_{j,k} chi_{j,k}
// p_j p_k E[grad_h Psi_r,j] E[grad_h Psi_s,k]^T, matching the specialized
// recursion term for term.
inline void pure_dd_se_step(SEState& st, std::shared_ptr<const ModelLoss> model, double eta,
                            double alpha, const std::vector<ResponseLaw>& laws,
                            const ExpectationEngine& engine) {
    se_step(st, loss_gradient_pair(std::move(model)), 1.0, eta, 1.0, eta, alpha, laws, engine);
}

// The asymptotic population test error: sum_j p_j E[Psi(m_j + Z, Y_j, abar)]
// with Z ~ N(0, omega_tt).
inline double test_functional(const std::vector<Eigen::VectorXd>& m,
                              const Eigen::MatrixXd& omega_tt, const Eigen::VectorXd& abar,
                              const ModelLoss& model, const std::vector<ResponseLaw>& laws,
                              const Eigen::VectorXd& p, const ExpectationEngine& engine) {
    if (m.size() != laws.size() || static_cast<int>(m.size()) != p.size())
        throw std::invalid_argument("test_functional: mode count mismatch");
    const RowFn psi = [&model](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& a) -> Eigen::MatrixXd {
        return model.psi_rows(H, y, a);
    };
    double acc = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j)
        acc += p[static_cast<int>(j)] *
               engine.expect_scalar(omega_tt, m[j], abar, laws[j], psi,
                                    static_cast<std::uint64_t>(j));
    return acc;
}

inline double se_test_error(const SEState& st, const ModelLoss& model,
                            const std::vector<ResponseLaw>& laws,
                            const ExpectationEngine& engine) {
    return test_functional(st.m[st.t - 1], st.omega_block(st.t, st.t), st.abar[st.t - 1], model,
                           laws, st.p, engine);
}

struct SignallessPoint {
    double omega_tt = 0.0;
    double test_err = 0.0;
};

// Exact scalar recursion for the signal-less linear-MSE problem: with J = 1,
// mu = 0, y = 0 and g(h) = h the expectations collapse to Sigma = Omega,
// l = 0, m = 0, so no quadrature is needed. Serves as the independent oracle
// for the generic stepping code.
inline std::vector<SignallessPoint> signalless_closed_form(double eta0, double eta1, double alpha,
                                                           double bar_theta_sq, int T) {
    if (T < 1) throw std::invalid_argument("signalless_closed_form: T must be >= 1");
    // 1-based indexing; row/column 0 unused.
    Eigen::MatrixXd om = Eigen::MatrixXd::Zero(T + 2, T + 2);
    Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(T + 2, T + 2);
    om(1, 1) = bar_theta_sq;
    for (int t = 1; t < T; ++t) {
        xi(1, t) = 0.0;  // first-row rule with m = 0
        for (int r = 1; r < t; ++r) xi(r + 1, t) = eta0 * xi(r, t) - eta1 * alpha * om(r, t);
        for (int s = 1; s < t; ++s) xi(t, s) = eta0 * xi(t - 1, s) - eta1 * alpha * om(t - 1, s);
        om(1, t + 1) = eta0 * om(1, t) - eta1 * xi(1, t);
        for (int r = 1; r <= t; ++r)
            om(r + 1, t + 1) = eta0 * eta0 * om(r, t) - eta0 * eta1 * (xi(r, t) + xi(t, r)) +
                               eta1 * eta1 * alpha * om(r, t);
        for (int r = 1; r <= t + 1; ++r) om(t + 1, r) = om(r, t + 1);
    }
    std::vector<SignallessPoint> out(T);
    for (int t = 1; t <= T; ++t) out[t - 1] = {om(t, t), 0.5 * om(t, t)};
    return out;
}

}  // namespace ddlab
