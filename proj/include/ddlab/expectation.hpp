// Gaussian expectation engine behind the state evolution: either Monte Carlo
// with common random numbers (the standard normal draws are cached per stream
// and reused across times and (r,s) pairs, so differences of expectations at
// nearby states are estimated far more accurately than their absolute values)
// or Gauss-Hermite quadrature, which is restricted to L = 1 and makes the
// scalar recursions fully deterministic.
//
// The finite response laws are always enumerated exactly; only the Gaussian
// integral is approximated. Engines own mutable sample/scratch caches and must
// not be shared across threads.
#pragma once

#include "ddlab/activations.hpp"
#include "ddlab/mixture.hpp"
#include "ddlab/rng.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

namespace ddlab {

// Symmetrize then eigenvalue-clip at 1e-12 before factorization; MC noise can
// break positive semidefiniteness marginally, anything worse is an error.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov, const std::string& context) {
    const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success)
        throw NumericalError("covariance eigendecomposition failed: " + context);
    Eigen::VectorXd evals = eig.eigenvalues();
    const double scale = 1.0 + evals.cwiseAbs().maxCoeff();
    if (evals.minCoeff() < -1e-2 * scale)
        throw NumericalError("covariance not PSD beyond tolerance: " + context);
    for (int i = 0; i < evals.size(); ++i) evals[i] = std::max(evals[i], 1e-12);
    return eig.eigenvectors() * evals.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

class ExpectationEngine {
public:
    enum class Method { monte_carlo, gauss_hermite };

    static ExpectationEngine monte_carlo(int n_samples, std::uint64_t seed) {
        ExpectationEngine e;
        e.method_ = Method::monte_carlo;
        e.n_samples_ = n_samples;
        e.seed_ = seed;
        return e;
    }

    static ExpectationEngine gauss_hermite(int order = 64) {
        ExpectationEngine e;
        e.method_ = Method::gauss_hermite;
        e.gh_order_ = order;
        return e;
    }

    Method method() const { return method_; }
    int n_samples() const { return n_samples_; }
    std::uint64_t seed() const { return seed_; }

    // E[fn(G + shift, Y, a)] with G ~ N(0, cov), Y ~ law; returns a K-vector.
    Eigen::VectorXd expect(const Eigen::MatrixXd& cov, const Eigen::VectorXd& shift,
                           const Eigen::VectorXd& a, const ResponseLaw& law, const RowFn& fn,
                           std::uint64_t stream) const {
        const int L = static_cast<int>(cov.rows());
        const Base base = raw_draws(stream, L, "single expectation");
        const Eigen::MatrixXd B = psd_sqrt(cov, "single expectation");
        Eigen::MatrixXd& H = scratch(0, base.nodes.rows(), L);
        H.noalias() = base.nodes * B.transpose();
        H.rowwise() += shift.transpose();
        Eigen::VectorXd acc;
        for (int v = 0; v < law.values.size(); ++v) {
            const Eigen::VectorXd mean =
                fn(H, constant_y(law.values[v], H.rows()), a).transpose() * base.weights;
            if (acc.size() == 0) acc = Eigen::VectorXd::Zero(mean.size());
            acc += law.probs[v] * mean;
        }
        return acc;
    }

    double expect_scalar(const Eigen::MatrixXd& cov, const Eigen::VectorXd& shift,
                         const Eigen::VectorXd& a, const ResponseLaw& law, const RowFn& fn,
                         std::uint64_t stream) const {
        return expect(cov, shift, a, law, fn, stream)[0];
    }

    // E[g(G + m, Y, a) g(G + m, Y, a)^T], exactly symmetric PSD by construction.
    Eigen::MatrixXd expect_outer(const Eigen::MatrixXd& cov, const Eigen::VectorXd& shift,
                                 const Eigen::VectorXd& a, const ResponseLaw& law,
                                 const RowFn& g_fn, std::uint64_t stream) const {
        const int L = static_cast<int>(cov.rows());
        const Base base = raw_draws(stream, L, "diagonal second moment");
        const Eigen::MatrixXd B = psd_sqrt(cov, "diagonal second moment");
        Eigen::MatrixXd& H = scratch(0, base.nodes.rows(), L);
        H.noalias() = base.nodes * B.transpose();
        H.rowwise() += shift.transpose();
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(L, L);
        for (int v = 0; v < law.values.size(); ++v) {
            const Eigen::MatrixXd rows = g_fn(H, constant_y(law.values[v], H.rows()), a);
            acc += law.probs[v] * (rows.transpose() * base.weights.asDiagonal() * rows);
        }
        return acc;
    }

    // E[g(G_r + m_r, Y, a_r) g(G_s + m_s, Y, a_s)^T] with the 2L x 2L pair
    // covariance assembled from the Omega blocks.
    Eigen::MatrixXd expect_pair_outer(const Eigen::MatrixXd& cov_rr, const Eigen::MatrixXd& cov_rs,
                                      const Eigen::MatrixXd& cov_ss, const Eigen::VectorXd& m_r,
                                      const Eigen::VectorXd& m_s, const Eigen::VectorXd& a_r,
                                      const Eigen::VectorXd& a_s, const ResponseLaw& law,
                                      const RowFn& g_fn, std::uint64_t stream,
                                      const std::string& context) const {
        const int L = static_cast<int>(cov_rr.rows());
        Eigen::MatrixXd pair_cov(2 * L, 2 * L);
        pair_cov.topLeftCorner(L, L) = cov_rr;
        pair_cov.topRightCorner(L, L) = cov_rs;
        pair_cov.bottomLeftCorner(L, L) = cov_rs.transpose();
        pair_cov.bottomRightCorner(L, L) = cov_ss;
        const Base base = raw_draws(stream, 2 * L, context);
        const Eigen::MatrixXd B = psd_sqrt(pair_cov, context);
        Eigen::MatrixXd& Hr = scratch(1, base.nodes.rows(), L);
        Eigen::MatrixXd& Hs = scratch(2, base.nodes.rows(), L);
        Hr.noalias() = base.nodes * B.topRows(L).transpose();
        Hr.rowwise() += m_r.transpose();
        Hs.noalias() = base.nodes * B.bottomRows(L).transpose();
        Hs.rowwise() += m_s.transpose();
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(L, L);
        for (int v = 0; v < law.values.size(); ++v) {
            const Eigen::VectorXd& y = constant_y(law.values[v], Hr.rows());
            const Eigen::MatrixXd gr = g_fn(Hr, y, a_r);
            const Eigen::MatrixXd gs = g_fn(Hs, y, a_s);
            acc += law.probs[v] * (gr.transpose() * base.weights.asDiagonal() * gs);
        }
        return acc;
    }

private:
    ExpectationEngine() = default;

    struct Base {
        const Eigen::MatrixXd& nodes;    // standard-normal draws or GH nodes
        const Eigen::VectorXd& weights;  // sums to 1
    };

    Base raw_draws(std::uint64_t stream, int width, const std::string& context) const {
        if (method_ == Method::monte_carlo) {
            const Eigen::MatrixXd& u = standard_normals(stream, width);
            return {u, uniform_weights(u.rows())};
        }
        if (width > 2)
            throw NumericalError("gauss-hermite engine supports L = 1 only: " + context);
        ensure_gh_nodes();
        return width == 1 ? Base{gh_nodes1_, gh_w_} : Base{gh_nodes2_, gh_w2_};
    }

    Eigen::MatrixXd& scratch(int id, Eigen::Index rows, int cols) const {
        Eigen::MatrixXd& buf = scratch_[std::make_pair(id, cols)];
        if (buf.rows() != rows || buf.cols() != cols) buf.resize(rows, cols);
        return buf;
    }

    const Eigen::VectorXd& constant_y(double value, Eigen::Index rows) const {
        Eigen::VectorXd& buf = ybuf_[value];
        if (buf.size() != rows) buf = Eigen::VectorXd::Constant(rows, value);
        return buf;
    }

    const Eigen::VectorXd& uniform_weights(Eigen::Index rows) const {
        if (uniform_w_.size() != rows)
            uniform_w_ = Eigen::VectorXd::Constant(rows, 1.0 / static_cast<double>(rows));
        return uniform_w_;
    }

    const Eigen::MatrixXd& standard_normals(std::uint64_t stream, int width) const {
        const auto key = std::make_pair(stream, width);
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            Rng rng(derive_seed(seed_, 0x5eedULL, stream, static_cast<std::uint64_t>(width)));
            Eigen::MatrixXd u(n_samples_, width);
            rng.fill_gaussian(u);
            it = cache_.emplace(key, std::move(u)).first;
        }
        return it->second;
    }

    void ensure_gh_nodes() const {
        if (gh_x_.size() > 0) return;
        // Golub-Welsch for the probabilists' Hermite recurrence (weight N(0,1)).
        const int q = gh_order_;
        Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(q, q);
        for (int k = 1; k < q; ++k) {
            const double b = std::sqrt(static_cast<double>(k));
            jacobi(k, k - 1) = b;
            jacobi(k - 1, k) = b;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
        gh_x_ = eig.eigenvalues();
        gh_w_.resize(q);
        for (int i = 0; i < q; ++i) {
            const double v0 = eig.eigenvectors()(0, i);
            gh_w_[i] = v0 * v0;
        }
        gh_nodes1_ = gh_x_;
        gh_nodes2_.resize(q * q, 2);
        gh_w2_.resize(q * q);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j) {
                const int idx = i * q + j;
                gh_nodes2_(idx, 0) = gh_x_[i];
                gh_nodes2_(idx, 1) = gh_x_[j];
                gh_w2_[idx] = gh_w_[i] * gh_w_[j];
            }
    }

    Method method_ = Method::monte_carlo;
    int n_samples_ = 200000;
    int gh_order_ = 64;
    std::uint64_t seed_ = 0;

    mutable std::map<std::pair<std::uint64_t, int>, Eigen::MatrixXd> cache_;
    mutable std::map<std::pair<int, int>, Eigen::MatrixXd> scratch_;
    mutable std::map<double, Eigen::VectorXd> ybuf_;
    mutable Eigen::VectorXd uniform_w_;
    mutable Eigen::VectorXd gh_x_;
    mutable Eigen::VectorXd gh_w_;
    mutable Eigen::MatrixXd gh_nodes1_;
    mutable Eigen::MatrixXd gh_nodes2_;
    mutable Eigen::VectorXd gh_w2_;
};

}  // namespace ddlab
