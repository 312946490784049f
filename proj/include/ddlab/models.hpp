// Parametric head/loss pairs Psi(h, y, a) = L(M_a(h), y) with analytic first
// and second derivatives in the pre-activation h and first derivatives in the
// head parameter a. All evaluation is batched row-wise over n x L matrices;
// per-sample Hessians are returned as n x L^2 rows (row-major vec).
//
// Catalog:
//   linear-mse    M(h) = h,                    L = 1/2 (h - y)^2
//   glm-ce        M(h) = sigmoid(h),           cross-entropy
//   xor-bilinear  M_a(h) = sigmoid(a h1 h2),   cross-entropy
//   mlp2-tanh     M_a(h) = sigmoid(a^T tanh h), cross-entropy
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace ddlab {

// Finite-precision stand-in for the Lipschitz-loss assumption: probabilities
// are clamped away from {0,1} before taking logs.
inline constexpr double kProbClamp = 1e-12;

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double cross_entropy(double yhat, double y) {
    const double q = std::min(1.0 - kProbClamp, std::max(kProbClamp, yhat));
    return -y * std::log(q) - (1.0 - y) * std::log1p(-q);
}

class ModelLoss {
public:
    virtual ~ModelLoss() = default;

    int preact_width() const { return L_; }   // L
    int head_width() const { return Lp_; }    // L'
    const std::string& kind() const { return kind_; }

    // Row-wise batched evaluation; H is n x L, y is n, a is L'.
    virtual Eigen::VectorXd psi_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& a) const = 0;
    virtual Eigen::VectorXd predict_rows(const Eigen::MatrixXd& H,
                                         const Eigen::VectorXd& a) const = 0;
    virtual Eigen::MatrixXd grad_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& a) const = 0;  // n x L
    virtual Eigen::MatrixXd grad_a_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& a) const = 0;  // n x L'
    virtual Eigen::MatrixXd hess_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& a) const = 0;  // n x L*L

    // Single-point conveniences.
    double psi(const Eigen::VectorXd& h, double y, const Eigen::VectorXd& a) const {
        return psi_rows(h.transpose(), Eigen::VectorXd::Constant(1, y), a)[0];
    }
    double predict(const Eigen::VectorXd& h, const Eigen::VectorXd& a) const {
        return predict_rows(h.transpose(), a)[0];
    }
    Eigen::VectorXd grad_h(const Eigen::VectorXd& h, double y, const Eigen::VectorXd& a) const {
        return grad_h_rows(h.transpose(), Eigen::VectorXd::Constant(1, y), a).row(0);
    }
    Eigen::VectorXd grad_a(const Eigen::VectorXd& h, double y, const Eigen::VectorXd& a) const {
        return grad_a_rows(h.transpose(), Eigen::VectorXd::Constant(1, y), a).row(0);
    }
    Eigen::MatrixXd hess_h(const Eigen::VectorXd& h, double y, const Eigen::VectorXd& a) const {
        Eigen::MatrixXd row = hess_h_rows(h.transpose(), Eigen::VectorXd::Constant(1, y), a);
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                              Eigen::RowMajor>>(row.data(), L_, L_);
    }

    double mean_psi(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& a) const {
        return psi_rows(H, y, a).mean();
    }

protected:
    ModelLoss(std::string kind, int L, int Lp) : kind_(std::move(kind)), L_(L), Lp_(Lp) {}

    std::string kind_;
    int L_;
    int Lp_;
};

namespace detail {

class LinearMse final : public ModelLoss {
public:
    LinearMse() : ModelLoss("linear-mse", 1, 0) {}

    Eigen::VectorXd psi_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd&) const override {
        return 0.5 * (H.col(0) - y).array().square();
    }
    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd&) const override {
        return H.col(0);
    }
    Eigen::MatrixXd grad_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd&) const override {
        return H.col(0) - y;
    }
    Eigen::MatrixXd grad_a_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd&,
                                const Eigen::VectorXd&) const override {
        return Eigen::MatrixXd(H.rows(), 0);
    }
    Eigen::MatrixXd hess_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd&,
                                const Eigen::VectorXd&) const override {
        return Eigen::MatrixXd::Ones(H.rows(), 1);
    }
};

inline Eigen::ArrayXd sigmoid_array(const Eigen::ArrayXd& z) {
    return (z >= 0.0).select(1.0 / (1.0 + (-z).exp()), z.exp() / (1.0 + z.exp()));
}

inline Eigen::ArrayXd ce_array(const Eigen::ArrayXd& yhat, const Eigen::ArrayXd& y) {
    const Eigen::ArrayXd q = yhat.min(1.0 - kProbClamp).max(kProbClamp);
    return -y * q.log() - (1.0 - y) * (1.0 - q).log();
}

class GlmCe final : public ModelLoss {
public:
    GlmCe() : ModelLoss("glm-ce", 1, 0) {}

    Eigen::VectorXd psi_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd&) const override {
        return ce_array(sigmoid_array(H.col(0).array()), y.array());
    }
    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd&) const override {
        return sigmoid_array(H.col(0).array());
    }
    Eigen::MatrixXd grad_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd&) const override {
        return sigmoid_array(H.col(0).array()) - y.array();
    }
    Eigen::MatrixXd grad_a_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd&,
                                const Eigen::VectorXd&) const override {
        return Eigen::MatrixXd(H.rows(), 0);
    }
    Eigen::MatrixXd hess_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd&,
                                const Eigen::VectorXd&) const override {
        const Eigen::ArrayXd s = sigmoid_array(H.col(0).array());
        return s * (1.0 - s);
    }
};

// sigma(a h1 h2) under cross entropy; the Hessian has diagonal
// yhat(1-yhat) a^2 (h_other)^2 and off-diagonal yhat(1-yhat) a^2 h1 h2 + (yhat-y) a.
class XorBilinear final : public ModelLoss {
public:
    XorBilinear() : ModelLoss("xor-bilinear", 2, 1) {}

    Eigen::VectorXd psi_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) const override {
        return ce_array(yhat(H, a), y.array());
    }
    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& a) const override {
        return yhat(H, a);
    }
    Eigen::MatrixXd grad_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& a) const override {
        const Eigen::ArrayXd r = yhat(H, a) - y.array();
        Eigen::MatrixXd g(H.rows(), 2);
        g.col(0) = r * a[0] * H.col(1).array();
        g.col(1) = r * a[0] * H.col(0).array();
        return g;
    }
    Eigen::MatrixXd grad_a_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& a) const override {
        const Eigen::ArrayXd r = yhat(H, a) - y.array();
        return r * H.col(0).array() * H.col(1).array();
    }
    Eigen::MatrixXd hess_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& a) const override {
        const Eigen::ArrayXd q = yhat(H, a);
        const Eigen::ArrayXd w = q * (1.0 - q) * a[0] * a[0];
        const Eigen::ArrayXd h1 = H.col(0).array();
        const Eigen::ArrayXd h2 = H.col(1).array();
        Eigen::MatrixXd out(H.rows(), 4);
        out.col(0) = w * h2.square();
        out.col(3) = w * h1.square();
        out.col(1) = w * h1 * h2 + (q - y.array()) * a[0];
        out.col(2) = out.col(1);
        return out;
    }

private:
    static Eigen::ArrayXd yhat(const Eigen::MatrixXd& H, const Eigen::VectorXd& a) {
        return sigmoid_array(a[0] * H.col(0).array() * H.col(1).array());
    }
};

// Two-layer network sigma(a^T tanh(h)) under cross entropy; no biases, the
// second layer is the head parameter.
class Mlp2Tanh final : public ModelLoss {
public:
    explicit Mlp2Tanh(int width) : ModelLoss("mlp2-tanh", width, width) {
        if (width < 1) throw std::invalid_argument("mlp2-tanh: width must be >= 1");
    }

    Eigen::VectorXd psi_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& a) const override {
        return ce_array(sigmoid_array((H.array().tanh().matrix() * a).array()), y.array());
    }
    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& a) const override {
        return sigmoid_array((H.array().tanh().matrix() * a).array());
    }
    Eigen::MatrixXd grad_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& a) const override {
        const Eigen::ArrayXXd s = H.array().tanh();
        const Eigen::ArrayXd r = sigmoid_array((s.matrix() * a).array()) - y.array();
        // (yhat - y) * a_i * sech^2(h_i)
        return ((1.0 - s.square()).rowwise() * a.transpose().array()).colwise() * r;
    }
    Eigen::MatrixXd grad_a_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& a) const override {
        const Eigen::ArrayXXd s = H.array().tanh();
        const Eigen::ArrayXd r = sigmoid_array((s.matrix() * a).array()) - y.array();
        return s.colwise() * r;
    }
    Eigen::MatrixXd hess_h_rows(const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& a) const override {
        const int n = static_cast<int>(H.rows());
        const Eigen::ArrayXXd s = H.array().tanh();
        const Eigen::ArrayXXd c = 1.0 - s.square();
        const Eigen::ArrayXd q = sigmoid_array((s.matrix() * a).array());
        const Eigen::ArrayXd w = q * (1.0 - q);
        const Eigen::ArrayXd r = q - y.array();
        Eigen::MatrixXd out(n, L_ * L_);
        for (int i = 0; i < L_; ++i) {
            for (int j = 0; j < L_; ++j) {
                Eigen::ArrayXd entry = w * (a[i] * c.col(i)) * (a[j] * c.col(j));
                if (i == j) entry += r * (-2.0 * a[i]) * s.col(i) * c.col(i);
                out.col(i * L_ + j) = entry;
            }
        }
        return out;
    }
};

}  // namespace detail

// Catalog ids are stable strings; width is only consulted for mlp2-tanh.
inline std::shared_ptr<const ModelLoss> make_model(const std::string& kind, int width = 0) {
    if (kind == "linear-mse") return std::make_shared<detail::LinearMse>();
    if (kind == "glm-ce") return std::make_shared<detail::GlmCe>();
    if (kind == "xor-bilinear") return std::make_shared<detail::XorBilinear>();
    if (kind == "mlp2-tanh") return std::make_shared<detail::Mlp2Tanh>(width > 0 ? width : 3);
    throw std::invalid_argument("make_model: unknown kind: " + kind);
}

struct FiniteDiffReport {
    double grad_h_err = 0.0;
    double grad_a_err = 0.0;
    double hess_h_err = 0.0;

    double max_err() const { return std::max({grad_h_err, grad_a_err, hess_h_err}); }
};

namespace detail {
inline double rel_err(double approx, double exact) {
    return std::abs(approx - exact) / std::max({1.0, std::abs(approx), std::abs(exact)});
}
}  // namespace detail

// Central-difference validation of the analytic derivatives at one point.
inline FiniteDiffReport finite_diff_check(const ModelLoss& model, const Eigen::VectorXd& h,
                                          double y, const Eigen::VectorXd& a, double step) {
    if (!(step > 1e-8 && step < 1e-2))
        throw std::invalid_argument("finite_diff_check: step must be in (1e-8, 1e-2)");
    const int L = model.preact_width();
    const int Lp = model.head_width();
    FiniteDiffReport rep;

    const Eigen::VectorXd gh = model.grad_h(h, y, a);
    for (int i = 0; i < L; ++i) {
        Eigen::VectorXd hp = h, hm = h;
        hp[i] += step;
        hm[i] -= step;
        const double fd = (model.psi(hp, y, a) - model.psi(hm, y, a)) / (2.0 * step);
        rep.grad_h_err = std::max(rep.grad_h_err, detail::rel_err(fd, gh[i]));
    }

    const Eigen::VectorXd ga = model.grad_a(h, y, a);
    for (int i = 0; i < Lp; ++i) {
        Eigen::VectorXd ap = a, am = a;
        ap[i] += step;
        am[i] -= step;
        const double fd = (model.psi(h, y, ap) - model.psi(h, y, am)) / (2.0 * step);
        rep.grad_a_err = std::max(rep.grad_a_err, detail::rel_err(fd, ga[i]));
    }

    const Eigen::MatrixXd hess = model.hess_h(h, y, a);
    for (int j = 0; j < L; ++j) {
        Eigen::VectorXd hp = h, hm = h;
        hp[j] += step;
        hm[j] -= step;
        const Eigen::VectorXd fd =
            (model.grad_h(hp, y, a) - model.grad_h(hm, y, a)) / (2.0 * step);
        for (int i = 0; i < L; ++i)
            rep.hess_h_err = std::max(rep.hess_h_err, detail::rel_err(fd[i], hess(i, j)));
    }
    return rep;
}

}  // namespace ddlab
