// The (g, f) activation pair parameterizing a decoupled-descent iteration,
// plus the numerical-failure exception shared by the trainers and the
// expectation engine.
#pragma once

#include "ddlab/models.hpp"

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>

namespace ddlab {

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what, int step = -1)
        : std::runtime_error(what), step(step) {}
    int step;
};

// Batched integrand/activation: H is n x L, y is n, a is L'; returns n x K.
using RowFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                                            const Eigen::VectorXd&)>;

// g drives the theta update (with Jacobian dg for the Onsager correction),
// f drives the head update. dg rows are row-major vecs of the L x L Jacobian
// (dg_ij = d g_i / d h_j).
struct ActivationPair {
    int L = 0;
    int Lp = 0;
    RowFn g;
    RowFn dg;
    RowFn f;
};

// The loss-gradient choice g = grad_h Psi, f = grad_a Psi whose Jacobian is
// the (symmetric) loss Hessian; plugging it into unit-damped DD gives pure DD.
inline ActivationPair loss_gradient_pair(std::shared_ptr<const ModelLoss> model) {
    ActivationPair pair;
    pair.L = model->preact_width();
    pair.Lp = model->head_width();
    pair.g = [model](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& a) { return model->grad_h_rows(H, y, a); };
    pair.dg = [model](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& a) { return model->hess_h_rows(H, y, a); };
    pair.f = [model](const Eigen::MatrixXd& H, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& a) { return model->grad_a_rows(H, y, a); };
    return pair;
}

}  // namespace ddlab
