#pragma once

// Probability models and information quantities.
//
// The response model is a logistic over a general ability factor plus K
// latent specific factors:
//
//     p(r = 1) = sigmoid(alpha * (theta_g + <theta, loadings> - delta))
//
// With K = 0 this reduces to the classic 2PL model (and to 1PL when alpha is
// pinned at 1). Training couples the full logit with an auxiliary
// general-factor-only logit so that low-sample fits shrink toward a
// unidimensional model.
//
// For information computations the general factor enters with a constant
// loading of 1, so every item has an augmented loading [1, loadings] of
// dimension d = K + 1.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>

#include "irtkit/error.hpp"

namespace irtkit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct ItemParams {
    double alpha = 1.0;   // discrimination, kept in [alpha_min, alpha_max]
    double delta = 0.0;   // difficulty
    Vector loadings;      // length K; empty for 2PL/1PL
    std::optional<int> degenerate_majority;  // set for constant-response items

    int k() const { return static_cast<int>(loadings.size()); }

    // [1, loadings]: the general factor has a fixed unit loading.
    Vector augmented_loading() const {
        Vector k_tilde(loadings.size() + 1);
        k_tilde(0) = 1.0;
        k_tilde.tail(loadings.size()) = loadings;
        return k_tilde;
    }
};

struct AbilityVector {
    double theta_g = 0.0;  // general factor
    Vector theta;          // K specific factors

    int k() const { return static_cast<int>(theta.size()); }

    Vector stacked() const {
        Vector v(theta.size() + 1);
        v(0) = theta_g;
        v.tail(theta.size()) = theta;
        return v;
    }

    static AbilityVector from_stacked(const Vector& v) {
        AbilityVector a;
        a.theta_g = v(0);
        a.theta = v.tail(v.size() - 1);
        return a;
    }
};

struct LossConfig {
    double lambda_nested = 1.0;  // weight of the general-factor-only logit term
    double lambda_l1 = 0.01;     // L1 penalty on loadings
    double clip_eps = 1e-10;     // probability clipping inside log computations

    void validate() const {
        if (!(clip_eps > 0.0 && clip_eps < 0.5))
            fail("config", "clip_eps must lie in (0, 0.5)");
        if (lambda_nested < 0.0 || lambda_l1 < 0.0)
            fail("config", "loss weights must be non-negative");
    }
};

inline void check_dims(const AbilityVector& ability, const ItemParams& item) {
    if (ability.theta.size() != item.loadings.size())
        fail("shape", "ability has " + std::to_string(ability.theta.size()) +
                          " specific factors but item loads on " +
                          std::to_string(item.loadings.size()));
}

// Logit of the full model: alpha * (theta_g + <theta, K> - delta).
inline double full_logit(const AbilityVector& ability, const ItemParams& item) {
    check_dims(ability, item);
    const double inner = item.loadings.size() > 0 ? item.loadings.dot(ability.theta) : 0.0;
    return item.alpha * (ability.theta_g + inner - item.delta);
}

// Logit of the nested general-factor-only model: alpha * (theta_g - delta).
inline double general_logit(const AbilityVector& ability, const ItemParams& item) {
    return item.alpha * (ability.theta_g - item.delta);
}

// Raw response probability; clipping applies only inside log computations.
inline double predict_prob(const AbilityVector& ability, const ItemParams& item) {
    return sigmoid(full_logit(ability, item));
}

// Bernoulli log-likelihood r*log(p) + (1-r)*log(1-p) with p clipped to
// [eps, 1-eps].
inline double bernoulli_loglik(int r, double z, double eps = 1e-10) {
    double p = sigmoid(z);
    if (p < eps) p = eps;
    if (p > 1.0 - eps) p = 1.0 - eps;
    return r == 1 ? std::log(p) : std::log(1.0 - p);
}

// Shrinkage loss: full-model log-likelihood plus the lambda-weighted
// general-factor-only term.
inline double nested_loss(int r, const AbilityVector& ability, const ItemParams& item,
                          const LossConfig& cfg) {
    const double z_full = full_logit(ability, item);
    const double z_g = general_logit(ability, item);
    return bernoulli_loglik(r, z_full, cfg.clip_eps) +
           cfg.lambda_nested * bernoulli_loglik(r, z_g, cfg.clip_eps);
}

// Scalar Fisher information of a 2PL item at ability theta:
// alpha^2 * p * (1 - p). Maximized at theta = delta.
inline double fisher_scalar(double theta, const ItemParams& item) {
    if (item.loadings.size() > 0 && item.loadings.cwiseAbs().maxCoeff() != 0.0)
        fail("shape", "fisher_scalar requires a 2PL item (no loadings)");
    const double p = sigmoid(item.alpha * (theta - item.delta));
    return item.alpha * item.alpha * p * (1.0 - p);
}

// Fisher information matrix alpha^2 * p(1-p) * k k^T over the augmented
// loading k = [1, loadings]; rank <= 1 and positive semidefinite.
inline Matrix fisher_matrix(const AbilityVector& ability, const ItemParams& item) {
    const double p = predict_prob(ability, item);
    const Vector k_tilde = item.augmented_loading();
    const double scale = item.alpha * item.alpha * p * (1.0 - p);
    return scale * (k_tilde * k_tilde.transpose());
}

// trace of fisher_matrix without forming it; equals fisher_scalar for 2PL.
inline double fisher_trace(const AbilityVector& ability, const ItemParams& item) {
    const double p = predict_prob(ability, item);
    const double norm2 = 1.0 + item.loadings.squaredNorm();
    return item.alpha * item.alpha * p * (1.0 - p) * norm2;
}

}  // namespace irtkit
