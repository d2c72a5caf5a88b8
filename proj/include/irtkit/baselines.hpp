#pragma once

// Non-IRT reference predictors: per-task sample mean, empirical-Bayes
// shrinkage toward the training task mean, and per-task ridge regression from
// observed calibration responses.

#include <algorithm>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "irtkit/error.hpp"
#include "irtkit/records.hpp"

namespace irtkit {

struct ShrinkageConfig {
    double lambda = 5.0;
};

// Fraction correct among the task's observed records; falls back to the
// training population's task mean when nothing was observed.
template <typename Records>
double sample_mean_predict(const Records& observed, const std::string& task_id,
                           double train_task_mean) {
    double correct = 0.0;
    std::size_t n = 0;
    for (const Record& r : observed) {
        if (r.task_id != task_id) continue;
        correct += r.correct;
        ++n;
    }
    if (n == 0) return train_task_mean;
    return correct / static_cast<double>(n);
}

// Beta-Binomial posterior mean with prior strength lambda centered on the
// training task mean: (lambda mu + #correct) / (lambda + #observed).
template <typename Records>
double eb_shrinkage_predict(const Records& observed, const std::string& task_id,
                            double train_task_mean, const ShrinkageConfig& cfg = {}) {
    if (cfg.lambda < 0.0) fail("config", "shrinkage strength must be non-negative");
    double correct = 0.0;
    std::size_t n = 0;
    for (const Record& r : observed) {
        if (r.task_id != task_id) continue;
        correct += r.correct;
        ++n;
    }
    if (cfg.lambda == 0.0 && n == 0) return train_task_mean;
    return (cfg.lambda * train_task_mean + correct) / (cfg.lambda + static_cast<double>(n));
}

// Centered ridge regression from train response vectors to train task means,
// with an unpenalized intercept; predicts the test model's task mean and
// clamps to [0, 1]. Rows of `train_responses` are models, columns the
// observed calibration items in a fixed order matching `test_responses`.
inline double ridge_fit_predict(const Eigen::MatrixXd& train_responses,
                                const Eigen::VectorXd& train_task_means,
                                const Eigen::VectorXd& test_responses, double penalty = 1.0) {
    if (penalty <= 0.0) fail("config", "ridge penalty must be positive");
    const Eigen::Index n = train_responses.rows();
    const Eigen::Index p = train_responses.cols();
    if (n < 2) fail("insufficient-data", "ridge regression requires at least 2 training rows");
    if (train_task_means.size() != n)
        fail("shape", "ridge targets have length " + std::to_string(train_task_means.size()) +
                          ", expected " + std::to_string(n));
    if (test_responses.size() != p)
        fail("shape", "test response vector has length " + std::to_string(test_responses.size()) +
                          ", expected " + std::to_string(p));

    const Eigen::RowVectorXd x_mean = train_responses.colwise().mean();
    const double y_mean = train_task_means.mean();
    const Eigen::MatrixXd xc = train_responses.rowwise() - x_mean;
    const Eigen::VectorXd yc = train_task_means.array() - y_mean;

    const Eigen::MatrixXd gram =
        xc.transpose() * xc + penalty * Eigen::MatrixXd::Identity(p, p);
    const Eigen::VectorXd weights = gram.ldlt().solve(xc.transpose() * yc);
    const double prediction = y_mean + (test_responses.transpose() - x_mean).dot(weights);
    return std::clamp(prediction, 0.0, 1.0);
}

}  // namespace irtkit
