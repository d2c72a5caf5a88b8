#pragma once

// Small dense k-means with k-means++ seeding, used by the anchor selection
// strategies. Deterministic for a fixed seed.

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "irtkit/error.hpp"
#include "irtkit/rng.hpp"

namespace irtkit {

struct KmeansResult {
    Eigen::MatrixXd centroids;      // k rows
    std::vector<int> assignment;    // per point
};

// Lloyd iteration over the rows of `points`. Empty clusters keep their
// previous centroid.
inline KmeansResult kmeans(const Eigen::MatrixXd& points, int k, Rng rng, int max_iters = 100) {
    const int n = static_cast<int>(points.rows());
    if (k <= 0) fail("capacity", "k-means requires a positive cluster count");
    if (k > n)
        fail("capacity", "k-means with " + std::to_string(k) + " clusters needs at least " +
                             std::to_string(k) + " points, got " + std::to_string(n));

    // k-means++ seeding: first centroid uniform, then proportional to the
    // squared distance from the nearest chosen centroid.
    KmeansResult result;
    result.centroids.resize(k, points.cols());
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    result.centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.below(n)));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = (points.row(i) - result.centroids.row(c - 1)).squaredNorm();
            dist2[i] = std::min(dist2[i], d);
            total += dist2[i];
        }
        int chosen = 0;
        if (total > 0.0) {
            double target = rng.uniform01() * total;
            for (int i = 0; i < n; ++i) {
                target -= dist2[i];
                if (target <= 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = static_cast<int>(rng.below(n));
        }
        result.centroids.row(c) = points.row(chosen);
    }

    result.assignment.assign(n, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (points.row(i) - result.centroids.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (result.assignment[i] != best) {
                result.assignment[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            sums.row(result.assignment[i]) += points.row(i);
            ++counts[result.assignment[i]];
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0) result.centroids.row(c) = sums.row(c) / counts[c];
    }
    return result;
}

}  // namespace irtkit
