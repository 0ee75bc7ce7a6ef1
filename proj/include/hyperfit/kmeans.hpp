/**
 * @file kmeans.hpp
 * @brief Seeded k-means++ / Lloyd clustering on small fixed-dimension points.
 */
#pragma once

#include "hyperfit/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <vector>

namespace hyperfit {

struct KmeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  ///< one centroid per column
  int iterations = 0;
  int reseeded = 0;           ///< empty clusters refilled from the farthest points
};

namespace detail {

/// Nearest centroid with lowest-index tie-break.
inline int nearest_centroid(const Eigen::MatrixXd& pts, Eigen::Index i, const Eigen::MatrixXd& cent, double* dist) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < cent.cols(); ++c) {
    const double d = (pts.col(i) - cent.col(c)).squaredNorm();
    if (d < bd) bd = d, best = static_cast<int>(c);
  }
  if (dist) *dist = bd;
  return best;
}

}  // namespace detail

/**
 * Lloyd iterations from the given centroids until the labels stop changing.
 * Empty clusters are moved onto the point farthest from its centroid, so every
 * cluster ends up non-empty whenever k <= number of distinct points.
 */
inline KmeansResult lloyd(const Eigen::MatrixXd& pts, Eigen::MatrixXd centroids, int max_iterations = 100) {
  const Eigen::Index n = pts.cols(), k = centroids.cols();
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= number of points");
  KmeansResult out;
  out.labels.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = detail::nearest_centroid(pts, i, centroids, &dist[i]);
      if (l != out.labels[i]) changed = true, out.labels[i] = l;
    }
    // refill empty clusters from the farthest points
    std::vector<Eigen::Index> count(static_cast<std::size_t>(k), 0);
    for (int l : out.labels) ++count[l];
    for (Eigen::Index c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      Eigen::Index far = -1;
      double fd = -1.0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (count[out.labels[i]] > 1 && dist[i] > fd) fd = dist[i], far = i;
      if (far < 0) break;
      --count[out.labels[far]];
      out.labels[far] = static_cast<int>(c);
      count[c] = 1;
      dist[far] = 0.0;
      centroids.col(c) = pts.col(far);
      ++out.reseeded;
      changed = true;
    }
    out.iterations = it + 1;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(pts.rows(), k);
    for (Eigen::Index i = 0; i < n; ++i) sum.col(out.labels[i]) += pts.col(i);
    for (Eigen::Index c = 0; c < k; ++c)
      if (count[c] > 0) centroids.col(c) = sum.col(c) / static_cast<double>(count[c]);
    if (!changed) break;
  }
  out.centroids = std::move(centroids);
  return out;
}

/// k-means++ seeding followed by Lloyd iterations.
inline KmeansResult kmeans(const Eigen::MatrixXd& pts, int k, Rng& rng, int max_iterations = 100) {
  const Eigen::Index n = pts.cols();
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= number of points");
  Eigen::MatrixXd cent(pts.rows(), k);
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index first = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n));
  first = std::min(first, n - 1);
  cent.col(0) = pts.col(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (pts.col(i) - cent.col(c - 1)).squaredNorm());
      total += d2[i];
    }
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      double target = uniform01(rng) * total, acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n));
      pick = std::min(pick, n - 1);
    }
    cent.col(c) = pts.col(pick);
  }
  return lloyd(pts, std::move(cent), max_iterations);
}

}  // namespace hyperfit
