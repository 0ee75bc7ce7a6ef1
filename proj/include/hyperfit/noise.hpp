/**
 * @file noise.hpp
 * @brief Measurement-noise imitation: multiplicative force noise and spatially
 *        correlated displacement/thickness noise from Gaussian random fields.
 */
#pragma once

#include "hyperfit/dataset.hpp"
#include "hyperfit/rng.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace hyperfit {

struct NoiseConfig {
  double omega = 0.0;    ///< relative half-width of the force multiplier
  double eta = 0.0;      ///< displacement noise factor
  double dx = 100.0;     ///< geometry dimension, mm
  int grid = 1024;       ///< GRF pixels per side, power of two
  double ell = 0.0;      ///< correlation length in unit-domain coordinates; 0 means 1/grid
  std::uint64_t seed = 0;

  double correlation_length() const { return ell > 0.0 ? ell : 1.0 / grid; }
  void validate() const {
    if (!(omega >= 0.0)) throw std::invalid_argument("noise: omega must be >= 0");
    if (!(eta >= 0.0)) throw std::invalid_argument("noise: eta must be >= 0");
    if (!(dx > 0.0)) throw std::invalid_argument("noise: dx must be positive");
    if (grid < 2 || (grid & (grid - 1)) != 0) throw std::invalid_argument("noise: grid must be a power of two");
    if (ell < 0.0) throw std::invalid_argument("noise: ell must be positive");
  }
};

/// Real field on an nx-by-ny grid, row-major with x fastest.
struct GrfField {
  int nx = 0, ny = 0;
  std::vector<double> values;

  double at(int i, int j) const { return values[static_cast<std::size_t>(j) * nx + i]; }
  double max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }
  void normalize() {
    const double m = max_abs();
    if (m > 0.0)
      for (double& v : values) v /= m;
  }
  /// Sub-grid [0, cx) x [0, cy).
  GrfField crop(int cx, int cy) const {
    if (cx < 1 || cy < 1 || cx > nx || cy > ny) throw std::invalid_argument("grf: crop outside the field");
    GrfField out{cx, cy, std::vector<double>(static_cast<std::size_t>(cx) * cy)};
    for (int j = 0; j < cy; ++j)
      for (int i = 0; i < cx; ++i) out.values[static_cast<std::size_t>(j) * cx + i] = at(i, j);
    return out;
  }
};

/// Power spectrum S(k) = exp(-ell^2 |k|^2) with k = 2 pi n on the unit square.
inline double grf_spectrum(double kx, double ky, double ell) { return std::exp(-ell * ell * (kx * kx + ky * ky)); }

/**
 * Square N x N Gaussian random field: real part of the inverse DFT of
 * sqrt(S(k)) eta(k) with eta complex standard normal, normalized to max |f| = 1.
 */
inline GrfField grf_generate(int n, double ell, Rng& rng) {
  if (n < 2 || (n & (n - 1)) != 0) throw std::invalid_argument("grf: N must be a power of two");
  if (!(ell > 0.0)) throw std::invalid_argument("grf: correlation length must be positive");
  const std::size_t total = static_cast<std::size_t>(n) * n;
  fftw_complex* buf = fftw_alloc_complex(total);
  if (!buf) throw std::bad_alloc();
  for (int j = 0; j < n; ++j) {
    const int mj = j <= n / 2 ? j : j - n;
    for (int i = 0; i < n; ++i) {
      const int mi = i <= n / 2 ? i : i - n;
      const double amp = std::sqrt(grf_spectrum(2.0 * M_PI * mi, 2.0 * M_PI * mj, ell));
      const std::size_t idx = static_cast<std::size_t>(j) * n + i;
      buf[idx][0] = amp * standard_normal(rng);
      buf[idx][1] = amp * standard_normal(rng);
    }
  }
  fftw_plan plan = fftw_plan_dft_2d(n, n, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  GrfField f{n, n, std::vector<double>(total)};
  // fftw stores row-major with the last index fastest; the last index is i (x)
  for (std::size_t k = 0; k < total; ++k) f.values[k] = buf[k][0];
  fftw_free(buf);
  f.normalize();
  return f;
}

inline GrfField grf_generate(int n, double ell, std::uint64_t seed) {
  Rng rng(seed);
  return grf_generate(n, ell, rng);
}

/// Maps a field onto an axis-aligned box; grid nodes sit on the box corners.
struct GridMap {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;

  /// Bilinear interpolation of @p f at physical point @p p; throws outside the box.
  double sample(const GrfField& f, const Vec2& p) const {
    const double tol = 1e-9 * std::max(x1 - x0, y1 - y0);
    if (p.x() < x0 - tol || p.x() > x1 + tol || p.y() < y0 - tol || p.y() > y1 + tol)
      throw std::out_of_range("grf: point outside the grid bounding box");
    const double gx = std::clamp((p.x() - x0) / (x1 - x0), 0.0, 1.0) * (f.nx - 1);
    const double gy = std::clamp((p.y() - y0) / (y1 - y0), 0.0, 1.0) * (f.ny - 1);
    const int i = std::min(static_cast<int>(gx), f.nx - 2);
    const int j = std::min(static_cast<int>(gy), f.ny - 2);
    const double s = gx - i, t = gy - j;
    return (1 - s) * (1 - t) * f.at(i, j) + s * (1 - t) * f.at(i + 1, j) + (1 - s) * t * f.at(i, j + 1) +
           s * t * f.at(i + 1, j + 1);
  }
};

/// Square field cropped (offset zero) to the aspect ratio of the box and renormalized.
inline GrfField grf_for_box(int n, double ell, const GridMap& box, Rng& rng) {
  GrfField sq = grf_generate(n, ell, rng);
  const double w = box.x1 - box.x0, h = box.y1 - box.y0;
  int cx = n, cy = n;
  if (w >= h)
    cy = std::max(2, static_cast<int>(std::lround(n * h / w)));
  else
    cx = std::max(2, static_cast<int>(std::lround(n * w / h)));
  GrfField f = sq.crop(cx, cy);
  f.normalize();
  return f;
}

/// Multiplies the global force (and any known nodal forces) of each snapshot by U[1-omega, 1+omega].
inline std::vector<double> apply_force_noise(RawDataset& ds, double omega, Rng& rng) {
  if (!(omega >= 0.0)) throw std::invalid_argument("noise: omega must be >= 0");
  std::vector<double> factors;
  for (auto& s : ds.snapshots) {
    const double n = omega == 0.0 ? 1.0 : 1.0 - omega + 2.0 * omega * uniform01(rng);
    factors.push_back(n);
    if (omega == 0.0) continue;
    s.global_force *= n;
    for (auto& f : s.known_forces) f *= n;
  }
  return factors;
}

/**
 * Adds eta*dx*f_a to the displacements and 2*eta*dx*f to the thickness, with one
 * independent field per snapshot and component, sampled at deformed positions.
 * Nodal thickness is perturbed at the nodes, quadrature-point thickness at the
 * deformed element centroids.
 */
inline void apply_field_noise(RawDataset& ds, double eta, double dx, int grid, double ell, Rng& rng) {
  if (!(eta >= 0.0)) throw std::invalid_argument("noise: eta must be >= 0");
  if (eta == 0.0) return;
  const auto& mesh = ds.mesh;
  for (auto& s : ds.snapshots) {
    std::vector<Vec2> x(mesh.num_nodes());
    GridMap box{1e300, 1e300, -1e300, -1e300};
    for (std::size_t k = 0; k < x.size(); ++k) {
      x[k] = mesh.nodes[k] + s.displacements[k];
      box.x0 = std::min(box.x0, x[k].x()), box.y0 = std::min(box.y0, x[k].y());
      box.x1 = std::max(box.x1, x[k].x()), box.y1 = std::max(box.y1, x[k].y());
    }
    const GrfField f1 = grf_for_box(grid, ell, box, rng);
    const GrfField f2 = grf_for_box(grid, ell, box, rng);
    const GrfField fh = grf_for_box(grid, ell, box, rng);
    const double amp = eta * dx;
    for (std::size_t k = 0; k < x.size(); ++k) {
      s.displacements[k].x() += amp * box.sample(f1, x[k]);
      s.displacements[k].y() += amp * box.sample(f2, x[k]);
    }
    for (std::size_t k = 0; k < s.thickness_nodes.size(); ++k) s.thickness_nodes[k] += 2.0 * amp * box.sample(fh, x[k]);
    for (std::size_t e = 0; e < s.thickness_quad.size(); ++e) {
      const auto& el = mesh.elements[e];
      const Vec2 c = (x[el[0]] + x[el[1]] + x[el[2]]) / 3.0;
      s.thickness_quad[e] += 2.0 * amp * box.sample(fh, c);
    }
  }
}

/// Force noise followed by field noise, each from its own sub-stream of cfg.seed.
inline void apply_noise(RawDataset& ds, const NoiseConfig& cfg) {
  cfg.validate();
  Rng force_rng = make_rng(cfg.seed, "force");
  Rng field_rng = make_rng(cfg.seed, "field");
  apply_force_noise(ds, cfg.omega, force_rng);
  apply_field_noise(ds, cfg.eta, cfg.dx, cfg.grid, cfg.correlation_length(), field_rng);
}

}  // namespace hyperfit
