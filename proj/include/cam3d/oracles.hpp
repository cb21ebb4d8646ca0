#pragma once

#include <cmath>
#include <vector>

#include "cam3d/attention.hpp"
#include "cam3d/sampling.hpp"
#include "cam3d/types.hpp"

// Reference implementations written the long way — scalar loops, no shared
// code with the fast paths — used by the test suite and the verification
// driver to cross-check the library.

namespace cam3d::oracle {

// Vanilla multi-head self-attention, no distance machinery at all.
inline MatX reference_mhsa(const MatX& x, const AttentionParams& p) {
  const int n = static_cast<int>(x.rows());
  const int d = p.width;
  const int heads = p.heads;
  const int dh = d / heads;

  auto affine = [&](const Affine& a, const MatX& in) {
    MatX out(in.rows(), a.out_dim());
    for (int r = 0; r < in.rows(); ++r)
      for (int o = 0; o < a.out_dim(); ++o) {
        double acc = a.bias[o];
        for (int c = 0; c < a.in_dim(); ++c) acc += a.weight(o, c) * in(r, c);
        out(r, o) = acc;
      }
    return out;
  };

  const MatX q = affine(p.wq, x);
  const MatX k = affine(p.wk, x);
  const MatX v = affine(p.wv, x);

  MatX concat(n, d);
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < n; ++i) {
      // Scaled dot-product logits for row i against every key.
      std::vector<double> logits(n);
      for (int j = 0; j < n; ++j) {
        double dot = 0.0;
        for (int c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
        logits[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      double peak = logits[0];
      for (double l : logits) peak = std::max(peak, l);
      double norm = 0.0;
      std::vector<double> w(n);
      for (int j = 0; j < n; ++j) {
        w[j] = std::exp(logits[j] - peak);
        norm += w[j];
      }
      for (int c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += (w[j] / norm) * v(j, h * dh + c);
        concat(i, h * dh + c) = acc;
      }
    }
  }
  return affine(p.wo, concat);
}

// Four-neighbor interpolation written directly from the definition.
inline VecX reference_bilinear(const FeatureMap& fm, double u, double v) {
  const double s = level_scale(fm.level);
  const double gx = u * s - 0.5;
  const double gy = v * s - 0.5;
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  VecX out = VecX::Zero(fm.channels);
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const int x = x0 + dx;
      const int y = y0 + dy;
      if (x < 0 || y < 0 || x >= fm.width || y >= fm.height) continue;
      const double wx = dx == 0 ? (1.0 - (gx - x0)) : (gx - x0);
      const double wy = dy == 0 ? (1.0 - (gy - y0)) : (gy - y0);
      for (int c = 0; c < fm.channels; ++c)
        out[c] += wx * wy * static_cast<double>(fm.at(c, y, x));
    }
  return out;
}

// Pairwise center distances from the coordinate formula.
inline MatX reference_pairwise(const std::vector<RefState>& states) {
  const int n = static_cast<int>(states.size());
  MatX d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dx = states[i].x - states[j].x;
      const double dy = states[i].y - states[j].y;
      const double dz = states[i].z - states[j].z;
      d(i, j) = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
  return d;
}

}  // namespace cam3d::oracle
