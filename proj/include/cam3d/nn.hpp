#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "cam3d/rng.hpp"
#include "cam3d/types.hpp"

namespace cam3d {

// ---------------------------------------------------------------------------
// Small dense building blocks. Everything computes in double; weights are
// value types so layer stacks copy and compare trivially.
// ---------------------------------------------------------------------------

struct Affine {
  MatX weight;  // out x in, row-major semantics (row r = output r)
  VecX bias;    // out

  Affine() = default;
  Affine(int out, int in) : weight(MatX::Zero(out, in)), bias(VecX::Zero(out)) {}

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }

  VecX operator()(const VecX& x) const {
    if (x.size() != weight.cols())
      throw std::invalid_argument("Affine: input has width " + std::to_string(x.size()) +
                                  ", layer expects " + std::to_string(weight.cols()));
    return weight * x + bias;
  }

  // Apply to each row of a (n x in) matrix, yielding (n x out).
  MatX apply_rows(const MatX& x) const {
    if (x.cols() != weight.cols())
      throw std::invalid_argument("Affine: row width " + std::to_string(x.cols()) +
                                  ", layer expects " + std::to_string(weight.cols()));
    return (x * weight.transpose()).rowwise() + bias.transpose();
  }
};

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline VecX relu(const VecX& v) { return v.cwiseMax(0.0); }
inline MatX relu(const MatX& m) { return m.cwiseMax(0.0); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Overflow-safe softplus: log(1 + e^x).
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Numerically stable softmax over a vector.
inline VecX softmax(const VecX& v) {
  if (v.size() == 0) throw std::invalid_argument("softmax: empty input");
  const VecX shifted = v.array() - v.maxCoeff();
  const VecX e = shifted.array().exp();
  return e / e.sum();
}

// Jacobian of softmax at x: J(i,j) = s_i * (delta_ij - s_j).
inline MatX softmax_jacobian(const VecX& x) {
  const VecX s = softmax(x);
  MatX j = -(s * s.transpose());
  j.diagonal() += s;
  return j;
}

// Two affine layers with a ReLU between them (no residual).
struct Mlp2 {
  Affine first, second;

  Mlp2() = default;
  Mlp2(int in, int hidden, int out) : first(hidden, in), second(out, hidden) {}

  int in_dim() const { return first.in_dim(); }
  int out_dim() const { return second.out_dim(); }

  VecX operator()(const VecX& x) const { return second(relu(first(x))); }
};

// Seeded dense init, uniform in [-scale, scale]; biases stay zero so that
// zero-input probes stay zero. Fill order is row-major, fixed forever.
inline void seed_affine(Affine& layer, std::mt19937_64& gen, double scale) {
  for (int r = 0; r < layer.weight.rows(); ++r)
    for (int c = 0; c < layer.weight.cols(); ++c)
      layer.weight(r, c) = uniform_in(gen, -scale, scale);
}

inline Affine make_affine(int out, int in, std::mt19937_64& gen) {
  Affine a(out, in);
  seed_affine(a, gen, 1.0 / std::sqrt(static_cast<double>(in)));
  return a;
}

}  // namespace cam3d
