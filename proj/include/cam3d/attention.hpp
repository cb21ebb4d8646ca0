#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cam3d/nn.hpp"
#include "cam3d/queries.hpp"
#include "cam3d/types.hpp"

namespace cam3d {

// ---------------------------------------------------------------------------
// Distance-modulated self-attention. Pairwise 3D distances between query
// centers shrink attention logits through a kernel whose bandwidth epsilon is
// predicted per (query, head) from the attending query's embedding.
// ---------------------------------------------------------------------------

enum class Modulation { gaussian, laplacian, reciprocal, none };

inline const char* to_string(Modulation m) {
  switch (m) {
    case Modulation::gaussian: return "gaussian";
    case Modulation::laplacian: return "laplacian";
    case Modulation::reciprocal: return "reciprocal";
    case Modulation::none: return "none";
  }
  return "?";
}

inline Modulation modulation_from_string(std::string_view name) {
  if (name == "gaussian") return Modulation::gaussian;
  if (name == "laplacian") return Modulation::laplacian;
  if (name == "reciprocal") return Modulation::reciprocal;
  if (name == "none") return Modulation::none;
  throw std::invalid_argument("unknown modulation kind: " + std::string(name));
}

// Kernel value at distance `dist` with bandwidth `eps` (> 0). All kinds are 1
// at zero distance and decay monotonically.
inline double kernel_value(Modulation kind, double dist, double eps) {
  switch (kind) {
    case Modulation::gaussian: return std::exp(-(dist * dist) / (2.0 * eps * eps));
    case Modulation::laplacian: return std::exp(-dist / eps);
    case Modulation::reciprocal: return 1.0 / (1.0 + dist / eps);
    case Modulation::none: return 1.0;
  }
  return 1.0;
}

struct KernelGrad {
  double d_dist = 0.0;
  double d_eps = 0.0;
};

// Closed-form partials of kernel_value; `none` has no parameters to derive.
inline KernelGrad kernel_grad(Modulation kind, double dist, double eps) {
  const double f = kernel_value(kind, dist, eps);
  switch (kind) {
    case Modulation::gaussian:
      return {-f * dist / (eps * eps), f * dist * dist / (eps * eps * eps)};
    case Modulation::laplacian:
      return {-f / eps, f * dist / (eps * eps)};
    case Modulation::reciprocal:
      return {-f * f / eps, f * f * dist / (eps * eps)};
    case Modulation::none:
      throw std::invalid_argument("kernel_grad: 'none' has no kernel parameters");
  }
  return {};
}

// Symmetric matrix of Euclidean distances between query centers.
struct DistanceMatrix {
  MatX m;
  int size() const { return static_cast<int>(m.rows()); }
};

inline DistanceMatrix pairwise_distance(const std::vector<RefState>& states) {
  const int n = static_cast<int>(states.size());
  DistanceMatrix d;
  d.m = MatX::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double v = (states[i].center() - states[j].center()).norm();
      d.m(i, j) = v;
      d.m(j, i) = v;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Epsilon prediction: a stack of affine layers with ReLU between them. The
// default configuration is two layers d -> d -> heads; a single d -> heads
// layer is the reduced variant. Softplus plus a floor keeps every bandwidth
// strictly positive.
// ---------------------------------------------------------------------------

inline constexpr double kEpsilonFloor = 1e-3;

struct EpsilonNet {
  std::vector<Affine> layers;

  int in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  VecX operator()(const VecX& x) const {
    if (layers.empty()) throw std::invalid_argument("EpsilonNet: no layers");
    VecX v = layers.front()(x);
    for (std::size_t i = 1; i < layers.size(); ++i) v = layers[i](relu(v));
    return v;
  }

  MatX apply_rows(const MatX& x) const {
    if (layers.empty()) throw std::invalid_argument("EpsilonNet: no layers");
    MatX v = layers.front().apply_rows(x);
    for (std::size_t i = 1; i < layers.size(); ++i) v = layers[i].apply_rows(relu(v));
    return v;
  }
};

// Per-(query, head) bandwidths, strictly positive.
struct EpsilonField {
  MatX m;  // queries x heads
};

struct AttentionParams {
  int heads = 8;
  int width = 64;  // d; must be divisible by heads
  Affine wq, wk, wv, wo;  // each d -> d
  EpsilonNet eps_net;
  Modulation modulation = Modulation::gaussian;
  // When set, the kernel enters the logits as log(factor) added before the
  // softmax instead of multiplying them. Off by default.
  bool log_space_modulation = false;

  int head_dim() const { return width / heads; }
};

inline void validate(const AttentionParams& p) {
  if (p.heads < 1 || p.width < 1 || p.width % p.heads != 0)
    throw std::invalid_argument("AttentionParams: width must be a positive multiple of heads");
  for (const Affine* a : {&p.wq, &p.wk, &p.wv, &p.wo})
    if (a->in_dim() != p.width || a->out_dim() != p.width)
      throw std::invalid_argument("AttentionParams: projection shapes must be width x width");
  if (p.modulation != Modulation::none) {
    if (p.eps_net.layers.empty() || p.eps_net.in_dim() != p.width ||
        p.eps_net.out_dim() != p.heads)
      throw std::invalid_argument("AttentionParams: epsilon net must map width -> heads");
  }
}

// `double_linear_eps` selects the default two-layer epsilon net; false gives
// the single-layer variant.
inline AttentionParams make_attention_params(int d, int heads, Modulation kind,
                                             std::uint64_t seed, bool double_linear_eps = true) {
  if (heads < 1 || d < 1 || d % heads != 0)
    throw std::invalid_argument("make_attention_params: width must be a positive multiple of heads");
  std::mt19937_64 gen(seed);
  AttentionParams p;
  p.heads = heads;
  p.width = d;
  p.modulation = kind;
  p.wq = make_affine(d, d, gen);
  p.wk = make_affine(d, d, gen);
  p.wv = make_affine(d, d, gen);
  p.wo = make_affine(d, d, gen);
  if (double_linear_eps) {
    p.eps_net.layers = {make_affine(d, d, gen), make_affine(heads, d, gen)};
  } else {
    p.eps_net.layers = {make_affine(heads, d, gen)};
  }
  return p;
}

inline EpsilonField compute_epsilons(const MatX& embeddings, const AttentionParams& p) {
  if (embeddings.cols() != p.width)
    throw std::invalid_argument("compute_epsilons: embedding width mismatch");
  if (p.eps_net.in_dim() != p.width || p.eps_net.out_dim() != p.heads)
    throw std::invalid_argument("compute_epsilons: epsilon net must map width -> heads");
  EpsilonField f;
  f.m = p.eps_net.apply_rows(embeddings).unaryExpr([](double x) {
    return softplus(x) + kEpsilonFloor;
  });
  return f;
}

// Modulation factor for one head: entry (i, j) is the kernel at distance
// D(i, j) with the attending query i's bandwidth.
inline MatX modulation_factor(const DistanceMatrix& dist, const EpsilonField& eps,
                              Modulation kind, int head) {
  const int n = dist.size();
  if (eps.m.rows() != n) throw std::invalid_argument("modulation_factor: row count mismatch");
  if (head < 0 || head >= eps.m.cols())
    throw std::invalid_argument("modulation_factor: head out of range");
  MatX f(n, n);
  for (int i = 0; i < n; ++i) {
    const double e = eps.m(i, head);
    for (int j = 0; j < n; ++j) f(i, j) = kernel_value(kind, dist.m(i, j), e);
  }
  return f;
}

// Kernel partials over the whole factor matrix, same bandwidth convention.
struct KernelGradField {
  MatX d_dist, d_eps;
};

inline KernelGradField kernel_grad_field(const DistanceMatrix& dist, const EpsilonField& eps,
                                         Modulation kind, int head) {
  const int n = dist.size();
  KernelGradField g;
  g.d_dist = MatX::Zero(n, n);
  g.d_eps = MatX::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const double e = eps.m(i, head);
    for (int j = 0; j < n; ++j) {
      const KernelGrad kg = kernel_grad(kind, dist.m(i, j), e);
      g.d_dist(i, j) = kg.d_dist;
      g.d_eps(i, j) = kg.d_eps;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// The attention block itself: per head, scaled dot-product logits are
// multiplied by the kernel factor (or shifted by its log), then softmax over
// keys, then the value mix; heads concatenate and pass through the output
// projection. With `none` (or huge bandwidths) this reduces to vanilla
// multi-head self-attention.
// ---------------------------------------------------------------------------

inline MatX adaptive_self_attention(const QuerySet& qs, const AttentionParams& p,
                                    std::vector<MatX>* attention_out = nullptr) {
  validate(p);
  if (qs.empty())
    throw std::invalid_argument("adaptive_self_attention: need at least one query");
  if (qs.width != p.width)
    throw std::invalid_argument("adaptive_self_attention: query width " +
                                std::to_string(qs.width) + " != params width " +
                                std::to_string(p.width));
  const int n = qs.size();
  const int dh = p.head_dim();
  const MatX x = embeddings_of(qs);
  const MatX xq = p.wq.apply_rows(x);
  const MatX xk = p.wk.apply_rows(x);
  const MatX xv = p.wv.apply_rows(x);

  const bool modulated = p.modulation != Modulation::none;
  DistanceMatrix dist;
  EpsilonField eps;
  if (modulated) {
    dist = pairwise_distance(states_of(qs));
    eps = compute_epsilons(x, p);
  }

  if (attention_out) attention_out->clear();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  MatX concat(n, p.width);
  for (int h = 0; h < p.heads; ++h) {
    MatX logits = xq.middleCols(h * dh, dh) * xk.middleCols(h * dh, dh).transpose() * inv_sqrt;
    if (modulated) {
      const MatX factor = modulation_factor(dist, eps, p.modulation, h);
      if (p.log_space_modulation)
        logits += factor.array().log().matrix();
      else
        logits = logits.cwiseProduct(factor);
    }
    MatX attn(n, n);
    for (int i = 0; i < n; ++i)
      attn.row(i) = softmax(logits.row(i).transpose()).transpose();
    if (attention_out) attention_out->push_back(attn);
    concat.middleCols(h * dh, dh) = attn * xv.middleCols(h * dh, dh);
  }
  return p.wo.apply_rows(concat);
}

}  // namespace cam3d
