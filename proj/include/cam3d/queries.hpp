#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cam3d/geometry.hpp"
#include "cam3d/nn.hpp"
#include "cam3d/rng.hpp"
#include "cam3d/types.hpp"

namespace cam3d {

// ---------------------------------------------------------------------------
// Queries: a reference state plus an embedding of fixed width d. A frame's
// working set is the concatenation global + adaptive + temporal, in that
// order.
// ---------------------------------------------------------------------------

enum class QueryKind { global, adaptive, temporal };

inline const char* to_string(QueryKind k) {
  switch (k) {
    case QueryKind::global: return "global";
    case QueryKind::adaptive: return "adaptive";
    case QueryKind::temporal: return "temporal";
  }
  return "?";
}

struct Query {
  RefState state;
  VecX embedding;
  QueryKind kind = QueryKind::global;
  double score = 1.0;
};

struct QuerySet {
  std::vector<Query> items;
  int width = 0;  // embedding width d, shared by every item

  QuerySet() = default;
  explicit QuerySet(int d) : width(d) {}

  int size() const { return static_cast<int>(items.size()); }
  bool empty() const { return items.empty(); }

  void push(Query q) {
    if (q.embedding.size() != width)
      throw std::invalid_argument("QuerySet: embedding width " + std::to_string(q.embedding.size()) +
                                  " does not match set width " + std::to_string(width));
    items.push_back(std::move(q));
  }
};

inline MatX embeddings_of(const QuerySet& qs) {
  MatX m(qs.size(), qs.width);
  for (int i = 0; i < qs.size(); ++i) m.row(i) = qs.items[i].embedding.transpose();
  return m;
}

inline std::vector<RefState> states_of(const QuerySet& qs) {
  std::vector<RefState> s;
  s.reserve(qs.items.size());
  for (const auto& q : qs.items) s.push_back(q.state);
  return s;
}

// Same states/kinds/scores, new embedding rows.
inline QuerySet with_embeddings(const QuerySet& qs, const MatX& rows) {
  if (rows.rows() != qs.size() || rows.cols() != qs.width)
    throw std::invalid_argument("with_embeddings: matrix shape does not match set");
  QuerySet out = qs;
  for (int i = 0; i < out.size(); ++i) out.items[i].embedding = rows.row(i).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Positional embedding: each of the 9 state scalars owns floor(d / 9)
// channels, filled with interleaved sin/cos at geometrically spaced
// frequencies (base 10000); leftover channels stay zero.
// ---------------------------------------------------------------------------

inline VecX sin_pos_embed(const RefState& s, int d) {
  if (d < 2 * kStateDims)
    throw std::invalid_argument("sin_pos_embed: width " + std::to_string(d) +
                                " cannot fit one sin/cos pair per state scalar");
  const int per = d / kStateDims;
  const int pairs = per / 2;
  const std::array<double, kStateDims> vals{s.x, s.y, s.z, s.w, s.l, s.h, s.theta, s.vx, s.vy};
  VecX out = VecX::Zero(d);
  for (int k = 0; k < kStateDims; ++k) {
    const int base = k * per;
    for (int i = 0; i < pairs; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / per);
      out[base + 2 * i] = std::sin(vals[k] * freq);
      out[base + 2 * i + 1] = std::cos(vals[k] * freq);
    }
    if (per % 2 == 1)
      out[base + per - 1] = std::sin(vals[k] * std::pow(10000.0, -2.0 * pairs / per));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semantic embedding: two affine layers with a ReLU between, applied to the
// detection's semantic vector with its score appended.
// ---------------------------------------------------------------------------

struct EmbedWeights {
  Mlp2 mlp;  // (semantic_dim + 1) -> d -> d
};

inline EmbedWeights make_embed_weights(int semantic_dim, int d, std::uint64_t seed) {
  if (semantic_dim < 1 || d < 1)
    throw std::invalid_argument("make_embed_weights: dimensions must be positive");
  std::mt19937_64 gen(seed);
  EmbedWeights w;
  w.mlp.first = make_affine(d, semantic_dim + 1, gen);
  w.mlp.second = make_affine(d, d, gen);
  return w;
}

inline VecX semantic_embed(const VecX& z_sem, double score, const EmbedWeights& w) {
  if (z_sem.size() + 1 != w.mlp.in_dim())
    throw std::invalid_argument("semantic_embed: semantic width " + std::to_string(z_sem.size()) +
                                " does not match weights (" + std::to_string(w.mlp.in_dim() - 1) + ")");
  VecX x(z_sem.size() + 1);
  x.head(z_sem.size()) = z_sem;
  x[z_sem.size()] = score;
  return w.mlp(x);
}

// ---------------------------------------------------------------------------
// Query constructors.
// ---------------------------------------------------------------------------

struct BevRange {
  double x_min = -50.0, x_max = 50.0;
  double y_min = -50.0, y_max = 50.0;
  double z_min = 0.0, z_max = 2.0;
};

inline void validate(const BevRange& r) {
  if (!(r.x_max >= r.x_min && r.y_max >= r.y_min && r.z_max >= r.z_min))
    throw std::invalid_argument("BevRange: max bounds must not be below min bounds");
}

// Content-free global queries: centers uniform over the range, unit extents,
// zero yaw and velocity, embedding from the positional map alone. The same
// seed always yields bit-identical queries.
inline QuerySet make_global_queries(int n, const BevRange& range, int d, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("make_global_queries: count must be non-negative");
  validate(range);
  std::mt19937_64 gen(seed);
  QuerySet out(d);
  out.items.reserve(n);
  for (int i = 0; i < n; ++i) {
    Query q;
    q.state.x = uniform_in(gen, range.x_min, range.x_max);
    q.state.y = uniform_in(gen, range.y_min, range.y_max);
    q.state.z = uniform_in(gen, range.z_min, range.z_max);
    q.state.w = q.state.l = q.state.h = 1.0;
    q.embedding = sin_pos_embed(q.state, d);
    q.kind = QueryKind::global;
    q.score = 1.0;
    out.push(std::move(q));
  }
  return out;
}

// Image-driven queries: lift every kept detection and embed it as positional
// plus semantic. Detections are dropped (not errors) when the score is below
// `score_min` or the depth distribution's best bin is weaker than
// `depth_conf_min`. An unknown camera id is an error.
inline QuerySet make_adaptive_queries(const std::vector<Detection2D>& detections,
                                      const std::vector<CameraModel>& rig,
                                      const EmbedWeights& weights, double score_min,
                                      double depth_conf_min = 0.3) {
  std::unordered_map<int, const CameraModel*> by_id;
  for (const auto& cam : rig) by_id.emplace(cam.camera_id, &cam);
  const int d = weights.mlp.out_dim();
  QuerySet out(d);
  for (const auto& det : detections) {
    validate(det);
    const auto it = by_id.find(det.camera_id);
    if (it == by_id.end())
      throw std::out_of_range("make_adaptive_queries: unknown camera_id " +
                              std::to_string(det.camera_id));
    if (det.score < score_min) continue;
    if (max_bin_prob(det) < depth_conf_min) continue;
    Query q;
    q.state = lift_detection(*it->second, det);
    q.embedding = sin_pos_embed(q.state, d) + semantic_embed(det.z_sem, det.score, weights);
    q.kind = QueryKind::adaptive;
    q.score = det.score;
    out.push(std::move(q));
  }
  return out;
}

// Concatenate global + adaptive + temporal in that order. Widths must agree
// across the non-empty inputs; empty sets pass through regardless of their
// nominal width so a cold-start frame composes cleanly.
inline QuerySet compose_queries(const QuerySet& global, const QuerySet& adaptive,
                                const QuerySet& temporal) {
  int width = 0;
  for (const QuerySet* s : {&global, &adaptive, &temporal}) {
    if (s->empty()) continue;
    if (width == 0) width = s->width;
    else if (s->width != width)
      throw std::invalid_argument("compose_queries: embedding widths differ across inputs");
  }
  if (width == 0) width = global.width != 0 ? global.width
                        : adaptive.width != 0 ? adaptive.width : temporal.width;
  QuerySet out(width);
  out.items.reserve(global.items.size() + adaptive.items.size() + temporal.items.size());
  for (const QuerySet* s : {&global, &adaptive, &temporal})
    for (const auto& q : s->items) out.items.push_back(q);
  return out;
}

}  // namespace cam3d
