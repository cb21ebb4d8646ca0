#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cam3d/geometry.hpp"
#include "cam3d/nn.hpp"
#include "cam3d/queries.hpp"
#include "cam3d/types.hpp"

namespace cam3d {

// ---------------------------------------------------------------------------
// Feature pyramid: per camera, four maps at 1/4, 1/8, 1/16, 1/32 of the
// nominal image size. Storage is float32, channel-major; all arithmetic on
// sampled values happens in double.
// ---------------------------------------------------------------------------

inline constexpr int kPyramidLevels = 4;

// Scale factor of a level relative to full-resolution pixels.
inline double level_scale(int level) {
  if (level < 0 || level >= kPyramidLevels)
    throw std::invalid_argument("level_scale: level must be in [0, 4)");
  return 1.0 / static_cast<double>(4 << level);
}

struct FeatureMap {
  int camera_id = 0;
  int level = 0;  // 0 -> 1/4 ... 3 -> 1/32
  int channels = 0, height = 0, width = 0;
  std::vector<float> data;  // [channel][row][col]

  float at(int c, int y, int x) const { return data[(c * height + y) * width + x]; }
  float& at(int c, int y, int x) { return data[(c * height + y) * width + x]; }
  double scale() const { return level_scale(level); }
};

inline FeatureMap make_feature_map(int camera_id, int level, int channels, int nominal_width,
                                   int nominal_height) {
  if (channels < 1 || nominal_width < 1 || nominal_height < 1)
    throw std::invalid_argument("make_feature_map: dimensions must be positive");
  FeatureMap fm;
  fm.camera_id = camera_id;
  fm.level = level;
  fm.channels = channels;
  fm.width = static_cast<int>(nominal_width * level_scale(level));
  fm.height = static_cast<int>(nominal_height * level_scale(level));
  if (fm.width < 1 || fm.height < 1)
    throw std::invalid_argument("make_feature_map: nominal size too small for level");
  fm.data.assign(static_cast<std::size_t>(fm.channels) * fm.height * fm.width, 0.0f);
  return fm;
}

struct FeaturePyramid {
  int nominal_width = 0, nominal_height = 0;
  std::vector<FeatureMap> maps;

  const FeatureMap& map_for(int camera_id, int level) const {
    for (const auto& m : maps)
      if (m.camera_id == camera_id && m.level == level) return m;
    throw std::out_of_range("FeaturePyramid: no map for camera " + std::to_string(camera_id) +
                            " level " + std::to_string(level));
  }

  FeatureMap& map_for(int camera_id, int level) {
    return const_cast<FeatureMap&>(static_cast<const FeaturePyramid&>(*this).map_for(camera_id, level));
  }

  int channels() const { return maps.empty() ? 0 : maps.front().channels; }
};

inline void validate(const FeaturePyramid& pyr) {
  if (pyr.nominal_width < 1 || pyr.nominal_height < 1)
    throw std::invalid_argument("FeaturePyramid: nominal size must be positive");
  std::vector<int> cameras;
  for (const auto& m : pyr.maps) {
    bool seen = false;
    for (int c : cameras) seen = seen || c == m.camera_id;
    if (!seen) cameras.push_back(m.camera_id);
  }
  for (int cam : cameras) {
    for (int level = 0; level < kPyramidLevels; ++level) {
      int count = 0;
      for (const auto& m : pyr.maps)
        if (m.camera_id == cam && m.level == level) ++count;
      if (count != 1)
        throw std::invalid_argument("FeaturePyramid: camera " + std::to_string(cam) + " level " +
                                    std::to_string(level) + " appears " + std::to_string(count) +
                                    " times");
    }
  }
  for (const auto& m : pyr.maps) {
    const int w = static_cast<int>(pyr.nominal_width * level_scale(m.level));
    const int h = static_cast<int>(pyr.nominal_height * level_scale(m.level));
    if (m.width != w || m.height != h)
      throw std::invalid_argument("FeaturePyramid: map dims do not match nominal size at its level");
    if (m.channels != pyr.channels())
      throw std::invalid_argument("FeaturePyramid: channel counts differ across maps");
    if (m.data.size() != static_cast<std::size_t>(m.channels) * m.height * m.width)
      throw std::invalid_argument("FeaturePyramid: data size does not match dims");
    for (float v : m.data)
      if (!std::isfinite(v)) throw std::invalid_argument("FeaturePyramid: non-finite value");
  }
}

inline FeaturePyramid make_pyramid(const std::vector<int>& camera_ids, int channels,
                                   int nominal_width, int nominal_height) {
  FeaturePyramid pyr;
  pyr.nominal_width = nominal_width;
  pyr.nominal_height = nominal_height;
  for (int cam : camera_ids)
    for (int level = 0; level < kPyramidLevels; ++level)
      pyr.maps.push_back(make_feature_map(cam, level, channels, nominal_width, nominal_height));
  return pyr;
}

// ---------------------------------------------------------------------------
// Bilinear sampling. Full-resolution pixel coordinates map to level grid
// coordinates as (u * scale - 0.5, v * scale - 0.5), so integer grid coords
// land exactly on texel centers. Out-of-bounds neighbors contribute zero.
// ---------------------------------------------------------------------------

inline VecX bilinear_sample(const FeatureMap& fm, double u, double v) {
  const double s = fm.scale();
  const double gx = u * s - 0.5;
  const double gy = v * s - 0.5;
  const double fx = std::floor(gx);
  const double fy = std::floor(gy);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = gx - fx;
  const double ay = gy - fy;
  VecX out = VecX::Zero(fm.channels);
  const double weights[4] = {(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (xs[k] < 0 || ys[k] < 0 || xs[k] >= fm.width || ys[k] >= fm.height) continue;
    for (int c = 0; c < fm.channels; ++c)
      out[c] += weights[k] * static_cast<double>(fm.at(c, ys[k], xs[k]));
  }
  return out;
}

struct BilinearGrad {
  VecX du, dv;  // per-channel partials w.r.t. full-resolution (u, v)
};

inline BilinearGrad bilinear_sample_grad(const FeatureMap& fm, double u, double v) {
  const double s = fm.scale();
  const double gx = u * s - 0.5;
  const double gy = v * s - 0.5;
  const double fx = std::floor(gx);
  const double fy = std::floor(gy);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = gx - fx;
  const double ay = gy - fy;
  BilinearGrad g;
  g.du = VecX::Zero(fm.channels);
  g.dv = VecX::Zero(fm.channels);
  // d(weight)/d(gx), d(weight)/d(gy) for the four corners, then chain by s.
  const double wx[4] = {-(1.0 - ay), (1.0 - ay), -ay, ay};
  const double wy[4] = {-(1.0 - ax), -ax, (1.0 - ax), ax};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (xs[k] < 0 || ys[k] < 0 || xs[k] >= fm.width || ys[k] >= fm.height) continue;
    for (int c = 0; c < fm.channels; ++c) {
      const double val = static_cast<double>(fm.at(c, ys[k], xs[k]));
      g.du[c] += wx[k] * val * s;
      g.dv[c] += wy[k] * val * s;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Hybrid sampling points: a fixed pattern on the box plus learnable points
// predicted from the embedding, blended by a learned alpha.
// ---------------------------------------------------------------------------

enum class FixedPointMode { center = 1, faces = 7, corners = 9 };

// Deterministic order: center first; then +x, -x, +y, -y, +z, -z face centers
// (faces mode) or the 8 corners with x varying slowest (corners mode). All in
// world coordinates after the box's yaw rotation.
inline std::vector<Vec3> fixed_points(const RefState& s, FixedPointMode mode = FixedPointMode::faces) {
  const Mat3 r = yaw_rotation(s.theta);
  const Vec3 c = s.center();
  const Vec3 half(0.5 * s.w, 0.5 * s.l, 0.5 * s.h);
  auto at = [&](double ax, double ay, double az) {
    return Vec3(r * Vec3(ax * half.x(), ay * half.y(), az * half.z()) + c);
  };
  std::vector<Vec3> pts;
  pts.push_back(c);
  if (mode == FixedPointMode::faces) {
    pts.push_back(at(1, 0, 0));
    pts.push_back(at(-1, 0, 0));
    pts.push_back(at(0, 1, 0));
    pts.push_back(at(0, -1, 0));
    pts.push_back(at(0, 0, 1));
    pts.push_back(at(0, 0, -1));
  } else if (mode == FixedPointMode::corners) {
    for (double ax : {-1.0, 1.0})
      for (double ay : {-1.0, 1.0})
        for (double az : {-1.0, 1.0}) pts.push_back(at(ax, ay, az));
  }
  return pts;
}

// Learnable points: the net's k*3 outputs pass through tanh, scale by the box
// half-extents, rotate by its yaw and translate to the center — every point
// lands inside the box by construction.
inline std::vector<Vec3> learnable_offsets(const VecX& embedding, const RefState& s,
                                           const Affine& net) {
  const VecX raw = net(embedding);
  if (raw.size() == 0 || raw.size() % 3 != 0)
    throw std::invalid_argument("learnable_offsets: net output size must be a positive multiple of 3");
  const int k = static_cast<int>(raw.size()) / 3;
  const Mat3 r = yaw_rotation(s.theta);
  const Vec3 half(0.5 * s.w, 0.5 * s.l, 0.5 * s.h);
  const Vec3 c = s.center();
  std::vector<Vec3> pts(k);
  for (int i = 0; i < k; ++i) {
    const Vec3 unit(std::tanh(raw[3 * i]), std::tanh(raw[3 * i + 1]), std::tanh(raw[3 * i + 2]));
    pts[i] = r * unit.cwiseProduct(half) + c;
  }
  return pts;
}

// Pairwise convex blend over the first min(|fixed|, |learned|) points; the
// longer list's tail passes through unchanged, so the result has
// max(|fixed|, |learned|) points.
inline std::vector<Vec3> blend_points(const std::vector<Vec3>& fixed,
                                      const std::vector<Vec3>& learned, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("blend_points: alpha must lie in [0, 1]");
  const std::size_t shared = std::min(fixed.size(), learned.size());
  std::vector<Vec3> out;
  out.reserve(std::max(fixed.size(), learned.size()));
  for (std::size_t i = 0; i < shared; ++i)
    out.push_back(alpha * fixed[i] + (1.0 - alpha) * learned[i]);
  for (std::size_t i = shared; i < fixed.size(); ++i) out.push_back(fixed[i]);
  for (std::size_t i = shared; i < learned.size(); ++i) out.push_back(learned[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Projection of a point set into every camera of a rig.
// ---------------------------------------------------------------------------

struct ImagePoint {
  double u = 0.0, v = 0.0;
  double depth = 0.0;
  bool visible = false;  // in front of the camera and inside the image bounds
};

// Result indexed [camera slot][point], camera slots following rig order.
inline std::vector<std::vector<ImagePoint>> project_points(const std::vector<Vec3>& points,
                                                           const std::vector<CameraModel>& rig) {
  std::vector<std::vector<ImagePoint>> out(rig.size());
  for (std::size_t c = 0; c < rig.size(); ++c) {
    out[c].resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Projection p = project_point(rig[c], points[i]);
      ImagePoint ip;
      ip.u = p.u;
      ip.v = p.v;
      ip.depth = p.depth;
      ip.visible = inside_image(rig[c], p);
      out[c][i] = ip;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-query hybrid point bundle with its projections, built once per decoder
// layer and shared by the deformable block.
// ---------------------------------------------------------------------------

struct QueryPoints {
  std::vector<Vec3> fixed, learned, blended;
  double alpha = 1.0;
  std::vector<std::vector<ImagePoint>> projected;  // [camera slot][point]
};

struct SamplingPointSet {
  std::vector<int> camera_ids;  // rig order, aligning camera slots to ids
  std::vector<QueryPoints> queries;
};

struct HybridPointParams {
  Affine point_net;  // d -> k * 3
  Affine alpha_net;  // d -> 1
  FixedPointMode fixed_mode = FixedPointMode::faces;
};

inline HybridPointParams make_hybrid_point_params(int d, int learnable_count, std::uint64_t seed,
                                                  FixedPointMode mode = FixedPointMode::faces) {
  if (learnable_count < 1) throw std::invalid_argument("make_hybrid_point_params: need k >= 1");
  std::mt19937_64 gen(seed);
  HybridPointParams p;
  p.point_net = make_affine(learnable_count * 3, d, gen);
  p.alpha_net = make_affine(1, d, gen);
  p.fixed_mode = mode;
  return p;
}

inline SamplingPointSet build_sampling_points(const QuerySet& qs, const HybridPointParams& params,
                                              const std::vector<CameraModel>& rig) {
  if (params.alpha_net.out_dim() != 1)
    throw std::invalid_argument("build_sampling_points: alpha net must output one scalar");
  SamplingPointSet out;
  out.camera_ids.reserve(rig.size());
  for (const auto& cam : rig) out.camera_ids.push_back(cam.camera_id);
  out.queries.reserve(qs.items.size());
  for (const auto& q : qs.items) {
    QueryPoints qp;
    qp.fixed = fixed_points(q.state, params.fixed_mode);
    qp.learned = learnable_offsets(q.embedding, q.state, params.point_net);
    qp.alpha = sigmoid(params.alpha_net(q.embedding)[0]);
    qp.blended = blend_points(qp.fixed, qp.learned, qp.alpha);
    qp.projected = project_points(qp.blended, rig);
    out.queries.push_back(std::move(qp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deformable cross-attention over the pyramid. Per query and head: sampling
// offsets (full-resolution pixels, shared across levels) and logits come from
// the query embedding; the softmax runs jointly over every visible
// (camera, level, key) triple; samples are value-projected, mixed, and folded
// back through the head's output projection. A query seen by no camera
// contributes an exact zero row.
// ---------------------------------------------------------------------------

struct DeformableParams {
  int heads = 8;
  int keys = 13;    // sampling keys per head
  int levels = 4;   // pyramid levels actually used (starting at level 0)
  int width = 64;   // d
  std::vector<MatX> value_proj;  // per head: (d / heads) x channels
  std::vector<MatX> out_proj;    // per head: d x (d / heads)
  Affine offset_net;  // d -> heads * keys * 2
  Affine weight_net;  // d -> heads * keys * levels

  int head_dim() const { return width / heads; }
};

inline void validate(const DeformableParams& p) {
  if (p.heads < 1 || p.width < 1 || p.width % p.heads != 0)
    throw std::invalid_argument("DeformableParams: width must be a positive multiple of heads");
  if (p.keys < 1) throw std::invalid_argument("DeformableParams: need at least one key");
  if (p.levels < 1 || p.levels > kPyramidLevels)
    throw std::invalid_argument("DeformableParams: levels must be in [1, 4]");
  if (static_cast<int>(p.value_proj.size()) != p.heads ||
      static_cast<int>(p.out_proj.size()) != p.heads)
    throw std::invalid_argument("DeformableParams: need one value/output projection per head");
  for (int h = 0; h < p.heads; ++h) {
    if (p.value_proj[h].rows() != p.head_dim())
      throw std::invalid_argument("DeformableParams: value projection rows must equal head dim");
    if (p.out_proj[h].rows() != p.width || p.out_proj[h].cols() != p.head_dim())
      throw std::invalid_argument("DeformableParams: output projection must be width x head dim");
  }
  if (p.offset_net.out_dim() != p.heads * p.keys * 2 || p.offset_net.in_dim() != p.width)
    throw std::invalid_argument("DeformableParams: offset net must map width -> heads*keys*2");
  if (p.weight_net.out_dim() != p.heads * p.keys * p.levels || p.weight_net.in_dim() != p.width)
    throw std::invalid_argument("DeformableParams: weight net must map width -> heads*keys*levels");
}

inline DeformableParams make_deformable_params(int d, int heads, int keys, int levels, int channels,
                                               std::uint64_t seed) {
  DeformableParams p;
  p.heads = heads;
  p.keys = keys;
  p.levels = levels;
  p.width = d;
  std::mt19937_64 gen(seed);
  const double vs = 1.0 / std::sqrt(static_cast<double>(channels));
  const double os = 1.0 / std::sqrt(static_cast<double>(d / std::max(heads, 1)));
  for (int h = 0; h < heads; ++h) {
    MatX vp(d / heads, channels);
    for (int r = 0; r < vp.rows(); ++r)
      for (int c = 0; c < vp.cols(); ++c) vp(r, c) = uniform_in(gen, -vs, vs);
    p.value_proj.push_back(std::move(vp));
  }
  for (int h = 0; h < heads; ++h) {
    MatX op(d, d / heads);
    for (int r = 0; r < op.rows(); ++r)
      for (int c = 0; c < op.cols(); ++c) op(r, c) = uniform_in(gen, -os, os);
    p.out_proj.push_back(std::move(op));
  }
  p.offset_net = make_affine(heads * keys * 2, d, gen);
  p.weight_net = make_affine(heads * keys * levels, d, gen);
  validate(p);
  return p;
}

struct DeformableResult {
  MatX output;       // queries x width
  MatX weight_sums;  // queries x heads; 1 where any sample was visible, else 0
};

inline DeformableResult deformable_attention_full(const QuerySet& qs, const SamplingPointSet& pts,
                                                  const FeaturePyramid& pyr,
                                                  const DeformableParams& p) {
  validate(p);
  if (pyr.maps.empty())
    throw std::invalid_argument("deformable_attention: feature pyramid is empty");
  validate(pyr);
  if (static_cast<int>(pts.queries.size()) != qs.size())
    throw std::invalid_argument("deformable_attention: point set does not cover the query set");
  if (qs.width != p.width)
    throw std::invalid_argument("deformable_attention: query width != params width");
  if (p.value_proj.front().cols() != pyr.channels())
    throw std::invalid_argument("deformable_attention: value projection does not match channels");

  const int n = qs.size();
  const int cams = static_cast<int>(pts.camera_ids.size());
  DeformableResult res;
  res.output = MatX::Zero(n, p.width);
  res.weight_sums = MatX::Zero(n, p.heads);

  struct Pick {
    int cam_slot, level, key;
  };
  for (int q = 0; q < n; ++q) {
    const QueryPoints& qp = pts.queries[q];
    const int npts = static_cast<int>(qp.blended.size());
    if (npts == 0)
      throw std::invalid_argument("deformable_attention: query has no sampling points");
    const VecX& x = qs.items[q].embedding;
    const VecX offsets = p.offset_net(x);
    const VecX logits_all = p.weight_net(x);
    for (int h = 0; h < p.heads; ++h) {
      std::vector<Pick> picks;
      std::vector<double> logits;
      for (int c = 0; c < cams; ++c)
        for (int level = 0; level < p.levels; ++level)
          for (int k = 0; k < p.keys; ++k) {
            if (!qp.projected[c][k % npts].visible) continue;
            picks.push_back({c, level, k});
            logits.push_back(logits_all[(h * p.keys + k) * p.levels + level]);
          }
      if (picks.empty()) continue;
      double peak = logits[0];
      for (double v : logits) peak = std::max(peak, v);
      double norm = 0.0;
      for (double& v : logits) {
        v = std::exp(v - peak);
        norm += v;
      }
      // Accumulate the weighted feature mix in the fixed (camera, level, key)
      // order, then project once per head: the projections are linear, so
      // this equals projecting every sample individually.
      VecX acc_feat = VecX::Zero(pyr.channels());
      double wsum = 0.0;
      for (std::size_t i = 0; i < picks.size(); ++i) {
        const Pick& pk = picks[i];
        const double w = logits[i] / norm;
        const ImagePoint& ip = qp.projected[pk.cam_slot][pk.key % npts];
        const double du = offsets[(h * p.keys + pk.key) * 2];
        const double dv = offsets[(h * p.keys + pk.key) * 2 + 1];
        const FeatureMap& fm = pyr.map_for(pts.camera_ids[pk.cam_slot], pk.level);
        acc_feat += w * bilinear_sample(fm, ip.u + du, ip.v + dv);
        wsum += w;
      }
      res.output.row(q) += (p.out_proj[h] * (p.value_proj[h] * acc_feat)).transpose();
      res.weight_sums(q, h) = wsum;
    }
  }
  return res;
}

inline MatX deformable_attention(const QuerySet& qs, const SamplingPointSet& pts,
                                 const FeaturePyramid& pyr, const DeformableParams& p) {
  return deformable_attention_full(qs, pts, pyr, p).output;
}

// ---------------------------------------------------------------------------
// Position-wise feed-forward block with residual connection.
// ---------------------------------------------------------------------------

inline constexpr int kFfnHidden = 2048;

struct FfnWeights {
  Affine hidden;  // d -> hidden
  Affine out;     // hidden -> d
};

inline FfnWeights make_ffn_weights(int d, std::uint64_t seed, int hidden = kFfnHidden) {
  if (d < 1 || hidden < 1) throw std::invalid_argument("make_ffn_weights: dimensions must be positive");
  std::mt19937_64 gen(seed);
  FfnWeights w;
  w.hidden = make_affine(hidden, d, gen);
  w.out = make_affine(d, hidden, gen);
  return w;
}

inline MatX ffn(const MatX& x, const FfnWeights& w) {
  if (w.hidden.in_dim() != x.cols() || w.out.out_dim() != x.cols())
    throw std::invalid_argument("ffn: weight shapes do not match input width");
  return x + w.out.apply_rows(relu(w.hidden.apply_rows(x)));
}

}  // namespace cam3d
