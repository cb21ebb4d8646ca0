#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cam3d/attention.hpp"
#include "cam3d/geometry.hpp"
#include "cam3d/queries.hpp"
#include "cam3d/rng.hpp"
#include "cam3d/sampling.hpp"
#include "cam3d/temporal.hpp"
#include "cam3d/types.hpp"

namespace cam3d {

// ---------------------------------------------------------------------------
// Configuration for the whole stack. Defaults give the reference setup:
// 644 global queries, a 4 x 64 memory feeding up to 256 temporal queries,
// 6 decoder layers of width 64 with 8 heads, 7 fixed + 13 learnable sampling
// points, and a 6-camera ring rig at 704 x 256.
// ---------------------------------------------------------------------------

struct PipelineConfig {
  int decoder_layers = 6;
  int global_queries = 644;
  int temporal_budget = 256;
  int queue_length = 4;
  int queue_size = 64;
  int width = 64;   // embedding width d
  int heads = 8;
  Modulation modulation = Modulation::gaussian;
  bool double_linear_eps = true;
  bool log_space_modulation = false;
  int fixed_points_count = 7;   // 1, 7 or 9
  int learnable_points = 13;
  int sampling_keys = 13;       // deformable keys per head
  int ffn_hidden = kFfnHidden;
  std::uint64_t seed = 0;
  BevRange bev_range{-40.0, 40.0, -40.0, 40.0, 0.0, 2.0};
  double score_min = 0.3;
  double depth_conf_min = 0.3;
  int classes = 10;
  int semantic_dim = 10;
  // Synthetic scene shape.
  int cameras = 6;
  int image_width = 704, image_height = 256;
  int frames = 6;
  int boxes = 5;
  double frame_dt = 0.5;
  double noise_px = 0.0;
  double noise_depth = 0.0;
  double ego_speed = 4.0;      // m/s along heading
  double ego_yaw_rate = 0.0;   // rad/s
  double match_threshold = 1.0;  // meters, for evaluation
};

inline FixedPointMode fixed_mode_from_count(int count) {
  switch (count) {
    case 1: return FixedPointMode::center;
    case 7: return FixedPointMode::faces;
    case 9: return FixedPointMode::corners;
  }
  throw std::invalid_argument("fixed point count must be 1, 7 or 9");
}

inline void validate(const PipelineConfig& cfg) {
  if (cfg.decoder_layers < 1) throw std::invalid_argument("config: need at least one decoder layer");
  if (cfg.global_queries < 0 || cfg.temporal_budget < 0)
    throw std::invalid_argument("config: query budgets must be non-negative");
  if (cfg.queue_length < 0 || cfg.queue_size < 0)
    throw std::invalid_argument("config: queue capacities must be non-negative");
  if (cfg.width < 2 * kStateDims)
    throw std::invalid_argument("config: width must be at least " + std::to_string(2 * kStateDims));
  if (cfg.heads < 1 || cfg.width % cfg.heads != 0)
    throw std::invalid_argument("config: width must be a positive multiple of heads");
  fixed_mode_from_count(cfg.fixed_points_count);
  if (cfg.learnable_points < 1) throw std::invalid_argument("config: need at least one learnable point");
  if (cfg.sampling_keys < 1) throw std::invalid_argument("config: need at least one sampling key");
  if (cfg.ffn_hidden < 1) throw std::invalid_argument("config: ffn hidden width must be positive");
  validate(cfg.bev_range);
  if (!(cfg.score_min >= 0.0 && cfg.score_min <= 1.0) ||
      !(cfg.depth_conf_min >= 0.0 && cfg.depth_conf_min <= 1.0))
    throw std::invalid_argument("config: score thresholds must lie in [0, 1]");
  if (cfg.classes < 1 || cfg.semantic_dim < 1)
    throw std::invalid_argument("config: class and semantic dims must be positive");
  if (cfg.cameras < 1) throw std::invalid_argument("config: need at least one camera");
  if (cfg.image_width < 32 || cfg.image_height < 32 || cfg.image_width % 32 != 0 ||
      cfg.image_height % 32 != 0)
    throw std::invalid_argument("config: image size must be a positive multiple of 32");
  if (cfg.frames < 1) throw std::invalid_argument("config: need at least one frame");
  if (cfg.boxes < 0) throw std::invalid_argument("config: box count must be non-negative");
  if (!(cfg.frame_dt > 0.0)) throw std::invalid_argument("config: frame dt must be positive");
  if (cfg.noise_px < 0.0 || cfg.noise_depth < 0.0)
    throw std::invalid_argument("config: noise levels must be non-negative");
  if (!(cfg.match_threshold > 0.0))
    throw std::invalid_argument("config: match threshold must be positive");
}

// ---------------------------------------------------------------------------
// Per-layer weights and the classification/regression head.
// ---------------------------------------------------------------------------

struct HeadWeights {
  Affine cls;  // d -> classes
  Affine reg;  // d -> 9 (state delta)
};

struct RegClsOut {
  VecX logits;
  Vec9 delta;
};

inline RegClsOut reg_cls_head(const VecX& embedding, const HeadWeights& w) {
  if (w.reg.out_dim() != kStateDims)
    throw std::invalid_argument("reg_cls_head: regression head must output 9 values");
  return {w.cls(embedding), Vec9(w.reg(embedding))};
}

// Additive state refinement; yaw is re-wrapped after the update.
inline RefState apply_refinement(const RefState& s, const Vec9& delta) {
  RefState out = s;
  out.x += delta[0];
  out.y += delta[1];
  out.z += delta[2];
  out.w += delta[3];
  out.l += delta[4];
  out.h += delta[5];
  out.theta = wrap_angle(out.theta + delta[6]);
  out.vx += delta[7];
  out.vy += delta[8];
  return out;
}

struct DecoderLayerWeights {
  AttentionParams attention;
  HybridPointParams points;
  DeformableParams deformable;
  FfnWeights ffn;
  HeadWeights head;
};

struct PipelineWeights {
  EmbedWeights embed;
  std::vector<DecoderLayerWeights> layers;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t h = seed ^ (salt + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  return h;
}

inline PipelineWeights make_pipeline_weights(const PipelineConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  PipelineWeights w;
  w.embed = make_embed_weights(cfg.semantic_dim, cfg.width, mix_seed(seed, 1));
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    DecoderLayerWeights layer;
    layer.attention = make_attention_params(cfg.width, cfg.heads, cfg.modulation,
                                            mix_seed(seed, 100 + i), cfg.double_linear_eps);
    layer.attention.log_space_modulation = cfg.log_space_modulation;
    layer.points = make_hybrid_point_params(cfg.width, cfg.learnable_points, mix_seed(seed, 200 + i),
                                            fixed_mode_from_count(cfg.fixed_points_count));
    layer.deformable = make_deformable_params(cfg.width, cfg.heads, cfg.sampling_keys,
                                              kPyramidLevels, cfg.width, mix_seed(seed, 300 + i));
    layer.ffn = make_ffn_weights(cfg.width, mix_seed(seed, 400 + i), cfg.ffn_hidden);
    std::mt19937_64 gen(mix_seed(seed, 500 + i));
    layer.head.cls = make_affine(cfg.classes, cfg.width, gen);
    layer.head.reg = make_affine(kStateDims, cfg.width, gen);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

// Same shapes, every parameter zero: the decoder becomes the identity on
// states and embeddings pass through untouched by attention and ffn.
inline PipelineWeights make_zero_pipeline_weights(const PipelineConfig& cfg) {
  validate(cfg);
  PipelineWeights w;
  w.embed.mlp = Mlp2(cfg.semantic_dim + 1, cfg.width, cfg.width);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    DecoderLayerWeights layer;
    layer.attention.heads = cfg.heads;
    layer.attention.width = cfg.width;
    layer.attention.modulation = cfg.modulation;
    layer.attention.log_space_modulation = cfg.log_space_modulation;
    layer.attention.wq = Affine(cfg.width, cfg.width);
    layer.attention.wk = Affine(cfg.width, cfg.width);
    layer.attention.wv = Affine(cfg.width, cfg.width);
    layer.attention.wo = Affine(cfg.width, cfg.width);
    if (cfg.double_linear_eps)
      layer.attention.eps_net.layers = {Affine(cfg.width, cfg.width), Affine(cfg.heads, cfg.width)};
    else
      layer.attention.eps_net.layers = {Affine(cfg.heads, cfg.width)};
    layer.points.point_net = Affine(cfg.learnable_points * 3, cfg.width);
    layer.points.alpha_net = Affine(1, cfg.width);
    layer.points.fixed_mode = fixed_mode_from_count(cfg.fixed_points_count);
    layer.deformable.heads = cfg.heads;
    layer.deformable.keys = cfg.sampling_keys;
    layer.deformable.levels = kPyramidLevels;
    layer.deformable.width = cfg.width;
    const int dh = cfg.width / cfg.heads;
    for (int h = 0; h < cfg.heads; ++h) {
      layer.deformable.value_proj.push_back(MatX::Zero(dh, cfg.width));
      layer.deformable.out_proj.push_back(MatX::Zero(cfg.width, dh));
    }
    layer.deformable.offset_net = Affine(cfg.heads * cfg.sampling_keys * 2, cfg.width);
    layer.deformable.weight_net = Affine(cfg.heads * cfg.sampling_keys * kPyramidLevels, cfg.width);
    layer.ffn.hidden = Affine(cfg.ffn_hidden, cfg.width);
    layer.ffn.out = Affine(cfg.width, cfg.ffn_hidden);
    layer.head.cls = Affine(cfg.classes, cfg.width);
    layer.head.reg = Affine(kStateDims, cfg.width);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

// ---------------------------------------------------------------------------
// One decoder layer: self-attention residual, hybrid-point deformable
// cross-attention residual, feed-forward, then per-query head refinement.
// Scores refresh to sigmoid of the best class logit. When `logits_out` is
// given it receives this layer's class logits (one row per query).
// ---------------------------------------------------------------------------

inline QuerySet decoder_layer(const QuerySet& qs, const FeaturePyramid& pyramid,
                              const std::vector<CameraModel>& rig,
                              const DecoderLayerWeights& w, MatX* logits_out = nullptr) {
  MatX x = embeddings_of(qs);
  x += adaptive_self_attention(qs, w.attention);
  const QuerySet mid = with_embeddings(qs, x);
  const SamplingPointSet pts = build_sampling_points(mid, w.points, rig);
  x += deformable_attention(mid, pts, pyramid, w.deformable);
  x = ffn(x, w.ffn);

  QuerySet out(qs.width);
  out.items.reserve(qs.items.size());
  if (logits_out) logits_out->resize(qs.size(), w.head.cls.out_dim());
  for (int i = 0; i < qs.size(); ++i) {
    const RegClsOut head = reg_cls_head(x.row(i).transpose(), w.head);
    if (logits_out) logits_out->row(i) = head.logits.transpose();
    Query q;
    q.state = apply_refinement(qs.items[i].state, head.delta);
    q.embedding = x.row(i).transpose();
    q.kind = qs.items[i].kind;
    q.score = sigmoid(head.logits.maxCoeff());
    out.push(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes: a ring rig fixed in the ego frame, boxes with constant
// planar velocity, exact (optionally noised) detections, and a feature
// pyramid painted with per-class Gaussian blobs at the projected centers.
// ---------------------------------------------------------------------------

struct SceneFrame {
  int index = 0;
  double timestamp = 0.0;
  EgoMotion ego_from_prev;  // previous frame's ego coords -> this frame's
  std::vector<RefState> gt_states;  // ego frame
  std::vector<int> gt_classes;
  std::vector<Detection2D> detections;
  FeaturePyramid pyramid;
};

struct SyntheticScene {
  std::vector<CameraModel> rig;  // extrinsics in the ego frame
  std::vector<SceneFrame> frames;
};

// Ring of cameras on a 0.5 m circle at 1.5 m height, camera i looking
// outward at bearing 2*pi*i/n: +z forward, +x right, +y down.
inline std::vector<CameraModel> make_ring_rig(int cameras, int image_width, int image_height,
                                              double focal = 400.0) {
  std::vector<CameraModel> rig;
  for (int i = 0; i < cameras; ++i) {
    const double phi = 2.0 * kPi * i / cameras;
    const Vec3 forward(std::cos(phi), std::sin(phi), 0.0);
    const Vec3 right(std::sin(phi), -std::cos(phi), 0.0);
    const Vec3 down(0.0, 0.0, -1.0);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    const Vec3 center = 0.5 * forward + Vec3(0.0, 0.0, 1.5);
    rig.push_back(make_camera(i, focal, focal, image_width / 2.0, image_height / 2.0,
                              image_width, image_height, r, -(r * center)));
  }
  return rig;
}

namespace detail {

// World-frame box with constant velocity, used only during generation.
struct WorldBox {
  RefState state;  // world frame; velocity in world coordinates
  int cls = 0;
};

inline RefState box_in_ego(const WorldBox& box, double t, double ego_yaw, const Vec3& ego_pos) {
  const Vec3 cw = box.state.center() + t * Vec3(box.state.vx, box.state.vy, 0.0);
  const Mat3 rt = yaw_rotation(ego_yaw).transpose();
  const Vec3 ce = rt * (cw - ego_pos);
  RefState s;
  s.x = ce.x();
  s.y = ce.y();
  s.z = ce.z();
  s.w = box.state.w;
  s.l = box.state.l;
  s.h = box.state.h;
  s.theta = wrap_angle(box.state.theta - ego_yaw);
  const double c = std::cos(ego_yaw), sn = std::sin(ego_yaw);
  s.vx = c * box.state.vx + sn * box.state.vy;
  s.vy = -sn * box.state.vx + c * box.state.vy;
  return s;
}

}  // namespace detail

inline SyntheticScene gen_scene(std::uint64_t seed, const PipelineConfig& cfg) {
  validate(cfg);
  std::mt19937_64 gen(seed);
  SyntheticScene scene;
  scene.rig = make_ring_rig(cfg.cameras, cfg.image_width, cfg.image_height);

  // Per-class channel profiles for painting.
  std::vector<VecX> profile(cfg.classes);
  for (int k = 0; k < cfg.classes; ++k) {
    profile[k] = VecX(cfg.width);
    for (int c = 0; c < cfg.width; ++c) profile[k][c] = uniform_in(gen, 0.2, 1.0);
  }

  // Ego trajectory in the world frame.
  std::vector<double> ego_yaw(cfg.frames, 0.0);
  std::vector<Vec3> ego_pos(cfg.frames, Vec3::Zero());
  for (int k = 1; k < cfg.frames; ++k) {
    ego_yaw[k] = ego_yaw[k - 1] + cfg.ego_yaw_rate * cfg.frame_dt;
    ego_pos[k] = ego_pos[k - 1] + cfg.ego_speed * cfg.frame_dt *
                                      Vec3(std::cos(ego_yaw[k - 1]), std::sin(ego_yaw[k - 1]), 0.0);
  }

  // Boxes: resample until the whole trajectory stays visible (some camera
  // sees the center) and clear of the ego in every frame.
  std::vector<detail::WorldBox> boxes;
  for (int b = 0; b < cfg.boxes; ++b) {
    detail::WorldBox box;
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      const double bearing = uniform_in(gen, 0.0, 2.0 * kPi);
      const double radius = uniform_in(gen, 8.0, 30.0);
      box.state = RefState{};
      box.state.x = radius * std::cos(bearing);
      box.state.y = radius * std::sin(bearing);
      box.state.z = uniform_in(gen, 0.4, 1.2);
      box.state.w = uniform_in(gen, 1.6, 2.2);
      box.state.l = uniform_in(gen, 3.6, 5.0);
      box.state.h = uniform_in(gen, 1.4, 1.9);
      box.state.theta = wrap_angle(uniform_in(gen, -kPi, kPi));
      const double speed = uniform_in(gen, 0.0, 3.0);
      const double course = uniform_in(gen, 0.0, 2.0 * kPi);
      box.state.vx = speed * std::cos(course);
      box.state.vy = speed * std::sin(course);
      box.cls = uniform_index(gen, cfg.classes);
      ok = true;
      for (int k = 0; k < cfg.frames && ok; ++k) {
        const RefState s = detail::box_in_ego(box, k * cfg.frame_dt, ego_yaw[k], ego_pos[k]);
        if (s.center().head<2>().norm() < 3.0) { ok = false; break; }
        bool seen = false;
        for (const auto& cam : scene.rig)
          seen = seen || inside_image(cam, project_point(cam, s.center()));
        ok = seen;
      }
    }
    if (!ok) throw std::runtime_error("gen_scene: could not place a visible box trajectory");
    boxes.push_back(box);
  }

  // Frames: ground truth, detections, painted pyramid.
  std::vector<int> camera_ids;
  for (const auto& cam : scene.rig) camera_ids.push_back(cam.camera_id);
  for (int k = 0; k < cfg.frames; ++k) {
    SceneFrame frame;
    frame.index = k;
    frame.timestamp = k * cfg.frame_dt;
    if (k == 0) {
      frame.ego_from_prev = EgoMotion{};
    } else {
      const EgoMotion world_from_prev{yaw_rotation(ego_yaw[k - 1]), ego_pos[k - 1]};
      const EgoMotion world_from_cur{yaw_rotation(ego_yaw[k]), ego_pos[k]};
      frame.ego_from_prev = compose_ego(invert_ego(world_from_cur), world_from_prev);
    }
    frame.pyramid = make_pyramid(camera_ids, cfg.width, cfg.image_width, cfg.image_height);

    for (std::size_t b = 0; b < boxes.size(); ++b) {
      const RefState s = detail::box_in_ego(boxes[b], k * cfg.frame_dt, ego_yaw[k], ego_pos[k]);
      frame.gt_states.push_back(s);
      frame.gt_classes.push_back(boxes[b].cls);
      for (std::size_t ci = 0; ci < scene.rig.size(); ++ci) {
        const CameraModel& cam = scene.rig[ci];
        const Projection proj = project_point(cam, s.center());
        if (!inside_image(cam, proj)) continue;

        Detection2D det;
        det.camera_id = cam.camera_id;
        det.u = proj.u + cfg.noise_px * uniform_in(gen, -1.0, 1.0);
        det.v = proj.v + cfg.noise_px * uniform_in(gen, -1.0, 1.0);
        det.w = cam.fx * s.w / proj.depth;
        det.h = cam.fy * s.h / proj.depth;
        det.depth = proj.depth * (1.0 + cfg.noise_depth * uniform_in(gen, -1.0, 1.0));
        det.score = 0.75 + 0.25 * uniform01(gen);
        det.z_sem = VecX::Zero(cfg.semantic_dim);
        det.z_sem[boxes[b].cls % cfg.semantic_dim] = 1.0;
        DepthDistribution dd;
        dd.centers = {0.9 * det.depth, det.depth, 1.1 * det.depth};
        dd.probs = {0.1, 0.8, 0.1};
        det.depth_dist = std::move(dd);
        frame.detections.push_back(std::move(det));

        // Paint a class-colored blob around the projected center at every
        // level; sigma follows the projected box width.
        const Detection2D& painted = frame.detections.back();
        for (int level = 0; level < kPyramidLevels; ++level) {
          FeatureMap& fm = frame.pyramid.map_for(cam.camera_id, level);
          const double sc = fm.scale();
          const double gx = painted.u * sc - 0.5;
          const double gy = painted.v * sc - 0.5;
          const double sigma = std::max(0.8, 0.25 * painted.w * sc);
          const int x_lo = std::max(0, static_cast<int>(std::ceil(gx - 3.0 * sigma)));
          const int x_hi = std::min(fm.width - 1, static_cast<int>(std::floor(gx + 3.0 * sigma)));
          const int y_lo = std::max(0, static_cast<int>(std::ceil(gy - 3.0 * sigma)));
          const int y_hi = std::min(fm.height - 1, static_cast<int>(std::floor(gy + 3.0 * sigma)));
          for (int y = y_lo; y <= y_hi; ++y)
            for (int x = x_lo; x <= x_hi; ++x) {
              const double d2 = (x - gx) * (x - gx) + (y - gy) * (y - gy);
              const double g = std::exp(-d2 / (2.0 * sigma * sigma));
              for (int c = 0; c < fm.channels; ++c)
                fm.at(c, y, x) += static_cast<float>(profile[boxes[b].cls][c] * g);
            }
        }
      }
    }
    scene.frames.push_back(std::move(frame));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Frame runner.
// ---------------------------------------------------------------------------

struct PredictedBox {
  RefState state;
  VecX logits;
  double score = 0.0;
  QueryKind kind = QueryKind::global;
};

struct FramePrediction {
  int frame_index = 0;
  double timestamp = 0.0;
  std::vector<PredictedBox> boxes;

  int count_of(QueryKind k) const {
    int n = 0;
    for (const auto& b : boxes) n += b.kind == k ? 1 : 0;
    return n;
  }
};

struct FrameResult {
  FramePrediction prediction;
  MemoryQueue queue;
};

// Ego motions bridging each stored queue group to the next (last one to the
// current frame), built from the scene's per-frame motions.
inline std::vector<EgoMotion> ego_chain_for(const SyntheticScene& scene, const MemoryQueue& queue,
                                            int frame_index) {
  if (frame_index < 0 || frame_index >= static_cast<int>(scene.frames.size()))
    throw std::out_of_range("ego_chain_for: frame index out of range");
  const int m = static_cast<int>(queue.groups.size());
  std::vector<EgoMotion> chain(m);
  for (int i = 0; i < m; ++i) {
    const int from = queue.groups[i].frame_index;
    const int to = i + 1 < m ? queue.groups[i + 1].frame_index : frame_index;
    if (from < 0 || to <= from || to > frame_index)
      throw std::out_of_range("ego_chain_for: queue frames do not precede the current frame");
    EgoMotion e;
    for (int j = from + 1; j <= to; ++j) e = compose_ego(scene.frames[j].ego_from_prev, e);
    chain[i] = e;
  }
  return chain;
}

inline FrameResult run_frame(const SyntheticScene& scene, int frame_index, const MemoryQueue& queue,
                             const PipelineConfig& cfg, const PipelineWeights& weights) {
  validate(cfg);
  if (frame_index < 0 || frame_index >= static_cast<int>(scene.frames.size()))
    throw std::out_of_range("run_frame: frame index out of range");
  if (weights.layers.empty())
    throw std::invalid_argument("run_frame: weights hold no decoder layers");
  const SceneFrame& frame = scene.frames[frame_index];

  const QuerySet global =
      make_global_queries(cfg.global_queries, cfg.bev_range, cfg.width, cfg.seed);
  const QuerySet adaptive = make_adaptive_queries(frame.detections, scene.rig, weights.embed,
                                                  cfg.score_min, cfg.depth_conf_min);
  QuerySet temporal =
      make_temporal_queries(queue, ego_chain_for(scene, queue, frame_index), frame.timestamp);
  if (temporal.size() > cfg.temporal_budget)
    temporal.items.resize(cfg.temporal_budget);

  QuerySet composite = compose_queries(global, adaptive, temporal);
  MatX logits;
  for (const auto& layer : weights.layers)
    composite = decoder_layer(composite, frame.pyramid, scene.rig, layer, &logits);

  FrameResult out;
  out.prediction.frame_index = frame_index;
  out.prediction.timestamp = frame.timestamp;
  out.prediction.boxes.reserve(composite.items.size());
  for (int i = 0; i < composite.size(); ++i) {
    const Query& q = composite.items[i];
    out.prediction.boxes.push_back({q.state, logits.row(i).transpose(), q.score, q.kind});
  }
  out.queue = queue_push(queue, composite, frame.timestamp, frame_index);
  return out;
}

struct SceneRun {
  std::vector<FramePrediction> predictions;
  MemoryQueue queue;
};

inline SceneRun run_scene(const SyntheticScene& scene, const PipelineConfig& cfg,
                          const PipelineWeights& weights) {
  SceneRun out;
  out.queue = make_queue(cfg.queue_length, cfg.queue_size);
  for (int k = 0; k < static_cast<int>(scene.frames.size()); ++k) {
    FrameResult r = run_frame(scene, k, out.queue, cfg, weights);
    out.queue = std::move(r.queue);
    out.predictions.push_back(std::move(r.prediction));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation: greedy center-distance matching in score order.
// ---------------------------------------------------------------------------

struct Metrics {
  int truths = 0, predictions = 0, matched = 0;
  double recall = 0.0, precision = 0.0, mean_center_error = 0.0;
};

inline Metrics evaluate(const FramePrediction& pred, const std::vector<RefState>& truth,
                        double threshold = 1.0) {
  if (!(threshold > 0.0)) throw std::invalid_argument("evaluate: threshold must be positive");
  Metrics m;
  m.truths = static_cast<int>(truth.size());
  m.predictions = static_cast<int>(pred.boxes.size());

  std::vector<int> order(pred.boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pred.boxes[a].score > pred.boxes[b].score;
  });

  std::vector<bool> taken(truth.size(), false);
  double err_sum = 0.0;
  for (int idx : order) {
    const Vec3 c = pred.boxes[idx].state.center();
    int best = -1;
    double best_d = threshold;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (taken[t]) continue;
      const double d = (truth[t].center() - c).norm();
      if (d <= best_d) {
        best = static_cast<int>(t);
        best_d = d;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      ++m.matched;
      err_sum += best_d;
    }
  }
  m.recall = m.truths > 0 ? static_cast<double>(m.matched) / m.truths : 1.0;
  m.precision = m.predictions > 0 ? static_cast<double>(m.matched) / m.predictions : 1.0;
  m.mean_center_error = m.matched > 0 ? err_sum / m.matched : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Gradient checking: analytic derivatives against float64 central
// differences, relative error |a - n| / max(1, |a|, |n|).
// ---------------------------------------------------------------------------

struct GradCheckReport {
  std::string kernel;
  int trials = 0;
  double step = 0.0;
  double tolerance = 1e-5;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

namespace detail {

inline GradCheckReport check_kernel_grad(Modulation kind, int trials, double step,
                                         std::uint64_t seed) {
  GradCheckReport rep;
  rep.kernel = to_string(kind);
  rep.trials = trials;
  rep.step = step;
  std::mt19937_64 gen(seed);
  for (int t = 0; t < trials; ++t) {
    const double dist = uniform_in(gen, 0.05, 6.0);
    const double eps = uniform_in(gen, 0.3, 4.0);
    const KernelGrad g = kernel_grad(kind, dist, eps);
    const double nd = (kernel_value(kind, dist + step, eps) - kernel_value(kind, dist - step, eps)) /
                      (2.0 * step);
    const double ne = (kernel_value(kind, dist, eps + step) - kernel_value(kind, dist, eps - step)) /
                      (2.0 * step);
    rep.max_rel_err = std::max(rep.max_rel_err, grad_rel_err(g.d_dist, nd));
    rep.max_rel_err = std::max(rep.max_rel_err, grad_rel_err(g.d_eps, ne));
  }
  rep.pass = rep.max_rel_err <= rep.tolerance;
  return rep;
}

inline GradCheckReport check_softmax_grad(int trials, double step, std::uint64_t seed) {
  GradCheckReport rep;
  rep.kernel = "softmax";
  rep.trials = trials;
  rep.step = step;
  std::mt19937_64 gen(seed);
  const int n = 8;
  for (int t = 0; t < trials; ++t) {
    VecX x(n);
    for (int i = 0; i < n; ++i) x[i] = uniform_in(gen, -3.0, 3.0);
    const MatX jac = softmax_jacobian(x);
    for (int j = 0; j < n; ++j) {
      VecX hi = x, lo = x;
      hi[j] += step;
      lo[j] -= step;
      const VecX col = (softmax(hi) - softmax(lo)) / (2.0 * step);
      for (int i = 0; i < n; ++i)
        rep.max_rel_err = std::max(rep.max_rel_err, grad_rel_err(jac(i, j), col[i]));
    }
  }
  rep.pass = rep.max_rel_err <= rep.tolerance;
  return rep;
}

inline GradCheckReport check_bilinear_grad(int trials, double step, std::uint64_t seed) {
  GradCheckReport rep;
  rep.kernel = "bilinear";
  rep.trials = trials;
  rep.step = step;
  std::mt19937_64 gen(seed);
  for (int t = 0; t < trials; ++t) {
    FeatureMap fm;
    fm.camera_id = 0;
    fm.level = uniform_index(gen, kPyramidLevels);
    fm.channels = 3;
    fm.height = 5;
    fm.width = 7;
    fm.data.resize(static_cast<std::size_t>(fm.channels) * fm.height * fm.width);
    for (auto& v : fm.data) v = static_cast<float>(uniform_in(gen, 0.0, 1.0));
    // Probe interior cells at fractional offsets well clear of the
    // piecewise-linear kinks at integer grid coordinates.
    const double gx = uniform_index(gen, fm.width - 1) + uniform_in(gen, 0.1, 0.9);
    const double gy = uniform_index(gen, fm.height - 1) + uniform_in(gen, 0.1, 0.9);
    const double s = fm.scale();
    const double u = (gx + 0.5) / s;
    const double v = (gy + 0.5) / s;
    const BilinearGrad g = bilinear_sample_grad(fm, u, v);
    const VecX ndu = (bilinear_sample(fm, u + step, v) - bilinear_sample(fm, u - step, v)) /
                     (2.0 * step);
    const VecX ndv = (bilinear_sample(fm, u, v + step) - bilinear_sample(fm, u, v - step)) /
                     (2.0 * step);
    for (int c = 0; c < fm.channels; ++c) {
      rep.max_rel_err = std::max(rep.max_rel_err, grad_rel_err(g.du[c], ndu[c]));
      rep.max_rel_err = std::max(rep.max_rel_err, grad_rel_err(g.dv[c], ndv[c]));
    }
  }
  rep.pass = rep.max_rel_err <= rep.tolerance;
  return rep;
}

}  // namespace detail

inline const std::vector<std::string>& gradcheck_kernels() {
  static const std::vector<std::string> kernels{"gaussian", "laplacian", "reciprocal", "softmax",
                                               "bilinear"};
  return kernels;
}

// `step` of 0 picks the per-kernel default: 1e-5 for the smooth kernels and
// softmax, 1e-4 for bilinear (kept away from its kinks).
inline GradCheckReport check_gradients(const std::string& kernel, int trials = 100,
                                       double step = 0.0, std::uint64_t seed = 0) {
  if (trials < 1) throw std::invalid_argument("check_gradients: need at least one trial");
  if (kernel == "gaussian" || kernel == "laplacian" || kernel == "reciprocal")
    return detail::check_kernel_grad(modulation_from_string(kernel), trials,
                                     step > 0.0 ? step : 1e-5, seed);
  if (kernel == "softmax")
    return detail::check_softmax_grad(trials, step > 0.0 ? step : 1e-5, seed);
  if (kernel == "bilinear")
    return detail::check_bilinear_grad(trials, step > 0.0 ? step : 1e-4, seed);
  throw std::invalid_argument("check_gradients: unknown kernel '" + kernel + "'");
}

}  // namespace cam3d
