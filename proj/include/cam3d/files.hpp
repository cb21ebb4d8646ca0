#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cam3d/attention.hpp"
#include "cam3d/geometry.hpp"
#include "cam3d/pipeline.hpp"
#include "cam3d/sampling.hpp"
#include "cam3d/temporal.hpp"

// File formats. JSON carries configuration, rigs, detections and outputs;
// three little-endian binary formats carry bulk data:
//   CAM3DMQ1  memory queue dump
//   CAM3DWT1  attention weights
//   CAM3DFM1  feature pyramid
// Binary payloads are float32; in-memory math stays double.

namespace cam3d {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Little-endian primitives.
// ---------------------------------------------------------------------------

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("binary read: unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline void write_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline void expect_magic(std::istream& is, const char (&magic)[9]) {
  char got[8];
  is.read(got, 8);
  if (!is || std::string(got, 8) != std::string(magic, 8))
    throw std::runtime_error(std::string("binary read: bad magic, expected ") + magic);
}

inline std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

inline json parse_json_file(const std::string& path) {
  std::ifstream is = open_in(path, false);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("cannot parse " + path + ": " + e.what());
  }
  return j;
}

// ---------------------------------------------------------------------------
// Camera rigs (JSON).
// ---------------------------------------------------------------------------

inline json camera_to_json(const CameraModel& cam) {
  json j;
  j["id"] = cam.camera_id;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(cam.rotation(r, c));
  j["rotation"] = rot;
  j["translation"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
  return j;
}

inline CameraModel camera_from_json(const json& j) {
  try {
    const auto rot = j.at("rotation");
    const auto tr = j.at("translation");
    if (rot.size() != 9 || tr.size() != 3)
      throw std::runtime_error("camera: rotation must have 9 entries, translation 3");
    Mat3 r;
    for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = rot.at(i).get<double>();
    const Vec3 t(tr.at(0).get<double>(), tr.at(1).get<double>(), tr.at(2).get<double>());
    return make_camera(j.at("id").get<int>(), j.at("fx").get<double>(), j.at("fy").get<double>(),
                       j.at("cx").get<double>(), j.at("cy").get<double>(),
                       j.at("width").get<int>(), j.at("height").get<int>(), r, t);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("camera: malformed JSON: ") + e.what());
  }
}

inline json rig_to_json(const std::vector<CameraModel>& rig) {
  json cams = json::array();
  for (const auto& c : rig) cams.push_back(camera_to_json(c));
  return json{{"cameras", cams}};
}

inline std::vector<CameraModel> rig_from_json(const json& j) {
  if (!j.contains("cameras") || !j["cameras"].is_array())
    throw std::runtime_error("rig: expected a top-level 'cameras' array");
  std::vector<CameraModel> rig;
  for (const auto& c : j["cameras"]) rig.push_back(camera_from_json(c));
  return rig;
}

inline void save_rig(const std::vector<CameraModel>& rig, const std::string& path) {
  open_out(path, false) << rig_to_json(rig).dump(2) << "\n";
}

inline std::vector<CameraModel> load_rig(const std::string& path) {
  return rig_from_json(parse_json_file(path));
}

// ---------------------------------------------------------------------------
// Detections (JSON).
// ---------------------------------------------------------------------------

inline json detection_to_json(const Detection2D& det) {
  json j;
  j["camera_id"] = det.camera_id;
  j["u"] = det.u;
  j["v"] = det.v;
  j["w"] = det.w;
  j["h"] = det.h;
  j["depth"] = det.depth;
  j["score"] = det.score;
  json sem = json::array();
  for (int i = 0; i < det.z_sem.size(); ++i) sem.push_back(det.z_sem[i]);
  j["z_sem"] = sem;
  if (det.depth_dist) {
    j["depth_dist"] = {{"centers", det.depth_dist->centers}, {"probs", det.depth_dist->probs}};
  }
  return j;
}

inline Detection2D detection_from_json(const json& j) {
  Detection2D det;
  try {
    det.camera_id = j.at("camera_id").get<int>();
    det.u = j.at("u").get<double>();
    det.v = j.at("v").get<double>();
    det.w = j.at("w").get<double>();
    det.h = j.at("h").get<double>();
    det.depth = j.at("depth").get<double>();
    det.score = j.at("score").get<double>();
    const auto& sem = j.at("z_sem");
    det.z_sem = VecX(sem.size());
    for (std::size_t i = 0; i < sem.size(); ++i) det.z_sem[i] = sem.at(i).get<double>();
    if (j.contains("depth_dist")) {
      DepthDistribution dd;
      dd.centers = j["depth_dist"].at("centers").get<std::vector<double>>();
      dd.probs = j["depth_dist"].at("probs").get<std::vector<double>>();
      det.depth_dist = std::move(dd);
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("detection: malformed JSON: ") + e.what());
  }
  validate(det);
  return det;
}

inline json detections_to_json(const std::vector<Detection2D>& dets) {
  json arr = json::array();
  for (const auto& d : dets) arr.push_back(detection_to_json(d));
  return json{{"detections", arr}};
}

inline std::vector<Detection2D> detections_from_json(const json& j) {
  if (!j.contains("detections") || !j["detections"].is_array())
    throw std::runtime_error("detections: expected a top-level 'detections' array");
  std::vector<Detection2D> dets;
  for (const auto& d : j["detections"]) dets.push_back(detection_from_json(d));
  return dets;
}

inline void save_detections(const std::vector<Detection2D>& dets, const std::string& path) {
  open_out(path, false) << detections_to_json(dets).dump(2) << "\n";
}

inline std::vector<Detection2D> load_detections(const std::string& path) {
  return detections_from_json(parse_json_file(path));
}

// ---------------------------------------------------------------------------
// Memory queue dump (CAM3DMQ1). Header: u32 length, per_frame, width. Body:
// entries oldest group first, each as 9 x f64 state, width x f32 embedding,
// f64 timestamp. Group boundaries are not stored; the reader returns the
// flat entry list.
// ---------------------------------------------------------------------------

inline constexpr char kQueueMagic[9] = "CAM3DMQ1";

inline void save_queue(const MemoryQueue& q, std::ostream& os, int width) {
  write_magic(os, kQueueMagic);
  write_u32(os, static_cast<std::uint32_t>(q.length));
  write_u32(os, static_cast<std::uint32_t>(q.per_frame));
  write_u32(os, static_cast<std::uint32_t>(width));
  for (const auto& g : q.groups)
    for (const auto& e : g.entries) {
      if (e.embedding.size() != width)
        throw std::invalid_argument("save_queue: entry width does not match header");
      const Vec9 s = e.state.to_vector();
      for (int i = 0; i < kStateDims; ++i) write_f64(os, s[i]);
      for (int i = 0; i < width; ++i) write_f32(os, static_cast<float>(e.embedding[i]));
      write_f64(os, e.timestamp);
    }
}

inline void save_queue(const MemoryQueue& q, const std::string& path, int width) {
  auto os = open_out(path, true);
  save_queue(q, os, width);
}

struct QueueDump {
  std::uint32_t length = 0, per_frame = 0, width = 0;
  std::vector<MemoryEntry> entries;  // flat, oldest group first
};

inline QueueDump load_queue_dump(std::istream& is) {
  expect_magic(is, kQueueMagic);
  QueueDump dump;
  dump.length = read_u32(is);
  dump.per_frame = read_u32(is);
  dump.width = read_u32(is);
  while (true) {
    is.peek();
    if (is.eof()) break;
    MemoryEntry e;
    Vec9 s;
    for (int i = 0; i < kStateDims; ++i) s[i] = read_f64(is);
    e.state = RefState::from_vector(s);
    e.embedding = VecX(dump.width);
    for (std::uint32_t i = 0; i < dump.width; ++i) e.embedding[i] = read_f32(is);
    e.timestamp = read_f64(is);
    dump.entries.push_back(std::move(e));
  }
  return dump;
}

inline QueueDump load_queue_dump(const std::string& path) {
  auto is = open_in(path, true);
  return load_queue_dump(is);
}

// ---------------------------------------------------------------------------
// Attention weights (CAM3DWT1). Header: u32 width, heads. Body: the four
// width x width projections then the two epsilon-net layers (width -> width,
// width -> heads); each affine as row-major f32 weights then f32 biases.
// Only the two-layer epsilon form is serializable.
// ---------------------------------------------------------------------------

inline constexpr char kWeightsMagic[9] = "CAM3DWT1";

inline void write_affine_f32(std::ostream& os, const Affine& a) {
  for (int r = 0; r < a.weight.rows(); ++r)
    for (int c = 0; c < a.weight.cols(); ++c) write_f32(os, static_cast<float>(a.weight(r, c)));
  for (int i = 0; i < a.bias.size(); ++i) write_f32(os, static_cast<float>(a.bias[i]));
}

inline Affine read_affine_f32(std::istream& is, int out, int in) {
  Affine a(out, in);
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c) a.weight(r, c) = read_f32(is);
  for (int i = 0; i < out; ++i) a.bias[i] = read_f32(is);
  return a;
}

inline void save_attention_weights(const AttentionParams& p, std::ostream& os) {
  validate(p);
  if (p.eps_net.layers.size() != 2 || p.eps_net.layers[0].out_dim() != p.width)
    throw std::invalid_argument(
        "save_attention_weights: only the two-layer epsilon net is serializable");
  write_magic(os, kWeightsMagic);
  write_u32(os, static_cast<std::uint32_t>(p.width));
  write_u32(os, static_cast<std::uint32_t>(p.heads));
  write_affine_f32(os, p.wq);
  write_affine_f32(os, p.wk);
  write_affine_f32(os, p.wv);
  write_affine_f32(os, p.wo);
  write_affine_f32(os, p.eps_net.layers[0]);
  write_affine_f32(os, p.eps_net.layers[1]);
}

inline void save_attention_weights(const AttentionParams& p, const std::string& path) {
  auto os = open_out(path, true);
  save_attention_weights(p, os);
}

inline AttentionParams load_attention_weights(std::istream& is,
                                              Modulation kind = Modulation::gaussian) {
  expect_magic(is, kWeightsMagic);
  AttentionParams p;
  p.width = static_cast<int>(read_u32(is));
  p.heads = static_cast<int>(read_u32(is));
  if (p.heads < 1 || p.width < 1 || p.width % p.heads != 0)
    throw std::runtime_error("load_attention_weights: invalid header dimensions");
  p.modulation = kind;
  p.wq = read_affine_f32(is, p.width, p.width);
  p.wk = read_affine_f32(is, p.width, p.width);
  p.wv = read_affine_f32(is, p.width, p.width);
  p.wo = read_affine_f32(is, p.width, p.width);
  p.eps_net.layers = {read_affine_f32(is, p.width, p.width),
                      read_affine_f32(is, p.heads, p.width)};
  return p;
}

inline AttentionParams load_attention_weights(const std::string& path,
                                              Modulation kind = Modulation::gaussian) {
  auto is = open_in(path, true);
  return load_attention_weights(is, kind);
}

// ---------------------------------------------------------------------------
// Feature pyramid (CAM3DFM1). Header: u32 map count. Per map: u32 camera_id,
// level code (0..3), channels, height, width, then channel-major f32 data.
// ---------------------------------------------------------------------------

inline constexpr char kPyramidMagic[9] = "CAM3DFM1";

inline void save_pyramid(const FeaturePyramid& pyr, std::ostream& os) {
  validate(pyr);
  write_magic(os, kPyramidMagic);
  write_u32(os, static_cast<std::uint32_t>(pyr.maps.size()));
  for (const auto& m : pyr.maps) {
    write_u32(os, static_cast<std::uint32_t>(m.camera_id));
    write_u32(os, static_cast<std::uint32_t>(m.level));
    write_u32(os, static_cast<std::uint32_t>(m.channels));
    write_u32(os, static_cast<std::uint32_t>(m.height));
    write_u32(os, static_cast<std::uint32_t>(m.width));
    for (float v : m.data) write_f32(os, v);
  }
}

inline void save_pyramid(const FeaturePyramid& pyr, const std::string& path) {
  auto os = open_out(path, true);
  save_pyramid(pyr, os);
}

inline FeaturePyramid load_pyramid(std::istream& is) {
  expect_magic(is, kPyramidMagic);
  FeaturePyramid pyr;
  const std::uint32_t count = read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureMap m;
    m.camera_id = static_cast<int>(read_u32(is));
    m.level = static_cast<int>(read_u32(is));
    if (m.level < 0 || m.level >= kPyramidLevels)
      throw std::runtime_error("load_pyramid: level code out of range");
    m.channels = static_cast<int>(read_u32(is));
    m.height = static_cast<int>(read_u32(is));
    m.width = static_cast<int>(read_u32(is));
    if (m.channels < 1 || m.height < 1 || m.width < 1)
      throw std::runtime_error("load_pyramid: invalid map dimensions");
    m.data.resize(static_cast<std::size_t>(m.channels) * m.height * m.width);
    for (auto& v : m.data) v = read_f32(is);
    if (m.level == 0 && pyr.nominal_width == 0) {
      pyr.nominal_width = m.width * 4;
      pyr.nominal_height = m.height * 4;
    }
    pyr.maps.push_back(std::move(m));
  }
  validate(pyr);
  return pyr;
}

inline FeaturePyramid load_pyramid(const std::string& path) {
  auto is = open_in(path, true);
  return load_pyramid(is);
}

// ---------------------------------------------------------------------------
// Pipeline configuration (JSON). Absent keys keep their defaults; unknown
// keys are rejected.
// ---------------------------------------------------------------------------

inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["decoder_layers"] = c.decoder_layers;
  j["global_queries"] = c.global_queries;
  j["temporal_budget"] = c.temporal_budget;
  j["queue_length"] = c.queue_length;
  j["queue_size"] = c.queue_size;
  j["width"] = c.width;
  j["heads"] = c.heads;
  j["modulation"] = to_string(c.modulation);
  j["double_linear_eps"] = c.double_linear_eps;
  j["log_space_modulation"] = c.log_space_modulation;
  j["fixed_points_count"] = c.fixed_points_count;
  j["learnable_points"] = c.learnable_points;
  j["sampling_keys"] = c.sampling_keys;
  j["ffn_hidden"] = c.ffn_hidden;
  j["seed"] = c.seed;
  j["bev_range"] = {{"x", {c.bev_range.x_min, c.bev_range.x_max}},
                    {"y", {c.bev_range.y_min, c.bev_range.y_max}},
                    {"z", {c.bev_range.z_min, c.bev_range.z_max}}};
  j["score_min"] = c.score_min;
  j["depth_conf_min"] = c.depth_conf_min;
  j["classes"] = c.classes;
  j["semantic_dim"] = c.semantic_dim;
  j["cameras"] = c.cameras;
  j["image_width"] = c.image_width;
  j["image_height"] = c.image_height;
  j["frames"] = c.frames;
  j["boxes"] = c.boxes;
  j["frame_dt"] = c.frame_dt;
  j["noise_px"] = c.noise_px;
  j["noise_depth"] = c.noise_depth;
  j["ego_speed"] = c.ego_speed;
  j["ego_yaw_rate"] = c.ego_yaw_rate;
  j["match_threshold"] = c.match_threshold;
  return j;
}

inline PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  if (!j.is_object()) throw std::runtime_error("config: expected a JSON object");
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "decoder_layers") c.decoder_layers = val.get<int>();
      else if (key == "global_queries") c.global_queries = val.get<int>();
      else if (key == "temporal_budget") c.temporal_budget = val.get<int>();
      else if (key == "queue_length") c.queue_length = val.get<int>();
      else if (key == "queue_size") c.queue_size = val.get<int>();
      else if (key == "width") c.width = val.get<int>();
      else if (key == "heads") c.heads = val.get<int>();
      else if (key == "modulation") c.modulation = modulation_from_string(val.get<std::string>());
      else if (key == "double_linear_eps") c.double_linear_eps = val.get<bool>();
      else if (key == "log_space_modulation") c.log_space_modulation = val.get<bool>();
      else if (key == "fixed_points_count") c.fixed_points_count = val.get<int>();
      else if (key == "learnable_points") c.learnable_points = val.get<int>();
      else if (key == "sampling_keys") c.sampling_keys = val.get<int>();
      else if (key == "ffn_hidden") c.ffn_hidden = val.get<int>();
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "bev_range") {
        c.bev_range.x_min = val.at("x").at(0).get<double>();
        c.bev_range.x_max = val.at("x").at(1).get<double>();
        c.bev_range.y_min = val.at("y").at(0).get<double>();
        c.bev_range.y_max = val.at("y").at(1).get<double>();
        c.bev_range.z_min = val.at("z").at(0).get<double>();
        c.bev_range.z_max = val.at("z").at(1).get<double>();
      }
      else if (key == "score_min") c.score_min = val.get<double>();
      else if (key == "depth_conf_min") c.depth_conf_min = val.get<double>();
      else if (key == "classes") c.classes = val.get<int>();
      else if (key == "semantic_dim") c.semantic_dim = val.get<int>();
      else if (key == "cameras") c.cameras = val.get<int>();
      else if (key == "image_width") c.image_width = val.get<int>();
      else if (key == "image_height") c.image_height = val.get<int>();
      else if (key == "frames") c.frames = val.get<int>();
      else if (key == "boxes") c.boxes = val.get<int>();
      else if (key == "frame_dt") c.frame_dt = val.get<double>();
      else if (key == "noise_px") c.noise_px = val.get<double>();
      else if (key == "noise_depth") c.noise_depth = val.get<double>();
      else if (key == "ego_speed") c.ego_speed = val.get<double>();
      else if (key == "ego_yaw_rate") c.ego_yaw_rate = val.get<double>();
      else if (key == "match_threshold") c.match_threshold = val.get<double>();
      else throw std::runtime_error("config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("config: malformed JSON: ") + e.what());
  }
  validate(c);
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  return config_from_json(parse_json_file(path));
}

// ---------------------------------------------------------------------------
// Outputs: predictions, scene ground truth, metrics.
// ---------------------------------------------------------------------------

inline json state_to_json(const RefState& s) {
  const Vec9 v = s.to_vector();
  json arr = json::array();
  for (int i = 0; i < kStateDims; ++i) arr.push_back(v[i]);
  return arr;
}

inline json prediction_to_json(const FramePrediction& pred) {
  json boxes = json::array();
  for (const auto& b : pred.boxes) {
    json logits = json::array();
    for (int i = 0; i < b.logits.size(); ++i) logits.push_back(b.logits[i]);
    boxes.push_back({{"state", state_to_json(b.state)},
                     {"score", b.score},
                     {"kind", to_string(b.kind)},
                     {"logits", logits}});
  }
  return json{{"frame_index", pred.frame_index},
              {"timestamp", pred.timestamp},
              {"boxes", boxes}};
}

inline json predictions_to_json(const std::vector<FramePrediction>& preds) {
  json frames = json::array();
  for (const auto& p : preds) frames.push_back(prediction_to_json(p));
  return json{{"frames", frames}};
}

inline json scene_gt_to_json(const SyntheticScene& scene) {
  json frames = json::array();
  for (const auto& f : scene.frames) {
    json states = json::array();
    for (const auto& s : f.gt_states) states.push_back(state_to_json(s));
    json rot = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot.push_back(f.ego_from_prev.rotation(r, c));
    frames.push_back({{"index", f.index},
                      {"timestamp", f.timestamp},
                      {"ego_rotation", rot},
                      {"ego_translation",
                       {f.ego_from_prev.translation.x(), f.ego_from_prev.translation.y(),
                        f.ego_from_prev.translation.z()}},
                      {"states", states},
                      {"classes", f.gt_classes}});
  }
  return json{{"frames", frames}};
}

// One compact JSON object per frame — suitable for line-delimited output.
inline json metrics_to_json(int frame_index, const Metrics& m) {
  return json{{"frame", frame_index},        {"truths", m.truths},
              {"predictions", m.predictions}, {"matched", m.matched},
              {"recall", m.recall},           {"precision", m.precision},
              {"mean_center_error", m.mean_center_error}};
}

}  // namespace cam3d
