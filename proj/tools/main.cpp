// cam3d command-line tool: file-level access to the library's operations.

#include <CLI11.hpp>

#include <deque>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cam3d/cam3d.hpp"

using namespace cam3d;

namespace {

void emit_json(const json& j, const std::string& out_path) {
  if (out_path.empty())
    std::cout << j.dump(2) << "\n";
  else
    open_out(out_path, false) << j.dump(2) << "\n";
}

void emit_text(const std::string& text, const std::string& out_path) {
  std::cout << text;
  if (!out_path.empty()) open_out(out_path, false) << text;
}

json vec_to_json(const VecX& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

struct CommonOpts {
  std::string config, out;
  std::uint64_t seed = 0;
};

// Keeps every subcommand's common options alive until main returns.
std::deque<CommonOpts> common_storage;

CommonOpts* add_common(CLI::App* sub) {
  CommonOpts* opts = &common_storage.emplace_back();
  sub->add_option("--config", opts->config, "pipeline configuration JSON");
  sub->add_option("--seed", opts->seed, "random seed");
  sub->add_option("--out", opts->out, "output path (stdout when omitted)");
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic multi-camera 3D detection toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  // project: world point through one camera.
  auto* project_cmd = app.add_subcommand("project", "project a 3D point into a camera");
  auto* project_opts = add_common(project_cmd);
  std::string project_rig;
  int project_camera = 0;
  std::vector<double> project_point_xyz;
  project_cmd->add_option("--rig", project_rig, "camera rig JSON")->required();
  project_cmd->add_option("--camera", project_camera, "camera id")->required();
  project_cmd->add_option("--point", project_point_xyz, "world point x y z")
      ->expected(3)
      ->required();
  project_cmd->callback([&] {
    const auto rig = load_rig(project_rig);
    const CameraModel* cam = nullptr;
    for (const auto& c : rig)
      if (c.camera_id == project_camera) cam = &c;
    if (!cam) throw std::out_of_range("unknown camera_id " + std::to_string(project_camera));
    const Projection p =
        project_point(*cam, Vec3(project_point_xyz[0], project_point_xyz[1], project_point_xyz[2]));
    json j{{"in_front", p.in_front}, {"depth", p.depth}};
    if (p.in_front) {
      j["u"] = p.u;
      j["v"] = p.v;
      j["inside_image"] = inside_image(*cam, p);
    }
    emit_json(j, project_opts->out);
  });

  // lift: detections file to 3D states.
  auto* lift_cmd = app.add_subcommand("lift", "lift 2D detections to 3D reference states");
  auto* lift_opts = add_common(lift_cmd);
  std::string lift_rig, lift_dets;
  lift_cmd->add_option("--rig", lift_rig, "camera rig JSON")->required();
  lift_cmd->add_option("--detections", lift_dets, "detections JSON")->required();
  lift_cmd->callback([&] {
    const auto rig = load_rig(lift_rig);
    json states = json::array();
    for (const auto& det : load_detections(lift_dets)) {
      const CameraModel* cam = nullptr;
      for (const auto& c : rig)
        if (c.camera_id == det.camera_id) cam = &c;
      if (!cam) throw std::out_of_range("unknown camera_id " + std::to_string(det.camera_id));
      states.push_back(state_to_json(lift_detection(*cam, det)));
    }
    emit_json(json{{"states", states}}, lift_opts->out);
  });

  // propagate: queue dump entries through one planar ego motion.
  auto* prop_cmd = app.add_subcommand("propagate", "propagate stored states through an ego motion");
  auto* prop_opts = add_common(prop_cmd);
  std::string prop_queue;
  double prop_yaw = 0.0, prop_dt = 0.0;
  std::vector<double> prop_translation{0.0, 0.0, 0.0};
  prop_cmd->add_option("--queue", prop_queue, "memory queue dump (binary)")->required();
  prop_cmd->add_option("--yaw", prop_yaw, "ego yaw change in radians");
  prop_cmd->add_option("--translation", prop_translation, "ego translation x y z")->expected(3);
  prop_cmd->add_option("--dt", prop_dt, "elapsed seconds")->required()->check(CLI::NonNegativeNumber);
  prop_cmd->callback([&] {
    const QueueDump dump = load_queue_dump(prop_queue);
    const EgoMotion motion{yaw_rotation(prop_yaw),
                           Vec3(prop_translation[0], prop_translation[1], prop_translation[2])};
    json states = json::array();
    for (const auto& e : dump.entries)
      states.push_back(state_to_json(propagate_state(e.state, motion, prop_dt)));
    emit_json(json{{"entries", dump.entries.size()}, {"states", states}}, prop_opts->out);
  });

  // attend: run the self-attention block on a query file.
  auto* attend_cmd = app.add_subcommand("attend", "run distance-modulated self-attention");
  auto* attend_opts = add_common(attend_cmd);
  std::string attend_weights, attend_queries, attend_kind = "gaussian";
  bool attend_log_space = false;
  attend_cmd->add_option("--weights", attend_weights, "attention weights (binary)")->required();
  attend_cmd->add_option("--queries", attend_queries, "queries JSON")->required();
  attend_cmd->add_option("--modulation", attend_kind, "gaussian|laplacian|reciprocal|none");
  attend_cmd->add_flag("--log-space", attend_log_space, "add log-kernel to logits instead of multiplying");
  attend_cmd->callback([&] {
    AttentionParams params = load_attention_weights(attend_weights,
                                                    modulation_from_string(attend_kind));
    params.log_space_modulation = attend_log_space;
    const json in = parse_json_file(attend_queries);
    if (!in.contains("queries") || !in["queries"].is_array())
      throw std::runtime_error("queries file: expected a top-level 'queries' array");
    QuerySet qs(params.width);
    for (const auto& jq : in["queries"]) {
      const auto& st = jq.at("state");
      const auto& emb = jq.at("embedding");
      if (st.size() != static_cast<std::size_t>(kStateDims) ||
          emb.size() != static_cast<std::size_t>(params.width))
        throw std::runtime_error("queries file: state must have 9 entries, embedding " +
                                 std::to_string(params.width));
      Query q;
      Vec9 s;
      for (int i = 0; i < kStateDims; ++i) s[i] = st.at(i).get<double>();
      q.state = RefState::from_vector(s);
      q.embedding = VecX(params.width);
      for (int i = 0; i < params.width; ++i) q.embedding[i] = emb.at(i).get<double>();
      qs.push(std::move(q));
    }
    const MatX out = adaptive_self_attention(qs, params);
    json j;
    json rows = json::array();
    for (int i = 0; i < out.rows(); ++i) rows.push_back(vec_to_json(out.row(i).transpose()));
    j["output"] = rows;
    if (params.modulation != Modulation::none) {
      const EpsilonField eps = compute_epsilons(embeddings_of(qs), params);
      json erows = json::array();
      for (int i = 0; i < eps.m.rows(); ++i) erows.push_back(vec_to_json(eps.m.row(i).transpose()));
      j["epsilons"] = erows;
    }
    emit_json(j, attend_opts->out);
  });

  // sample: bilinear probe of a pyramid file.
  auto* sample_cmd = app.add_subcommand("sample", "bilinearly sample a feature pyramid");
  auto* sample_opts = add_common(sample_cmd);
  std::string sample_pyramid;
  int sample_camera = 0, sample_level = 0;
  std::vector<double> sample_at;
  sample_cmd->add_option("--pyramid", sample_pyramid, "feature pyramid (binary)")->required();
  sample_cmd->add_option("--camera", sample_camera, "camera id")->required();
  sample_cmd->add_option("--level", sample_level, "pyramid level 0..3")->check(CLI::Range(0, 3));
  sample_cmd->add_option("--at", sample_at, "full-resolution pixel u v")->expected(2)->required();
  sample_cmd->callback([&] {
    const FeaturePyramid pyr = load_pyramid(sample_pyramid);
    const FeatureMap& fm = pyr.map_for(sample_camera, sample_level);
    const VecX value = bilinear_sample(fm, sample_at[0], sample_at[1]);
    const BilinearGrad grad = bilinear_sample_grad(fm, sample_at[0], sample_at[1]);
    emit_json(json{{"value", vec_to_json(value)},
                   {"du", vec_to_json(grad.du)},
                   {"dv", vec_to_json(grad.dv)}},
              sample_opts->out);
  });

  // pipeline: full synthetic run.
  auto* pipe_cmd = app.add_subcommand("pipeline", "run the full decoder over a synthetic scene");
  auto* pipe_opts = add_common(pipe_cmd);
  std::string pipe_pyramid;
  bool pipe_metrics = false;
  pipe_cmd->add_option("--pyramid", pipe_pyramid,
                       "replace the generated pyramid (single-frame configs only)");
  pipe_cmd->add_flag("--emit-metrics", pipe_metrics,
                     "write per-frame metrics to stdout, one JSON object per line");
  pipe_cmd->callback([&] {
    const PipelineConfig cfg = config_or_default(pipe_opts->config);
    SyntheticScene scene = gen_scene(pipe_opts->seed, cfg);
    if (!pipe_pyramid.empty()) {
      if (cfg.frames != 1)
        throw std::invalid_argument("--pyramid requires a single-frame config (frames == 1)");
      scene.frames[0].pyramid = load_pyramid(pipe_pyramid);
    }
    const PipelineWeights weights = make_pipeline_weights(cfg, mix_seed(pipe_opts->seed, 0xC0DE));
    const SceneRun run = run_scene(scene, cfg, weights);
    if (pipe_metrics) {
      for (std::size_t k = 0; k < run.predictions.size(); ++k) {
        const Metrics m =
            evaluate(run.predictions[k], scene.frames[k].gt_states, cfg.match_threshold);
        std::cout << metrics_to_json(static_cast<int>(k), m).dump() << "\n";
      }
      if (!pipe_opts->out.empty())
        emit_json(predictions_to_json(run.predictions), pipe_opts->out);
    } else {
      emit_json(predictions_to_json(run.predictions), pipe_opts->out);
    }
  });

  // verify: the acceptance checks.
  auto* verify_cmd = app.add_subcommand("verify", "run the self-verification checks");
  auto* verify_opts = add_common(verify_cmd);
  verify_cmd->callback([&] {
    std::ostringstream os;
    const bool ok = verify::run_all(os);
    emit_text(os.str(), verify_opts->out);
    if (!ok) exit_code = 1;
  });

  // gradcheck: analytic vs numeric derivatives.
  auto* grad_cmd = app.add_subcommand("gradcheck", "check analytic gradients");
  auto* grad_opts = add_common(grad_cmd);
  std::string grad_kernel = "all";
  int grad_trials = 100;
  double grad_step = 0.0;
  grad_cmd->add_option("--kernel", grad_kernel,
                       "gaussian|laplacian|reciprocal|softmax|bilinear|all");
  grad_cmd->add_option("--trials", grad_trials, "probes per kernel")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--step", grad_step, "central difference step (0 = per-kernel default)");
  grad_cmd->callback([&] {
    std::vector<std::string> kernels;
    if (grad_kernel == "all")
      kernels = gradcheck_kernels();
    else
      kernels.push_back(grad_kernel);
    std::ostringstream os;
    bool ok = true;
    for (const auto& k : kernels) {
      const GradCheckReport rep = check_gradients(k, grad_trials, grad_step, grad_opts->seed);
      os << rep.kernel << ": max rel err " << rep.max_rel_err << " (tol " << rep.tolerance
         << ", " << rep.trials << " trials, step " << rep.step << ") "
         << (rep.pass ? "PASS" : "FAIL") << "\n";
      ok = ok && rep.pass;
    }
    emit_text(os.str(), grad_opts->out);
    if (!ok) exit_code = 1;
  });

  // gen-scene: write a synthetic scene to a directory.
  auto* gen_cmd = app.add_subcommand("gen-scene", "generate a synthetic scene to a directory");
  auto* gen_opts = add_common(gen_cmd);
  gen_cmd->callback([&] {
    if (gen_opts->out.empty())
      throw std::invalid_argument("gen-scene needs --out <directory>");
    const PipelineConfig cfg = config_or_default(gen_opts->config);
    const SyntheticScene scene = gen_scene(gen_opts->seed, cfg);
    const std::filesystem::path dir(gen_opts->out);
    std::filesystem::create_directories(dir);
    save_rig(scene.rig, (dir / "rig.json").string());
    open_out((dir / "config.json").string(), false) << config_to_json(cfg).dump(2) << "\n";
    open_out((dir / "gt.json").string(), false) << scene_gt_to_json(scene).dump(2) << "\n";
    for (const auto& frame : scene.frames) {
      const std::string k = std::to_string(frame.index);
      save_detections(frame.detections, (dir / ("detections_" + k + ".json")).string());
      save_pyramid(frame.pyramid, (dir / ("pyramid_" + k + ".bin")).string());
    }
    std::cout << "wrote " << scene.frames.size() << " frames to " << dir.string() << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exit_code;
}
