#include "sparsebody/errors.hpp"
#include "sparsebody/evaluation.hpp"
#include "sparsebody/gradient_suite.hpp"
#include "sparsebody/inference.hpp"
#include "sparsebody/toy_model.hpp"
#include "sparsebody/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace sparsebody;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

BodyModel body_model(const std::string& path) {
  if (path.empty()) return make_toy_model();
  return load_body_model(path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Checkpoint {
  NetworkParams params;
  Preprocessing preprocessing = Preprocessing::kTranslate;
  std::string config;
};

Checkpoint load_checkpoint(const fs::path& path) {
  const Archive a = Archive::load(path);
  Checkpoint c;
  c.params = network_from_archive(a);
  const auto manifest = manifest_of(a);
  if (auto it = manifest.find("preprocessing"); it != manifest.end()) c.preprocessing = parse_preprocessing(it->second);
  if (a.has("config")) c.config = a.text("config");
  return c;
}

void save_checkpoint(const NetworkParams& params, const TrainConfig& config, const std::string& config_text,
                     Index best_step, const fs::path& path) {
  Archive a = checkpoint_archive(params, {{"preprocessing", to_string(config.preprocessing)},
                                          {"best_step", std::to_string(best_step)},
                                          {"config_fingerprint", fingerprint(config_text)}});
  a.put_text("config", config_text);
  a.save(path);
}

// Ground-truth errors on validation rows, for the metrics log only.
TrainingHooks monitor_hooks(const Dataset& data, const GroundTruth* truth, const BodyModel& model,
                            Preprocessing mode, std::ostream& log) {
  TrainingHooks hooks;
  if (truth) {
    hooks.monitor_keys = {"val_j_in_mm", "val_j_out_mm", "val_t_out_mm"};
    hooks.monitor = [&data, truth, &model, mode](const NetworkParams& p, const std::vector<Index>& rows) {
      const EvalReport r = evaluate(predict(p, data.subset(rows), model, mode), truth->subset(rows), model);
      return std::map<std::string, double>{{"val_j_in_mm", 1000 * r.overall.joints_in},
                                           {"val_j_out_mm", 1000 * r.overall.joints_out},
                                           {"val_t_out_mm", 1000 * r.overall.surface}};
    };
  }
  const auto keys = hooks.monitor_keys;
  hooks.on_row = [&log, keys](const MetricsRow& row) { log << metrics_line(row, keys) << '\n' << std::flush; };
  log << metrics_header(hooks.monitor_keys) << '\n';
  return hooks;
}

int run(int argc, char** argv) {
  CLI::App app{"Body pose and shape from sparse landmarks"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic landmark dataset and its ground truth");
  SynthConfig sc;
  std::string synth_out = "frames.csv", synth_truth = "truth.sba", synth_model;
  synth->add_option("--frames", sc.frames, "Frame count")->capture_default_str();
  synth->add_option("--seed", sc.seed, "Random seed")->capture_default_str();
  synth->add_option("--sequence-length", sc.sequence_length, "Frames per sequence")->capture_default_str();
  synth->add_option("--drop-rate", sc.drop_rate, "Probability that a landmark is missing")->capture_default_str();
  synth->add_option("--yaw-range", sc.yaw_range, "Random global rotation about the vertical axis (radians)")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Frame table")->capture_default_str();
  synth->add_option("--truth", synth_truth, "Ground-truth archive")->capture_default_str();
  synth->add_option("--model", synth_model, "Body model archive (default: built-in toy body)");

  // model
  auto* model_cmd = app.add_subcommand("model", "Write the built-in toy body model, its dictionary and rest mesh");
  std::string model_out = "toy.sbm", dict_out, obj_out;
  model_cmd->add_option("--out", model_out, "Model archive")->capture_default_str();
  model_cmd->add_option("--dictionary", dict_out, "Landmark dictionary text file");
  model_cmd->add_option("--obj", obj_out, "Rest mesh (OBJ)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Staged training from a config file");
  std::string cfg_path, train_data, train_truth, train_dir = "run", train_model, init_ckpt;
  int only_stage = -1;
  train_cmd->add_option("--config", cfg_path, "key = value settings (train.*, net.*, lambda.*, bounds.*)");
  train_cmd->add_option("--data", train_data, "Frame table")->required();
  train_cmd->add_option("--truth", train_truth, "Ground truth for validation metrics in the log (never trained on)");
  train_cmd->add_option("--out", train_dir, "Output directory")->capture_default_str();
  train_cmd->add_option("--model", train_model, "Body model archive (default: built-in toy body)");
  train_cmd->add_option("--stage", only_stage, "Train only this stage (needs --init for stages > 0)");
  train_cmd->add_option("--init", init_ckpt, "Checkpoint to continue from");

  // infer
  auto* infer = app.add_subcommand("infer", "Predict pose, shape and joints for every frame");
  std::string infer_ckpt, infer_data, infer_out = "predictions.csv", infer_model, mesh_dir;
  Index mesh_frames = 10;
  infer->add_option("--checkpoint", infer_ckpt, "Trained checkpoint")->required();
  infer->add_option("--data", infer_data, "Frame table")->required();
  infer->add_option("--out", infer_out, "Prediction table")->capture_default_str();
  infer->add_option("--model", infer_model, "Body model archive (default: built-in toy body)");
  infer->add_option("--meshes", mesh_dir, "Directory for per-frame OBJ meshes");
  infer->add_option("--mesh-frames", mesh_frames, "Export meshes for this many frames (-1 for all)")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Compare predictions with ground truth and/or a scan");
  std::string eval_pred, eval_truth, eval_model, eval_scan, eval_report = "report.txt", eval_table = "report.csv",
                                                                  eval_config;
  Index scan_frame = 0;
  ScanOptions scan_options;
  std::uint64_t eval_seed = 1;
  eval->add_option("--predictions", eval_pred, "Prediction table")->required();
  eval->add_option("--truth", eval_truth, "Ground-truth archive");
  eval->add_option("--scan", eval_scan, "Scan mesh or point cloud (OBJ)");
  eval->add_option("--scan-frame", scan_frame, "Prediction row compared with the scan")->capture_default_str();
  eval->add_option("--samples", scan_options.samples, "Scan points sampled")->capture_default_str();
  eval->add_option("--seed", eval_seed, "Sampling seed")->capture_default_str();
  eval->add_option("--model", eval_model, "Body model archive (default: built-in toy body)");
  eval->add_option("--config", eval_config, "Config or checkpoint file whose fingerprint goes in the report");
  eval->add_option("--report", eval_report, "Text report")->capture_default_str();
  eval->add_option("--table", eval_table, "Machine-readable report")->capture_default_str();

  // smooth
  auto* smooth = app.add_subcommand("smooth", "Temporal smoothing of a prediction table");
  std::string smooth_in, smooth_out = "smoothed.csv", smooth_model;
  double threshold = 0.1;
  bool no_jitter = false;
  smooth->add_option("--predictions", smooth_in, "Prediction table")->required();
  smooth->add_option("--out", smooth_out, "Smoothed prediction table")->capture_default_str();
  smooth->add_option("--threshold", threshold, "Jitter threshold on quaternion components")->capture_default_str();
  smooth->add_flag("--no-jitter", no_jitter, "Only average the shape over each sequence");
  smooth->add_option("--model", smooth_model, "Body model archive (default: built-in toy body)");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss and the forward model");
  int points = 20;
  std::uint64_t gc_seed = 1;
  double tolerance = 1e-4;
  gradcheck->add_option("--points", points, "Random points per check")->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "Random seed")->capture_default_str();
  gradcheck->add_option("--tolerance", tolerance, "Largest accepted relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (*synth) {
    const BodyModel model = body_model(synth_model);
    const SynthOutput s = synth_generate(model, sc);
    save_frame_table(s.data, synth_out);
    s.truth.save(synth_truth);
    std::cout << "wrote " << s.data.size() << " frames to " << synth_out << " and ground truth to " << synth_truth
              << '\n';
  } else if (*model_cmd) {
    const BodyModel model = make_toy_model();
    save_body_model(model, model_out);
    if (!dict_out.empty()) save_dictionary(model.landmarks, dict_out);
    if (!obj_out.empty()) save_obj({model.template_vertices, model.faces}, obj_out);
    std::cout << "wrote " << model_out << '\n';
  } else if (*train_cmd) {
    const BodyModel model = body_model(train_model);
    const std::string cfg_text = cfg_path.empty() ? "" : read_text(cfg_path);
    const TrainConfig config = TrainConfig::from_config(KeyValues::parse(cfg_text));
    const Dataset data = load_frame_table(train_data, model.landmarks);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
    std::optional<GroundTruth> truth;
    if (!train_truth.empty()) {
      truth = GroundTruth::load(train_truth);
      if (truth->size() != data.size()) throw DataError("ground truth and frame table have different frame counts");
    }
    fs::create_directories(train_dir);
    const std::string resolved = config.to_config().to_text();
    write_text(fs::path(train_dir) / "config.txt", resolved);
    std::ofstream log(fs::path(train_dir) / "metrics.csv");
    const TrainingHooks hooks = monitor_hooks(data, truth ? &*truth : nullptr, model, config.preprocessing, log);
    auto report = [&](Index stage, const StageResult& r) {
      const fs::path path = fs::path(train_dir) / ("stage" + std::to_string(stage) + ".ckpt");
      save_checkpoint(r.params, config, resolved, r.best_step, path);
      std::cout << "stage " << stage << ": best validation loss " << r.best_validation_loss << " at step "
                << r.best_step << ", checkpoint " << path.string() << '\n';
    };
    NetworkParams final_params;
    if (only_stage >= 0) {
      NetworkParams start;
      if (!init_ckpt.empty()) {
        start = load_checkpoint(init_ckpt).params;
      } else {
        NetworkShape shape = config.shape;
        shape.landmarks = data.landmark_count();
        shape.joints = model.joint_count();
        start = init_network(shape, 0, config.seed);
      }
      const StageResult r = train_stage(only_stage, start, data, model, config, hooks);
      report(only_stage, r);
      final_params = r.params;
    } else {
      final_params = train(data, model, config, hooks, report).params;
    }
    save_checkpoint(final_params, config, resolved, -1, fs::path(train_dir) / "final.ckpt");
  } else if (*infer) {
    const BodyModel model = body_model(infer_model);
    const Checkpoint ckpt = load_checkpoint(infer_ckpt);
    const Dataset data = load_frame_table(infer_data, model.landmarks);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
    const Prediction p = predict(ckpt.params, data, model, ckpt.preprocessing);
    save_predictions(p, infer_out);
    if (!mesh_dir.empty()) {
      fs::create_directories(mesh_dir);
      const Index count = mesh_frames < 0 ? p.size() : std::min(mesh_frames, p.size());
      for (Index f = 0; f < count; ++f) {
        const std::string name = p.sequence[static_cast<std::size_t>(f)] + "_" +
                                 std::to_string(p.frame[static_cast<std::size_t>(f)]) + ".obj";
        save_obj({p.vertices(model, f), model.faces}, fs::path(mesh_dir) / name);
      }
    }
    std::cout << "wrote " << p.size() << " predictions to " << infer_out << '\n';
  } else if (*eval) {
    if (eval_truth.empty() && eval_scan.empty()) throw CLI::ValidationError("eval needs --truth and/or --scan");
    const BodyModel model = body_model(eval_model);
    const Prediction p = load_predictions(eval_pred);
    EvalReport r;
    if (!eval_truth.empty()) r = evaluate(p, GroundTruth::load(eval_truth), model);
    if (!eval_scan.empty()) {
      if (scan_frame < 0 || scan_frame >= p.size()) throw DataError("--scan-frame is out of range");
      std::mt19937_64 rng(eval_seed);
      r.scan_to_model = scan_to_model(load_obj(eval_scan), {p.vertices(model, scan_frame), model.faces}, rng, scan_options);
    }
    r.fingerprint = eval_config.empty() ? "" : fingerprint(read_text(eval_config));
    write_text(eval_report, r.text());
    write_text(eval_table, r.table());
    std::cout << r.text();
  } else if (*smooth) {
    const BodyModel model = body_model(smooth_model);
    save_predictions(smooth_predictions(load_predictions(smooth_in), model, threshold, !no_jitter), smooth_out);
    std::cout << "wrote " << smooth_out << '\n';
  } else if (*gradcheck) {
    const GradientSuiteResult r = run_gradient_suite(make_toy_model(), points, gc_seed, tolerance,
                                                     [](const GradientCheckSummary& s) {
                                                       std::printf("%-26s %s  points %d  worst %.2e%s%s\n",
                                                                   s.name.c_str(), s.failed ? "FAIL" : "pass",
                                                                   s.points, s.worst_relative_error,
                                                                   s.failed ? "  " : "", s.first_failure.c_str());
                                                     });
    std::printf("%s in %.1f s\n", r.passed() ? "all gradients agree" : "gradient mismatch", r.seconds);
    return r.passed() ? kOk : kNumeric;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const StagingError& e) {
    std::cerr << "staging error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
