// Command-line front end: dataset generation, the three training stages,
// evaluation, rendering and verification.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "poseforge/config.hpp"
#include "poseforge/data_io.hpp"
#include "poseforge/errors.hpp"
#include "poseforge/eval_report.hpp"
#include "poseforge/gradcheck.hpp"
#include "poseforge/model.hpp"
#include "poseforge/training.hpp"

namespace fs = std::filesystem;
using namespace poseforge;

namespace {

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig() : RunConfig::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

LoadOptions load_options(const RunConfig& cfg) {
  return {cfg.count("data.resize_width"), cfg.count("data.resize_height")};
}

DatasetSplit load_split(const RunConfig& cfg) {
  const std::string dir = cfg.text("data.dir");
  if (dir.empty()) throw ConfigError("data.dir is not set (use --data or a config file)");
  const Dataset ds = load_dataset(dir, load_options(cfg));
  return split_dataset(ds, cfg.real("data.val_ratio"), static_cast<std::uint64_t>(cfg.integer("seed")));
}

fs::path require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw StateError("missing checkpoint " + p.string() + "; " + hint);
  return p;
}

int cmd_gen(std::uint64_t seed, std::size_t classes, std::size_t views, std::size_t width, std::size_t height,
            const std::string& out) {
  const SyntheticScene scene = generate_scene({seed, classes, views, width, height});
  write_dataset(out, scene);
  std::cout << "wrote " << scene.samples.size() << " views of " << scene.manifest.name << " to " << out << "\n";
  return 0;
}

int cmd_train(int stage, const RunConfig& cfg, const fs::path& out) {
  const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  fs::create_directories(out);
  {
    std::ofstream(out / ("stage" + std::to_string(stage) + ".cfg")) << cfg.serialize();
  }
  const DatasetSplit split = load_split(cfg);
  if (stage == 1) {
    Rng rng(seed);
    PoseModel model(cfg, rng);
    const auto r = run_stage1(model, split, Stage1Config::from(cfg), out / "stage1", &std::cout);
    std::cout << "best model: " << r.best.string() << "\n";
    return 0;
  }
  if (stage == 2) {
    Rng rng(seed + 100);
    SemanticField field(field_config(cfg, split.train.manifest.classes), rng);
    const auto r = run_stage2(field, cfg, split.train, Stage2Config::from(cfg, split.train.manifest), out / "stage2",
                              &std::cout);
    std::cout << "field: " << r.field.string() << "\n";
    return 0;
  }
  const fs::path model_path = cfg.text("stage3.model_checkpoint").empty() ? out / "stage1" / "best.pfck"
                                                                         : fs::path(cfg.text("stage3.model_checkpoint"));
  const fs::path field_path = cfg.text("stage3.field_checkpoint").empty() ? out / "stage2" / "field.pfck"
                                                                         : fs::path(cfg.text("stage3.field_checkpoint"));
  require_file(model_path, "run `poseforge train --stage 1 --out " + out.string() + "` first or set stage3.model_checkpoint");
  require_file(field_path, "run `poseforge train --stage 2 --out " + out.string() + "` first or set stage3.field_checkpoint");
  auto model = load_pose_model(model_path);
  auto field = load_field(field_path);
  field->set_trainable(false);
  const auto r = run_stage3(*model, *field, split.train, Stage3Config::from(cfg, split.train.manifest), out / "stage3",
                            &std::cout);
  std::cout << "refined model: " << r.model.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& pred_path, const std::vector<std::string>& data,
             const std::string& report, const std::string& trajectory) {
  if (model_path.empty() == pred_path.empty()) throw UsageError("eval needs exactly one of --model or --pred");
  if (!pred_path.empty() && data.size() != 1) throw UsageError("--pred evaluates a single --data directory");
  std::unique_ptr<PoseModel> model;
  if (!model_path.empty()) model = load_pose_model(require_file(model_path, "train a model with `poseforge train --stage 1`"));
  std::vector<SceneMetrics> scenes;
  for (const auto& dir : data) {
    const Dataset ds = load_dataset(dir, model ? load_options(model->config()) : LoadOptions{});
    std::vector<Pose> gt;
    for (const auto& s : ds.samples) gt.push_back(s.pose);
    const std::vector<Pose> pred = model ? model->predict(ds.samples) : parse_pose_file(pred_path);
    scenes.push_back(evaluate_scene(ds.manifest.name, pred, gt));
    if (!trajectory.empty()) export_trajectory(pred, gt, trajectory, ds.manifest.name);
  }
  const std::string text = format_report(scenes);
  std::cout << text;
  if (!report.empty()) {
    if (fs::path(report).has_parent_path()) fs::create_directories(fs::path(report).parent_path());
    std::ofstream out(report);
    if (!out) throw DataError("cannot write report " + report);
    out << text;
  }
  return 0;
}

int cmd_render(const std::string& field_path, const std::string& pose_file, const std::string& data_dir,
               std::size_t stride, std::size_t samples, const std::string& out) {
  auto field = load_field(require_file(field_path, "fit a field with `poseforge train --stage 2`"));
  const Checkpoint meta = load_checkpoint(field_path);
  const SceneManifest m = read_manifest(fs::path(data_dir) / "manifest.txt");
  const RunConfig cfg = config_from_checkpoint(meta);
  const double near = meta.metadata.contains("near") ? std::stod(meta.meta("near")) : m.near;
  const double far = meta.metadata.contains("far") ? std::stod(meta.meta("far")) : m.far;
  if (samples == 0) samples = cfg.count("field.samples");
  const auto poses = parse_pose_file(pose_file);
  fs::create_directories(out);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const RenderedImage img = render_image(Camera{m.intrinsics, poses[i]}, *field, stride, near, far, samples);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    const auto labels = img.labels();
    const std::size_t h = img.logits.dim(1), w = img.logits.dim(2), c = img.logits.dim(0);
    Raster lab{w, h, 1, {}};
    for (const auto l : labels) lab.pixels.push_back(static_cast<std::uint8_t>(l));
    write_netpbm(fs::path(out) / (std::string(stem) + "_labels.pgm"), lab, false);
    write_netpbm(fs::path(out) / (std::string(stem) + "_rgb.ppm"), to_raster(img.rgb), false);
    std::ofstream csv(fs::path(out) / (std::string(stem) + "_logits.csv"));
    csv << "x,y";
    for (std::size_t k = 0; k < c; ++k) csv << ",class" << k;
    csv << "\n";
    for (std::size_t p = 0; p < h * w; ++p) {
      csv << p % w << "," << p / w;
      for (std::size_t k = 0; k < c; ++k) csv << "," << img.logits[k * h * w + p];
      csv << "\n";
    }
  }
  std::cout << "rendered " << poses.size() << " views to " << out << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  const auto results = run_gradchecks(module);
  std::cout << format_gradcheck_table(results);
  const bool ok = std::all_of(results.begin(), results.end(), [](const GradcheckResult& r) { return r.passed; });
  std::cout << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return ok ? 0 : static_cast<int>(ExitCode::numeric);
}

void write_matrix_csv(const fs::path& path, const std::vector<double>& m, std::size_t n) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out << (j ? "," : "") << m[i * n + j];
    out << "\n";
  }
}

int cmd_attmaps(const std::string& model_path, const std::string& image, const std::string& out) {
  auto model = load_pose_model(require_file(model_path, "train a model with `poseforge train --stage 1`"));
  Tensor img = from_raster(read_netpbm(image));
  const std::size_t H = img.dim(1), W = img.dim(2);
  const std::size_t Hp = (H + 31) / 32 * 32, Wp = (W + 31) / 32 * 32;
  std::vector<double> padded(3 * Hp * Wp, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) padded[(c * Hp + y) * Wp + x] = img[(c * H + y) * W + x];
  NoGradGuard no_grad;
  const auto res = model->forward(Tensor::from_data({1, 3, Hp, Wp}, std::move(padded)), Mode::eval);
  fs::create_directories(out);
  static constexpr const char* kNames[] = {"scale32", "scale16", "scale8"};
  for (std::size_t s = 0; s < 3; ++s) {
    const ScaleTrace& tr = res.scales[s];
    const auto& attn = model->former.attention[s];
    const std::size_t n = tr.grid.tokens();
    std::vector<double> logits(n * n, 0.0), weights(n * n, 0.0);
    const auto heads = static_cast<double>(tr.raw_attention.size());
    for (std::size_t h = 0; h < tr.raw_attention.size(); ++h) {
      Tensor fused = mul(tr.raw_attention[h], attn.omega_current);
      if (s > 0) {
        const ScaleTrace& prev = res.scales[s - 1];
        fused = add(fused, mul(resize_attention(prev.raw_attention[h], prev.grid, tr.grid), attn.omega_previous));
      }
      const Tensor w = softmax_rows(fused);
      for (std::size_t i = 0; i < n * n; ++i) {
        logits[i] += tr.raw_attention[h][i] / heads;
        weights[i] += w[i] / heads;
      }
    }
    write_matrix_csv(fs::path(out) / (std::string(kNames[s]) + "_logits.csv"), logits, n);
    write_matrix_csv(fs::path(out) / (std::string(kNames[s]) + "_weights.csv"), weights, n);
  }
  std::cout << "wrote attention maps for 3 scales to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poseforge: camera pose regression with a semantic scene field"};
  app.require_subcommand(1);
  app.footer(RunConfig::describe());

  std::uint64_t seed = 1;
  std::size_t classes = 3, views = 20, width = 96, height = 64;
  std::string out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic voxel dataset");
  gen->add_option("--seed", seed, "scene seed")->required();
  gen->add_option("--classes", classes, "class count including empty space")->capture_default_str();
  gen->add_option("--views", views, "number of views")->capture_default_str();
  gen->add_option("--width", width, "image width")->capture_default_str();
  gen->add_option("--height", height, "image height")->capture_default_str();
  gen->add_option("--out", out, "output directory")->required();

  int stage = 1;
  std::string config_path, data_override;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "run one training stage (resumes from <out>/stageN/last.pfck)");
  train->add_option("--stage", stage, "1 pose regression, 2 field fitting, 3 semantic refinement")
      ->required()
      ->check(CLI::Range(1, 3));
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--out", out, "run directory")->required();
  train->add_option("--data", data_override, "dataset directory (sets data.dir)");
  train->add_option("--set", overrides, "override one config key (key=value), repeatable");
  train->footer(RunConfig::describe());

  std::string model_path, pred_path, report, trajectory;
  std::vector<std::string> data_dirs;
  auto* eval = app.add_subcommand("eval", "median translation/rotation errors per scene and their average");
  eval->add_option("--model", model_path, "pose model checkpoint");
  eval->add_option("--pred", pred_path, "predicted pose file instead of a model");
  eval->add_option("--data", data_dirs, "dataset directory, repeatable (one scene each)")->required();
  eval->add_option("--report", report, "write the report here as well");
  eval->add_option("--trajectory", trajectory, "export paired trajectories and error CSVs here");

  std::string field_path, pose_file, render_data;
  std::size_t stride = 1, samples = 0;
  auto* render = app.add_subcommand("render", "render semantic and RGB images from a fitted field");
  render->add_option("--field", field_path, "field checkpoint")->required();
  render->add_option("--pose-file", pose_file, "poses to render")->required();
  render->add_option("--data", render_data, "dataset whose manifest supplies intrinsics")->required();
  render->add_option("--stride", stride, "pixel stride")->capture_default_str();
  render->add_option("--samples", samples, "samples per ray (default: the field's config)");
  render->add_option("--out", out, "output directory")->required();

  std::string module;
  auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  grad->add_option("--module", module, "tensor, backbone, poseformer, semantic-field, losses or end-to-end");

  std::string image;
  auto* att = app.add_subcommand("attmaps", "dump per-scale attention maps for one image");
  att->add_option("--model", model_path, "pose model checkpoint")->required();
  att->add_option("--image", image, "PPM image")->required();
  att->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (*gen) return cmd_gen(seed, classes, views, width, height, out);
    if (*train) {
      RunConfig cfg = load_config(config_path, overrides);
      if (!data_override.empty()) cfg.set("data.dir", data_override);
      return cmd_train(stage, cfg, out);
    }
    if (*eval) return cmd_eval(model_path, pred_path, data_dirs, report, trajectory);
    if (*render) return cmd_render(field_path, pose_file, render_data, stride, samples, out);
    if (*grad) return cmd_gradcheck(module);
    if (*att) return cmd_attmaps(model_path, image, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::usage);
  }
  return static_cast<int>(ExitCode::usage);
}
