#include "poseforge/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "poseforge/errors.hpp"

namespace poseforge {
namespace fs = std::filesystem;

namespace {

// Shortest text that reads back to the same double.
std::string real_text(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double real_value(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) throw StateError("checkpoint holds a malformed number '" + s + "'");
  return v;
}

void write_metrics(const fs::path& path, const std::string& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StateError("cannot write " + path.string());
  out << rows;
}

std::string metric_row(std::size_t epoch, const char* split, double loss, double lr) {
  return std::to_string(epoch) + "," + split + "," + real_text(loss) + "," + real_text(lr) + "\n";
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct PoseTargets {
  Tensor x;  // [B, 3]
  Tensor q;  // [B, 4]
};

PoseTargets targets_of(const std::vector<const Sample*>& batch) {
  std::vector<double> x, q;
  for (const Sample* s : batch) {
    const Eigen::Quaterniond r = canonicalize(s->pose.rotation.normalized());
    x.insert(x.end(), {s->pose.translation.x(), s->pose.translation.y(), s->pose.translation.z()});
    q.insert(q.end(), {r.w(), r.x(), r.y(), r.z()});
  }
  return {Tensor::from_data({batch.size(), 3}, std::move(x)), Tensor::from_data({batch.size(), 4}, std::move(q))};
}

std::pair<double, double> bounds(const RunConfig& cfg, const SceneManifest& m) {
  const double near = cfg.is_set("field.near") ? cfg.real("field.near") : m.near;
  const double far = cfg.is_set("field.far") ? cfg.real("field.far") : m.far;
  if (!(far > near && near > 0.0)) throw ConfigError("ray bounds must satisfy far > near > 0");
  return {near, far};
}

}  // namespace

std::string rng_state(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream ss(state);
  ss >> rng;
  if (!ss) throw StateError("checkpoint holds a malformed random-generator state");
}

// ---- stage 1 ---------------------------------------------------------------

Stage1Config Stage1Config::from(const RunConfig& cfg) {
  Stage1Config c;
  c.epochs = cfg.count("stage1.epochs");
  c.lr = cfg.real("stage1.lr");
  c.weight_decay = cfg.real("stage1.weight_decay");
  c.batch = cfg.count("stage1.batch");
  c.plateau_factor = cfg.real("stage1.plateau_factor");
  c.plateau_patience = cfg.count("stage1.plateau_patience");
  c.early_stop = cfg.count("stage1.early_stop");
  c.checkpoint_every = cfg.count("stage1.checkpoint_every");
  c.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  if (c.batch == 0) throw ConfigError("stage1.batch must be at least 1");
  return c;
}

Stage1Result run_stage1(PoseModel& model, const DatasetSplit& data, const Stage1Config& cfg, const fs::path& dir,
                        std::ostream* log) {
  const auto& train = data.train.samples;
  const auto& val = data.val.samples;
  if (train.empty()) throw DataError("stage 1 needs at least one training view");
  fs::create_directories(dir);

  Stage1Result result;
  result.best = dir / "best.pfck";
  result.last = dir / "last.pfck";
  Adam adam(model.trainable_parameters(), {cfg.lr, 0.9, 0.999, 1e-10, cfg.weight_decay});
  PlateauScheduler plateau(cfg.plateau_factor, cfg.plateau_patience);
  EarlyStopping early(cfg.early_stop);
  Rng rng(cfg.seed + 1);
  std::size_t start = 0;
  double lr = cfg.lr;
  std::string metrics = "epoch,split,loss,lr\n";

  if (fs::exists(result.last)) {
    const Checkpoint c = load_checkpoint(result.last);
    restore(c, model.parameters());
    adam.load(c);
    set_rng_state(rng, c.meta("rng"));
    start = std::stoull(c.meta("epoch"));
    lr = real_value(c.meta("lr"));
    plateau.restore(real_value(c.meta("plateau.best")), std::stoull(c.meta("plateau.stagnant")));
    early.restore(real_value(c.meta("early.best")), std::stoull(c.meta("early.stagnant")));
    metrics = c.meta("metrics");
    // A run that hit its epoch budget may be extended; an early stop is final.
    if (c.meta("early_stopped") == "1" || start >= cfg.epochs) {
      result.early_stopped = c.meta("early_stopped") == "1";
      if (log) *log << "stage1: " << result.last.string() << " is already complete\n";
      return result;
    }
    if (log) *log << "stage1: resuming after epoch " << start << "\n";
  }
  if (val.empty() && log) *log << "warning: no validation views; early stopping monitors the training loss\n";

  auto save_last = [&](std::size_t epoch, bool finished, bool stopped) {
    Checkpoint c = model_checkpoint(model);
    adam.save(c);
    c.metadata["rng"] = rng_state(rng);
    c.metadata["epoch"] = std::to_string(epoch);
    c.metadata["lr"] = real_text(lr);
    c.metadata["plateau.best"] = real_text(plateau.best());
    c.metadata["plateau.stagnant"] = std::to_string(plateau.stagnant());
    c.metadata["early.best"] = real_text(early.best());
    c.metadata["early.stagnant"] = std::to_string(early.stagnant());
    c.metadata["metrics"] = metrics;
    c.metadata["finished"] = finished ? "1" : "0";
    c.metadata["early_stopped"] = stopped ? "1" : "0";
    save_checkpoint(result.last, c);
    write_metrics(dir / "metrics.csv", metrics);
  };

  for (std::size_t epoch = start + 1; epoch <= cfg.epochs; ++epoch) {
    adam.set_lr(lr);
    const auto order = shuffled(train.size(), rng);
    double loss_sum = 0.0, err_sum = 0.0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch) {
      std::vector<const Sample*> group;
      for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch); ++j) group.push_back(&train[order[j]]);
      const PoseTargets gt = targets_of(group);
      const auto out = model.forward(stack_images(group), Mode::train);
      const auto terms = pose_loss(out.translation, out.rotation, gt.x, gt.q, model.loss_state);
      const Tensor loss = total_loss(terms.total, Tensor(), 1.0, 0.0);
      if (!std::isfinite(loss.item())) throw NumericError("stage 1 loss became non-finite at epoch " + std::to_string(epoch));
      adam.zero_grad();
      loss.backward();
      adam.step();
      const auto n = static_cast<double>(group.size());
      loss_sum += loss.item() * n;
      err_sum += (terms.translation.item() + terms.rotation.item()) * n;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_error = err_sum / static_cast<double>(train.size());
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!val.empty()) {
      NoGradGuard no_grad;
      double sum = 0.0;
      for (std::size_t i = 0; i < val.size(); i += cfg.batch) {
        std::vector<const Sample*> group;
        for (std::size_t j = i; j < std::min(val.size(), i + cfg.batch); ++j) group.push_back(&val[j]);
        const PoseTargets gt = targets_of(group);
        const auto out = model.forward(stack_images(group), Mode::eval);
        sum += pose_loss(out.translation, out.rotation, gt.x, gt.q, model.loss_state).total.item() *
               static_cast<double>(group.size());
      }
      rec.val_loss = sum / static_cast<double>(val.size());
    }
    result.history.push_back(rec);
    metrics += metric_row(epoch, "train", rec.train_loss, lr);
    if (!val.empty()) metrics += metric_row(epoch, "val", rec.val_loss, lr);

    const double monitored = val.empty() ? rec.train_loss : rec.val_loss;
    const bool stop = early.observe(monitored);
    if (early.improved()) {
      Checkpoint c = model_checkpoint(model);
      c.metadata["epoch"] = std::to_string(epoch);
      c.metadata["monitored_loss"] = real_text(monitored);
      save_checkpoint(result.best, c);
    }
    lr = plateau.observe(monitored, lr);
    if (log && (epoch % 10 == 0 || epoch == 1 || stop || epoch == cfg.epochs)) {
      *log << "stage1 epoch " << epoch << "/" << cfg.epochs << " train " << rec.train_loss << " error "
           << rec.train_error;
      if (!val.empty()) *log << " val " << rec.val_loss;
      *log << " lr " << rec.lr << "\n";
    }
    const bool finished = stop || epoch == cfg.epochs;
    if (finished || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)) save_last(epoch, finished, stop);
    if (stop) {
      result.early_stopped = true;
      if (log) *log << "stage1: no improvement for " << cfg.early_stop << " epochs, stopping\n";
      break;
    }
  }
  if (cfg.epochs == 0) save_last(start, true, false);
  return result;
}

// ---- stage 2 ---------------------------------------------------------------

Stage2Config Stage2Config::from(const RunConfig& cfg, const SceneManifest& manifest) {
  Stage2Config c;
  c.steps = cfg.count("stage2.steps");
  c.lr = cfg.real("stage2.lr");
  c.decay = cfg.real("stage2.decay");
  c.weight_decay = cfg.real("stage2.weight_decay");
  c.ce_weight = cfg.real("stage2.ce_weight");
  c.rays = cfg.count("stage2.rays");
  c.samples = cfg.count("field.samples");
  std::tie(c.near, c.far) = bounds(cfg, manifest);
  c.checkpoint_every = cfg.count("stage2.checkpoint_every");
  c.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  if (c.rays == 0) throw ConfigError("stage2.rays must be at least 1");
  if (c.ce_weight < 0.0) throw ConfigError("stage2.ce_weight must be nonnegative");
  return c;
}

Stage2Terms stage2_loss(const SceneField& field, const RayBatch& rays, std::span<const double> rgb_targets,
                        std::span<const std::size_t> labels, double ce_weight, Mode mode, Rng* rng) {
  const std::size_t R = rays.size();
  if (rgb_targets.size() != R * 3 || labels.size() != R) {
    throw DimensionError("stage 2 targets do not match the ray count " + std::to_string(R));
  }
  const RenderResult r = render_rays(field, rays, mode, rng);
  const Tensor target = Tensor::from_data({R, 3}, {rgb_targets.begin(), rgb_targets.end()});
  Stage2Terms t;
  t.rgb = mean(square(sub(r.rgb, target)));
  t.ce = cross_entropy_rows(r.logits, labels);
  t.total = add(t.rgb, mul_scalar(t.ce, ce_weight));
  return t;
}

Stage2Result run_stage2(SemanticField& field, const RunConfig& run, const Dataset& train, const Stage2Config& cfg,
                        const fs::path& dir, std::ostream* log) {
  if (train.samples.empty()) throw DataError("stage 2 needs at least one training view");
  fs::create_directories(dir);

  // Every valid training pixel becomes one candidate ray.
  std::vector<double> origins, directions, colors;
  std::vector<std::size_t> labels;
  for (std::size_t v = 0; v < train.samples.size(); ++v) {
    const Sample& s = train.samples[v];
    if (s.labels.empty()) throw DataError("training view " + std::to_string(v) + " has no semantic labels");
    const RayBatch rays = generate_rays(Camera{train.intrinsics, s.pose}, cfg.near, cfg.far, cfg.samples, 1);
    const std::size_t n = s.width * s.height;
    for (std::size_t y = 0; y < s.valid_height; ++y)
      for (std::size_t x = 0; x < s.valid_width; ++x) {
        const std::size_t p = y * s.width + x;
        for (std::size_t c = 0; c < 3; ++c) {
          origins.push_back(rays.origins[p * 3 + c]);
          directions.push_back(rays.directions[p * 3 + c]);
          colors.push_back(s.image[c * n + p]);
        }
        labels.push_back(s.labels[p]);
      }
  }
  const std::size_t pool = labels.size();

  Stage2Result result;
  result.field = dir / "field.pfck";
  result.last = dir / "last.pfck";
  Adam adam(trainable(field.parameters()), {cfg.lr, 0.9, 0.999, 1e-10, cfg.weight_decay});
  Rng rng(cfg.seed + 2);
  std::size_t start = 0;
  std::string metrics = "epoch,split,loss,lr\n";
  if (fs::exists(result.last)) {
    const Checkpoint c = load_checkpoint(result.last);
    restore(c, field.parameters());
    adam.load(c);
    set_rng_state(rng, c.meta("rng"));
    start = std::stoull(c.meta("step"));
    metrics = c.meta("metrics");
    if (log) *log << "stage2: resuming after step " << start << "\n";
  }
  auto save = [&](std::size_t step) {
    Checkpoint c = field_checkpoint(field, run);
    adam.save(c);
    c.metadata["rng"] = rng_state(rng);
    c.metadata["step"] = std::to_string(step);
    c.metadata["metrics"] = metrics;
    save_checkpoint(result.last, c);
    write_metrics(dir / "metrics.csv", metrics);
  };

  std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
  std::vector<double> o(cfg.rays * 3), d(cfg.rays * 3), rgb(cfg.rays * 3);
  std::vector<std::size_t> lab(cfg.rays);
  for (std::size_t step = start + 1; step <= cfg.steps; ++step) {
    const double lr = exponential_lr(cfg.lr, cfg.decay, step - 1, cfg.steps);
    adam.set_lr(lr);
    for (std::size_t r = 0; r < cfg.rays; ++r) {
      const std::size_t i = pick(rng);
      for (std::size_t c = 0; c < 3; ++c) {
        o[r * 3 + c] = origins[i * 3 + c];
        d[r * 3 + c] = directions[i * 3 + c];
        rgb[r * 3 + c] = colors[i * 3 + c];
      }
      lab[r] = labels[i];
    }
    const RayBatch rays{Tensor::from_data({cfg.rays, 3}, o), Tensor::from_data({cfg.rays, 3}, d), cfg.near, cfg.far,
                        cfg.samples};
    const auto terms = stage2_loss(field, rays, rgb, lab, cfg.ce_weight, Mode::train, &rng);
    if (!std::isfinite(terms.total.item())) throw NumericError("stage 2 loss became non-finite at step " + std::to_string(step));
    adam.zero_grad();
    terms.total.backward();
    adam.step();
    result.loss.push_back(terms.total.item());
    metrics += metric_row(step, "train", terms.total.item(), lr);
    if (log && (step % 100 == 0 || step == 1 || step == cfg.steps)) {
      *log << "stage2 step " << step << "/" << cfg.steps << " loss " << terms.total.item() << " rgb "
           << terms.rgb.item() << " ce " << terms.ce.item() << " lr " << lr << "\n";
    }
    if (step == cfg.steps || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)) save(step);
  }
  if (start >= cfg.steps) save(start);
  Checkpoint c = field_checkpoint(field, run);
  c.metadata["near"] = real_text(cfg.near);
  c.metadata["far"] = real_text(cfg.far);
  save_checkpoint(result.field, c);
  return result;
}

// ---- stage 3 ---------------------------------------------------------------

Stage3Config Stage3Config::from(const RunConfig& cfg, const SceneManifest& manifest) {
  Stage3Config c;
  c.steps = cfg.count("stage3.steps");
  c.lr = cfg.real("stage3.lr");
  c.weight_decay = cfg.real("stage3.weight_decay");
  c.batch = cfg.count("stage3.batch");
  c.weights = {cfg.real("stage3.ce_weight"), cfg.real("stage3.sam_weight")};
  c.render_stride = cfg.count("stage3.render_stride");
  c.samples = cfg.count("field.samples");
  std::tie(c.near, c.far) = bounds(cfg, manifest);
  c.checkpoint_every = cfg.count("stage3.checkpoint_every");
  c.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  if (c.batch == 0) throw ConfigError("stage3.batch must be at least 1");
  if (c.render_stride == 0) throw ConfigError("stage3.render_stride must be at least 1");
  return c;
}

std::vector<std::vector<std::size_t>> reference_labels(const SceneField& field, const Dataset& data,
                                                       const Stage3Config& cfg) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& s : data.samples) {
    out.push_back(render_image(Camera{data.intrinsics, s.pose}, field, cfg.render_stride, cfg.near, cfg.far,
                               cfg.samples)
                      .labels());
  }
  return out;
}

Tensor stage3_loss(PoseModel& model, const SceneField& field, const Intrinsics& k,
                   const std::vector<const Sample*>& batch, const std::vector<const std::vector<std::size_t>*>& labels,
                   const Stage3Config& cfg) {
  const auto out = model.forward(stack_images(batch), Mode::train);
  Tensor sum;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor t = reshape(slice(out.translation, 0, b, 1), {3});
    const Tensor q = reshape(normalize_quaternion(slice(out.rotation, 0, b, 1)), {4});
    const RayBatch rays = rays_from_pose(k, cfg.render_stride, t, q, cfg.near, cfg.far, cfg.samples);
    const RenderResult r = render_rays(field, rays, Mode::eval);
    const Tensor l = semantic_loss_rows(r.logits, *labels[b], cfg.weights.ce, cfg.weights.sam);
    sum = sum.defined() ? add(sum, l) : l;
  }
  const Tensor semantic = mul_scalar(sum, 1.0 / static_cast<double>(batch.size()));
  return total_loss(Tensor(), semantic, 0.0, 1.0);
}

Stage3Result run_stage3(PoseModel& model, const SceneField& field, const Dataset& train, const Stage3Config& cfg,
                        const fs::path& dir, std::ostream* log) {
  if (train.samples.empty()) throw DataError("stage 3 needs at least one training view");
  fs::create_directories(dir);

  model.backbone.set_frozen(FreezePolicy::freeze_all_but_bn);
  // Frozen weights stop recording gradients; batch-norm affine keeps training.
  const ParamList updatable = model.trainable_parameters();
  std::vector<Tensor> frozen;
  for (const auto& p : model.backbone.parameters()) {
    const bool keep = std::any_of(updatable.begin(), updatable.end(),
                                  [&](const NamedTensor& u) { return u.tensor.node() == p.tensor.node(); });
    if (!keep && p.tensor.requires_grad()) {
      Tensor t = p.tensor;
      t.set_requires_grad(false);
      frozen.push_back(t);
    }
  }

  Stage3Result result;
  result.model = dir / "refined.pfck";
  result.last = dir / "last.pfck";
  Adam adam(updatable, {cfg.lr, 0.9, 0.999, 1e-10, cfg.weight_decay});
  Rng rng(cfg.seed + 3);
  std::size_t start = 0;
  std::string metrics = "epoch,split,loss,lr\n";
  if (fs::exists(result.last)) {
    const Checkpoint c = load_checkpoint(result.last);
    restore(c, model.parameters());
    adam.load(c);
    set_rng_state(rng, c.meta("rng"));
    start = std::stoull(c.meta("step"));
    metrics = c.meta("metrics");
    if (log) *log << "stage3: resuming after step " << start << "\n";
  }
  auto save = [&](std::size_t step) {
    Checkpoint c = model_checkpoint(model);
    adam.save(c);
    c.metadata["rng"] = rng_state(rng);
    c.metadata["step"] = std::to_string(step);
    c.metadata["metrics"] = metrics;
    save_checkpoint(result.last, c);
    write_metrics(dir / "metrics.csv", metrics);
  };

  const auto refs = reference_labels(field, train, cfg);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (std::size_t step = start + 1; step <= cfg.steps; ++step) {
    std::vector<const Sample*> batch;
    std::vector<const std::vector<std::size_t>*> labels;
    while (batch.size() < std::min(cfg.batch, train.samples.size())) {
      if (cursor == order.size()) {
        order = shuffled(train.samples.size(), rng);
        cursor = 0;
      }
      batch.push_back(&train.samples[order[cursor]]);
      labels.push_back(&refs[order[cursor]]);
      ++cursor;
    }
    const Tensor loss = stage3_loss(model, field, train.intrinsics, batch, labels, cfg);
    if (!std::isfinite(loss.item())) throw NumericError("stage 3 loss became non-finite at step " + std::to_string(step));
    adam.zero_grad();
    loss.backward();
    adam.step();
    result.loss.push_back(loss.item());
    metrics += metric_row(step, "train", loss.item(), cfg.lr);
    if (log && (step % 25 == 0 || step == 1 || step == cfg.steps)) {
      *log << "stage3 step " << step << "/" << cfg.steps << " semantic loss " << loss.item() << "\n";
    }
    if (step == cfg.steps || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)) save(step);
  }
  if (start >= cfg.steps) save(start);
  for (auto& t : frozen) t.set_requires_grad(true);

  Checkpoint c = model_checkpoint(model);
  c.metadata["refined_steps"] = std::to_string(cfg.steps);
  save_checkpoint(result.model, c);
  return result;
}

}  // namespace poseforge
