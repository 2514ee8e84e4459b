#include "poseforge/model.hpp"

#include "poseforge/errors.hpp"

namespace poseforge {

BackboneConfig backbone_config(const RunConfig& cfg) {
  BackboneConfig b;
  const auto ch = cfg.counts("backbone.stage_channels");
  if (ch.size() != 3) throw ConfigError("backbone.stage_channels needs three values");
  std::copy(ch.begin(), ch.end(), b.stage_channels.begin());
  b.proj_dim = cfg.count("backbone.proj_dim");
  b.blocks_per_stage = cfg.count("backbone.blocks_per_stage");
  if (b.blocks_per_stage == 0) throw ConfigError("backbone.blocks_per_stage must be at least 1");
  return b;
}

PoseFormerConfig poseformer_config(const RunConfig& cfg) {
  PoseFormerConfig p;
  p.dim = cfg.count("backbone.proj_dim");
  p.attn_dim = cfg.count("poseformer.attn_dim");
  p.heads = cfg.count("poseformer.heads");
  p.ffn = cfg.flag("poseformer.ffn");
  p.ffn_hidden = cfg.count("poseformer.ffn_hidden");
  p.shared_dim = cfg.count("poseformer.shared_dim");
  p.head_hidden = cfg.counts("poseformer.head_hidden");
  p.omega_current_init = cfg.real("poseformer.omega_current_init");
  p.omega_previous_init = cfg.real("poseformer.omega_previous_init");
  p.alpha_init = cfg.real("poseformer.alpha_init");
  return p;
}

SemanticFieldConfig field_config(const RunConfig& cfg, std::size_t classes) {
  SemanticFieldConfig f;
  f.classes = classes;
  f.freq_bands = cfg.count("field.freq_bands");
  f.width = cfg.count("field.width");
  f.depth = cfg.count("field.depth");
  return f;
}

PoseModel::PoseModel(const RunConfig& cfg, Rng& rng)
    : backbone(backbone_config(cfg), rng),
      former(poseformer_config(cfg), rng),
      loss_state(cfg.real("loss.s_x_init"), cfg.real("loss.s_q_init")),
      cfg_(cfg) {}

PoseFormerOutput PoseModel::forward(const Tensor& images, Mode mode) {
  return former.forward(backbone.extract(images, mode), mode);
}

std::vector<Pose> PoseModel::predict(const std::vector<Sample>& samples, std::size_t batch) {
  NoGradGuard no_grad;
  std::vector<Pose> out;
  for (std::size_t i = 0; i < samples.size(); i += batch) {
    std::vector<const Sample*> group;
    for (std::size_t j = i; j < std::min(samples.size(), i + batch); ++j) group.push_back(&samples[j]);
    const auto pred = forward(stack_images(group), Mode::eval);
    for (std::size_t b = 0; b < group.size(); ++b) {
      Pose p;
      p.translation = Eigen::Vector3d(pred.translation[b * 3], pred.translation[b * 3 + 1], pred.translation[b * 3 + 2]);
      const Eigen::Quaterniond q(pred.rotation[b * 4], pred.rotation[b * 4 + 1], pred.rotation[b * 4 + 2],
                                 pred.rotation[b * 4 + 3]);
      p.rotation = q.norm() < 1e-12 ? Eigen::Quaterniond::Identity() : canonicalize(q.normalized());
      out.push_back(p);
    }
  }
  return out;
}

ParamList PoseModel::parameters() const {
  ParamList out = backbone.parameters();
  for (auto& p : former.parameters()) out.push_back(std::move(p));
  out.push_back({"loss.s_x", loss_state.s_x, ParamRole::weight});
  out.push_back({"loss.s_q", loss_state.s_q, ParamRole::weight});
  return out;
}

ParamList PoseModel::trainable_parameters() const {
  ParamList out = backbone.trainable_parameters();
  for (auto& p : trainable(former.parameters())) out.push_back(std::move(p));
  out.push_back({"loss.s_x", loss_state.s_x, ParamRole::weight});
  out.push_back({"loss.s_q", loss_state.s_q, ParamRole::weight});
  return out;
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
  return RunConfig::from_text(ckpt.meta("config"), "checkpoint config");
}

Checkpoint model_checkpoint(const PoseModel& model) {
  Checkpoint c;
  c.metadata["kind"] = "pose-model";
  c.metadata["config"] = model.config().serialize();
  c.add_all(model.parameters());
  return c;
}

std::unique_ptr<PoseModel> load_pose_model(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  if (c.meta("kind") != "pose-model") throw StateError(path.string() + " is not a pose-model checkpoint");
  const RunConfig cfg = config_from_checkpoint(c);
  Rng rng(0);
  auto model = std::make_unique<PoseModel>(cfg, rng);
  restore(c, model->parameters());
  return model;
}

Checkpoint field_checkpoint(const SemanticField& field, const RunConfig& cfg) {
  Checkpoint c;
  c.metadata["kind"] = "field";
  c.metadata["config"] = cfg.serialize();
  c.metadata["classes"] = std::to_string(field.num_classes());
  c.add_all(field.parameters());
  return c;
}

std::unique_ptr<SemanticField> load_field(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  if (c.meta("kind") != "field") throw StateError(path.string() + " is not a field checkpoint");
  const RunConfig cfg = config_from_checkpoint(c);
  Rng rng(0);
  auto field = std::make_unique<SemanticField>(field_config(cfg, std::stoull(c.meta("classes"))), rng);
  restore(c, field->parameters());
  return field;
}

}  // namespace poseforge
