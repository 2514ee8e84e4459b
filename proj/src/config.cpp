#include "poseforge/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "poseforge/errors.hpp"

namespace poseforge {
namespace {

constexpr ConfigKey kKeys[] = {
    {"seed", "7", "seed for initialization, shuffling and ray sampling"},
    {"data.dir", "", "dataset directory (manifest.txt, poses.txt, images/, labels/)"},
    {"data.val_ratio", "0.1", "fraction of views held out for validation"},
    {"data.resize_height", "0", "resize images to this height before padding (0 keeps the native size)"},
    {"data.resize_width", "0", "resize images to this width before padding (0 keeps the native size)"},

    {"backbone.stage_channels", "32,96,1280", "channels of the stride 8/16/32 stages"},
    {"backbone.proj_dim", "256", "width of the projected feature maps"},
    {"backbone.blocks_per_stage", "2", "conv blocks per stage"},

    {"poseformer.attn_dim", "256", "query/key width"},
    {"poseformer.heads", "1", "attention heads"},
    {"poseformer.ffn", "false", "add a feed-forward sublayer after attention"},
    {"poseformer.ffn_hidden", "512", "feed-forward hidden width"},
    {"poseformer.shared_dim", "1280", "width of the shared regression features"},
    {"poseformer.head_hidden", "512,128", "hidden widths of the translation and rotation heads"},
    {"poseformer.omega_current_init", "1", "initial weight of the current-scale attention logits"},
    {"poseformer.omega_previous_init", "0", "initial weight of the coarser-scale attention logits"},
    {"poseformer.alpha_init", "1", "initial positional-encoding scale"},

    {"loss.s_x_init", "0", "initial translation log-variance"},
    {"loss.s_q_init", "-3", "initial rotation log-variance"},

    {"field.freq_bands", "6", "positional frequency bands"},
    {"field.width", "128", "hidden width of the field MLP"},
    {"field.depth", "4", "hidden layers of the field MLP"},
    {"field.samples", "64", "samples per ray"},
    {"field.near", "0.1", "near bound in scene units (overrides the dataset manifest when set)"},
    {"field.far", "10.0", "far bound in scene units (overrides the dataset manifest when set)"},

    {"stage1.epochs", "2000", "pose-regression epochs"},
    {"stage1.lr", "1e-4", "initial learning rate"},
    {"stage1.weight_decay", "1e-4", "L2 penalty added to the gradients"},
    {"stage1.batch", "8", "images per batch"},
    {"stage1.plateau_factor", "0.95", "learning-rate factor applied on a plateau"},
    {"stage1.plateau_patience", "50", "stagnant epochs before the learning rate drops"},
    {"stage1.early_stop", "200", "stagnant epochs before training stops"},
    {"stage1.checkpoint_every", "10", "epochs between resumable checkpoints"},

    {"stage2.steps", "4000", "field-fitting steps (one ray batch each)"},
    {"stage2.lr", "1e-3", "initial learning rate"},
    {"stage2.decay", "0.1", "learning-rate factor reached at the final step (exponential)"},
    {"stage2.weight_decay", "0", "L2 penalty added to the gradients"},
    {"stage2.ce_weight", "0.04", "weight of the semantic cross-entropy against the RGB error"},
    {"stage2.rays", "1024", "rays per step"},
    {"stage2.checkpoint_every", "250", "steps between resumable checkpoints"},

    {"stage3.steps", "300", "semantic refinement steps"},
    {"stage3.lr", "1e-5", "learning rate"},
    {"stage3.weight_decay", "0", "L2 penalty added to the gradients"},
    {"stage3.batch", "8", "images per step"},
    {"stage3.ce_weight", "0.7", "cross-entropy weight of the semantic loss"},
    {"stage3.sam_weight", "0.3", "spectral-angle weight of the semantic loss"},
    {"stage3.render_stride", "8", "pixel stride of the renders compared during refinement"},
    {"stage3.model_checkpoint", "", "pose model to refine (default: <out>/stage1/best.pfck)"},
    {"stage3.field_checkpoint", "", "fitted field (default: <out>/stage2/field.pfck)"},
    {"stage3.checkpoint_every", "25", "steps between resumable checkpoints"},
};

const ConfigKey* find_key(const std::string& key) {
  for (const auto& k : kKeys) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config key " + key + ": '" + v + "' is not a valid number");
  return out;
}

}  // namespace

std::span<const ConfigKey> config_keys() { return kKeys; }

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_[k.key] = k.default_value;
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (find_key(key) == nullptr) throw ConfigError("unknown config key '" + key + "' (see --help for the list)");
  values_[key] = value;
  explicit_.insert(key);
}

const std::string& RunConfig::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const { return parse_number<double>(key, text(key)); }

std::int64_t RunConfig::integer(const std::string& key) const {
  return parse_number<std::int64_t>(key, text(key));
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw ConfigError("config key " + key + " must be nonnegative");
  return static_cast<std::size_t>(v);
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = text(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + ": '" + v + "' is not a boolean");
}

std::vector<std::size_t> RunConfig::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  std::stringstream ss(text(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto v = parse_number<std::int64_t>(key, item);
    if (v < 0) throw ConfigError("config key " + key + " must list nonnegative integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& k : kKeys) out += std::string(k.key) + " = " + values_.at(k.key) + "\n";
  return out;
}

std::string RunConfig::describe() {
  std::size_t width = 0;
  for (const auto& k : kKeys) width = std::max(width, std::string(k.key).size() + std::string(k.default_value).size() + 3);
  std::string out = "Configuration keys (key = default):\n";
  for (const auto& k : kKeys) {
    std::string head = std::string("  ") + k.key + " = " + (*k.default_value ? k.default_value : "\"\"");
    head.resize(std::max(head.size() + 2, width + 6), ' ');
    out += head + k.help + "\n";
  }
  return out;
}

}  // namespace poseforge
