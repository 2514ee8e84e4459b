#include "poseforge/optim.hpp"

#include <cmath>

#include "poseforge/errors.hpp"

namespace poseforge {

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    for (const double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor w = params_[i].tensor;
    const auto g = w.grad();
    if (g.empty()) continue;
    auto x = w.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = g[j] + cfg_.weight_decay * x[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      x[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::save(Checkpoint& ckpt) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Shape& s = params_[i].tensor.shape();
    ckpt.add("adam.m." + params_[i].name, Tensor::from_data(s, m_[i]));
    ckpt.add("adam.v." + params_[i].name, Tensor::from_data(s, v_[i]));
  }
  ckpt.metadata["adam.steps"] = std::to_string(t_);
}

void Adam::load(const Checkpoint& ckpt) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor* m = ckpt.find("adam.m." + params_[i].name);
    const Tensor* v = ckpt.find("adam.v." + params_[i].name);
    if (m == nullptr || v == nullptr || m->numel() != m_[i].size() || v->numel() != v_[i].size()) {
      throw StateError("checkpoint lacks optimizer moments for " + params_[i].name);
    }
    m_[i] = m->values();
    v_[i] = v->values();
  }
  t_ = std::stoull(ckpt.meta("adam.steps"));
}

double PlateauScheduler::observe(double loss, double lr) {
  if (loss < best_) {
    best_ = loss;
    stagnant_ = 0;
    return lr;
  }
  if (++stagnant_ >= patience_) {
    stagnant_ = 0;
    return lr * factor_;
  }
  return lr;
}

bool EarlyStopping::observe(double loss) {
  if (loss < best_) {
    best_ = loss;
    stagnant_ = 0;
    return false;
  }
  return ++stagnant_ >= patience_;
}

double exponential_lr(double lr0, double final_factor, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return lr0;
  return lr0 * std::pow(final_factor, static_cast<double>(step) / static_cast<double>(total_steps));
}

}  // namespace poseforge
