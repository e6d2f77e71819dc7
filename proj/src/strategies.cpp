#include "minibert/strategies.hpp"

#include <cmath>

#include "minibert/errors.hpp"

namespace minibert {

std::string to_string(Preset p) {
  switch (p) {
    case Preset::NA: return "NA";
    case Preset::STL: return "STL";
    case Preset::STL_DFT: return "STL+DFT";
    case Preset::STL_GU: return "STL+GU";
    case Preset::ALL: return "ALL";
  }
  return "?";
}

Preset parse_preset(const std::string& name) {
  if (name == "NA") return Preset::NA;
  if (name == "STL") return Preset::STL;
  if (name == "STL+DFT") return Preset::STL_DFT;
  if (name == "STL+GU") return Preset::STL_GU;
  if (name == "ALL") return Preset::ALL;
  throw ParameterError("unknown strategy preset '" + name + "' (expected NA, STL, STL+DFT, STL+GU, ALL)");
}

void TrainingPlan::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterError("training plan: " + msg); };
  if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
  if (!(warmup_proportion > 0.0 && warmup_proportion < 1.0)) fail("warmup_proportion must be in (0,1)");
  if (total_steps < 0) fail("total_steps must not be negative");
  if (!(discrimination_rate > 0.0 && discrimination_rate <= 1.0)) fail("discrimination_rate must be in (0,1]");
  if (!(unfreeze_interval > 0.0)) fail("unfreeze_interval must be positive");
  if (gradual_unfreeze && freeze_last_k) fail("gradual unfreezing and freeze_last_k are mutually exclusive");
  if (freeze_last_k && *freeze_last_k < 0) fail("freeze_last_k must not be negative");
  if (batch_size == 0) fail("batch_size must be positive");
}

TrainingPlan preset(Preset p) {
  TrainingPlan plan;
  plan.preset = p;
  plan.use_stlr = p != Preset::NA;
  plan.discrimination_rate = (p == Preset::STL_DFT || p == Preset::ALL) ? 0.85 : 1.0;
  plan.gradual_unfreeze = p == Preset::STL_GU || p == Preset::ALL;
  return plan;
}

TrainingPlan preset(const std::string& name) { return preset(parse_preset(name)); }

double stlr_lr(const TrainingPlan& plan, long step) {
  if (!plan.use_stlr) return plan.peak_lr;
  const long total = plan.total_steps;
  if (total <= 0) throw ScheduleError("slanted triangular schedule needs total_steps > 0");
  if (step < 0 || step > total) {
    throw ScheduleError("step " + std::to_string(step) + " outside schedule [0," + std::to_string(total) + "]");
  }
  const double t = static_cast<double>(step);
  const double T = static_cast<double>(total);
  const double cut = plan.warmup_proportion * T;
  if (t <= cut) return plan.peak_lr * t / cut;
  return plan.peak_lr * (T - t) / ((1.0 - plan.warmup_proportion) * T);
}

double layer_lr(const TrainingPlan& plan, const std::string& group, double base_lr, int num_layers) {
  const auto rates = group_lrs(plan, base_lr, num_layers);
  auto it = rates.find(group);
  if (it == rates.end()) throw ParameterError("unknown layer group '" + group + "'");
  return it->second;
}

std::map<std::string, double> group_lrs(const TrainingPlan& plan, double base_lr, int num_layers) {
  std::map<std::string, double> rates;
  double rate = base_lr;
  rates["head"] = rate;
  for (int l = num_layers; l >= 1; --l) {
    rate *= plan.discrimination_rate;
    rates[encoder_group(l)] = rate;
  }
  rates["embeddings"] = rate * plan.discrimination_rate;
  return rates;
}

std::set<std::string> frozen_set(const TrainingPlan& plan, long step, long steps_per_epoch, int num_layers) {
  if (steps_per_epoch <= 0) throw ParameterError("steps_per_epoch must be positive");
  std::set<std::string> frozen;
  if (!plan.gradual_unfreeze) return frozen;
  // bottom-up order of everything below the head
  std::vector<std::string> order{"embeddings"};
  for (int l = 1; l <= num_layers; ++l) order.push_back(encoder_group(l));
  const double interval = plan.unfreeze_interval * static_cast<double>(steps_per_epoch);
  // tolerance absorbs rounding in fractions like 1/3 * 30
  const auto unfrozen = static_cast<std::size_t>(std::floor(static_cast<double>(step) / interval + 1e-9));
  const std::size_t still_frozen = unfrozen >= order.size() ? 0 : order.size() - unfrozen;
  for (std::size_t i = 0; i < still_frozen; ++i) frozen.insert(order[i]);
  return frozen;
}

std::set<std::string> freeze_mask_last_k(int k, int num_layers) {
  if (k < 0 || k > num_layers) {
    throw ParameterError("freeze_last_k=" + std::to_string(k) + " outside 0.." + std::to_string(num_layers));
  }
  std::set<std::string> trainable{"head"};
  for (int l = num_layers - k + 1; l <= num_layers; ++l) trainable.insert(encoder_group(l));
  return trainable;
}

std::set<std::string> frozen_groups(const TrainingPlan& plan, long step, long steps_per_epoch, int num_layers) {
  if (plan.freeze_last_k) {
    const auto trainable = freeze_mask_last_k(*plan.freeze_last_k, num_layers);
    std::set<std::string> frozen;
    for (const auto& g : layer_groups(num_layers))
      if (!trainable.count(g)) frozen.insert(g);
    return frozen;
  }
  return frozen_set(plan, step, steps_per_epoch, num_layers);
}

void adam_step(std::span<NamedParam> params, OptimizerState& state, const std::map<std::string, double>& lr_per_group,
               const std::set<std::string>& frozen) {
  ++state.step;
  for (auto& p : params) {
    if (frozen.count(p.group)) continue;
    auto lr_it = lr_per_group.find(p.group);
    if (lr_it == lr_per_group.end()) throw ContractError("no learning rate for group '" + p.group + "'");
    if (!p.tensor.has_grad()) throw ContractError("trainable parameter '" + p.name + "' has no gradient");
    auto& m = state.moments[p.name];
    const std::size_t n = p.tensor.numel();
    if (m.first.size() != n) {
      m.first.assign(n, 0.0f);
      m.second.assign(n, 0.0f);
    }
    ++m.steps;
    const double lr = lr_it->second;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(m.steps));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(m.steps));
    const auto b1 = static_cast<float>(state.beta1);
    const auto b2 = static_cast<float>(state.beta2);
    const auto step_size = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(state.epsilon);
    auto data = p.tensor.mutable_data();
    const auto grad = p.tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const float g = grad[i];
      m.first[i] = b1 * m.first[i] + (1.0f - b1) * g;
      m.second[i] = b2 * m.second[i] + (1.0f - b2) * g * g;
      data[i] -= step_size * m.first[i] / (std::sqrt(m.second[i] * inv_c2) + eps);
    }
  }
}

}  // namespace minibert
