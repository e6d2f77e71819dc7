#pragma once

// Learning-rate schedules, layer freezing and the optimiser used by every
// training loop.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "minibert/model.hpp"

namespace minibert {

enum class Preset { NA, STL, STL_DFT, STL_GU, ALL };

std::string to_string(Preset p);
Preset parse_preset(const std::string& name);

struct TrainingPlan {
  Preset preset = Preset::ALL;
  double peak_lr = 2e-5;
  double warmup_proportion = 0.2;
  // 0 lets the training loop fill in epochs * steps_per_epoch.
  long total_steps = 0;
  bool use_stlr = true;
  double discrimination_rate = 0.85;
  bool gradual_unfreeze = true;
  double unfreeze_interval = 1.0 / 3.0;  // fraction of an epoch
  std::optional<int> freeze_last_k;
  HeadSource head_source = HeadSource::last();
  std::size_t batch_size = 64;

  // Throws ParameterError when fields are out of range or both freezing
  // modes are active.
  void validate() const;

  bool operator==(const TrainingPlan&) const = default;
};

// Strategy preset with the default hyperparameters.
TrainingPlan preset(Preset p);
TrainingPlan preset(const std::string& name);

// Slanted triangular rate: linear warm-up to peak_lr at warmup_proportion*T,
// then linear decay to 0 at T. Constant peak_lr when use_stlr is off.
double stlr_lr(const TrainingPlan& plan, long step);

// head: base; encoder.L: theta*base; each lower layer one more factor of
// theta; embeddings: theta^(L+1)*base.
double layer_lr(const TrainingPlan& plan, const std::string& group, double base_lr, int num_layers);
std::map<std::string, double> group_lrs(const TrainingPlan& plan, double base_lr, int num_layers);

// Groups frozen at `step` under gradual unfreezing: only the head trains at
// step 0 and one more group unfreezes every unfreeze_interval epochs, in the
// order encoder.L, ..., encoder.1, embeddings.
std::set<std::string> frozen_set(const TrainingPlan& plan, long step, long steps_per_epoch, int num_layers);

// Groups that train under freeze-last-k: head plus encoder.L-k+1..L.
std::set<std::string> freeze_mask_last_k(int k, int num_layers);

// Frozen groups at `step` for whichever freezing mode the plan uses.
std::set<std::string> frozen_groups(const TrainingPlan& plan, long step, long steps_per_epoch, int num_layers);

struct AdamMoments {
  std::vector<float> first;
  std::vector<float> second;
  long steps = 0;
};

struct OptimizerState {
  std::map<std::string, AdamMoments> moments;
  long step = 0;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update. Each parameter uses the rate of its group;
// parameters in a frozen group, and their moments, are left untouched.
// Bias correction counts the updates a parameter has actually received.
void adam_step(std::span<NamedParam> params, OptimizerState& state, const std::map<std::string, double>& lr_per_group,
               const std::set<std::string>& frozen);

}  // namespace minibert
