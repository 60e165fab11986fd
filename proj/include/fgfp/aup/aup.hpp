#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fgfp/data/dataset.hpp"
#include "fgfp/nn/trainer.hpp"

namespace fgfp::aup {

// Weights and keep-mask of one prunable layer.
struct MaskedLayer {
  std::string layer_id;
  nd::Tensor weights;
  nd::Tensor mask;
};

struct Cut {
  float threshold = 0.0f;  // magnitude of the last pruned entry (or just below the smallest if none)
  std::size_t count = 0;   // entries to prune
};

// Per-layer magnitude cut: the ceil(p_r * n_nonzero)-th smallest |w| among
// nonzero weights, ties ordered by flat index. nullopt for an all-zero layer.
std::optional<Cut> layer_threshold(std::span<const float> weights, double p_r);
std::optional<Cut> layer_threshold(const MaskedLayer& layer, double p_r);

// Zeroes the `cut.count` smallest nonzero weights (ties by flat index) in
// both weights and mask. Returns the number pruned.
std::size_t prune_layer(nd::Tensor& weights, nd::Tensor& mask, double p_r);

struct SparsityCount {
  std::int64_t nonzero = 0;
  std::int64_t total = 0;
  double sparsity() const { return total == 0 ? 0.0 : 1.0 - static_cast<double>(nonzero) / static_cast<double>(total); }
};

// Over prunable (dense conv / fc) weights only.
SparsityCount global_sparsity(const nn::Model& model);

// Gives every prunable layer an all-ones mask if it has none yet.
void ensure_masks(nn::Model& model);

enum class Phase { round, recovery, final };

// Trainer callback. Owns the model for the duration of each call.
class FineTuner {
 public:
  virtual ~FineTuner() = default;
  virtual void fine_tune(nn::Model& model, Phase phase) = 0;
  virtual double evaluate(const nn::Model& model) = 0;  // validation top-1 in [0, 100]
};

struct AupConfig {
  double target_sparsity = 0.8;
  double p_r = 0.05;
  double theta_acc = 0.0;
  int max_fails = 3;
  double p_r_min = 0.005;

  void check() const;  // UsageError on out-of-range values
};

enum class Action { accept, reject };
const char* action_name(Action a);

struct RoundRecord {
  int round = 0;  // accepted rounds so far, including this one if accepted
  Action action = Action::accept;
  double p_r = 0.0;  // rate applied this round
  double global_sparsity = 0.0;
  double val_acc = 0.0;
  double wall_seconds = 0.0;
  bool numeric_failure = false;
};

enum class Status { running, reached_target, failed_to_reach_target };

struct PruneState {
  int round = 0;
  double p_r = 0.05;
  double theta_acc = 0.0;
  int fail_count = 0;
  int max_fails = 3;
  double p_r_min = 0.005;
  double target_sparsity = 0.8;
  Status status = Status::running;
  std::vector<RoundRecord> history;

  static PruneState from(const AupConfig& cfg);
};

// One prune / fine-tune / gate cycle. On reject the model is restored from
// the pre-round snapshot, then handed to the tuner for a recovery fine-tune.
void prune_round(nn::Model& model, PruneState& state, FineTuner& tuner);

// Halves p_r (floored at p_r_min) once fail_count reaches max_fails; at the
// floor already, the state becomes failed_to_reach_target. No-op otherwise.
void adapt_rate(PruneState& state);

struct AupResult {
  nn::Model model;
  PruneState state;
  bool flagged = false;  // target not reached; model is the last accepted one
};

AupResult run_aup(nn::Model model, const AupConfig& cfg, FineTuner& tuner);

// "round,action,p_r,global_sparsity,val_acc,wall_seconds"
void write_history_csv(std::ostream& os, const std::vector<RoundRecord>& history);

// Fine-tunes with the nn trainer and gates on a validation split. Each call
// draws a fresh data order from seed + call index.
class TrainerFineTuner : public FineTuner {
 public:
  TrainerFineTuner(const data::Dataset& train, const data::Dataset& val, nn::TrainConfig round_cfg,
                   nn::TrainConfig final_cfg);

  void fine_tune(nn::Model& model, Phase phase) override;
  double evaluate(const nn::Model& model) override;

  nn::LogSink sink;

 private:
  const data::Dataset* train_;
  const data::Dataset* val_;
  nn::TrainConfig round_cfg_, final_cfg_;
  std::uint64_t calls_ = 0;
};

// Test double: returns scripted accuracies (cycled) and optionally nudges
// unmasked weights so fine-tuning visibly changes the model.
class ScriptedFineTuner : public FineTuner {
 public:
  explicit ScriptedFineTuner(std::vector<double> accuracies, bool perturb = false);

  void fine_tune(nn::Model& model, Phase phase) override;
  double evaluate(const nn::Model& model) override;

  // Called at the start of every fine_tune, before any change.
  std::function<void(const nn::Model&, Phase)> on_fine_tune;
  // Indices (0-based, over fine_tune calls) that throw NumericError.
  std::vector<std::size_t> fail_calls;

  std::vector<Phase> phases;
  std::size_t evaluations = 0;

 private:
  std::vector<double> accs_;
  bool perturb_;
};

}  // namespace fgfp::aup
