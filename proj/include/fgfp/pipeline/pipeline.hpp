#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fgfp/aup/aup.hpp"
#include "fgfp/fgf/fit.hpp"

namespace fgfp::pipeline {

struct ConversionPlan {
  std::vector<std::string> layers;  // conversion order
  fgf::FgfKind kind = fgf::FgfKind::three_d;
  fgf::FitConfig fit;
  std::vector<std::string> warnings;
};

// Dense (unmasked) conv, kernel >= 3x3, not the first conv, in_ch >= 16.
bool is_eligible(const nn::Model& model, std::size_t layer_index);

// The k eligible layers with the largest dense parameter counts, ties
// deeper-first. Fewer than k eligible layers truncates the plan and records a
// warning.
ConversionPlan select_layers(const nn::Model& model, int k);

struct ConversionOutcome {
  bool converted = false;
  double worst_loss = 0.0;     // largest per-filter squared reconstruction error
  double relative_loss = 0.0;  // sum of losses / ||W||^2
  std::string message;
};

// Replaces a dense conv by per-filter FGF fits (seeded by cfg.seed, the layer
// id and the filter index). 3-D fits run with a per-filter gain; when the next
// layer is batch norm the gain is folded into its running statistics and gamma
// sign so the stored filter keeps 7 scalars. A fit failure leaves the layer
// dense and returns converted = false. Throws UsageError unless the layer is a
// dense conv.
ConversionOutcome convert_layer(nn::Model& model, const std::string& layer_id, fgf::FgfKind kind,
                                const fgf::FitConfig& cfg);

struct StageRecord {
  std::string stage;  // baseline | convert | finetune | aup | final
  std::string layer_id;
  std::int64_t logical_params = 0;
  std::int64_t stored_params = 0;
  double val_acc = 0.0;
};

// "stage,layer_id,logical_params,stored_params,val_acc"
void write_stage_csv(std::ostream& os, const std::vector<StageRecord>& stages);

struct PipelineConfig {
  nn::TrainConfig fgf_finetune;   // after each conversion (lr 0.1 stage)
  nn::TrainConfig aup_finetune;   // per AUP round (lr 0.01 stage)
  nn::TrainConfig final_finetune; // after AUP reaches its target
  aup::AupConfig aup;
  // Accuracy floor for AUP; default is (validation accuracy after the FGF
  // stage) - theta_margin.
  std::optional<double> theta_acc;
  double theta_margin = 1.0;
  // When set, AUP's target sparsity is chosen so the final logical parameter
  // count does not exceed this budget; aup.target_sparsity is then ignored.
  std::optional<std::int64_t> logical_budget;
};

struct PipelineResult {
  nn::Model model;
  std::vector<StageRecord> stages;
  std::vector<aup::RoundRecord> history;
  std::vector<std::string> flagged_layers;  // conversions that failed
  bool aup_flagged = false;
  double theta_acc = 0.0;
  double target_sparsity = 0.0;
};

// Sparsity that brings the model's logical count down to `budget` by pruning
// its prunable layers alone (clamped to [0, 1)).
double sparsity_for_budget(const nn::Model& model, std::int64_t budget);

struct Progress {
  std::function<void(const std::string&)> note;  // human-readable stage messages
  nn::LogSink train_log;
};

PipelineResult run_fgfp(nn::Model model, const ConversionPlan& plan, const PipelineConfig& cfg,
                        const data::Dataset& train, const data::Dataset& val, const Progress& progress = {});

// 100 * (1 - compressed / baseline)
double compression_ratio(std::int64_t baseline, std::int64_t compressed);

}  // namespace fgfp::pipeline
