#include "fgfp/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fgfp/errors.hpp"

namespace fgfp::pipeline {
namespace {

std::uint64_t hash_id(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::optional<std::size_t> first_conv(const nn::Model& model) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (std::holds_alternative<nn::Conv2d>(model.layers[i]) || std::holds_alternative<nn::FgfConv2d>(model.layers[i])) {
      return i;
    }
  }
  return std::nullopt;
}

}  // namespace

bool is_eligible(const nn::Model& model, std::size_t layer_index) {
  const auto* conv = std::get_if<nn::Conv2d>(&model.layers.at(layer_index));
  if (!conv || conv->masked()) return false;
  if (first_conv(model) == layer_index) return false;
  const auto& w = conv->weight;
  return w.dim(1) >= 16 && w.dim(2) >= 3 && w.dim(3) >= 3;
}

ConversionPlan select_layers(const nn::Model& model, int k) {
  if (k < 0) throw UsageError("number of layers to convert must be >= 0");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (is_eligible(model, i)) eligible.push_back(i);
  }
  std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
    const auto na = nn::prunable_weight(model.layers[a]).size();
    const auto nb = nn::prunable_weight(model.layers[b]).size();
    return na != nb ? na > nb : a > b;
  });
  ConversionPlan plan;
  const auto take = std::min<std::size_t>(eligible.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < take; ++i) plan.layers.push_back(nn::layer_id(model.layers[eligible[i]]));
  if (take < static_cast<std::size_t>(k)) {
    plan.warnings.push_back("requested " + std::to_string(k) + " layers but only " + std::to_string(eligible.size()) +
                            " are eligible for conversion");
  }
  return plan;
}

ConversionOutcome convert_layer(nn::Model& model, const std::string& layer_id, fgf::FgfKind kind,
                                const fgf::FitConfig& cfg) {
  const auto idx = nn::find_layer(model, layer_id);
  if (!idx) throw UsageError("no layer named " + layer_id);
  const auto* conv = std::get_if<nn::Conv2d>(&model.layers[*idx]);
  if (!conv) throw UsageError("layer " + layer_id + " is not a dense convolution");
  if (conv->masked()) throw UsageError("layer " + layer_id + " is masked; convert before pruning");
  if (kind == fgf::FgfKind::orig) throw UsageError("conversion supports ca and 3d kinds");

  const auto& w = conv->weight;
  const int out = static_cast<int>(w.dim(0));
  const fgf::KernelDims dims{static_cast<int>(w.dim(1)), static_cast<int>(w.dim(2)), static_cast<int>(w.dim(3))};
  const std::size_t per = dims.numel();

  const bool three_d = kind == fgf::FgfKind::three_d;
  auto* bn = *idx + 1 < model.layers.size() ? std::get_if<nn::BatchNorm2d>(&model.layers[*idx + 1]) : nullptr;
  const bool fold = three_d && bn != nullptr;

  nn::FgfConv2d layer;
  layer.id = conv->id;
  layer.geom = conv->geom;
  layer.out_channels = out;
  layer.spec = fgf::FgfSpec{kind, dims, three_d && !fold};

  ConversionOutcome outcome;
  double total_loss = 0.0, norm = 0.0;
  std::vector<double> gains(out, 1.0);
  try {
    for (int o = 0; o < out; ++o) {
      nd::TensorD target({dims.ch, dims.kh, dims.kw});
      for (std::size_t q = 0; q < per; ++q) {
        target[q] = w[o * per + q];
        norm += target[q] * target[q];
      }
      fgf::FitConfig fc = cfg;
      fc.seed = Rng::splitmix(cfg.seed ^ hash_id(layer_id)) + static_cast<std::uint64_t>(o);
      fc.gain = three_d;
      const auto fit = fgf::fit_fgf_to_kernel(target, kind, fc);
      total_loss += fit.loss;
      outcome.worst_loss = std::max(outcome.worst_loss, fit.loss);
      auto params = fit.params;
      if (fold) {
        gains[o] = params[7];
        params.resize(7);
      }
      layer.params.insert(layer.params.end(), params.begin(), params.end());
    }
  } catch (const FitError& e) {
    outcome.message = "fit failed for " + layer_id + ": " + e.what();
    return outcome;
  }

  if (fold) {
    for (int o = 0; o < out; ++o) {
      const double g = gains[o];
      if (!(std::fabs(g) > 1e-12) || !std::isfinite(g)) continue;
      bn->running_mean[o] = static_cast<float>(bn->running_mean[o] / g);
      bn->running_var[o] = static_cast<float>(bn->running_var[o] / (g * g));
      if (g < 0.0) bn->gamma[o] = -bn->gamma[o];
    }
  }
  model.layers[*idx] = std::move(layer);
  outcome.converted = true;
  outcome.relative_loss = norm > 0.0 ? total_loss / norm : 0.0;
  return outcome;
}

void write_stage_csv(std::ostream& os, const std::vector<StageRecord>& stages) {
  os << "stage,layer_id,logical_params,stored_params,val_acc\n";
  char buf[64];
  for (const auto& s : stages) {
    std::snprintf(buf, sizeof buf, "%.4f", s.val_acc);
    os << s.stage << ',' << s.layer_id << ',' << s.logical_params << ',' << s.stored_params << ',' << buf << '\n';
  }
}

double sparsity_for_budget(const nn::Model& model, std::int64_t budget) {
  const auto counts = aup::global_sparsity(model);
  const auto logical = nn::param_count(model, nn::Counting::logical);
  const auto fixed = logical - counts.nonzero;
  if (counts.total == 0) return 0.0;
  const double keep = static_cast<double>(budget - fixed) / static_cast<double>(counts.total);
  return std::clamp(1.0 - keep, 0.0, 1.0 - 1.0 / static_cast<double>(counts.total));
}

double compression_ratio(std::int64_t baseline, std::int64_t compressed) {
  if (baseline <= 0) throw UsageError("baseline parameter count must be positive");
  return 100.0 * (1.0 - static_cast<double>(compressed) / static_cast<double>(baseline));
}

PipelineResult run_fgfp(nn::Model model, const ConversionPlan& plan, const PipelineConfig& cfg,
                        const data::Dataset& train, const data::Dataset& val, const Progress& progress) {
  auto note = [&](const std::string& msg) {
    if (progress.note) progress.note(msg);
  };
  PipelineResult res;
  auto record = [&](const std::string& stage, const std::string& id) {
    StageRecord r;
    r.stage = stage;
    r.layer_id = id;
    r.logical_params = nn::param_count(model, nn::Counting::logical);
    r.stored_params = nn::param_count(model, nn::Counting::stored);
    r.val_acc = nn::evaluate(model, val);
    res.stages.push_back(r);
    note(stage + (id.empty() ? "" : " " + id) + ": logical " + std::to_string(r.logical_params) + ", val acc " +
         std::to_string(r.val_acc));
    return r.val_acc;
  };

  double acc = record("baseline", "");
  for (const auto& w : plan.warnings) note("warning: " + w);
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    const auto& id = plan.layers[i];
    const auto outcome = convert_layer(model, id, plan.kind, plan.fit);
    if (!outcome.converted) {
      res.flagged_layers.push_back(id);
      note("warning: " + outcome.message + "; layer left dense");
      continue;
    }
    note("converted " + id + " to " + fgf::kind_name(plan.kind) + " (relative fit error " +
         std::to_string(outcome.relative_loss) + ")");
    record("convert", id);
    nn::TrainConfig tc = cfg.fgf_finetune;
    tc.seed = Rng::splitmix(tc.seed + i);
    nn::train(model, train, tc, nullptr, progress.train_log);
    acc = record("finetune", id);
  }

  res.theta_acc = cfg.theta_acc.value_or(acc - cfg.theta_margin);
  res.theta_acc = std::clamp(res.theta_acc, 0.0, 100.0);
  aup::AupConfig ac = cfg.aup;
  ac.theta_acc = res.theta_acc;
  if (cfg.logical_budget) ac.target_sparsity = sparsity_for_budget(model, *cfg.logical_budget);
  res.target_sparsity = ac.target_sparsity;

  if (ac.target_sparsity > 0.0) {
    note("pruning to sparsity " + std::to_string(ac.target_sparsity) + " with accuracy floor " +
         std::to_string(res.theta_acc));
    aup::TrainerFineTuner tuner(train, val, cfg.aup_finetune, cfg.final_finetune);
    tuner.sink = progress.train_log;
    auto out = aup::run_aup(std::move(model), ac, tuner);
    model = std::move(out.model);
    res.history = std::move(out.state.history);
    res.aup_flagged = out.flagged;
    if (out.flagged) note("warning: pruning stopped before reaching the target sparsity");
    record("aup", "");
  }
  record("final", "");
  res.model = std::move(model);
  return res;
}

}  // namespace fgfp::pipeline
