#include "fgfp/aup/aup.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "fgfp/errors.hpp"

namespace fgfp::aup {
namespace {

// Entries in pruning order: (|w|, flat index), nonzero weights only.
std::vector<std::size_t> prune_order(std::span<const float> w) {
  std::vector<std::size_t> idx;
  idx.reserve(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] != 0.0f) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::fabs(w[a]) < std::fabs(w[b]); });
  return idx;
}

std::size_t prune_count(double p_r, std::size_t n) {
  const double k = std::ceil(p_r * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

std::int64_t allowed_nonzero(double target, std::int64_t total) {
  return static_cast<std::int64_t>(std::floor((1.0 - target) * static_cast<double>(total) + 1e-9));
}

bool reached(const PruneState& s, const SparsityCount& c) {
  return c.nonzero <= allowed_nonzero(s.target_sparsity, c.total);
}

}  // namespace

std::optional<Cut> layer_threshold(std::span<const float> weights, double p_r) {
  const auto order = prune_order(weights);
  if (order.empty()) return std::nullopt;
  Cut cut;
  cut.count = prune_count(p_r, order.size());
  if (cut.count == 0) {
    cut.threshold = std::nextafter(std::fabs(weights[order.front()]), 0.0f);
  } else {
    cut.threshold = std::fabs(weights[order[cut.count - 1]]);
  }
  return cut;
}

std::optional<Cut> layer_threshold(const MaskedLayer& layer, double p_r) {
  return layer_threshold(layer.weights.data(), p_r);
}

std::size_t prune_layer(nd::Tensor& weights, nd::Tensor& mask, double p_r) {
  if (mask.empty()) mask = nd::Tensor(weights.shape(), 1.0f);
  if (mask.shape() != weights.shape()) throw DimensionError("mask shape does not match weights");
  const auto order = prune_order(weights.data());
  const std::size_t k = prune_count(p_r, order.size());
  for (std::size_t i = 0; i < k; ++i) {
    weights[order[i]] = 0.0f;
    mask[order[i]] = 0.0f;
  }
  return k;
}

SparsityCount global_sparsity(const nn::Model& model) {
  SparsityCount c;
  for (const auto& layer : model.layers) {
    if (!nn::is_prunable(layer)) continue;
    const auto& w = nn::prunable_weight(layer);
    c.total += static_cast<std::int64_t>(w.size());
    c.nonzero += std::count_if(w.data().begin(), w.data().end(), [](float v) { return v != 0.0f; });
  }
  return c;
}

void ensure_masks(nn::Model& model) {
  for (auto& layer : model.layers) {
    if (!nn::is_prunable(layer)) continue;
    auto& m = nn::prunable_mask(layer);
    if (m.empty()) m = nd::Tensor(nn::prunable_weight(layer).shape(), 1.0f);
  }
}

void AupConfig::check() const {
  if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) throw UsageError("target sparsity must be in [0, 1)");
  if (!(p_r > 0.0 && p_r < 1.0)) throw UsageError("p_r must be in (0, 1)");
  if (!(p_r_min > 0.0 && p_r_min <= p_r)) throw UsageError("p_r_min must be in (0, p_r]");
  if (max_fails < 1) throw UsageError("max_fails must be >= 1");
  if (!(theta_acc >= 0.0 && theta_acc <= 100.0)) throw UsageError("theta_acc must be in [0, 100]");
}

const char* action_name(Action a) { return a == Action::accept ? "accept" : "reject"; }

PruneState PruneState::from(const AupConfig& cfg) {
  cfg.check();
  PruneState s;
  s.p_r = cfg.p_r;
  s.theta_acc = cfg.theta_acc;
  s.max_fails = cfg.max_fails;
  s.p_r_min = cfg.p_r_min;
  s.target_sparsity = cfg.target_sparsity;
  return s;
}

void prune_round(nn::Model& model, PruneState& state, FineTuner& tuner) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_masks(model);
  const auto before = global_sparsity(model);
  if (before.total == 0) {
    ++state.round;
    state.fail_count = 0;
    RoundRecord rec;
    rec.round = state.round;
    rec.p_r = state.p_r;
    state.history.push_back(rec);
    return;
  }

  // Last round: shrink the rate so the target is not overshot by more than
  // per-layer rounding.
  double rate = state.p_r;
  if (before.nonzero > 0) {
    const auto excess = before.nonzero - allowed_nonzero(state.target_sparsity, before.total);
    rate = std::min(rate, static_cast<double>(std::max<std::int64_t>(excess, 0)) / static_cast<double>(before.nonzero));
  }

  const nn::Model snapshot = model;
  for (auto& layer : model.layers) {
    if (nn::is_prunable(layer)) prune_layer(nn::prunable_weight(layer), nn::prunable_mask(layer), rate);
  }

  RoundRecord rec;
  rec.p_r = rate;
  bool numeric_failure = false;
  double acc = 0.0;
  try {
    tuner.fine_tune(model, Phase::round);
    acc = tuner.evaluate(model);
  } catch (const NumericError&) {
    numeric_failure = true;
  }

  if (!numeric_failure && acc >= state.theta_acc) {
    ++state.round;
    state.fail_count = 0;
    rec.action = Action::accept;
  } else {
    model = snapshot;
    try {
      tuner.fine_tune(model, Phase::recovery);
    } catch (const NumericError&) {
      model = snapshot;
      numeric_failure = true;
    }
    ++state.fail_count;
    rec.action = Action::reject;
  }
  rec.round = state.round;
  rec.val_acc = acc;
  rec.numeric_failure = numeric_failure;
  rec.global_sparsity = global_sparsity(model).sparsity();
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  state.history.push_back(rec);
}

void adapt_rate(PruneState& state) {
  if (state.fail_count < state.max_fails) return;
  if (state.p_r <= state.p_r_min) {
    state.status = Status::failed_to_reach_target;
    return;
  }
  state.p_r = std::max(state.p_r / 2.0, state.p_r_min);
  state.fail_count = 0;
}

AupResult run_aup(nn::Model model, const AupConfig& cfg, FineTuner& tuner) {
  AupResult out;
  out.state = PruneState::from(cfg);
  auto& s = out.state;
  if (reached(s, global_sparsity(model))) {
    s.status = Status::reached_target;
    out.model = std::move(model);
    return out;
  }
  ensure_masks(model);
  nn::Model accepted = model;
  while (s.status == Status::running) {
    prune_round(model, s, tuner);
    if (s.history.back().action == Action::accept) {
      accepted = model;
      if (reached(s, global_sparsity(model))) s.status = Status::reached_target;
    } else {
      adapt_rate(s);
    }
  }
  if (s.status == Status::reached_target) {
    try {
      tuner.fine_tune(model, Phase::final);
      out.model = std::move(model);
    } catch (const NumericError&) {
      out.flagged = true;
      out.model = std::move(accepted);
    }
  } else {
    out.flagged = true;
    out.model = std::move(accepted);
  }
  return out;
}

void write_history_csv(std::ostream& os, const std::vector<RoundRecord>& history) {
  os << "round,action,p_r,global_sparsity,val_acc,wall_seconds\n";
  char buf[192];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f,%.4f,%.3f\n", r.round, action_name(r.action), r.p_r,
                  r.global_sparsity, r.val_acc, r.wall_seconds);
    os << buf;
  }
}

TrainerFineTuner::TrainerFineTuner(const data::Dataset& train, const data::Dataset& val, nn::TrainConfig round_cfg,
                                   nn::TrainConfig final_cfg)
    : train_(&train), val_(&val), round_cfg_(std::move(round_cfg)), final_cfg_(std::move(final_cfg)) {
  round_cfg_.check();
  final_cfg_.check();
}

void TrainerFineTuner::fine_tune(nn::Model& model, Phase phase) {
  nn::TrainConfig cfg = phase == Phase::final ? final_cfg_ : round_cfg_;
  cfg.seed = Rng::splitmix(cfg.seed + calls_++);
  nn::train(model, *train_, cfg, nullptr, sink);
}

double TrainerFineTuner::evaluate(const nn::Model& model) { return nn::evaluate(model, *val_); }

ScriptedFineTuner::ScriptedFineTuner(std::vector<double> accuracies, bool perturb)
    : accs_(std::move(accuracies)), perturb_(perturb) {
  if (accs_.empty()) throw UsageError("scripted tuner needs at least one accuracy");
}

void ScriptedFineTuner::fine_tune(nn::Model& model, Phase phase) {
  const std::size_t call = phases.size();
  phases.push_back(phase);
  if (on_fine_tune) on_fine_tune(model, phase);
  if (std::find(fail_calls.begin(), fail_calls.end(), call) != fail_calls.end()) {
    throw NumericError("scripted numeric failure");
  }
  if (!perturb_) return;
  for (auto& layer : model.layers) {
    if (!nn::is_prunable(layer)) continue;
    auto& w = nn::prunable_weight(layer);
    const auto& m = nn::prunable_mask(layer);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (m.empty() || m[i] != 0.0f) w[i] *= 1.001f;
    }
  }
}

double ScriptedFineTuner::evaluate(const nn::Model&) { return accs_[evaluations++ % accs_.size()]; }

}  // namespace fgfp::aup
