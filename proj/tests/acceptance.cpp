// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--only 1,2,...]
//
// FGFP_MNIST_DIR overrides the MNIST directory (IDX files); FGFP_ACCEPTANCE_DIR
// overrides where the CLI runs write their outputs.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <regex>
#include <set>
#include <sstream>
#include <string>

#include "fgfp/aup/aup.hpp"
#include "fgfp/errors.hpp"
#include "fgfp/fgf/gl.hpp"
#include "fgfp/pipeline/pipeline.hpp"
#include "fgfp/store/checkpoint.hpp"
#include "random_models.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace fgfp;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1

Verdict gl_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  using A = std::array<double, 3>;
  const bool exact = fgf::gl_trinomial(0.0) == A{1, 0, 0} && fgf::gl_trinomial(1.0) == A{1, -1, 0} &&
                     fgf::gl_trinomial(2.0) == A{1, -2, 1};
  Rng rng(Rng::derive(1, "gl").next_u64());
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0.0, 2.0);
    const auto c = fgf::gl_trinomial(a);
    for (int r = 0; r < 3; ++r) {
      const double s = fgf::gl_series_weight(a, r);
      worst = std::max(worst, std::fabs(c[r] - s) / std::max(std::fabs(s), 1e-300));
    }
  }
  const double secs = seconds_since(t0);
  return {exact && worst <= 1e-12 && secs < 1.0,
          fmt("integer orders exact=%s, max rel err %.2e over 1000 draws, %.3f s", exact ? "yes" : "no", worst, secs)};
}

// ---------------------------------------------------------------- criterion 2

std::vector<double> draw_params(const fgf::FgfSpec& spec, Rng& rng) {
  return testing::random_fgf_params(spec, rng);
}

double toy_model_gradient_error() {
  Rng rng(Rng::derive(2, "toy").next_u64());
  nn::FgfConv2d f;
  f.id = "f";
  f.spec = {fgf::FgfKind::three_d, {3, 3, 3}};
  f.out_channels = 2;
  f.geom.pad = 1;
  for (int o = 0; o < 2; ++o) {
    f.params.insert(f.params.end(), {rng.uniform(0.1, 1.9), rng.uniform(0.1, 1.9), rng.uniform(0.1, 1.9),
                                     rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0),
                                     rng.uniform(0.8, 2.0)});
  }
  nn::Linear fc;
  fc.id = "fc";
  fc.weight = testing::random_tensor<float>({4, 50}, rng, 0.3);
  fc.bias = testing::random_tensor<float>({4}, rng, 0.1);
  nn::Model m;
  m.input_shape = {3, 5, 5};
  m.num_classes = 4;
  m.layers = {f, nn::Relu{"relu"}, nn::Flatten{"flatten"}, fc};
  const auto x = testing::random_tensor<float>({3, 3, 5, 5}, rng);
  const std::vector<int> y{0, 3, 2};

  // Independent double-precision loss.
  const nd::TensorD xd(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  auto loss = [&](const std::vector<double>& p) {
    nd::TensorD kernel({2, 3, 3, 3});
    for (int o = 0; o < 2; ++o) {
      const auto k = fgf::synthesize(f.spec, std::span<const double>(p).subspan(o * 7, 7));
      std::copy(k.begin(), k.end(), kernel.data().begin() + o * 27);
    }
    const auto h = nd::conv2d_forward(xd, kernel, f.geom);
    double total = 0.0;
    for (int n = 0; n < 3; ++n) {
      std::vector<double> z(4);
      for (int c = 0; c < 4; ++c) {
        z[c] = fc.bias[c];
        for (int i = 0; i < 50; ++i) z[c] += fc.weight[c * 50 + i] * std::max(0.0, h[n * 50 + i]);
      }
      const double mx = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (double v : z) s += std::exp(v - mx);
      total += mx + std::log(s) - z[y[n]];
    }
    return total / 3.0;
  };
  const auto fd = testing::central_diff(loss, f.params, 1e-6);
  const auto g = nn::compute_gradients(m, x, y);
  return testing::rel_err(g.grads[0].fgf, fd);
}

Verdict gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (auto kind : {fgf::FgfKind::orig, fgf::FgfKind::ca, fgf::FgfKind::three_d}) {
    Rng rng(Rng::derive(2, fgf::kind_name(kind)).next_u64());
    for (int trial = 0; trial < 100; ++trial) {
      const fgf::KernelDims d{1 + static_cast<int>(rng.below(6)), 3, 3};
      const fgf::FgfSpec s{kind, d};
      const auto p = draw_params(s, rng);
      std::vector<double> up(d.numel());
      for (auto& u : up) u = rng.uniform(-1.0, 1.0);
      const auto g = fgf::param_grads(s, p, up);
      auto f = [&](const std::vector<double>& q) {
        const auto k = fgf::synthesize(s, q);
        double acc = 0.0;
        for (std::size_t i = 0; i < k.size(); ++i) acc += k[i] * up[i];
        return acc;
      };
      worst = std::max(worst, testing::rel_err(g, testing::central_diff(f, p, 1e-6)));
    }
  }
  const double toy = toy_model_gradient_error();
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && toy < 1e-4 && secs < 30.0,
          fmt("kernel grads max rel err %.2e (300 draws), toy model %.2e, %.2f s", worst, toy, secs)};
}

// ---------------------------------------------------------------- criterion 3

Verdict parameter_counts() {
  auto fgf_layer = [](fgf::FgfKind kind, int out, int in, int k) {
    nn::FgfConv2d f;
    f.id = "f";
    f.spec = {kind, {in, k, k}};
    f.out_channels = out;
    f.params.assign(out * f.spec.param_count(), 1.0);
    return nn::Layer{f};
  };
  const auto dense = nn::layer_param_count(nn::Conv2d{"c", nd::Tensor({64, 32, 3, 3}), {}, {}}, nn::Counting::logical);
  const auto orig = nn::layer_param_count(fgf_layer(fgf::FgfKind::orig, 64, 32, 3), nn::Counting::logical);
  const auto ca = nn::layer_param_count(fgf_layer(fgf::FgfKind::ca, 64, 32, 3), nn::Counting::logical);
  const auto three = nn::layer_param_count(fgf_layer(fgf::FgfKind::three_d, 64, 32, 3), nn::Counting::logical);
  const auto single_dense = nn::layer_param_count(nn::Conv2d{"c", nd::Tensor({1, 1, 3, 3}), {}, {}}, nn::Counting::logical);
  const auto single_fgf = nn::layer_param_count(fgf_layer(fgf::FgfKind::orig, 1, 1, 3), nn::Counting::logical);
  const std::string reduction = fmt("%.1f", pipeline::compression_ratio(single_dense, single_fgf));
  const bool ok = dense == 18432 && orig == 10240 && ca == 2368 && three == 448 && reduction == "44.4";
  return {ok, fmt("dense %lld, orig %lld, ca %lld, 3d %lld, single 3x3 reduction %s%%", static_cast<long long>(dense),
                  static_cast<long long>(orig), static_cast<long long>(ca), static_cast<long long>(three),
                  reduction.c_str())};
}

// ---------------------------------------------------------------- criterion 4

double max_minor(const std::vector<double>& m, std::size_t rows, std::size_t cols, double peak) {
  double worst = 0.0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = i + 1; k < rows; ++k)
      for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t l = j + 1; l < cols; ++l)
          worst = std::max(worst, std::fabs(m[i * cols + j] * m[k * cols + l] - m[i * cols + l] * m[k * cols + j]));
  return peak > 0.0 ? worst / peak : 0.0;
}

// Largest 2x2 minor of the three mode unfoldings, relative to the kernel max.
// Independent per-channel FGFs are only separable slice by slice.
double separability_defect(const fgf::FgfSpec& s, const std::vector<double>& k) {
  const std::size_t C = s.dims.ch, H = s.dims.kh, W = s.dims.kw;
  double peak = 0.0;
  for (double v : k) peak = std::max(peak, std::fabs(v));
  if (s.kind == fgf::FgfKind::orig) {
    double worst = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const std::vector<double> slice(k.begin() + c * H * W, k.begin() + (c + 1) * H * W);
      worst = std::max(worst, max_minor(slice, H, W, peak));
    }
    return worst;
  }
  std::vector<double> m1(C * H * W), m2(C * H * W), m3(C * H * W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double v = k[(c * H + i) * W + j];
        m1[c * (H * W) + i * W + j] = v;
        m2[i * (C * W) + c * W + j] = v;
        m3[j * (C * H) + c * H + i] = v;
      }
  return std::max({max_minor(m1, C, H * W, peak), max_minor(m2, H, C * W, peak), max_minor(m3, W, C * H, peak)});
}

Verdict separability() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(Rng::derive(4, "separability").next_u64());
  double worst = 0.0;
  int draws = 0;
  for (auto kind : {fgf::FgfKind::three_d, fgf::FgfKind::ca, fgf::FgfKind::orig}) {
    for (int i = 0; i < 1000; ++i, ++draws) {
      const int k = rng.below(2) ? 5 : 3;
      const fgf::FgfSpec s{kind, {1 + static_cast<int>(rng.below(8)), k, k}};
      worst = std::max(worst, separability_defect(s, fgf::synthesize(s, draw_params(s, rng))));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 10.0, fmt("max relative 2x2 minor %.2e over %d draws, %.2f s", worst, draws, secs)};
}

// ---------------------------------------------------------------- criterion 5

Verdict plant_and_recover() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(Rng::derive(5, "plant").next_u64());
  int ok = 0;
  double worst_miss = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int ch = 16;
    const fgf::Fgf3dParams p{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2),
                             rng.uniform(0, 2), rng.uniform(0, ch - 1.0), rng.uniform(0.5, 2)};
    fgf::FitConfig cfg;
    cfg.restarts = 8;
    cfg.seed = Rng::splitmix(5000 + trial);
    const auto r = fgf::fit_fgf_to_kernel(fgf::fgf_3d_kernel({ch, 3, 3}, p), fgf::FgfKind::three_d, cfg);
    if (r.loss < 1e-6) ++ok;
    else worst_miss = std::max(worst_miss, r.loss);
  }
  const double secs = seconds_since(t0);
  return {ok >= 95 && secs < 120.0,
          fmt("%d/100 fits below 1e-6 (worst miss %.2e), %.1f s", ok, worst_miss, secs)};
}

// ---------------------------------------------------------------- criterion 6

nn::Model scripted_model(std::uint64_t seed) {
  nn::CnnShape s;
  s.input = {1, 8, 8};
  s.widths = {4, 8, 8};
  return nn::build_small_cnn(s, seed);
}

std::vector<nd::Tensor> prunable_tensors(const nn::Model& m, bool masks) {
  std::vector<nd::Tensor> out;
  for (const auto& l : m.layers) {
    if (nn::is_prunable(l)) out.push_back(masks ? nn::prunable_mask(l) : nn::prunable_weight(l));
  }
  return out;
}

Verdict aup_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failed.push_back(what);
  };

  // Rollback exactness.
  {
    auto m = scripted_model(61);
    aup::ensure_masks(m);
    const auto snapshot = m;
    auto s = aup::PruneState::from({0.8, 0.05, 50.0});
    aup::ScriptedFineTuner tuner({10.0}, true);
    bool exact = false;
    tuner.on_fine_tune = [&](const nn::Model& seen, aup::Phase phase) {
      if (phase == aup::Phase::recovery) exact = nn::model_digest(seen) == nn::model_digest(snapshot);
    };
    aup::prune_round(m, s, tuner);
    expect(exact && s.history.back().action == aup::Action::reject, "rollback exactness");
  }

  // Mask monotonicity and threshold consistency across mixed accept/reject rounds.
  {
    auto m = scripted_model(62);
    aup::ensure_masks(m);
    auto s = aup::PruneState::from({0.9, 0.06, 50.0});
    aup::ScriptedFineTuner tuner({60.0, 40.0, 60.0}, true);
    bool monotone = true, consistent = true;
    for (int round = 0; round < 20; ++round) {
      const auto pre_w = prunable_tensors(m, false);
      const auto pre_m = prunable_tensors(m, true);
      aup::prune_round(m, s, tuner);
      const auto post_w = prunable_tensors(m, false);
      const auto post_m = prunable_tensors(m, true);
      for (std::size_t l = 0; l < pre_m.size(); ++l) {
        float max_pruned = 0.0f, min_kept = INFINITY;
        for (std::size_t i = 0; i < pre_m[l].size(); ++i) {
          if (pre_m[l][i] == 0.0f && post_m[l][i] != 0.0f) monotone = false;
          if (pre_w[l][i] == 0.0f) continue;
          if (post_w[l][i] == 0.0f) max_pruned = std::max(max_pruned, std::fabs(pre_w[l][i]));
          else min_kept = std::min(min_kept, std::fabs(pre_w[l][i]));
        }
        if (s.history.back().action == aup::Action::accept && max_pruned > min_kept) consistent = false;
      }
    }
    expect(monotone, "mask monotonicity");
    expect(consistent, "threshold consistency");
  }

  // Halving exactly at max_fails, then terminal at the floor.
  {
    auto s = aup::PruneState::from({0.8, 0.04, 0.0, 3, 0.01});
    s.fail_count = 2;
    aup::adapt_rate(s);
    expect(s.p_r == 0.04, "no halving below max_fails");
    s.fail_count = 3;
    aup::adapt_rate(s);
    expect(s.p_r == 0.02 && s.fail_count == 0, "halving at max_fails");

    auto m = scripted_model(63);
    aup::ScriptedFineTuner tuner({0.0}, true);
    const auto r = aup::run_aup(m, {0.8, 0.04, 50.0, 2, 0.01}, tuner);
    const std::vector<double> rates{0.04, 0.04, 0.02, 0.02, 0.01, 0.01};
    bool schedule = r.state.history.size() == rates.size();
    for (std::size_t i = 0; schedule && i < rates.size(); ++i) schedule = r.state.history[i].p_r == rates[i];
    expect(schedule, "rate schedule under repeated failure");
    expect(r.flagged && r.state.status == aup::Status::failed_to_reach_target, "terminal state at p_r_min");
    expect(prunable_tensors(r.model, false) == prunable_tensors(m, false), "terminal keeps last accepted model");
  }

  // Perfect script reaches 80% within the geometric bound.
  {
    aup::ScriptedFineTuner tuner({100.0}, true);
    const auto r = aup::run_aup(scripted_model(64), {0.8, 0.05, 50.0}, tuner);
    expect(!r.flagged && aup::global_sparsity(r.model).sparsity() >= 0.8 && r.state.round <= 32,
           "perfect script reaches target in <= 32 rounds");
  }

  const double secs = seconds_since(t0);
  std::string detail = failed.empty() ? "all properties hold" : "violated:";
  for (const auto& f : failed) detail += " [" + f + "]";
  return {failed.empty() && secs < 30.0, detail + fmt(", %.2f s", secs)};
}

// ---------------------------------------------------------------- criterion 8

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Verdict serialization(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = work / "serialization";
  fs::remove_all(dir);
  fs::create_directories(dir);
  int identical = 0, masked = 0, fgf_layers = 0;
  for (int i = 0; i < 50; ++i) {
    const auto m = testing::random_model(Rng::splitmix(800 + i));
    for (const auto& l : m.layers) {
      const auto k = nn::layer_kind(l);
      masked += k == nn::LayerKind::masked_conv || k == nn::LayerKind::masked_fc;
      fgf_layers += k == nn::LayerKind::fgf_conv;
    }
    const auto a = dir / fmt("m%02d_a.fgfp", i), b = dir / fmt("m%02d_b.fgfp", i);
    store::save(m, a);
    store::save(store::load(a), b);
    identical += slurp(a) == slurp(b);
  }

  const auto dest = dir / "dest.fgfp";
  store::save(testing::random_model(1), dest);
  const auto before = slurp(dest);
  bool intact = true;
  const auto other = testing::random_model(2);
  for (std::size_t cut : {std::size_t{0}, std::size_t{64}, store::encode(other).size() - 1}) {
    try {
      store::save(other, dest, store::SaveOptions{cut});
      intact = false;
    } catch (const IoError&) {
    }
    intact = intact && slurp(dest) == before;
  }
  const double secs = seconds_since(t0);
  return {identical == 50 && masked > 0 && fgf_layers > 0 && intact && secs < 10.0,
          fmt("%d/50 byte-identical (%d masked, %d FGF layers), interrupted save %s, %.2f s", identical, masked,
              fgf_layers, intact ? "left destination intact" : "corrupted destination", secs)};
}

// ---------------------------------------------------------------- criteria 7, 9

struct CliRun {
  int code = -1;
  std::string out;
  double seconds = 0.0;
};

CliRun fgfp_cli(const std::string& args, const fs::path& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = fs::path(log.string() + ".out");
  const std::string cmd = "'" + std::string(FGFP_CLI_PATH) + "' " + args + " >'" + out.string() + "' 2>'" + log.string() + "'";
  std::fprintf(stderr, "  $ fgfp %s\n", args.c_str());
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.seconds = seconds_since(t0);
  return r;
}

std::string field(const std::string& text, const std::string& key) {
  std::smatch m;
  if (std::regex_search(text, m, std::regex("(^|[ \\n])" + key + "=([^ \\n]+)"))) return m[2];
  return {};
}

double number(const std::string& text, const std::string& key) {
  const auto f = field(text, key);
  return f.empty() ? NAN : std::stod(f);
}

struct Desk {
  bool ran = false;
  std::string error;
  double baseline_acc = NAN, baseline_epochs = 8;
  double aup_drop = NAN, fgfp_drop = NAN, aup_sparsity = NAN;
  long long aup_logical = 0, fgfp_logical = 0, baseline_logical = 0;
  bool aup_flagged = false, fgfp_flagged = false;
  fs::path fgfp_dir;
  std::string fgfp_args, fgfp_digest;
  double seconds = 0.0;
};

constexpr const char* kCompressFlags =
    "--fgf 3d --layers top:1 --fgf-epochs 2 --pr 0.05 --round-epochs 1 --final-epochs 1 --seed 7";

Desk run_desk(const fs::path& mnist, const fs::path& work) {
  Desk d;
  const auto t0 = std::chrono::steady_clock::now();
  fs::remove_all(work / "desk");
  fs::create_directories(work / "desk");
  const auto base_dir = work / "desk" / "baseline";
  const std::string data = "--data '" + mnist.string() + "'";
  const auto train = fgfp_cli("train " + data + " --epochs 8 --seed 1 --out '" + base_dir.string() + "'",
                              work / "desk" / "train.log");
  if (train.code != 0) {
    d.error = fmt("train exited with %d", train.code);
    return d;
  }
  d.baseline_acc = number(train.out, "test_acc");
  const auto ckpt = (base_dir / "model.fgfp").string();

  const auto aup = fgfp_cli("prune --ckpt '" + ckpt + "' " + data +
                                " --target-sparsity 0.8 --pr 0.05 --acc-margin 1 --round-epochs 1 --final-epochs 1 "
                                "--seed 7 --out '" + (work / "desk" / "aup").string() + "'",
                            work / "desk" / "aup.log");
  if (aup.code != 0) {
    d.error = fmt("prune exited with %d", aup.code);
    return d;
  }
  d.aup_drop = -number(aup.out, "delta");
  d.aup_logical = static_cast<long long>(number(aup.out, "logical_params"));
  d.baseline_logical = static_cast<long long>(number(aup.out, "baseline_params"));
  d.aup_sparsity = number(aup.out, "sparsity");
  d.aup_flagged = field(aup.out, "flagged") == "1";

  d.fgfp_dir = work / "desk" / "fgfp_a";
  d.fgfp_args = "compress --ckpt '" + ckpt + "' " + data + " " + kCompressFlags +
                fmt(" --logical-budget %lld", d.aup_logical);
  const auto fgfp = fgfp_cli(d.fgfp_args + " --out '" + d.fgfp_dir.string() + "'", work / "desk" / "fgfp_a.log");
  if (fgfp.code != 0) {
    d.error = fmt("compress exited with %d", fgfp.code);
    return d;
  }
  d.fgfp_drop = -number(fgfp.out, "delta");
  d.fgfp_logical = static_cast<long long>(number(fgfp.out, "logical_params"));
  d.fgfp_flagged = field(fgfp.out, "flagged") == "1";
  d.fgfp_digest = field(fgfp.out, "digest");
  d.ran = true;
  d.seconds = seconds_since(t0);
  return d;
}

Verdict desk_table(const Desk& d) {
  if (!d.ran) return {false, "desk run failed: " + d.error};
  const bool baseline_ok = d.baseline_acc >= 98.0 && d.baseline_epochs <= 10;
  const bool aup_ok = d.aup_drop <= 2.0 && d.aup_sparsity >= 0.8 - 1e-9 && !d.aup_flagged;
  const bool fgfp_ok = d.fgfp_drop <= d.aup_drop + 0.5 && d.fgfp_logical <= d.aup_logical && !d.fgfp_flagged;
  const bool time_ok = d.seconds <= 45 * 60;
  return {baseline_ok && aup_ok && fgfp_ok && time_ok,
          fmt("baseline %.2f%% (8 epochs, %lld params); AUP-only drop %.2f at sparsity %.3f (%lld params, CR %.1f%%); "
              "FGFP drop %.2f (%lld params, CR %.1f%%); ordering %s; %.0f s",
              d.baseline_acc, d.baseline_logical, d.aup_drop, d.aup_sparsity, d.aup_logical,
              pipeline::compression_ratio(d.baseline_logical, d.aup_logical), d.fgfp_drop, d.fgfp_logical,
              pipeline::compression_ratio(d.baseline_logical, d.fgfp_logical),
              d.fgfp_drop <= d.aup_drop ? "FGFP drop <= AUP drop" : "flipped, FGFP drop > AUP drop", d.seconds)};
}

// History rows without the wall-clock column.
std::string history_without_time(const std::string& csv) {
  std::istringstream is(csv);
  std::string out;
  for (std::string line; std::getline(is, line);) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

Verdict determinism(const Desk& d, const fs::path& work) {
  if (!d.ran) return {false, "needs the desk run, which failed: " + d.error};
  const auto t0 = std::chrono::steady_clock::now();
  const auto again_dir = work / "desk" / "fgfp_b";
  const auto again = fgfp_cli(d.fgfp_args + " --out '" + again_dir.string() + "'", work / "desk" / "fgfp_b.log");
  if (again.code != 0) return {false, fmt("second compress exited with %d", again.code)};
  const auto ha = slurp(d.fgfp_dir / "run-7_aup_history.csv");
  const auto hb = slurp(again_dir / "run-7_aup_history.csv");
  const bool history = !ha.empty() && history_without_time(ha) == history_without_time(hb);
  const bool stages = slurp(d.fgfp_dir / "run-7_stages.csv") == slurp(again_dir / "run-7_stages.csv");
  const bool digest = !d.fgfp_digest.empty() && d.fgfp_digest == field(again.out, "digest");
  const bool bytes = slurp(d.fgfp_dir / "run-7_model.fgfp") == slurp(again_dir / "run-7_model.fgfp");
  const double secs = seconds_since(t0);
  return {history && stages && digest && bytes && secs <= 2 * 45 * 60,
          fmt("history %s, stage table %s, digest %s vs %s, checkpoint bytes %s, %.0f s",
              history ? "identical" : "differs", stages ? "identical" : "differs", d.fgfp_digest.c_str(),
              field(again.out, "digest").c_str(), bytes ? "identical" : "differ", secs)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  const char* mnist_env = std::getenv("FGFP_MNIST_DIR");
  const fs::path mnist = mnist_env ? mnist_env : FGFP_DEFAULT_MNIST_DIR;
  const char* work_env = std::getenv("FGFP_ACCEPTANCE_DIR");
  const fs::path work = work_env ? fs::path(work_env) : fs::path(FGFP_TEST_OUTPUT_DIR) / "acceptance_runs";
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Verdict()>& check) {
    if (!wanted(n)) return;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %d %s %s: %s\n", n, v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gl-coefficients", gl_exactness);
  report(2, "gradient-fidelity", gradient_fidelity);
  report(3, "parameter-counts", parameter_counts);
  report(4, "separability", separability);
  report(5, "plant-and-recover", plant_and_recover);
  report(6, "aup-state-machine", aup_properties);

  Desk desk;
  if (wanted(7) || wanted(9)) {
    if (!fs::exists(mnist / "train-images-idx3-ubyte")) {
      desk.error = "no MNIST IDX files in " + mnist.string() + " (run tools/prepare_mnist.py or set FGFP_MNIST_DIR)";
    } else {
      desk = run_desk(mnist, work);
    }
  }
  report(7, "desk-table", [&] { return desk_table(desk); });
  report(8, "serialization", [&] { return serialization(work); });
  report(9, "determinism", [&] { return determinism(desk, work); });

  std::printf("%s: %d failing\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
