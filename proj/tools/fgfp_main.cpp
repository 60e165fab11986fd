#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fgfp/errors.hpp"
#include "fgfp/nd/parallel.hpp"
#include "fgfp/pipeline/pipeline.hpp"
#include "fgfp/store/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace fgfp;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void log(const std::string& msg) { std::cerr << msg << '\n' << std::flush; }

struct DataOpts {
  std::string dir;
  std::string dataset = "mnist";
  std::size_t val_count = 1000;
};

void add_data(CLI::App* cmd, DataOpts& d, bool required) {
  auto* o = cmd->add_option("--data", d.dir, "dataset directory");
  if (required) o->required();
  cmd->add_option("--dataset", d.dataset, "mnist or cifar10")->check(CLI::IsMember({"mnist", "cifar10"}));
  cmd->add_option("--val-count", d.val_count, "validation samples held out of train");
}

struct Splits {
  data::Dataset train, val, test;
};

// Validation split is carved from train with the seed recorded in the
// baseline checkpoint, so every stage sees the same partition.
Splits load_splits(const DataOpts& d, std::uint64_t split_seed) {
  if (!fs::is_directory(d.dir)) throw IoError("data directory " + d.dir + " does not exist");
  Splits s;
  std::pair<data::Dataset, data::Dataset> tt =
      d.dataset == "cifar10" ? data::load_cifar10(d.dir) : data::load_mnist_idx(d.dir);
  if (d.val_count >= tt.first.size()) throw UsageError("--val-count must be smaller than the training set");
  auto [train, val] = data::split_train_val(tt.first, split_seed, d.val_count);
  s.train = std::move(train);
  s.val = std::move(val);
  s.test = std::move(tt.second);
  if (d.dataset == "cifar10") {
    const auto stats = data::compute_channel_stats(s.train);
    data::standardize(s.train, stats);
    data::standardize(s.val, stats);
    data::standardize(s.test, stats);
  }
  return s;
}

void check_data_matches(const nn::Model& m, const Splits& s) {
  if (s.train.sample_shape() != m.input_shape) {
    throw DimensionError("dataset samples are " + nd::shape_str(s.train.sample_shape()) + " but the model expects " +
                         nd::shape_str(m.input_shape));
  }
}

// Numbers stay numbers in the echoed config.
nlohmann::ordered_json typed(const std::string& text) {
  if (text.empty()) return text;
  const char* end = text.data() + text.size();
  long long i = 0;
  if (auto [p, ec] = std::from_chars(text.data(), end, i); ec == std::errc() && p == end) return i;
  double d = 0.0;
  if (auto [p, ec] = std::from_chars(text.data(), end, d); ec == std::errc() && p == end) return d;
  return text;
}

// One JSON line with every option of the subcommand after flags, config file
// and defaults have been merged.
std::string resolved_config(const CLI::App* cmd) {
  nlohmann::ordered_json j;
  j["command"] = cmd->get_name();
  for (const auto* opt : cmd->get_options()) {
    if (opt->get_name() == "--help" || opt->get_name() == "--config" || opt->get_lnames().empty()) continue;
    const auto name = opt->get_lnames().front();
    if (opt->get_expected_max() == 0) {
      j[name] = opt->as<bool>();
    } else {
      const auto& res = opt->results();
      j[name] = typed(res.empty() ? opt->get_default_str() : res.back());
    }
  }
  if (const char* t = std::getenv("FGFP_THREADS")) j["FGFP_THREADS"] = t;
  j["workers"] = nd::worker_count();
  return j.dump();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
}

void write_text(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f.flush()) throw IoError("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

nn::LogSink train_log_sink(std::ostringstream* csv) {
  return [csv](const nn::LogRecord& r) {
    const auto line = nn::format_log(r);
    log("train " + line);
    if (csv) *csv << line << '\n';
  };
}

std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> w;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
      w.push_back(v);
    } catch (const std::logic_error&) {
      throw UsageError("bad --widths entry '" + tok + "'");
    }
  }
  if (w.empty()) throw UsageError("--widths must list at least one conv width");
  return w;
}

// "top:K" or a comma-separated list of layer ids.
pipeline::ConversionPlan make_plan(const nn::Model& m, const std::string& spec) {
  if (spec.rfind("top:", 0) == 0) {
    int k = 0;
    try {
      std::size_t used = 0;
      k = std::stoi(spec.substr(4), &used);
      if (used != spec.size() - 4 || k < 0) throw std::invalid_argument(spec);
    } catch (const std::logic_error&) {
      throw UsageError("--layers expects top:K with K >= 0, got '" + spec + "'");
    }
    return pipeline::select_layers(m, k);
  }
  pipeline::ConversionPlan plan;
  std::stringstream ss(spec);
  std::string id;
  while (std::getline(ss, id, ',')) {
    const auto idx = nn::find_layer(m, id);
    if (!idx) throw UsageError("no layer named " + id);
    if (!pipeline::is_eligible(m, *idx)) throw UsageError("layer " + id + " is not eligible for conversion");
    plan.layers.push_back(id);
  }
  return plan;
}

struct TrainOpts {
  std::string model = "small_cnn";
  std::string widths = "16,32,32";
  double epochs = 8.0;
  double lr = 0.05;
  double momentum = 0.9;
  int batch = 128;
  std::uint64_t seed = 0;
  bool augment = false;
  std::string out;
};

int cmd_train(const DataOpts& d, const TrainOpts& o) {
  auto splits = load_splits(d, o.seed);
  nn::CnnShape shape;
  shape.input = splits.train.sample_shape();
  shape.widths = parse_widths(o.widths);
  auto model = nn::build_small_cnn(shape, o.seed);
  model.meta.name = o.model;
  check_data_matches(model, splits);
  ensure_dir(o.out);

  nn::TrainConfig tc;
  tc.batch_size = o.batch;
  tc.lr = o.lr;
  tc.momentum = o.momentum;
  tc.epochs = o.epochs;
  tc.seed = Rng::splitmix(o.seed);
  tc.augment = o.augment;
  std::ostringstream csv;
  csv << "epoch,step,loss,lr,split_acc\n";
  nn::train(model, splits.train, tc, &splits.val, train_log_sink(&csv));

  const double val = nn::evaluate(model, splits.val);
  const double test = nn::evaluate(model, splits.test);
  model.meta.metrics["val_acc"] = val;
  model.meta.metrics["test_acc"] = test;
  model.meta.metrics["val_count"] = static_cast<double>(d.val_count);
  const fs::path ckpt = fs::path(o.out) / "model.fgfp";
  store::save(model, ckpt);
  write_text(fs::path(o.out) / "train_log.csv", csv.str());
  std::printf("checkpoint=%s val_acc=%.4f test_acc=%.4f params=%lld digest=%016llx\n", ckpt.c_str(), val, test,
              static_cast<long long>(nn::param_count(model, nn::Counting::logical)),
              static_cast<unsigned long long>(nn::model_digest(model)));
  return 0;
}

struct CompressOpts {
  std::string ckpt;
  std::string fgf = "3d";
  std::string layers = "top:1";
  double target = 0.8;
  double pr = 0.05;
  double pr_min = 0.005;
  int max_fails = 3;
  double acc_threshold = -1.0;
  double acc_margin = 1.0;
  std::int64_t logical_budget = -1;
  double fgf_epochs = 1.0;
  double fgf_lr = 0.1;
  double round_epochs = 2.0;
  double final_epochs = 1.0;
  double aup_lr = 0.01;
  int batch = 128;
  int fit_restarts = 8;
  int fit_iters = 500;
  std::uint64_t seed = 0;
  std::string run_id;
  std::string out;
};

int run_pipeline(DataOpts d, const CompressOpts& o) {
  auto model = store::load(o.ckpt);
  if (model.meta.metrics.count("val_count")) {
    const auto recorded = static_cast<std::size_t>(model.meta.metrics.at("val_count"));
    if (recorded != d.val_count) {
      log("note: using the checkpoint's validation size " + std::to_string(recorded));
    }
    d.val_count = recorded;
  }
  auto splits = load_splits(d, model.meta.seed);
  check_data_matches(model, splits);
  ensure_dir(o.out);

  const double baseline_test = nn::evaluate(model, splits.test);
  const auto baseline_logical = nn::param_count(model, nn::Counting::logical);

  auto plan = make_plan(model, o.layers);
  plan.kind = fgf::parse_kind(o.fgf);
  plan.fit.restarts = o.fit_restarts;
  plan.fit.iters = o.fit_iters;
  plan.fit.seed = Rng::splitmix(o.seed ^ 0x66697421ull);

  pipeline::PipelineConfig pc;
  auto tc = [&](double epochs, double lr, std::uint64_t salt) {
    nn::TrainConfig t;
    t.batch_size = o.batch;
    t.lr = lr;
    t.epochs = epochs;
    t.seed = Rng::splitmix(o.seed + salt);
    t.lr_schedule.clear();
    return t;
  };
  pc.fgf_finetune = tc(o.fgf_epochs, o.fgf_lr, 1);
  pc.fgf_finetune.lr_schedule = {{0.5, 0.1}, {0.75, 0.1}};
  pc.aup_finetune = tc(o.round_epochs, o.aup_lr, 2);
  pc.final_finetune = tc(o.final_epochs, o.aup_lr, 3);
  pc.final_finetune.lr_schedule = {{0.5, 0.1}};
  pc.aup.target_sparsity = o.target;
  pc.aup.p_r = o.pr;
  pc.aup.p_r_min = o.pr_min;
  pc.aup.max_fails = o.max_fails;
  if (o.acc_threshold >= 0.0) pc.theta_acc = o.acc_threshold;
  pc.theta_margin = o.acc_margin;
  if (o.logical_budget >= 0) pc.logical_budget = o.logical_budget;

  pipeline::Progress progress;
  progress.note = [](const std::string& m) { log(m); };
  auto res = pipeline::run_fgfp(std::move(model), plan, pc, splits.train, splits.val, progress);

  auto& out = res.model;
  const double test = nn::evaluate(out, splits.test);
  out.meta.metrics["baseline_acc"] = baseline_test;
  out.meta.metrics["baseline_logical"] = static_cast<double>(baseline_logical);
  out.meta.metrics["test_acc"] = test;
  out.meta.metrics["val_acc"] = res.stages.back().val_acc;
  out.meta.metrics["theta_acc"] = res.theta_acc;
  out.meta.metrics["target_sparsity"] = res.target_sparsity;
  out.meta.metrics["aup_flagged"] = res.aup_flagged ? 1.0 : 0.0;
  const auto logical = nn::param_count(out, nn::Counting::logical);
  const double cr = pipeline::compression_ratio(baseline_logical, logical);
  out.meta.metrics["cr"] = cr;

  const std::string run_id = o.run_id.empty() ? "run-" + std::to_string(o.seed) : o.run_id;
  const fs::path dir(o.out);
  store::save(out, dir / (run_id + "_model.fgfp"));
  std::ostringstream stages, hist;
  pipeline::write_stage_csv(stages, res.stages);
  aup::write_history_csv(hist, res.history);
  write_text(dir / (run_id + "_stages.csv"), stages.str());
  write_text(dir / (run_id + "_aup_history.csv"), hist.str());

  std::printf("checkpoint=%s\n", (dir / (run_id + "_model.fgfp")).c_str());
  std::printf("baseline_test_acc=%.4f test_acc=%.4f delta=%.4f\n", baseline_test, test, test - baseline_test);
  std::printf("logical_params=%lld baseline_params=%lld cr=%.4f sparsity=%.4f\n", static_cast<long long>(logical),
              static_cast<long long>(baseline_logical), cr, aup::global_sparsity(out).sparsity());
  std::printf("digest=%016llx flagged=%d\n", static_cast<unsigned long long>(nn::model_digest(out)),
              res.aup_flagged || !res.flagged_layers.empty() ? 1 : 0);
  return 0;
}

struct EvalOpts {
  std::string ckpt;
  std::string split = "test";
  int batch = 256;
};

int cmd_eval(const DataOpts& d, const EvalOpts& o) {
  const auto model = store::load(o.ckpt);
  DataOpts dd = d;
  if (model.meta.metrics.count("val_count")) dd.val_count = static_cast<std::size_t>(model.meta.metrics.at("val_count"));
  const auto splits = load_splits(dd, model.meta.seed);
  check_data_matches(model, splits);
  const auto& ds = o.split == "val" ? splits.val : o.split == "train" ? splits.train : splits.test;
  std::printf("%s_acc=%.4f\n", o.split.c_str(), nn::evaluate(model, ds, o.batch));
  return 0;
}

int cmd_report(const std::string& ckpt, const std::string& baseline) {
  const auto c = store::read_summary(ckpt);
  const auto b = store::read_summary(baseline);
  bool same = c.input_shape == b.input_shape && c.num_classes == b.num_classes && c.layers.size() == b.layers.size();
  for (std::size_t i = 0; same && i < c.layers.size(); ++i) same = c.layers[i].id == b.layers[i].id;
  if (!same) throw UsageError("checkpoints do not share an architecture");

  std::printf("layer,kind,baseline_logical,logical,stored,cr\n");
  for (std::size_t i = 0; i < c.layers.size(); ++i) {
    const auto& l = c.layers[i];
    const auto& bl = b.layers[i];
    if (bl.logical == 0 && l.logical == 0) continue;
    std::string kind = nn::kind_name(l.kind);
    if (l.fgf_kind) kind += std::string(":") + fgf::kind_name(*l.fgf_kind);
    std::printf("%s,%s,%lld,%lld,%lld,%.2f\n", l.id.c_str(), kind.c_str(), static_cast<long long>(bl.logical),
                static_cast<long long>(l.logical), static_cast<long long>(l.stored),
                bl.logical > 0 ? pipeline::compression_ratio(bl.logical, l.logical) : 0.0);
  }
  const double cr = pipeline::compression_ratio(b.logical(), c.logical());
  std::printf("total,,%lld,%lld,%lld,%.2f\n", static_cast<long long>(b.logical()), static_cast<long long>(c.logical()),
              static_cast<long long>(c.stored()), cr);
  auto metric = [](const store::Summary& s, const char* k) {
    const auto it = s.meta.metrics.find(k);
    return it == s.meta.metrics.end() ? -1.0 : it->second;
  };
  const double acc_b = metric(b, "test_acc"), acc_c = metric(c, "test_acc");
  if (acc_b >= 0.0 && acc_c >= 0.0) {
    std::printf("baseline_test_acc=%.4f test_acc=%.4f delta_acc=%.4f\n", acc_b, acc_c, acc_c - acc_b);
  }
  std::printf("cr=%.4f\n", cr);
  return 0;
}

int cmd_export(const std::string& ckpt, const std::string& layer_id, int filter, const std::string& out) {
  const auto model = store::load(ckpt);
  const auto idx = nn::find_layer(model, layer_id);
  if (!idx) throw UsageError("no layer named " + layer_id);
  const auto* f = std::get_if<nn::FgfConv2d>(&model.layers[*idx]);
  if (!f) throw UsageError("layer " + layer_id + " is not an FGF layer");
  std::ostringstream csv;
  store::export_kernel_csv(csv, *f, filter);
  if (out.empty() || out == "-") {
    std::cout << csv.str();
  } else {
    write_text(out, csv.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractional Gaussian filter compression toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file; options go under a [subcommand] section, flags take precedence");
  app.option_defaults()->always_capture_default();

  DataOpts data_opts;
  TrainOpts train_opts;
  auto* train = app.add_subcommand("train", "train a baseline small CNN");
  add_data(train, data_opts, true);
  train->add_option("--model", train_opts.model, "architecture")->check(CLI::IsMember({"small_cnn"}));
  train->add_option("--widths", train_opts.widths, "conv widths, comma separated");
  train->add_option("--epochs", train_opts.epochs)->check(CLI::NonNegativeNumber);
  train->add_option("--lr", train_opts.lr)->check(CLI::PositiveNumber);
  train->add_option("--momentum", train_opts.momentum);
  train->add_option("--batch", train_opts.batch)->check(CLI::PositiveNumber);
  train->add_option("--seed", train_opts.seed)->required();
  train->add_flag("--augment", train_opts.augment, "crop + flip augmentation");
  train->add_option("--out", train_opts.out, "output directory")->required();

  CompressOpts comp;
  auto add_compress = [&](CLI::App* cmd, bool fgf_stage, bool aup_stage) {
    add_data(cmd, data_opts, true);
    cmd->add_option("--ckpt", comp.ckpt, "input checkpoint")->required();
    if (fgf_stage) {
      cmd->add_option("--fgf", comp.fgf, "FGF form")->check(CLI::IsMember({"ca", "3d"}));
      cmd->add_option("--layers", comp.layers, "top:K or comma-separated layer ids");
      cmd->add_option("--fgf-epochs", comp.fgf_epochs, "fine-tune epochs after each conversion");
      cmd->add_option("--fgf-lr", comp.fgf_lr)->check(CLI::PositiveNumber);
      cmd->add_option("--fit-restarts", comp.fit_restarts)->check(CLI::PositiveNumber);
      cmd->add_option("--fit-iters", comp.fit_iters)->check(CLI::PositiveNumber);
    }
    if (aup_stage) {
      cmd->add_option("--target-sparsity", comp.target)->check(CLI::Range(0.0, 0.999999));
      cmd->add_option("--pr", comp.pr, "fraction of nonzeros pruned per round")->check(CLI::Range(1e-6, 0.999999));
      cmd->add_option("--pr-min", comp.pr_min)->check(CLI::Range(1e-6, 0.999999));
      cmd->add_option("--max-fails", comp.max_fails)->check(CLI::PositiveNumber);
      cmd->add_option("--acc-threshold", comp.acc_threshold, "accuracy floor; default is post-FGF val acc - margin");
      cmd->add_option("--acc-margin", comp.acc_margin);
      cmd->add_option("--logical-budget", comp.logical_budget, "prune to this logical parameter count instead");
      cmd->add_option("--round-epochs", comp.round_epochs, "fine-tune epochs per pruning round");
      cmd->add_option("--final-epochs", comp.final_epochs);
      cmd->add_option("--aup-lr", comp.aup_lr)->check(CLI::PositiveNumber);
    }
    cmd->add_option("--batch", comp.batch)->check(CLI::PositiveNumber);
    cmd->add_option("--seed", comp.seed)->required();
    cmd->add_option("--run-id", comp.run_id, "prefix for output files (default run-<seed>)");
    cmd->add_option("--out", comp.out, "output directory")->required();
  };
  auto* compress = app.add_subcommand("compress", "convert the largest layers to FGF, then prune the rest");
  add_compress(compress, true, true);
  auto* convert = app.add_subcommand("convert", "FGF stage only");
  add_compress(convert, true, false);
  auto* prune = app.add_subcommand("prune", "adaptive unstructured pruning only");
  add_compress(prune, false, true);

  EvalOpts eval_opts;
  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  add_data(eval, data_opts, true);
  eval->add_option("--ckpt", eval_opts.ckpt)->required();
  eval->add_option("--split", eval_opts.split)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--batch", eval_opts.batch)->check(CLI::PositiveNumber);

  std::string rep_ckpt, rep_base;
  auto* report = app.add_subcommand("report", "parameter counts and compression ratio against a baseline");
  report->add_option("--ckpt", rep_ckpt)->required();
  report->add_option("--baseline", rep_base)->required();

  std::string ex_ckpt, ex_layer, ex_out;
  int ex_filter = 0;
  auto* exp = app.add_subcommand("export-kernel", "synthesized FGF kernel and factors as CSV");
  exp->add_option("--ckpt", ex_ckpt)->required();
  exp->add_option("--layer", ex_layer)->required();
  exp->add_option("--filter", ex_filter);
  exp->add_option("--out", ex_out, "CSV path, - for stdout");

  // --config may follow the subcommand; the root app owns it.
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      args.insert(args.begin(), {a, argv[++i]});
    } else if (a.rfind("--config=", 0) == 0) {
      args.insert(args.begin(), a);
    } else {
      args.push_back(a);
    }
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;
    for (auto* cmd : app.get_subcommands()) std::cerr << cmd->help();
    return kExitUsage;
  }

  try {
    for (auto* cmd : app.get_subcommands()) log("config " + resolved_config(cmd));
    if (*train) return cmd_train(data_opts, train_opts);
    if (*compress) return run_pipeline(data_opts, comp);
    if (*convert) {
      comp.target = 0.0;
      return run_pipeline(data_opts, comp);
    }
    if (*prune) {
      comp.layers = "top:0";
      return run_pipeline(data_opts, comp);
    }
    if (*eval) return cmd_eval(data_opts, eval_opts);
    if (*report) return cmd_report(rep_ckpt, rep_base);
    if (*exp) return cmd_export(ex_ckpt, ex_layer, ex_filter, ex_out);
  } catch (const UsageError& e) {
    log(std::string("usage error: ") + e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    log(std::string("numeric error: ") + e.what());
    return kExitNumeric;
  } catch (const FitError& e) {
    log(std::string("numeric error: ") + e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    log(std::string("data error: ") + e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    log(std::string("data error: ") + e.what());
    return kExitData;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return kExitUsage;
}
