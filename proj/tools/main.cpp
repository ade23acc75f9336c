#include "unirgbir/checkpoint.hpp"
#include "unirgbir/checks/suites.hpp"
#include "unirgbir/data.hpp"
#include "unirgbir/feature_export.hpp"
#include "unirgbir/model.hpp"
#include "unirgbir/param_report.hpp"
#include "unirgbir/tuning.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

namespace fs = std::filesystem;
using namespace unirgbir;

namespace {

struct CommonTrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string backbone_dir;
  std::string out_dir;
  std::string mode = "full";
  std::string sfi_stages;
  std::string attention;
  int steps = -1;
  double lr = -1;
  int batch = -1;
  int eval_interval = -1;
  int64_t seed = -1;
};

RunConfig resolve_config(const CommonTrainArgs& a) {
  RunConfig cfg;
  if (!a.config_path.empty()) cfg = load_run_config(a.config_path);
  if (!a.sfi_stages.empty()) cfg.model.sfi_stages = parse_stage_list(a.sfi_stages);
  if (!a.attention.empty()) cfg.model.attention = parse_attention_kind(a.attention);
  if (a.steps >= 0) cfg.train.steps = a.steps;
  if (a.lr >= 0) cfg.train.lr = a.lr;
  if (a.batch >= 0) cfg.train.batch_size = a.batch;
  if (a.eval_interval >= 0) cfg.train.eval_interval = a.eval_interval;
  if (a.seed >= 0) cfg.train.seed = (uint64_t)a.seed;
  cfg.model.validate();
  return cfg;
}

void write_resolved_config(const std::string& dir, const RunConfig& cfg,
                           const std::map<std::string, std::string>& extra) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "resolved_config.txt");
  if (!out) throw std::runtime_error("cannot write resolved config in " + dir);
  for (const auto& [k, v] : extra) out << k << " = " << v << "\n";
  out << serialize_run_config(cfg);
}

void write_loss_curve(const std::string& dir, const std::vector<double>& losses) {
  std::ofstream out(fs::path(dir) / "loss.txt");
  out.precision(9);
  for (size_t i = 0; i < losses.size(); ++i) out << (i + 1) << " " << losses[i] << "\n";
}

Dataset load_data_or_fail(const std::string& dir) {
  if (dir.empty()) throw std::runtime_error("--data is required");
  return read_dataset(dir);
}

std::map<std::string, Tensor<float>> load_pretrained(const std::string& dir) {
  if (dir.empty()) throw std::runtime_error("--backbone checkpoint directory is required");
  return load_checkpoint(dir).tensors;
}

void print_metrics_table(const ClassMetrics& m, Confusion const& conf) {
  static const char* kNames[] = {"background", "rgb-only", "ir-only", "both-modal"};
  std::cout << "# classes absent from gt are excluded from the means\n";
  std::cout << "class         present      Acc      IoU\n";
  for (int c = 0; c < conf.classes; ++c) {
    const std::string name = c < 4 ? kNames[c] : ("class" + std::to_string(c));
    std::printf("%-12s  %7s  %7.4f  %7.4f\n", name.c_str(), m.present[(size_t)c] ? "yes" : "no",
                m.acc[(size_t)c], m.iou[(size_t)c]);
  }
  std::printf("mAcc %.4f  mIoU %.4f\n", m.macc, m.miou);
}

/// Builds the model for a training run, wiring in the pretrained foundation
/// weights and the frozen/trainable split for the requested mode.
std::unique_ptr<UniRgbIrModel<float>> build_for_mode(const RunConfig& cfg, const std::string& mode,
                                                     const std::string& backbone_dir, Rng& rng) {
  const ArchMode arch = mode == "finetune_all" ? ArchMode::full : parse_arch_mode(mode);
  auto model = std::make_unique<UniRgbIrModel<float>>(cfg.model, arch, rng);
  model->adopt_pretrained(load_pretrained(backbone_dir));
  if (mode == "finetune_all") model->unfreeze_all();
  return model;
}

struct TrainOutcome {
  TrainResult result;
  ClassMetrics final_metrics;
  Confusion final_conf{4};
};

TrainOutcome train_one(UniRgbIrModel<float>& model, const RunConfig& cfg, const std::string& mode,
                       const Dataset& train, const Dataset& val, const std::string& out_dir,
                       bool verbose) {
  const TuneMode tune = mode == "finetune_all" ? TuneMode::full : TuneMode::adapter;
  Rng rng(cfg.train.seed);
  fs::create_directories(out_dir);
  TrainOutcome oc;
  oc.result = run_training(model, cfg, train, val, tune, mode, rng,
                           (fs::path(out_dir) / "metrics.ndjson").string(),
                           verbose ? &std::cout : nullptr);
  write_loss_curve(out_dir, oc.result.loss_curve);
  oc.final_conf = Confusion(cfg.model.head_classes);
  oc.final_metrics = evaluate_split(model, val, cfg.train.batch_size, &oc.final_conf);
  save_checkpoint(model.params(), cfg, to_string(model.mode()), cfg.train.seed,
                  (fs::path(out_dir) / "checkpoint").string());
  return oc;
}

int cmd_gen(uint64_t seed, int n, int hw, double noise, const std::string& out) {
  GenParams p;
  p.seed = seed;
  p.n_samples = n;
  p.height = p.width = hw;
  p.noise_sigma = (float)noise;
  const Dataset ds = generate_dataset(p);
  write_dataset(ds, out);
  RunConfig snapshot;
  write_resolved_config(out, snapshot,
                        {{"command", "gen"},
                         {"gen_seed", std::to_string(seed)},
                         {"gen_n", std::to_string(n)},
                         {"gen_hw", std::to_string(hw)},
                         {"gen_noise", std::to_string(noise)},
                         {"out", out}});
  std::cout << "wrote " << ds.samples.size() << " samples (" << hw << "x" << hw << ") to " << out
            << "\n";
  return 0;
}

int cmd_pretrain(const CommonTrainArgs& a) {
  RunConfig cfg = resolve_config(a);
  cfg.train.steps = a.steps >= 0 ? a.steps : cfg.train.pretrain_steps;
  cfg.train.lr = a.lr >= 0 ? a.lr : cfg.train.pretrain_lr;
  const Dataset full_ds = load_data_or_fail(a.data_dir);
  auto [train, val] = split_train_val(full_ds);

  seed_all(cfg.train.seed);
  Rng init_rng = global_rng().fork(1);
  UniRgbIrModel<float> model(cfg.model, ArchMode::pretrain, init_rng);

  write_resolved_config(a.out_dir, cfg,
                        {{"command", "pretrain"},
                         {"mode", "pretrain"},
                         {"data", a.data_dir},
                         {"out", a.out_dir}});
  std::cout << "pretraining foundation model (" << cfg.train.steps << " steps, RGB only)\n";
  TrainOutcome oc = train_one(model, cfg, "pretrain", train, val, a.out_dir, true);

  // the trained backbone becomes the frozen foundation model
  model.backbone().freeze(model.params());
  save_checkpoint(model.params(), cfg, "pretrain", cfg.train.seed,
                  (fs::path(a.out_dir) / "checkpoint").string());
  print_metrics_table(oc.final_metrics, oc.final_conf);
  return 0;
}

int cmd_train(const CommonTrainArgs& a) {
  if (a.mode == "baseline" && !a.sfi_stages.empty())
    throw CLI::ValidationError("--sfi-stages cannot be combined with --mode baseline");
  if ((a.mode == "baseline" || a.mode == "mfp_add") && !a.attention.empty())
    throw CLI::ValidationError("--attention applies only to modes with SFI (full, finetune_all)");
  RunConfig cfg = resolve_config(a);
  const Dataset full_ds = load_data_or_fail(a.data_dir);
  auto [train, val] = split_train_val(full_ds);

  seed_all(cfg.train.seed);
  Rng init_rng = global_rng().fork(1);
  auto model = build_for_mode(cfg, a.mode, a.backbone_dir, init_rng);

  write_resolved_config(a.out_dir, cfg,
                        {{"command", "train"},
                         {"mode", a.mode},
                         {"data", a.data_dir},
                         {"backbone", a.backbone_dir},
                         {"out", a.out_dir}});
  std::cout << "training mode=" << a.mode << " for " << cfg.train.steps << " steps\n";
  TrainOutcome oc = train_one(*model, cfg, a.mode, train, val, a.out_dir, true);
  print_metrics_table(oc.final_metrics, oc.final_conf);

  const ParamPartition part = make_partition(
      model->params(), a.mode == "finetune_all" ? TuneMode::full : TuneMode::adapter);
  std::cout << param_report(model->params(), part).to_string();
  return 0;
}

int cmd_eval(const std::string& ckpt_dir, const std::string& data_dir) {
  const CheckpointData ckpt = load_checkpoint(ckpt_dir);
  Rng rng(ckpt.seed);
  UniRgbIrModel<float> model(ckpt.config.model, parse_arch_mode(ckpt.mode), rng);
  load_into_store(ckpt, model.params());
  const Dataset full_ds = load_data_or_fail(data_dir);
  auto [train, val] = split_train_val(full_ds);
  Confusion conf(ckpt.config.model.head_classes);
  const ClassMetrics m = evaluate_split(model, val, ckpt.config.train.batch_size, &conf);
  print_metrics_table(m, conf);
  return 0;
}

int cmd_export(const std::string& ckpt_dir, const std::string& data_dir, int sample_idx,
               const std::string& out_dir) {
  const CheckpointData ckpt = load_checkpoint(ckpt_dir);
  Rng rng(ckpt.seed);
  UniRgbIrModel<float> model(ckpt.config.model, parse_arch_mode(ckpt.mode), rng);
  load_into_store(ckpt, model.params());
  const Dataset ds = load_data_or_fail(data_dir);
  if (sample_idx < 0 || sample_idx >= (int)ds.samples.size())
    throw std::runtime_error("--sample index out of range (dataset has " +
                             std::to_string(ds.samples.size()) + " samples)");

  Batch<float> b = make_batch<float>(ds, {sample_idx});
  ForwardHooks<float> hooks;
  hooks.capture = true;
  Graph<float> g;
  Binder<float> bind(g);
  model.forward(bind, g.leaf(b.rgb), g.leaf(b.ir), false, &hooks);

  ExportBundle bundle;
  for (auto& f : hooks.features) {
    bundle.entries.push_back({f.name, f.stage, f.value.shape, ""});
    bundle.arrays.push_back(std::move(f.value));
  }
  write_feature_export(bundle, out_dir);
  write_resolved_config(out_dir, ckpt.config,
                        {{"command", "export"},
                         {"checkpoint", ckpt_dir},
                         {"data", data_dir},
                         {"sample", std::to_string(sample_idx)},
                         {"out", out_dir}});
  std::cout << "exported " << bundle.entries.size() << " arrays to " << out_dir << "\n";
  return 0;
}

int cmd_check(const std::string& suite, int trials) {
  std::vector<checks::CheckResult> results;
  if (suite == "grad") results = checks::run_grad_suite();
  else if (suite == "oracle") results = checks::run_oracle_suite(std::max(trials, 1));
  else if (suite == "invariants") results = checks::run_invariant_suite(std::max(trials, 1));
  else throw CLI::ValidationError("unknown suite: " + suite + " (expect grad|oracle|invariants)");
  std::cout << checks::format_results(results);
  return checks::all_pass(results) ? 0 : 1;
}

struct AblateRow {
  std::string name;
  std::string mode;             // train mode
  std::vector<int> sfi_stages;  // empty = config default
  std::string attention;        // empty = config default
};

int cmd_ablate(const CommonTrainArgs& a, const std::string& axis, bool parallel) {
  std::vector<AblateRow> rows;
  if (axis == "components") {
    rows = {{"baseline", "baseline", {}, ""},
            {"mfp_add", "mfp_add", {}, ""},
            {"full", "full", {}, ""}};
  } else if (axis == "stages") {
    rows = {{"stages_1", "full", {1}, ""},
            {"stages_12", "full", {1, 2}, ""},
            {"stages_123", "full", {1, 2, 3}, ""},
            {"stages_1234", "full", {1, 2, 3, 4}, ""}};
  } else if (axis == "attention") {
    rows = {{"global", "full", {}, "global"}, {"deformable", "full", {}, "deformable"}};
  } else if (axis == "paradigm") {
    rows = {{"adapter", "full", {}, ""}, {"finetune_all", "finetune_all", {}, ""}};
  } else {
    throw CLI::ValidationError("unknown axis: " + axis);
  }

  const RunConfig base_cfg = resolve_config(a);
  fs::create_directories(a.out_dir);

  struct RowOutcome {
    std::string name;
    ClassMetrics metrics;
    std::vector<double> losses;
  };
  std::vector<RowOutcome> outcomes(rows.size());

  auto run_row = [&](size_t i) {
    const AblateRow& row = rows[i];
    RunConfig cfg = base_cfg;
    if (!row.sfi_stages.empty()) cfg.model.sfi_stages = row.sfi_stages;
    if (!row.attention.empty()) cfg.model.attention = parse_attention_kind(row.attention);
    const std::string row_dir = (fs::path(a.out_dir) / row.name).string();
    // each run owns its model, rng and dataset copy; nothing is shared
    const Dataset full_ds = load_data_or_fail(a.data_dir);
    auto [train, val] = split_train_val(full_ds);
    Rng init_rng = Rng(cfg.train.seed).fork(1);
    auto model = build_for_mode(cfg, row.mode, a.backbone_dir, init_rng);
    write_resolved_config(row_dir, cfg,
                          {{"command", "train"},
                           {"mode", row.mode},
                           {"data", a.data_dir},
                           {"backbone", a.backbone_dir},
                           {"out", row_dir}});
    TrainOutcome oc = train_one(*model, cfg, row.mode, train, val, row_dir, !parallel);
    outcomes[i] = {row.name, oc.final_metrics, oc.result.loss_curve};
  };

  if (parallel) {
    std::vector<std::thread> threads;
    for (size_t i = 0; i < rows.size(); ++i) threads.emplace_back(run_row, i);
    for (auto& t : threads) t.join();
  } else {
    for (size_t i = 0; i < rows.size(); ++i) {
      std::cout << "== row " << rows[i].name << "\n";
      run_row(i);
    }
  }

  std::cout << "\naxis: " << axis << "\n";
  std::cout << "row            mAcc     mIoU\n";
  for (const auto& oc : outcomes)
    std::printf("%-12s  %7.4f  %7.4f\n", oc.name.c_str(), oc.metrics.macc, oc.metrics.miou);

  if (axis == "paradigm" && outcomes.size() == 2) {
    const auto& adapter = outcomes[0].losses;
    const auto& full = outcomes[1].losses;
    if (full.size() >= 500 && !adapter.empty()) {
      const double target = full[499];
      int reached = -1;
      for (size_t t = 0; t < adapter.size(); ++t)
        if (adapter[t] <= target) {
          reached = (int)t + 1;
          break;
        }
      std::cout << "full fine-tune loss at step 500: " << target << "\n";
      if (reached > 0)
        std::cout << "adapter run reached that loss at step " << reached << "\n";
      else
        std::cout << "adapter run did not reach that loss within " << adapter.size() << " steps\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UniRGB-IR: adapter-tuned RGB-IR segmentation at desk scale"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic RGB-IR dataset");
  uint64_t gen_seed = 0;
  int gen_n = 240, gen_hw = 64;
  double gen_noise = 0.02;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--hw", gen_hw, "square image size (divisible by 32)");
  gen->add_option("--noise", gen_noise, "per-modality gaussian noise sigma");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto add_train_opts = [](CLI::App* cmd, CommonTrainArgs& a, bool with_mode) {
    cmd->add_option("--config", a.config_path, "key = value config file");
    cmd->add_option("--data", a.data_dir, "dataset directory")->required();
    cmd->add_option("--out", a.out_dir, "output directory")->required();
    cmd->add_option("--steps", a.steps, "override training steps");
    cmd->add_option("--lr", a.lr, "override learning rate");
    cmd->add_option("--batch", a.batch, "override batch size");
    cmd->add_option("--eval-interval", a.eval_interval, "override eval interval");
    cmd->add_option("--seed", a.seed, "override seed");
    if (with_mode) {
      cmd->add_option("--backbone", a.backbone_dir, "pretrained backbone checkpoint dir")
          ->required();
      cmd->add_option("--mode", a.mode, "full | mfp_add | baseline | finetune_all");
      cmd->add_option("--sfi-stages", a.sfi_stages, "comma list, e.g. 1,2,3");
      cmd->add_option("--attention", a.attention, "deformable | global");
    }
  };

  auto* pretrain = app.add_subcommand("pretrain", "train the RGB foundation model, then freeze it");
  CommonTrainArgs pre_args;
  add_train_opts(pretrain, pre_args, false);

  auto* train = app.add_subcommand("train", "adapter or full fine-tuning on RGB-IR data");
  CommonTrainArgs train_args;
  add_train_opts(train, train_args, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (mIoU / mAcc table)");
  std::string eval_ckpt, eval_data;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();

  auto* ablate = app.add_subcommand("ablate", "sweep one axis and print a comparison table");
  CommonTrainArgs ab_args;
  std::string ab_axis;
  bool ab_parallel = false;
  add_train_opts(ablate, ab_args, false);
  ablate->add_option("--backbone", ab_args.backbone_dir, "pretrained backbone checkpoint dir")
      ->required();
  ablate->add_option("--axis", ab_axis, "components | stages | attention | paradigm")->required();
  ablate->add_flag("--parallel", ab_parallel, "run rows in parallel (share-nothing)");

  auto* exp = app.add_subcommand("export", "dump intermediate features for one sample");
  std::string exp_ckpt, exp_data, exp_out;
  int exp_sample = 0;
  exp->add_option("--checkpoint", exp_ckpt, "checkpoint directory")->required();
  exp->add_option("--data", exp_data, "dataset directory")->required();
  exp->add_option("--sample", exp_sample, "sample index");
  exp->add_option("--out", exp_out, "output directory")->required();

  auto* check = app.add_subcommand("check", "run a verification suite");
  std::string check_suite;
  int check_trials = 0;
  check->add_option("--suite", check_suite, "grad | oracle | invariants")->required();
  check->add_option("--trials", check_trials, "randomized trial count (oracle/invariants)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(gen_seed, gen_n, gen_hw, gen_noise, gen_out);
    if (pretrain->parsed()) return cmd_pretrain(pre_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data);
    if (ablate->parsed()) return cmd_ablate(ab_args, ab_axis, ab_parallel);
    if (exp->parsed()) return cmd_export(exp_ckpt, exp_data, exp_sample, exp_out);
    if (check->parsed())
      return cmd_check(check_suite,
                       check_trials == 0 ? (check_suite == "oracle" ? 100 : 200) : check_trials);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
