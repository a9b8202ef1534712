// msplab command line: one verb per pipeline stage.
//   synth-data  generate (optionally mask) a synthetic dataset file
//   pretrain    full finetune on modality-complete data, save a checkpoint
//   train       adapt a pretrained checkpoint under a masking scenario
//   eval        score a trained checkpoint under a masking scenario
//   matrix      the full train x eval scenario grid, emitting reports
//   gradcheck   finite-difference audit of every differentiable op
//   report      re-render a json report in another format

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msplab/config.hpp"
#include "msplab/dataset.hpp"
#include "msplab/errors.hpp"
#include "msplab/gradcheck.hpp"
#include "msplab/matrix.hpp"
#include "msplab/metrics.hpp"
#include "msplab/model.hpp"
#include "msplab/objective.hpp"
#include "msplab/report.hpp"
#include "msplab/trainer.hpp"

namespace {

using namespace msplab;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = ".";
  std::string format;
  std::string seeds;
  std::string strategy;
  std::string scenario;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--set", args.sets, "override: key=value (repeatable)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--format", args.format, "report format: csv|json|markdown");
  cmd->add_option("--seeds", args.seeds, "comma-separated seed list");
  cmd->add_option("--strategy", args.strategy, "none|finetune|map|msp");
  cmd->add_option("--scenario", args.scenario, "presence fractions p_img,p_txt");
}

// Precedence: config file, then MSPLAB_SEED, then --set.
KeyValues load_config(const CommonArgs& args) {
  KeyValues kv;
  if (!args.config_path.empty()) kv = parse_config_file(args.config_path);
  apply_env_seed(kv);
  for (const auto& s : args.sets) apply_override(kv, s);
  if (!args.seeds.empty()) kv.set("matrix.seeds", args.seeds);
  if (!args.strategy.empty()) kv.set("cli.strategy", args.strategy);
  if (!args.scenario.empty()) kv.set("cli.scenario", args.scenario);
  if (!args.format.empty()) kv.set("io.format", args.format);
  return kv;
}

std::string out_path(const CommonArgs& args, const std::string& name) {
  std::filesystem::create_directories(args.out_dir);
  return (std::filesystem::path(args.out_dir) / name).string();
}

void warn_unused(const KeyValues& kv) {
  for (const auto& k : kv.unused_keys())
    std::fprintf(stderr, "warning: config key '%s' was never used\n", k.c_str());
}

std::vector<NamedParam> model_params(Model& model) {
  auto params = model.backbone.parameters();
  auto hp = model.head.parameters();
  params.insert(params.end(), hp.begin(), hp.end());
  return params;
}

std::vector<NamedParam> bundle_params(Model& model, PromptBank& bank) {
  auto params = model_params(model);
  auto bp = bank.parameters();
  params.insert(params.end(), bp.begin(), bp.end());
  return params;
}

int cmd_synth_data(const CommonArgs& args) {
  KeyValues kv = load_config(args);
  SyntheticTaskSpec spec = task_from(kv);
  Dataset data = generate_synthetic(spec);
  std::string masked_as = "none";
  if (kv.has("cli.scenario")) {
    ScenarioConfig sc = parse_scenario_pair(kv.get_string("cli.scenario", ""));
    sc.seed = kv.get_u64("scenario.seed", sc.seed);
    data = apply_missing(data, sc, PlaceholderPolicy::for_registry(data.registry));
    masked_as = sc.name();
  }
  const std::string path = out_path(args, "dataset.txt");
  write_dataset(data, path);
  write_run_manifest(out_path(args, "dataset_manifest.txt"),
                     {{"command", "synth-data"},
                      {"n_samples", std::to_string(data.samples.size())},
                      {"n_classes", std::to_string(spec.n_classes())},
                      {"scenario", masked_as},
                      {"dataset_hash", std::to_string(dataset_hash(data))}});
  warn_unused(kv);
  std::printf("wrote %s (%zu samples, hash %llu)\n", path.c_str(), data.samples.size(),
              static_cast<unsigned long long>(dataset_hash(data)));
  return kExitOk;
}

int cmd_pretrain(const CommonArgs& args) {
  KeyValues kv = load_config(args);
  SyntheticTaskSpec spec = task_from(kv);
  ModelConfig mcfg = model_from(kv, spec);
  TrainConfig tcfg = train_from(kv);
  if (!kv.has("train.epochs")) tcfg.epochs = 20;  // pretrain default
  tcfg.mode = TrainMode::finetune_all;
  tcfg.strategy = PromptStrategy::none;

  const std::string ckpt = out_path(args, "pretrained.ckpt");
  Dataset data = generate_synthetic(spec);
  Model model = build_model(mcfg, tcfg.seed);
  PromptBank no_bank;
  ObjectiveConfig ocfg = objective_from(kv);
  TrainConfig run_cfg = tcfg;
  run_cfg.lambda = 0.0;
  TrainedRun run = train(model.backbone, model.head, no_bank, data, run_cfg, ocfg);
  save_checkpoint(ckpt, model_params(model));
  write_loss_curve(out_path(args, "loss_curve.csv"), run.curve);
  write_run_manifest(out_path(args, "run_manifest.txt"),
                     {{"command", "pretrain"},
                      {"epochs", std::to_string(run_cfg.epochs)},
                      {"seed", std::to_string(run_cfg.seed)},
                      {"dataset_hash", std::to_string(dataset_hash(data))},
                      {"params_hash", std::to_string(params_hash(model_params(model)))}});
  warn_unused(kv);
  std::printf("wrote %s (final loss %.6f)\n", ckpt.c_str(), run.curve.back().l_total);
  return kExitOk;
}

int cmd_train(const CommonArgs& args) {
  KeyValues kv = load_config(args);
  SyntheticTaskSpec spec = task_from(kv);
  ModelConfig mcfg = model_from(kv, spec);
  TrainConfig tcfg = train_from(kv);
  ObjectiveConfig ocfg = objective_from(kv);
  if (kv.has("cli.strategy")) {
    StrategyToken tok = parse_strategy_token(kv.get_string("cli.strategy", ""));
    tcfg.strategy = tok.strategy;
    tcfg.mode = tok.mode;
  }

  ScenarioConfig sc;
  if (kv.has("cli.scenario"))
    sc = parse_scenario_pair(kv.get_string("cli.scenario", ""));
  else
    sc = scenario_from(kv);
  sc.seed = kv.get_u64("scenario.seed", tcfg.seed);

  Dataset data = generate_synthetic(spec);
  data = apply_missing(data, sc, PlaceholderPolicy::for_registry(data.registry));

  Model model = build_model(mcfg, tcfg.seed);
  const std::string ckpt_in = kv.get_string("io.checkpoint", "");
  if (!ckpt_in.empty()) load_checkpoint(ckpt_in, model_params(model));
  PromptBank bank = build_prompt_bank(tcfg.strategy, mcfg, data.registry, tcfg.seed);

  TrainedRun run = train(model.backbone, model.head, bank, data, tcfg, ocfg);

  const std::string ckpt_out = out_path(args, "model.ckpt");
  save_checkpoint(ckpt_out, bundle_params(model, bank));
  write_loss_curve(out_path(args, "loss_curve.csv"), run.curve);
  write_run_manifest(out_path(args, "run_manifest.txt"),
                     {{"command", "train"},
                      {"strategy", to_string(tcfg.strategy)},
                      {"mode", to_string(tcfg.mode)},
                      {"scenario", sc.name()},
                      {"epochs", std::to_string(tcfg.epochs)},
                      {"seed", std::to_string(tcfg.seed)},
                      {"lambda", std::to_string(tcfg.lambda)},
                      {"pretrained_from", ckpt_in.empty() ? "fresh" : ckpt_in},
                      {"dataset_hash", std::to_string(dataset_hash(data))},
                      {"params_hash",
                       std::to_string(params_hash(bundle_params(model, bank)))}});
  warn_unused(kv);
  std::printf("wrote %s (final loss %.6f)\n", ckpt_out.c_str(), run.curve.back().l_total);
  return kExitOk;
}

int cmd_eval(const CommonArgs& args) {
  KeyValues kv = load_config(args);
  SyntheticTaskSpec spec = task_from(kv);
  ModelConfig mcfg = model_from(kv, spec);
  TrainConfig tcfg = train_from(kv);
  ObjectiveConfig ocfg = objective_from(kv);
  if (kv.has("cli.strategy")) {
    StrategyToken tok = parse_strategy_token(kv.get_string("cli.strategy", ""));
    tcfg.strategy = tok.strategy;
  }

  ScenarioConfig sc;
  if (kv.has("cli.scenario"))
    sc = parse_scenario_pair(kv.get_string("cli.scenario", ""));
  else
    sc = scenario_from(kv);
  sc.seed = kv.get_u64("scenario.seed", tcfg.seed + 1000);

  Dataset data = generate_synthetic(spec);
  data = apply_missing(data, sc, PlaceholderPolicy::for_registry(data.registry));

  Model model = build_model(mcfg, tcfg.seed);
  PromptBank bank = build_prompt_bank(tcfg.strategy, mcfg, data.registry, tcfg.seed);
  const std::string ckpt = kv.get_string("io.checkpoint", "");
  if (ckpt.empty()) throw ConfigError("eval needs io.checkpoint pointing at a model.ckpt");
  load_checkpoint(ckpt, bundle_params(model, bank));

  EvalResult res = evaluate_model(model.backbone, model.head, bank, data, ocfg,
                                  kv.get_double("eval.threshold", 0.5));
  warn_unused(kv);
  std::printf("%s=%.17g n=%zu scenario=%s%s\n", res.metric_name.c_str(), res.value,
              res.n_samples, sc.name().c_str(), res.zero_division ? " flagged=1" : "");
  return kExitOk;
}

int cmd_matrix(const CommonArgs& args) {
  KeyValues kv = load_config(args);
  MatrixConfig cfg = matrix_from(kv);
  if (kv.has("cli.strategy")) cfg.strategies = {kv.get_string("cli.strategy", "")};
  if (kv.has("cli.scenario")) {
    ScenarioConfig sc = parse_scenario_pair(kv.get_string("cli.scenario", ""));
    cfg.train_scenarios = {sc};
    cfg.eval_scenarios = {sc};
  }
  cfg.validate();

  // Use the checkpoint when one is supplied, else pretrain here and now.
  Model pretrained = build_model(cfg.model, cfg.train.seed);
  const std::string ckpt = kv.get_string("io.checkpoint", "");
  if (!ckpt.empty() && std::filesystem::exists(ckpt)) {
    load_checkpoint(ckpt, model_params(pretrained));
  } else {
    TrainConfig pre_cfg = cfg.train;
    pre_cfg.epochs = kv.get_int("pretrain.epochs", 20);
    SyntheticTaskSpec pre_task = cfg.task;
    pre_task.seed = cfg.task.seed + 2;  // distinct from train and eval splits
    pre_task.n_samples = kv.get_int("pretrain.n_samples", cfg.task.n_samples);
    pretrained = pretrain_backbone(cfg.model, pre_task, pre_cfg,
                                   ckpt.empty() ? out_path(args, "pretrained.ckpt") : ckpt);
  }

  Report report = run_matrix(cfg, pretrained);

  std::vector<ReportFormat> formats;
  const std::string fmt = kv.get_string("io.format", "");
  if (fmt.empty())
    formats = {ReportFormat::csv, ReportFormat::json, ReportFormat::markdown};
  else
    formats = {parse_format(fmt)};
  for (ReportFormat f : formats) {
    const char* ext = f == ReportFormat::csv ? "report.csv"
                      : f == ReportFormat::json ? "report.json"
                                                : "report.md";
    emit_report(report, f, out_path(args, ext));
  }
  warn_unused(kv);
  std::printf("matrix complete: %zu rows -> %s\n", report.rows.size(), args.out_dir.c_str());
  return kExitOk;
}

int cmd_gradcheck(const CommonArgs& args) {
  KeyValues kv = load_config(args);
  GradCheckReport report = run_gradient_suite(kv.get_int("gradcheck.instances", 20),
                                              kv.get_u64("gradcheck.seed", 12345),
                                              kv.get_double("gradcheck.tol", 1e-4));
  warn_unused(kv);
  std::fputs(format_gradcheck(report).c_str(), stdout);
  if (!report.all_ok()) throw PropertyError("gradient checks exceeded tolerance");
  return kExitOk;
}

int cmd_report(const CommonArgs& args, const std::string& input) {
  KeyValues kv = load_config(args);
  Report report = report_from_json(read_text_file(input));
  const std::string fmt = kv.get_string("io.format", "markdown");
  ReportFormat f = parse_format(fmt);
  const char* name = f == ReportFormat::csv ? "report.csv"
                     : f == ReportFormat::json ? "report.json"
                                               : "report.md";
  emit_report(report, f, out_path(args, name));
  warn_unused(kv);
  std::printf("wrote %s\n", out_path(args, name).c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msplab: prompt-based multimodal learning under missing modalities"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string report_input;

  CLI::App* synth = app.add_subcommand("synth-data", "generate a synthetic dataset file");
  add_common(synth, args);
  CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain a backbone on complete data");
  add_common(pretrain, args);
  CLI::App* train_cmd = app.add_subcommand("train", "adapt a checkpoint under a scenario");
  add_common(train_cmd, args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a trained checkpoint");
  add_common(eval_cmd, args);
  CLI::App* matrix_cmd = app.add_subcommand("matrix", "run the scenario matrix");
  add_common(matrix_cmd, args);
  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(gradcheck_cmd, args);
  CLI::App* report_cmd = app.add_subcommand("report", "re-render a json report");
  report_cmd->add_option("input", report_input, "report.json produced by matrix")->required();
  add_common(report_cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? msplab::kExitOk : msplab::kExitConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(args);
    if (pretrain->parsed()) return cmd_pretrain(args);
    if (train_cmd->parsed()) return cmd_train(args);
    if (eval_cmd->parsed()) return cmd_eval(args);
    if (matrix_cmd->parsed()) return cmd_matrix(args);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(args);
    if (report_cmd->parsed()) return cmd_report(args, report_input);
  } catch (const msplab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return msplab::kExitConfig;
  } catch (const msplab::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return msplab::kExitData;
  } catch (const msplab::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return msplab::kExitNumeric;
  } catch (const msplab::PropertyError& e) {
    std::fprintf(stderr, "property violation: %s\n", e.what());
    return msplab::kExitProperty;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return msplab::kExitOk;
}
