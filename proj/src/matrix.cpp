#include "msplab/matrix.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include "msplab/errors.hpp"
#include "msplab/metrics.hpp"

namespace msplab {

StrategyToken parse_strategy_token(const std::string& token) {
  if (token == "none") return {token, PromptStrategy::none, TrainMode::head_only};
  if (token == "finetune") return {token, PromptStrategy::none, TrainMode::finetune_all};
  if (token == "map") return {token, PromptStrategy::map, TrainMode::prompt_tune};
  if (token == "msp") return {token, PromptStrategy::msp, TrainMode::prompt_tune};
  throw ConfigError("unknown strategy token '" + token +
                    "' (use none, finetune, map or msp)");
}

MatrixConfig::MatrixConfig() {
  ScenarioConfig a, b, c;
  a.p_img = 1.00;
  a.p_txt = 0.30;
  b.p_img = 0.30;
  b.p_txt = 1.00;
  c.p_img = 0.65;
  c.p_txt = 0.65;
  train_scenarios = {a, b, c};
  eval_scenarios = {a, b, c};
}

void MatrixConfig::validate() const {
  if (train_scenarios.empty()) throw ConfigError("matrix needs at least one train scenario");
  if (eval_scenarios.empty()) throw ConfigError("matrix needs at least one eval scenario");
  if (strategies.empty()) throw ConfigError("matrix needs at least one strategy");
  if (seeds.empty()) throw ConfigError("matrix needs at least one seed");
  for (const auto& s : strategies) parse_strategy_token(s);
  for (const auto& sc : train_scenarios) sc.validate();
  for (const auto& sc : eval_scenarios) sc.validate();
  if (n_eval < 1) throw ConfigError("matrix n_eval must be at least 1");
  if (workers < 1) throw ConfigError("matrix workers must be at least 1");
  task.validate();
  model.validate();
  train.validate();
  objective.validate();
  if (model.vocab_size != task.vocab_size() || model.n_classes != task.n_classes() ||
      model.max_text_len != task.max_text_len || model.image_h != task.image_h ||
      model.image_w != task.image_w)
    throw ConfigError("model dimensions disagree with the synthetic task");
}

namespace {

// Fresh tensors with the source values; flags reset so the run's
// trainable_parameters call decides what learns.
void copy_parameters(const std::vector<NamedParam>& dst, const std::vector<NamedParam>& src) {
  if (dst.size() != src.size()) throw ContractError("parameter copy with mismatched lists");
  for (size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].tensor->shape != src[i].tensor->shape)
      throw ContractError("parameter copy mismatch at " + dst[i].name);
    dst[i].tensor->data = src[i].tensor->data;
    dst[i].tensor->set_requires_grad(false);
  }
}

struct RunKey {
  size_t strategy_idx, train_idx, seed_idx;
};

}  // namespace

Report run_matrix(const MatrixConfig& cfg, const Model& pretrained) {
  cfg.validate();

  Dataset train_base = generate_synthetic(cfg.task);
  SyntheticTaskSpec eval_task = cfg.task;
  eval_task.n_samples = cfg.n_eval;
  eval_task.seed = cfg.task.seed + 1;
  Dataset eval_base = generate_synthetic(eval_task);
  if (dataset_hash(train_base) == dataset_hash(eval_base))
    throw PropertyError("train and eval splits hash identically; the eval split must be unseen");
  const PlaceholderPolicy policy = PlaceholderPolicy::for_registry(train_base.registry);

  std::vector<RunKey> runs;
  for (size_t si = 0; si < cfg.strategies.size(); ++si)
    for (size_t ti = 0; ti < cfg.train_scenarios.size(); ++ti)
      for (size_t ri = 0; ri < cfg.seeds.size(); ++ri) runs.push_back({si, ti, ri});

  std::vector<std::vector<ReportRow>> results(runs.size());
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::string> errors(runs.size());
  std::vector<int> error_kinds(runs.size(), 0);  // 2/3/4/5 mirror the error taxonomy

  auto one_run = [&](const RunKey& key, std::vector<ReportRow>& out) {
    const StrategyToken strat = parse_strategy_token(cfg.strategies[key.strategy_idx]);
    const uint64_t run_seed = cfg.seeds[key.seed_idx];

    ScenarioConfig train_sc = cfg.train_scenarios[key.train_idx];
    train_sc.seed = run_seed;
    Dataset masked_train = apply_missing(train_base, train_sc, policy);

    // Fresh model shell: backbone weights from the pretrained run, head and
    // prompts re-drawn from the run seed.
    Model model = build_model(cfg.model, run_seed);
    copy_parameters(model.backbone.parameters(), pretrained.backbone.parameters());
    PromptBank bank =
        build_prompt_bank(strat.strategy, cfg.model, train_base.registry, run_seed);

    TrainConfig tcfg = cfg.train;
    tcfg.seed = run_seed;
    tcfg.mode = strat.mode;
    tcfg.strategy = strat.strategy;
    train(model.backbone, model.head, bank, masked_train, tcfg, cfg.objective);

    for (const auto& eval_sc_base : cfg.eval_scenarios) {
      ScenarioConfig eval_sc = eval_sc_base;
      eval_sc.seed = run_seed + 1000;
      Dataset masked_eval = apply_missing(eval_base, eval_sc, policy);
      EvalResult res = evaluate_model(model.backbone, model.head, bank, masked_eval,
                                      cfg.objective);
      ReportRow row;
      row.train_scenario = train_sc.name();
      row.eval_scenario = eval_sc.name();
      row.strategy = strat.token;
      row.seed = run_seed;
      row.metric = res.metric_name;
      row.value = res.value;
      row.flagged = res.zero_division;
      out.push_back(std::move(row));
    }
  };

  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= runs.size() || failed.load()) return;
      const RunKey& key = runs[i];
      try {
        one_run(key, results[i]);
      } catch (const std::exception& e) {
        const ScenarioConfig& t = cfg.train_scenarios[key.train_idx];
        errors[i] = "matrix cell strategy=" + cfg.strategies[key.strategy_idx] +
                    " train=" + t.name() + " seed=" + std::to_string(cfg.seeds[key.seed_idx]) +
                    ": " + e.what();
        if (dynamic_cast<const ConfigError*>(&e)) error_kinds[i] = 2;
        else if (dynamic_cast<const DataError*>(&e)) error_kinds[i] = 3;
        else if (dynamic_cast<const NumericError*>(&e)) error_kinds[i] = 4;
        else if (dynamic_cast<const PropertyError*>(&e)) error_kinds[i] = 5;
        else error_kinds[i] = 1;
        failed.store(true);
        return;
      }
    }
  };

  const size_t n_workers = std::min<size_t>(static_cast<size_t>(cfg.workers), runs.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (size_t i = 0; i < runs.size(); ++i) {
    if (error_kinds[i] == 0) continue;
    switch (error_kinds[i]) {
      case 2: throw ConfigError(errors[i]);
      case 3: throw DataError(errors[i]);
      case 4: throw NumericError(errors[i]);
      case 5: throw PropertyError(errors[i]);
      default: throw std::runtime_error(errors[i]);
    }
  }

  Report report;
  for (const auto& rows : results)
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  report.validate();
  return report;
}

}  // namespace msplab
