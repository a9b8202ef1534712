#pragma once

// The train x eval scenario matrix: for each (strategy, train scenario,
// seed), adapt a pretrained backbone on a freshly masked train split, then
// score every inference scenario on a held-out split.

#include <cstdint>
#include <string>
#include <vector>

#include "msplab/dataset.hpp"
#include "msplab/model.hpp"
#include "msplab/objective.hpp"
#include "msplab/report.hpp"
#include "msplab/trainer.hpp"

namespace msplab {

// Strategy tokens name the adaptation recipe: "none" trains only the head on
// the frozen backbone, "finetune" trains everything, "map"/"msp" tune prompts
// and head on the frozen backbone.
struct StrategyToken {
  std::string token;
  PromptStrategy strategy = PromptStrategy::none;
  TrainMode mode = TrainMode::head_only;
};
StrategyToken parse_strategy_token(const std::string& token);  // ConfigError on unknown

struct MatrixConfig {
  std::vector<ScenarioConfig> train_scenarios;  // defaults to the standard triple
  std::vector<ScenarioConfig> eval_scenarios;
  std::vector<std::string> strategies = {"none", "map", "msp"};
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
  SyntheticTaskSpec task;  // the train split; the eval split uses task.seed+1
  int n_eval = 400;
  ModelConfig model;
  TrainConfig train;
  ObjectiveConfig objective;
  int workers = 1;

  MatrixConfig();
  void validate() const;  // ConfigError on empty lists or inconsistent dims
};

// The run seed doubles as the train-split mask seed; the eval-split mask seed
// is run seed + 1000. Head and prompts are re-initialized per run from the
// run seed; the backbone starts from `pretrained` (trained further only by
// the finetune token). The eval split must differ from the train split
// (hash-checked, PropertyError). Any failing run aborts the whole matrix
// with the cell identified. Rows come out in (strategy, train scenario,
// seed, eval scenario) config order regardless of worker count.
Report run_matrix(const MatrixConfig& cfg, const Model& pretrained);

}  // namespace msplab
