#pragma once

// AdamW optimization with lazy (gradient-gated) updates, the training loop
// with per-sample prompt routing, and backbone pretraining.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msplab/dataset.hpp"
#include "msplab/model.hpp"
#include "msplab/objective.hpp"

namespace msplab {

struct TrainConfig {
  double lr = 1e-2;
  double weight_decay = 2e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 6;
  int epochs = 40;
  uint64_t seed = 0;
  TrainMode mode = TrainMode::prompt_tune;
  PromptStrategy strategy = PromptStrategy::msp;
  double lambda = 0.15;

  void validate() const;  // ConfigError on any out-of-range value
};

// Decoupled-weight-decay Adam over a fixed parameter list. A parameter whose
// gradient is exactly all-zero in a step is skipped outright: no moment
// update, no decay, no step-count advance. Each parameter keeps its own step
// counter so late-starting prompts still get correct bias correction.
class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, const TrainConfig& cfg);

  void zero_grad();
  void step();
  const std::vector<NamedParam>& params() const { return params_; }
  uint64_t step_count(size_t i) const { return slots_[i].t; }

 private:
  struct Slot {
    std::vector<double> m, v;
    uint64_t t = 0;
  };
  std::vector<NamedParam> params_;
  std::vector<Slot> slots_;
  TrainConfig cfg_;
};

struct StepRecord {
  int step = 0;
  double l_cls = 0.0;
  double l_ortho = 0.0;
  double l_total = 0.0;
};

struct TrainedRun {
  std::vector<StepRecord> curve;
};

// epochs x ceil(N/batch) steps over per-epoch seed-shuffled batches. Trains
// exactly the mode's parameter set; the ortho term is attached for MSP runs.
// tcfg.lambda is authoritative: it overrides ocfg.lambda for the run.
// Non-finite loss aborts with NumericError naming the step.
TrainedRun train(Backbone& bb, TaskHead& head, PromptBank& bank, const Dataset& data,
                 const TrainConfig& tcfg, const ObjectiveConfig& ocfg);

// Full finetune on a modality-complete synthetic dataset; the desk-scale
// stand-in for large-scale pretraining. Writes backbone+head parameters to
// checkpoint_path when nonempty.
Model pretrain_backbone(const ModelConfig& mcfg, const SyntheticTaskSpec& spec,
                        const TrainConfig& tcfg, const std::string& checkpoint_path = "");

void write_loss_curve(const std::string& path, const std::vector<StepRecord>& curve);
void write_run_manifest(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& entries);

}  // namespace msplab
