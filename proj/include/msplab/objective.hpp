#pragma once

// Prompt orthogonality regularizer, task losses, and the composite training
// objective.

#include <vector>

#include "msplab/model.hpp"
#include "msplab/tensor.hpp"

namespace msplab {

enum class TaskKind { multiclass_ce, multilabel_bce };

TaskKind parse_task_kind(const std::string& s);  // ConfigError on unknown token
std::string to_string(TaskKind k);

struct ObjectiveConfig {
  double lambda = 0.15;
  double eps = 1e-8;
  TaskKind task_kind = TaskKind::multiclass_ce;

  void validate() const;  // ConfigError when lambda < 0 or eps <= 0
};

// Row-major 1-D view of any tensor; shares values through differentiation.
TensorPtr flatten(const TensorPtr& p);

// |f(P)·f(Q)| / max(|f(P)| |f(Q)|, eps) for one prompt pair.
TensorPtr pair_cosine_penalty(const TensorPtr& p, const TensorPtr& q, double eps);

// Mean of pair_cosine_penalty over all unordered prompt pairs of an MSP bank.
// ContractError for MAP/none banks or fewer than two prompts.
TensorPtr ortho_loss(const PromptBank& bank, const ObjectiveConfig& cfg);

// multiclass_ce: mean cross entropy on integer class labels. multilabel_bce:
// BCE-with-logits against the one-hot expansion of those labels.
TensorPtr task_loss(const TensorPtr& logits, const std::vector<int>& labels,
                    const ObjectiveConfig& cfg);

// BCE-with-logits against explicit multi-hot targets.
TensorPtr task_loss_multihot(const TensorPtr& logits, const TensorPtr& targets,
                             const ObjectiveConfig& cfg);

// task + lambda * ortho. Returns task unchanged when ortho is absent or
// lambda is zero, so no gradient flows into an unused regularizer.
TensorPtr total_loss(const TensorPtr& task, const TensorPtr& ortho, const ObjectiveConfig& cfg);

}  // namespace msplab
