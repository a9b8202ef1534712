#include "msplab/objective.hpp"

#include "msplab/errors.hpp"

namespace msplab {

TaskKind parse_task_kind(const std::string& s) {
  if (s == "multiclass_ce") return TaskKind::multiclass_ce;
  if (s == "multilabel_bce") return TaskKind::multilabel_bce;
  throw ConfigError("unknown task kind '" + s + "' (expected multiclass_ce|multilabel_bce)");
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::multiclass_ce: return "multiclass_ce";
    case TaskKind::multilabel_bce: return "multilabel_bce";
  }
  throw ContractError("unreachable task kind");
}

void ObjectiveConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  if (eps <= 0.0) throw ConfigError("eps must be positive");
}

TensorPtr flatten(const TensorPtr& p) {
  return reshape(p, {static_cast<int>(p->numel())});
}

TensorPtr pair_cosine_penalty(const TensorPtr& p, const TensorPtr& q, double eps) {
  auto fp = flatten(p);
  auto fq = flatten(q);
  auto numer = abs_op(sum_all(mul(fp, fq)));
  auto denom = clamp_min(mul(l2_norm(fp), l2_norm(fq)), eps);
  return div_elem(numer, denom);
}

TensorPtr ortho_loss(const PromptBank& bank, const ObjectiveConfig& cfg) {
  cfg.validate();
  if (bank.strategy != PromptStrategy::msp)
    throw ContractError("ortho_loss applies to MSP banks only, got strategy " +
                        to_string(bank.strategy));
  const size_t n = bank.entries.size();
  if (n < 2) throw ContractError("ortho_loss needs at least two prompts");
  TensorPtr acc;
  int pairs = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      auto term = pair_cosine_penalty(bank.entries[i].tensor, bank.entries[j].tensor, cfg.eps);
      acc = acc ? add(acc, term) : term;
      ++pairs;
    }
  return pairs == 1 ? acc : scale(acc, 1.0 / pairs);
}

TensorPtr task_loss(const TensorPtr& logits, const std::vector<int>& labels,
                    const ObjectiveConfig& cfg) {
  cfg.validate();
  if (cfg.task_kind == TaskKind::multiclass_ce)
    return cross_entropy_multiclass(logits, labels);

  if (!logits->is_matrix()) throw DimensionError("multilabel logits must be 2-D");
  const int ncls = logits->cols();
  auto targets = Tensor::create(logits->shape);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= ncls)
      throw DataError("label " + std::to_string(labels[i]) + " out of range [0," +
                      std::to_string(ncls) + ")");
    targets->data[i * static_cast<size_t>(ncls) + static_cast<size_t>(labels[i])] = 1.0;
  }
  return bce_with_logits(logits, targets);
}

TensorPtr task_loss_multihot(const TensorPtr& logits, const TensorPtr& targets,
                             const ObjectiveConfig& cfg) {
  cfg.validate();
  if (cfg.task_kind != TaskKind::multilabel_bce)
    throw ContractError("multi-hot targets require the multilabel_bce task kind");
  return bce_with_logits(logits, targets);
}

TensorPtr total_loss(const TensorPtr& task, const TensorPtr& ortho, const ObjectiveConfig& cfg) {
  cfg.validate();
  if (!ortho || cfg.lambda == 0.0) return task;
  return add(task, scale(ortho, cfg.lambda));
}

}  // namespace msplab
