#pragma once

// Classification metrics and model evaluation. Metric values always lie in
// [0,1]; degenerate zero-division cases contribute 0 and can be flagged.

#include <cstdint>
#include <string>
#include <vector>

#include "msplab/dataset.hpp"
#include "msplab/model.hpp"
#include "msplab/objective.hpp"

namespace msplab {

// Fraction of exact matches. Equal lengths required; empty input is an error.
double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

enum class ScoreKind { probability, logit };

// Macro-averaged F1 over classes. scores is [n x c] (probabilities by
// default; logit scores are thresholded at the equivalent log-odds point),
// truth the 0/1 multi-hot matrix. threshold must lie strictly inside (0,1).
// A class whose precision or recall is 0/0 contributes F1 = 0; when that
// happens *zero_division is set so reports can flag it.
double f1_macro(const std::vector<std::vector<double>>& scores,
                const std::vector<std::vector<int>>& truth, double threshold = 0.5,
                ScoreKind kind = ScoreKind::probability, bool* zero_division = nullptr);

// Row-wise argmax of a [n x c] logit tensor.
std::vector<int> argmax_rows(const Tensor& logits);

struct EvalResult {
  std::string metric_name;  // "accuracy" or "f1_macro"
  double value = 0.0;
  size_t n_samples = 0;
  bool zero_division = false;  // only meaningful for f1_macro
};

// Batched forward over the dataset; multiclass tasks score argmax accuracy,
// multilabel tasks macro F1 of sigmoid(logits) against the multi-hot labels.
EvalResult evaluate_model(const Backbone& bb, const TaskHead& head, const PromptBank& bank,
                          const Dataset& data, const ObjectiveConfig& ocfg,
                          double threshold = 0.5, int batch_size = 32);

}  // namespace msplab
