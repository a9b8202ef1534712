#include "msplab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "msplab/errors.hpp"

namespace msplab {

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size())
    throw ContractError("accuracy needs equal-length predictions and labels");
  if (preds.empty()) throw DataError("accuracy over an empty prediction set");
  size_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double f1_macro(const std::vector<std::vector<double>>& scores,
                const std::vector<std::vector<int>>& truth, double threshold, ScoreKind kind,
                bool* zero_division) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("f1 threshold must lie strictly inside (0,1)");
  if (scores.size() != truth.size())
    throw ContractError("f1_macro needs equal sample counts in scores and truth");
  if (scores.empty()) throw DataError("f1_macro over an empty score matrix");
  const size_t n_classes = scores[0].size();
  if (n_classes == 0) throw DataError("f1_macro needs at least one class");

  // Thresholding logits at the log-odds point equals sigmoid(z) > threshold.
  const double cut =
      kind == ScoreKind::probability ? threshold : std::log(threshold / (1.0 - threshold));

  std::vector<long> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != n_classes || truth[i].size() != n_classes)
      throw ContractError("f1_macro rows must all have the same class count");
    for (size_t c = 0; c < n_classes; ++c) {
      if (truth[i][c] != 0 && truth[i][c] != 1)
        throw DataError("multi-hot truth entries must be 0 or 1");
      const bool pred = scores[i][c] > cut;
      const bool pos = truth[i][c] == 1;
      if (pred && pos)
        ++tp[c];
      else if (pred && !pos)
        ++fp[c];
      else if (!pred && pos)
        ++fn[c];
    }
  }

  bool degenerate = false;
  double sum = 0.0;
  for (size_t c = 0; c < n_classes; ++c) {
    // F1 = 2TP / (2TP + FP + FN); the 0/0 case contributes 0.
    const long denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) {
      degenerate = true;
      continue;
    }
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  if (zero_division) *zero_division = degenerate;
  return sum / static_cast<double>(n_classes);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.shape.size() != 2) throw ContractError("argmax_rows expects a 2-d tensor");
  const int n = logits.shape[0], c = logits.shape[1];
  if (c < 1) throw ContractError("argmax_rows needs at least one column");
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (logits.data[static_cast<size_t>(i) * c + j] >
          logits.data[static_cast<size_t>(i) * c + best])
        best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

EvalResult evaluate_model(const Backbone& bb, const TaskHead& head, const PromptBank& bank,
                          const Dataset& data, const ObjectiveConfig& ocfg, double threshold,
                          int batch_size) {
  if (data.samples.empty()) throw DataError("evaluation over an empty dataset");
  if (batch_size < 1) throw ConfigError("evaluation batch_size must be at least 1");

  std::vector<int> preds, labels;
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<int>> truth;
  const size_t n = data.samples.size();
  for (size_t i = 0; i < n; i += static_cast<size_t>(batch_size)) {
    std::vector<const Sample*> batch;
    for (size_t k = i; k < std::min(n, i + static_cast<size_t>(batch_size)); ++k)
      batch.push_back(&data.samples[k]);
    TensorPtr logits = forward(bb, head, bank, batch);
    const int n_cls = logits->shape[1];
    if (ocfg.task_kind == TaskKind::multiclass_ce) {
      auto bm = argmax_rows(*logits);
      for (size_t r = 0; r < batch.size(); ++r) {
        preds.push_back(bm[r]);
        labels.push_back(batch[r]->label);
      }
    } else {
      for (size_t r = 0; r < batch.size(); ++r) {
        std::vector<double> row(static_cast<size_t>(n_cls));
        for (int c = 0; c < n_cls; ++c)
          row[static_cast<size_t>(c)] =
              1.0 / (1.0 + std::exp(-logits->data[r * static_cast<size_t>(n_cls) + c]));
        probs.push_back(std::move(row));
        if (batch[r]->multi_hot.size() != static_cast<size_t>(n_cls))
          throw DataError("sample multi-hot width disagrees with the class count");
        truth.push_back(batch[r]->multi_hot);
      }
    }
  }

  EvalResult out;
  out.n_samples = n;
  if (ocfg.task_kind == TaskKind::multiclass_ce) {
    out.metric_name = "accuracy";
    out.value = accuracy(preds, labels);
  } else {
    out.metric_name = "f1_macro";
    out.value = f1_macro(probs, truth, threshold, ScoreKind::probability, &out.zero_division);
  }
  return out;
}

}  // namespace msplab
