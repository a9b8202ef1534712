#include "msplab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "msplab/errors.hpp"
#include "msplab/rng.hpp"

namespace msplab {

namespace {

bool all_zero(const std::vector<double>& g) {
  for (double x : g) {
    if (x != 0.0) return false;
  }
  return true;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
}

AdamW::AdamW(std::vector<NamedParam> params, const TrainConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  slots_.resize(params_.size());
  for (const auto& p : params_) {
    if (!p.tensor) throw ContractError("optimizer given null parameter " + p.name);
    if (!p.tensor->requires_grad || p.tensor->grad.size() != p.tensor->data.size()) {
      throw ContractError("optimizer parameter lacks a gradient slot: " + p.name);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor->zero_grad();
}

void AdamW::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = *params_[i].tensor;
    if (all_zero(t.grad)) continue;  // untouched this step: no moments, no decay
    Slot& s = slots_[i];
    if (s.m.empty()) {
      s.m.assign(t.data.size(), 0.0);
      s.v.assign(t.data.size(), 0.0);
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (size_t j = 0; j < t.data.size(); ++j) {
      const double g = t.grad[j];
      s.m[j] = cfg_.beta1 * s.m[j] + (1.0 - cfg_.beta1) * g;
      s.v[j] = cfg_.beta2 * s.v[j] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = s.m[j] / bc1;
      const double v_hat = s.v[j] / bc2;
      const double theta = t.data[j];
      // decay is decoupled and uses the pre-update value
      t.data[j] = theta - cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps) -
                  cfg_.lr * cfg_.weight_decay * theta;
    }
  }
}

TrainedRun train(Backbone& bb, TaskHead& head, PromptBank& bank, const Dataset& data,
                 const TrainConfig& tcfg, const ObjectiveConfig& ocfg_in) {
  tcfg.validate();
  ObjectiveConfig ocfg = ocfg_in;
  ocfg.lambda = tcfg.lambda;
  ocfg.validate();
  if (bank.strategy != tcfg.strategy) {
    throw ConfigError("prompt bank strategy does not match the training configuration");
  }
  if (data.samples.empty()) throw DataError("cannot train on an empty dataset");

  auto trainable = trainable_parameters(bb, head, bank, tcfg.mode);
  AdamW opt(trainable, tcfg);

  const size_t n = data.samples.size();
  const size_t bsz = static_cast<size_t>(tcfg.batch_size);
  std::vector<size_t> order(n);

  TrainedRun run;
  int step = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuf = Rng::derived(tcfg.seed, static_cast<uint64_t>(epoch));
    shuf.shuffle(order);
    for (size_t start = 0; start < n; start += bsz) {
      const size_t stop = std::min(n, start + bsz);
      std::vector<const Sample*> batch;
      batch.reserve(stop - start);
      std::vector<int> labels;
      labels.reserve(stop - start);
      for (size_t k = start; k < stop; ++k) {
        batch.push_back(&data.samples[order[k]]);
        labels.push_back(data.samples[order[k]].label);
      }

      opt.zero_grad();
      TensorPtr logits = forward(bb, head, bank, batch);
      TensorPtr l_cls = task_loss(logits, labels, ocfg);
      TensorPtr l_ortho;
      if (tcfg.strategy == PromptStrategy::msp) l_ortho = ortho_loss(bank, ocfg);
      TensorPtr total = total_loss(l_cls, l_ortho, ocfg);

      StepRecord rec;
      rec.step = step;
      rec.l_cls = l_cls->item();
      rec.l_ortho = l_ortho ? l_ortho->item() : 0.0;
      rec.l_total = total->item();
      if (!std::isfinite(rec.l_total)) {
        throw NumericError("non-finite loss at step " + std::to_string(step));
      }
      run.curve.push_back(rec);

      backward(total);
      opt.step();
      ++step;
    }
  }
  return run;
}

Model pretrain_backbone(const ModelConfig& mcfg, const SyntheticTaskSpec& spec,
                        const TrainConfig& tcfg_in, const std::string& checkpoint_path) {
  TrainConfig tcfg = tcfg_in;
  tcfg.mode = TrainMode::finetune_all;
  tcfg.strategy = PromptStrategy::none;
  tcfg.lambda = 0.0;

  Dataset data = generate_synthetic(spec);
  Model model = build_model(mcfg, tcfg.seed);
  PromptBank no_bank;
  no_bank.strategy = PromptStrategy::none;

  ObjectiveConfig ocfg;
  train(model.backbone, model.head, no_bank, data, tcfg, ocfg);

  if (!checkpoint_path.empty()) {
    std::vector<NamedParam> params = model.backbone.parameters();
    auto hp = model.head.parameters();
    params.insert(params.end(), hp.begin(), hp.end());
    save_checkpoint(checkpoint_path, params);
  }
  return model;
}

void write_loss_curve(const std::string& path, const std::vector<StepRecord>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open loss curve file for writing: " + path);
  out << "step,l_cls,l_ortho,l_total\n";
  for (const auto& r : curve) {
    out << r.step << ',' << fmt_double(r.l_cls) << ',' << fmt_double(r.l_ortho) << ','
        << fmt_double(r.l_total) << '\n';
  }
  if (!out) throw DataError("failed writing loss curve file: " + path);
}

void write_run_manifest(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open run manifest for writing: " + path);
  for (const auto& [key, value] : entries) {
    if (key.empty() || key.find_first_of(" =\n") != std::string::npos) {
      throw ContractError("manifest key must be nonempty and free of spaces: '" + key + "'");
    }
    if (value.find('\n') != std::string::npos) {
      throw ContractError("manifest value must be single-line for key " + key);
    }
    out << key << '=' << value << '\n';
  }
  if (!out) throw DataError("failed writing run manifest: " + path);
}

}  // namespace msplab
