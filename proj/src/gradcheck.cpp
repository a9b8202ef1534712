#include "msplab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "msplab/dataset.hpp"
#include "msplab/errors.hpp"
#include "msplab/model.hpp"
#include "msplab/objective.hpp"
#include "msplab/rng.hpp"
#include "msplab/tensor.hpp"

namespace msplab {

bool GradCheckReport::all_ok() const {
  if (entries.empty()) return false;
  for (const auto& e : entries)
    if (!e.ok) return false;
  return true;
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_err);
  return w;
}

namespace {

constexpr double kStep = 1e-5;
constexpr double kDenomFloor = 1e-3;

TensorPtr rand_tensor(const std::vector<int>& shape, Rng& rng, double sigma = 1.0) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<double> vals(n);
  for (auto& v : vals) v = rng.gaussian(sigma);
  auto t = Tensor::from_values(shape, vals);
  t->set_requires_grad(true);
  return t;
}

// Fixed random weights drawn once per instance; contracting against them
// keeps element mixups from cancelling out of the scalar loss, and the same
// weights must be reused by every finite-difference evaluation.
TensorPtr fixed_weights(const std::vector<int>& shape, Rng& rng) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<double> w(n);
  for (auto& v : w) v = rng.gaussian();
  return Tensor::from_values(shape, w);
}

TensorPtr contract(const TensorPtr& t, const TensorPtr& weights) {
  return sum_all(mul(t, weights));
}

// Max relative error of central differences vs the analytic gradient over
// every element of every input.
double fd_check(const std::vector<TensorPtr>& inputs,
                const std::function<TensorPtr()>& make_loss) {
  for (auto& t : inputs) t->zero_grad();
  TensorPtr loss = make_loss();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t->grad);

  double worst = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = *inputs[ti];
    for (size_t i = 0; i < t.data.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + kStep;
      const double up = make_loss()->item();
      t.data[i] = saved - kStep;
      const double down = make_loss()->item();
      t.data[i] = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      const double a = analytic[ti][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric),
                                                           kDenomFloor});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

using CaseFn = std::function<double(Rng&)>;

double check_matmul(Rng& rng) {
  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({4, 2}, rng);
  auto w = fixed_weights({3, 2}, rng);
  return fd_check({a, b}, [&] { return contract(matmul(a, b), w); });
}

double check_elementwise(Rng& rng) {
  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({3, 4}, rng);
  auto c = rand_tensor({3, 4}, rng);
  auto w = fixed_weights({3, 4}, rng);
  // add/sub/mul/div/scale chained into one graph; div shifted off zero.
  return fd_check({a, b, c}, [&] {
    auto d = div_elem(add(a, b), clamp_min(abs_op(c), 0.5));
    return contract(scale(sub(d, mul(a, b)), 0.7), w);
  });
}

double check_add_rowvec(Rng& rng) {
  auto a = rand_tensor({4, 5}, rng);
  auto v = rand_tensor({5}, rng);
  auto w = fixed_weights({4, 5}, rng);
  return fd_check({a, v}, [&] { return contract(add_rowvec(a, v), w); });
}

double check_shapes(Rng& rng) {
  // transpose + reshape + slices + concats exercised together.
  auto a = rand_tensor({4, 6}, rng);
  auto b = rand_tensor({2, 6}, rng);
  auto w1 = fixed_weights({4, 4}, rng);
  auto w2 = fixed_weights({4, 2}, rng);
  return fd_check({a, b}, [&] {
    auto t = transpose(a);  // 6x4
    auto r = reshape(t, {4, 6});
    auto top = slice_rows(r, 0, 2);
    auto cols = slice_cols(concat_rows({top, b}), 1, 5);  // 4x4
    return add(contract(cols, w1), contract(slice_cols(concat_rows({top, b}), 0, 2), w2));
  });
}

double check_gelu(Rng& rng) {
  auto a = rand_tensor({3, 5}, rng);
  auto w = fixed_weights({3, 5}, rng);
  return fd_check({a}, [&] { return contract(gelu(a), w); });
}

double check_tanh(Rng& rng) {
  auto a = rand_tensor({3, 5}, rng);
  auto w = fixed_weights({3, 5}, rng);
  return fd_check({a}, [&] { return contract(tanh_op(a), w); });
}

double check_softmax(Rng& rng) {
  auto a = rand_tensor({4, 5}, rng);
  auto w1 = fixed_weights({4, 5}, rng);
  auto w2 = fixed_weights({4, 5}, rng);
  return fd_check({a}, [&] {
    return add(contract(softmax(a, 1), w1), contract(softmax(a, 0), w2));
  });
}

double check_layernorm(Rng& rng) {
  auto a = rand_tensor({4, 6}, rng);
  auto g = rand_tensor({6}, rng);
  auto b = rand_tensor({6}, rng);
  auto w = fixed_weights({4, 6}, rng);
  return fd_check({a, g, b}, [&] { return contract(layernorm(a, g, b, 1e-5), w); });
}

double check_reductions(Rng& rng) {
  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({3, 4}, rng);
  return fd_check({a, b}, [&] {
    return add(add(sum_all(mul(a, b)), mean_all(a)), l2_norm(b));
  });
}

double check_gather(Rng& rng) {
  auto table = rand_tensor({7, 5}, rng);
  std::vector<int> idx = {2, 0, 6, 2};  // repeated row accumulates
  auto w = fixed_weights({4, 5}, rng);
  return fd_check({table}, [&] { return contract(gather_rows(table, idx), w); });
}

double check_cross_entropy(Rng& rng) {
  auto logits = rand_tensor({4, 3}, rng);
  std::vector<int> labels;
  for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.below(3)));
  return fd_check({logits}, [&] { return cross_entropy_multiclass(logits, labels); });
}

double check_bce(Rng& rng) {
  auto logits = rand_tensor({4, 3}, rng);
  // Soft targets keep the target gradient informative too.
  std::vector<double> tvals(12);
  for (auto& v : tvals) v = rng.next_unit();
  auto targets = Tensor::from_values({4, 3}, tvals);
  targets->set_requires_grad(true);
  return fd_check({logits, targets}, [&] { return bce_with_logits(logits, targets); });
}

double check_ortho(Rng& rng) {
  ModelConfig cfg;
  cfg.d_model = 6;
  cfg.n_heads = 1;
  cfg.prompt_len = 2;
  cfg.vocab_size = 10;
  cfg.n_classes = 2;
  ModalityRegistry reg = ModalityRegistry::text_image(cfg.max_text_len, cfg.vocab_size,
                                                      cfg.image_h, cfg.image_w);
  PromptBank bank = build_prompt_bank(PromptStrategy::msp, cfg, reg, rng.next_u64());
  std::vector<TensorPtr> prompts;
  for (auto& e : bank.entries) {
    for (auto& v : e.tensor->data) v = rng.gaussian();
    e.tensor->set_requires_grad(true);
    prompts.push_back(e.tensor);
  }
  ObjectiveConfig oc;
  return fd_check(prompts, [&] { return ortho_loss(bank, oc); });
}

double check_forward_prompts(Rng& rng) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ffn_mult = 2;
  cfg.vocab_size = 11;
  cfg.max_text_len = 4;
  cfg.patch_size = 2;
  cfg.image_h = 4;
  cfg.image_w = 4;
  cfg.n_classes = 3;
  cfg.prompt_len = 2;
  cfg.prompt_layers = {0};
  ModalityRegistry reg = ModalityRegistry::text_image(cfg.max_text_len, cfg.vocab_size,
                                                      cfg.image_h, cfg.image_w);
  Model model = build_model(cfg, rng.next_u64());
  PromptBank bank = build_prompt_bank(PromptStrategy::msp, cfg, reg, rng.next_u64());

  // One modality-complete and one image-only sample in the same batch.
  Sample complete, image_only;
  complete.text = {kClsToken, static_cast<int>(3 + rng.below(8)), kSepToken};
  complete.image.resize(16);
  for (auto& v : complete.image) v = rng.next_unit();
  complete.label = static_cast<int>(rng.below(3));
  complete.pattern = MissingPattern::complete(2);
  image_only = complete;
  image_only.text = {kClsToken, kSepToken};
  image_only.pattern.present = 0;
  image_only.pattern.set(kImageModality);
  for (auto& v : image_only.image) v = rng.next_unit();
  image_only.label = static_cast<int>(rng.below(3));

  std::vector<TensorPtr> prompts;
  for (auto& e : bank.entries) {
    e.tensor->set_requires_grad(true);
    prompts.push_back(e.tensor);
  }
  std::vector<const Sample*> batch = {&complete, &image_only};
  std::vector<int> labels = {complete.label, image_only.label};
  ObjectiveConfig oc;
  return fd_check(prompts, [&] {
    return cross_entropy_multiclass(forward(model.backbone, model.head, bank, batch), labels);
  });
}

}  // namespace

GradCheckReport run_gradient_suite(int instances, uint64_t seed, double tol) {
  if (instances < 1) throw ConfigError("gradient suite needs at least one instance per op");
  if (!(tol > 0.0)) throw ConfigError("gradient suite tolerance must be positive");

  const std::vector<std::pair<std::string, CaseFn>> cases = {
      {"matmul", check_matmul},
      {"elementwise_arith", check_elementwise},
      {"add_rowvec", check_add_rowvec},
      {"shape_ops", check_shapes},
      {"gelu", check_gelu},
      {"tanh", check_tanh},
      {"softmax", check_softmax},
      {"layernorm", check_layernorm},
      {"reductions", check_reductions},
      {"gather_rows", check_gather},
      {"cross_entropy", check_cross_entropy},
      {"bce_with_logits", check_bce},
      {"ortho_loss", check_ortho},
      {"forward_wrt_prompts", check_forward_prompts},
  };

  GradCheckReport report;
  report.tolerance = tol;
  uint64_t stream = 0;
  for (const auto& [name, fn] : cases) {
    GradCheckEntry entry;
    entry.op = name;
    entry.instances = instances;
    for (int i = 0; i < instances; ++i) {
      Rng rng = Rng::derived(seed, stream++);
      entry.max_rel_err = std::max(entry.max_rel_err, fn(rng));
    }
    entry.ok = entry.max_rel_err < tol;
    report.entries.push_back(entry);
  }
  return report;
}

std::string format_gradcheck(const GradCheckReport& report) {
  std::string out;
  char buf[160];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof(buf), "%-20s instances=%-3d max_rel_err=%.3e  %s\n", e.op.c_str(),
                  e.instances, e.max_rel_err, e.ok ? "ok" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "worst=%.3e tolerance=%.1e  %s\n", report.worst(),
                report.tolerance, report.all_ok() ? "ALL OK" : "FAILURES PRESENT");
  out += buf;
  return out;
}

}  // namespace msplab
