#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "msplab/errors.hpp"
#include "msplab/model.hpp"
#include "msplab/objective.hpp"
#include "msplab/rng.hpp"
#include "msplab/tensor.hpp"
#include "testutil.hpp"

using namespace msplab;

namespace {

// MSP bank with n_prompts flat prompts of the given width, values overridable.
PromptBank flat_bank(int n_prompts, int width, uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.d_model = width;
  cfg.n_heads = 1;
  cfg.prompt_len = 1;
  cfg.vocab_size = 10;
  cfg.n_classes = 2;
  const char* ids[] = {"text", "image", "audio", "video", "lidar"};
  ModalityRegistry reg;
  for (int i = 0; i < n_prompts; ++i)
    reg.modalities.push_back({ids[i], ModalityKind::text, {4, 10}});
  return build_prompt_bank(PromptStrategy::msp, cfg, reg, seed);
}

double brute_cosine_penalty(const std::vector<double>& a, const std::vector<double>& b,
                            double eps) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::fabs(dot) / std::max(std::sqrt(na) * std::sqrt(nb), eps);
}

}  // namespace

TEST_CASE("flatten is the row-major 1-D view") {
  auto m = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  auto f = flatten(m);
  CHECK(f->shape == std::vector<int>{4});
  CHECK(f->data == std::vector<double>{1, 2, 3, 4});
  auto v = Tensor::from_values({3}, {5, 6, 7});
  CHECK(flatten(v)->data == v->data);
  CHECK(flatten(v)->numel() == v->numel());
}

TEST_CASE("ortho loss matches the hand-computed cosine cases") {
  ObjectiveConfig cfg;
  auto bank = flat_bank(2, 2);
  auto& p = bank.entries[0].tensor->data;
  auto& q = bank.entries[1].tensor->data;

  SUBCASE("orthogonal prompts score zero") {
    p = {1, 0};
    q = {0, 1};
    CHECK(ortho_loss(bank, cfg)->item() == 0.0);
  }
  SUBCASE("parallel prompts score one") {
    p = {0.3, -0.7};
    q = {0.3, -0.7};
    CHECK(ortho_loss(bank, cfg)->item() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("45 degree pair scores the hand-derived cosine") {
    p = {1, 0};
    q = {1, 1};
    CHECK(ortho_loss(bank, cfg)->item() ==
          doctest::Approx(0.7071067811865).epsilon(1e-12));
  }
  SUBCASE("all-zero prompts clamp to zero, finite gradients") {
    p = {0, 0};
    q = {0, 0};
    auto loss = ortho_loss(bank, cfg);
    CHECK(loss->item() == 0.0);
    backward(loss);
    for (double g : bank.entries[0].tensor->grad) CHECK(g == 0.0);
  }
}

TEST_CASE("ortho loss rejects non-MSP banks and single prompts") {
  ObjectiveConfig cfg;
  ModelConfig mcfg;
  auto reg = ModalityRegistry::text_image(4, 10, 8, 8);
  auto map_bank = build_prompt_bank(PromptStrategy::map, mcfg, reg, 1);
  CHECK_THROWS_AS(ortho_loss(map_bank, cfg), ContractError);
  PromptBank none;
  CHECK_THROWS_AS(ortho_loss(none, cfg), ContractError);
  CHECK_THROWS_AS(ortho_loss(flat_bank(1, 4), cfg), ContractError);
}

TEST_CASE("ortho loss equals the brute-force cosine on random pairs") {
  ObjectiveConfig cfg;
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    auto bank = flat_bank(2, 16);
    for (auto& e : bank.entries)
      for (auto& v : e.tensor->data) v = rng.gaussian(1.0);
    const double expect = brute_cosine_penalty(bank.entries[0].tensor->data,
                                               bank.entries[1].tensor->data, cfg.eps);
    CHECK(std::fabs(ortho_loss(bank, cfg)->item() - expect) < 1e-12);
  }
}

TEST_CASE("three-modality ortho loss is the mean over unordered pairs") {
  ObjectiveConfig cfg;
  Rng rng(19);
  auto bank = flat_bank(3, 8);
  for (auto& e : bank.entries)
    for (auto& v : e.tensor->data) v = rng.gaussian(1.0);
  double sum = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      sum += brute_cosine_penalty(bank.entries[static_cast<size_t>(i)].tensor->data,
                                  bank.entries[static_cast<size_t>(j)].tensor->data, cfg.eps);
  CHECK(std::fabs(ortho_loss(bank, cfg)->item() - sum / 3.0) < 1e-12);
}

TEST_CASE("ortho loss stays in the unit interval and is symmetric") {
  ObjectiveConfig cfg;
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    auto bank = flat_bank(2, 12);
    for (auto& e : bank.entries)
      for (auto& v : e.tensor->data) v = rng.gaussian(2.0);
    const double a = ortho_loss(bank, cfg)->item();
    CHECK(a >= 0.0);
    CHECK(a <= 1.0 + 1e-15);
    std::swap(bank.entries[0].tensor->data, bank.entries[1].tensor->data);
    CHECK(ortho_loss(bank, cfg)->item() == doctest::Approx(a).epsilon(1e-14));
  }
}

TEST_CASE("ortho loss ignores prompt scale") {
  ObjectiveConfig cfg;
  Rng rng(29);
  auto bank = flat_bank(2, 10);
  for (auto& e : bank.entries)
    for (auto& v : e.tensor->data) v = rng.gaussian(1.0);
  const double base = ortho_loss(bank, cfg)->item();
  for (double a : {3.0, -0.5, 40.0}) {
    for (double b : {0.2, -7.0}) {
      auto scaled = flat_bank(2, 10);
      for (size_t i = 0; i < scaled.entries[0].tensor->numel(); ++i) {
        scaled.entries[0].tensor->data[i] = a * bank.entries[0].tensor->data[i];
        scaled.entries[1].tensor->data[i] = b * bank.entries[1].tensor->data[i];
      }
      CHECK(std::fabs(ortho_loss(scaled, cfg)->item() - base) < 1e-12);
    }
  }
}

TEST_CASE("ortho gradients match finite differences") {
  ObjectiveConfig cfg;
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    auto bank = flat_bank(2, 9);
    for (auto& e : bank.entries)
      for (auto& v : e.tensor->data) v = rng.gaussian(1.0);
    auto r = testutil::check_gradients(
        {bank.entries[0].tensor, bank.entries[1].tensor},
        [&] { return ortho_loss(bank, cfg); });
    CHECK_MESSAGE(r.ok, r.detail);
  }
}

TEST_CASE("gradient descent on ortho alone drives the cosine toward zero") {
  // Standard-normal init: at unit-scale prompt norms the constant-magnitude
  // cosine subgradient leaves a terminal oscillation well below the 0.01 bar.
  ObjectiveConfig cfg;
  for (uint64_t seed : {1, 2, 3, 4, 5}) {
    auto bank = flat_bank(2, 64, seed);
    Rng rng(seed * 31 + 7);
    for (auto& e : bank.entries)
      for (auto& v : e.tensor->data) v = rng.gaussian(1.0);
    double cur = 1.0;
    for (int step = 0; step < 500 && cur >= 0.01; ++step) {
      for (auto& e : bank.entries) e.tensor->zero_grad();
      backward(ortho_loss(bank, cfg));
      for (auto& e : bank.entries)
        for (size_t i = 0; i < e.tensor->numel(); ++i)
          e.tensor->data[i] -= 0.1 * e.tensor->grad[i];
      cur = brute_cosine_penalty(bank.entries[0].tensor->data, bank.entries[1].tensor->data,
                                 cfg.eps);
    }
    CHECK_MESSAGE(cur < 0.01, "seed ", seed, " stalled at |cos|=", cur);
  }
}

TEST_CASE("task loss reproduces the closed-form uniform cases") {
  ObjectiveConfig ce;
  auto logits = Tensor::from_values({1, 2}, {0, 0}, true);
  CHECK(task_loss(logits, {0}, ce)->item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  ObjectiveConfig bce;
  bce.task_kind = TaskKind::multilabel_bce;
  auto one = Tensor::from_values({1, 1}, {0}, true);
  auto target = Tensor::from_values({1, 1}, {1});
  CHECK(task_loss_multihot(one, target, bce)->item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("scaling correct logits up strictly lowers the task loss") {
  ObjectiveConfig ce;
  auto z = Tensor::from_values({2, 3}, {2, -1, 0, -0.5, 3, 1});
  std::vector<int> labels{0, 1};
  const double base = task_loss(z, labels, ce)->item();
  CHECK(task_loss(scale(z, 10.0), labels, ce)->item() < base);

  // BCE is monotone only when every logit is sign-correct for its target.
  ObjectiveConfig bce;
  bce.task_kind = TaskKind::multilabel_bce;
  auto zb = Tensor::from_values({2, 3}, {2, -1, -3, -0.5, 3, -1});
  const double b_base = task_loss(zb, labels, bce)->item();
  CHECK(task_loss(scale(zb, 10.0), labels, bce)->item() < b_base);
}

TEST_CASE("task loss rejects out-of-range labels") {
  ObjectiveConfig ce;
  auto z = Tensor::create({1, 3});
  CHECK_THROWS_AS(task_loss(z, {3}, ce), DataError);
  ObjectiveConfig bce;
  bce.task_kind = TaskKind::multilabel_bce;
  CHECK_THROWS_AS(task_loss(z, {-1}, bce), DataError);
}

TEST_CASE("total loss composes the documented arithmetic") {
  ObjectiveConfig cfg;
  cfg.lambda = 0.15;
  auto task = Tensor::scalar(0.5);
  auto ortho = Tensor::scalar(0.2);
  CHECK(total_loss(task, ortho, cfg)->item() == doctest::Approx(0.53).epsilon(1e-14));

  cfg.lambda = 0.0;
  CHECK(total_loss(task, ortho, cfg) == task);
  cfg.lambda = 0.15;
  CHECK(total_loss(task, nullptr, cfg) == task);
}

TEST_CASE("total loss gradient is task gradient plus lambda times ortho gradient") {
  ObjectiveConfig cfg;
  cfg.lambda = 0.15;
  Rng rng(41);
  auto bank = flat_bank(2, 6);
  for (auto& e : bank.entries)
    for (auto& v : e.tensor->data) v = rng.gaussian(1.0);
  auto w = testutil::random_tensor({2, 3}, rng);
  auto x = testutil::random_tensor({2, 2}, rng, false);
  std::vector<int> labels{0, 2};

  auto build_task = [&] { return task_loss(matmul(x, w), labels, cfg); };
  auto build_ortho = [&] { return ortho_loss(bank, cfg); };
  auto zero_all = [&] {
    w->zero_grad();
    for (auto& e : bank.entries) e.tensor->zero_grad();
  };

  zero_all();
  backward(build_task());
  auto task_gw = w->grad;
  zero_all();
  backward(build_ortho());
  auto ortho_g0 = bank.entries[0].tensor->grad;
  auto ortho_g1 = bank.entries[1].tensor->grad;

  zero_all();
  backward(total_loss(build_task(), build_ortho(), cfg));
  for (size_t i = 0; i < w->grad.size(); ++i)
    CHECK(w->grad[i] == doctest::Approx(task_gw[i]).epsilon(1e-12));
  for (size_t i = 0; i < ortho_g0.size(); ++i) {
    CHECK(bank.entries[0].tensor->grad[i] ==
          doctest::Approx(0.15 * ortho_g0[i]).epsilon(1e-12));
    CHECK(bank.entries[1].tensor->grad[i] ==
          doctest::Approx(0.15 * ortho_g1[i]).epsilon(1e-12));
  }
}

TEST_CASE("objective config validation") {
  ObjectiveConfig cfg;
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lambda = 0.15;
  cfg.eps = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
