// Acceptance gate: twelve checks, one printed pass/fail line each. The
// empirical checks share a single full-size pretrained backbone and one
// 5-seed, 3-strategy adaptation sweep.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "msplab/config.hpp"
#include "msplab/dataset.hpp"
#include "msplab/errors.hpp"
#include "msplab/gradcheck.hpp"
#include "msplab/matrix.hpp"
#include "msplab/metrics.hpp"
#include "msplab/model.hpp"
#include "msplab/objective.hpp"
#include "msplab/report.hpp"
#include "msplab/rng.hpp"
#include "msplab/tensor.hpp"
#include "msplab/trainer.hpp"

using namespace msplab;

namespace {

bool emit(int idx, const std::string& detail, bool ok) {
  std::printf("criterion %02d %-76s %s\n", idx, detail.c_str(), ok ? "PASS" : "FAIL");
  std::fflush(stdout);
  return ok;
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---- shared full-size sweep for the empirical checks -----------------------

constexpr int kSweepTrainN = 960;
constexpr int kSweepEvalN = 400;
constexpr int kSweepEpochs = 10;
constexpr int kPretrainN = 2000;
constexpr int kPretrainEpochs = 20;
constexpr int kStratNone = 0, kStratMap = 1, kStratMsp = 2;

struct SweepResults {
  double complete_acc = 0.0;    // pretrained model, unmasked eval split
  double image_only_acc = 0.0;  // pretrained model, image-only eval split
  double bayes_expected = 0.0;  // nearest-prototype ceiling on the same split
  double matched[3][5] = {};    // [strategy][seed], eval at the train scenario
  double transfer[3][5] = {};   // [strategy][seed], eval at the flipped scenario
  double cos_end[5] = {};       // |cos(P_is, P_ts)| after MSP training
  double max_msp_run_secs = 0.0;
  double total_secs = 0.0;
};

void copy_backbone(Model& dst, const Model& src) {
  const auto d = dst.backbone.parameters();
  const auto s = src.backbone.parameters();
  REQUIRE(d.size() == s.size());
  for (size_t i = 0; i < d.size(); ++i) {
    REQUIRE(d[i].name == s[i].name);
    d[i].tensor->data = s[i].tensor->data;
    d[i].tensor->set_requires_grad(false);
  }
}

double flat_abs_cos(const TensorPtr& p, const TensorPtr& q) {
  double dot = 0.0, np = 0.0, nq = 0.0;
  for (size_t i = 0; i < p->data.size(); ++i) {
    dot += p->data[i] * q->data[i];
    np += p->data[i] * p->data[i];
    nq += q->data[i] * q->data[i];
  }
  return std::fabs(dot) / std::max(std::sqrt(np) * std::sqrt(nq), 1e-8);
}

const SweepResults& sweep() {
  static const SweepResults results = [] {
    SweepResults r;
    const double t0 = now_seconds();

    SyntheticTaskSpec pre_task;  // A=4, B=4 factored task
    pre_task.n_samples = kPretrainN;
    pre_task.seed = 7;
    ModelConfig mcfg;  // d_model=32, 2 layers
    TrainConfig pre_cfg;
    pre_cfg.epochs = kPretrainEpochs;
    pre_cfg.seed = 7;
    const Model pretrained = pretrain_backbone(mcfg, pre_task, pre_cfg);

    SyntheticTaskSpec train_task = pre_task;
    train_task.n_samples = kSweepTrainN;
    train_task.seed = 11;
    const Dataset train_base = generate_synthetic(train_task);
    SyntheticTaskSpec eval_task = pre_task;
    eval_task.n_samples = kSweepEvalN;
    eval_task.seed = 12;
    const Dataset eval_base = generate_synthetic(eval_task);
    const PlaceholderPolicy policy = PlaceholderPolicy::for_registry(train_base.registry);
    const ObjectiveConfig ocfg;  // lambda 0.15

    {  // pretrained-model reference points and the Bayes ceiling
      PromptBank no_bank;
      r.complete_acc =
          evaluate_model(pretrained.backbone, pretrained.head, no_bank, eval_base, ocfg).value;
      ScenarioConfig img_only;
      img_only.p_img = 1.0;
      img_only.p_txt = 0.0;
      img_only.seed = 99;
      const Dataset eval_img = apply_missing(eval_base, img_only, policy);
      r.image_only_acc =
          evaluate_model(pretrained.backbone, pretrained.head, no_bank, eval_img, ocfg).value;

      // The image fixes factor a only; every label sharing that a stays
      // equally likely, so the Bayes accuracy from images alone is
      // P(nearest prototype recovers a) / B.
      std::vector<std::vector<double>> protos;
      for (int a = 0; a < eval_task.A; ++a) protos.push_back(eval_task.prototype(a));
      int a_hits = 0;
      for (const auto& s : eval_base.samples) {
        int best = 0;
        double best_d = 1e300;
        for (int a = 0; a < eval_task.A; ++a) {
          double d = 0.0;
          for (size_t i = 0; i < s.image.size(); ++i) {
            const double diff = s.image[i] - protos[static_cast<size_t>(a)][i];
            d += diff * diff;
          }
          if (d < best_d) {
            best_d = d;
            best = a;
          }
        }
        a_hits += best == s.label / eval_task.B;
      }
      r.bayes_expected = static_cast<double>(a_hits) /
                         static_cast<double>(eval_base.samples.size()) /
                         static_cast<double>(eval_task.B);
    }

    ScenarioConfig train_sc;  // severe text-missing training case
    train_sc.p_img = 1.00;
    train_sc.p_txt = 0.30;
    ScenarioConfig flipped;  // inference flips which modality is scarce
    flipped.p_img = 0.30;
    flipped.p_txt = 1.00;

    const char* tokens[3] = {"none", "map", "msp"};
    for (uint64_t seed = 0; seed < 5; ++seed) {
      for (int s = 0; s < 3; ++s) {
        const double run0 = now_seconds();
        const StrategyToken strat = parse_strategy_token(tokens[s]);
        ScenarioConfig tsc = train_sc;
        tsc.seed = seed;
        const Dataset masked_train = apply_missing(train_base, tsc, policy);

        Model model = build_model(mcfg, seed);
        copy_backbone(model, pretrained);
        PromptBank bank =
            build_prompt_bank(strat.strategy, mcfg, train_base.registry, seed);
        TrainConfig tcfg;
        tcfg.epochs = kSweepEpochs;
        tcfg.seed = seed;
        tcfg.mode = strat.mode;
        tcfg.strategy = strat.strategy;
        train(model.backbone, model.head, bank, masked_train, tcfg, ocfg);

        ScenarioConfig ev_m = train_sc, ev_x = flipped;
        ev_m.seed = seed + 1000;
        ev_x.seed = seed + 1000;
        const Dataset eval_matched = apply_missing(eval_base, ev_m, policy);
        const Dataset eval_flipped = apply_missing(eval_base, ev_x, policy);
        r.matched[s][seed] =
            evaluate_model(model.backbone, model.head, bank, eval_matched, ocfg).value;
        r.transfer[s][seed] =
            evaluate_model(model.backbone, model.head, bank, eval_flipped, ocfg).value;

        if (strat.strategy == PromptStrategy::msp) {
          r.cos_end[seed] = flat_abs_cos(bank.find_name("P_is")->tensor,
                                         bank.find_name("P_ts")->tensor);
          r.max_msp_run_secs = std::max(r.max_msp_run_secs, now_seconds() - run0);
        }
      }
    }
    r.total_secs = now_seconds() - t0;
    return r;
  }();
  return results;
}

}  // namespace

// ---- 1: finite-difference gradient suite -----------------------------------

TEST_CASE("gradient suite passes finite-difference checks fast") {
  const double t0 = now_seconds();
  const GradCheckReport report = run_gradient_suite(20, 12345, 1e-4);
  const double elapsed = now_seconds() - t0;

  const std::set<std::string> need = {"matmul",        "softmax",   "layernorm",
                                      "gelu",          "cross_entropy", "bce_with_logits",
                                      "ortho_loss",    "forward_wrt_prompts"};
  std::set<std::string> have;
  bool instances_ok = true;
  for (const auto& e : report.entries) {
    have.insert(e.op);
    instances_ok = instances_ok && e.instances >= 20;
  }
  const bool covered =
      std::includes(have.begin(), have.end(), need.begin(), need.end());

  char detail[160];
  std::snprintf(detail, sizeof detail,
                "gradients: %zu ops, worst rel err %.2e, %.1fs",
                report.entries.size(), report.worst(), elapsed);
  CHECK(emit(1, detail, report.all_ok() && covered && instances_ok && elapsed < 60.0));
}

// ---- 2: orthogonality penalty against a brute-force oracle -----------------

TEST_CASE("prompt-pair cosine penalty matches a brute-force computation") {
  Rng rng(424242);
  const double eps = 1e-8;
  double max_err = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const int s = 1 + static_cast<int>(rng.next_u64() % 2);
    const int l = 1 + static_cast<int>(rng.next_u64() % 4);
    const int d = 2 + static_cast<int>(rng.next_u64() % 7);
    TensorPtr p = Tensor::create({s, l, d});
    TensorPtr q = Tensor::create({s, l, d});
    for (auto& v : p->data) v = rng.gaussian();
    for (auto& v : q->data) v = rng.gaussian();

    double dot = 0.0, np = 0.0, nq = 0.0;
    for (size_t i = 0; i < p->data.size(); ++i) {
      dot += p->data[i] * q->data[i];
      np += p->data[i] * p->data[i];
      nq += q->data[i] * q->data[i];
    }
    const double brute = std::fabs(dot) / std::max(std::sqrt(np) * std::sqrt(nq), eps);
    max_err = std::max(max_err,
                       std::fabs(pair_cosine_penalty(p, q, eps)->data[0] - brute));
  }

  // eps clamp: an all-zero prompt must give penalty 0, not 0/0.
  TensorPtr z = Tensor::create({1, 2, 3});
  TensorPtr w = Tensor::create({1, 2, 3});
  for (auto& v : w->data) v = 1.0;
  const double zero_case = pair_cosine_penalty(z, w, eps)->data[0];
  const double both_zero = pair_cosine_penalty(z, z, eps)->data[0];

  // bank-level mean over all unordered pairs, M = 3
  ModalityRegistry reg3;
  reg3.modalities = {{"alpha", ModalityKind::text, {4, 9}},
                     {"beta", ModalityKind::text, {4, 9}},
                     {"gamma", ModalityKind::image, {4, 4}}};
  ModelConfig mc3;
  mc3.d_model = 8;
  mc3.n_heads = 2;
  mc3.vocab_size = 9;
  mc3.max_text_len = 4;
  mc3.image_h = 4;
  mc3.image_w = 4;
  mc3.patch_size = 2;
  mc3.n_classes = 3;
  mc3.prompt_len = 2;
  PromptBank bank3 = build_prompt_bank(PromptStrategy::msp, mc3, reg3, 5);
  ObjectiveConfig oc;
  double mean_brute = 0.0;
  int n_pairs = 0;
  for (size_t i = 0; i < bank3.entries.size(); ++i)
    for (size_t j = i + 1; j < bank3.entries.size(); ++j) {
      const auto& a = bank3.entries[i].tensor;
      const auto& b = bank3.entries[j].tensor;
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (size_t k = 0; k < a->data.size(); ++k) {
        dot += a->data[k] * b->data[k];
        na += a->data[k] * a->data[k];
        nb += b->data[k] * b->data[k];
      }
      mean_brute += std::fabs(dot) / std::max(std::sqrt(na) * std::sqrt(nb), oc.eps);
      ++n_pairs;
    }
  mean_brute /= n_pairs;
  const double bank_err = std::fabs(ortho_loss(bank3, oc)->data[0] - mean_brute);

  char detail[160];
  std::snprintf(detail, sizeof detail,
                "ortho oracle: 100 pairs max err %.1e, zero case %.1e, bank err %.1e",
                max_err, std::max(zero_case, both_zero), bank_err);
  CHECK(emit(2, detail,
             max_err <= 1e-12 && zero_case <= 1e-12 && both_zero <= 1e-12 &&
                 bank_err <= 1e-12));
}

// ---- 3: prompt-count law ----------------------------------------------------

TEST_CASE("bank sizes follow M for MSP and 2^M-1 for MAP") {
  bool ok = true;
  std::string sizes;
  const char* ids[5] = {"alpha", "beta", "gamma", "delta", "epsilon"};
  for (int m = 1; m <= 5; ++m) {
    ModalityRegistry reg;
    for (int i = 0; i < m; ++i)
      reg.modalities.push_back({ids[i], ModalityKind::text, {4, 9}});
    ModelConfig mc;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.vocab_size = 9;
    mc.max_text_len = 4;
    mc.image_h = 4;
    mc.image_w = 4;
    mc.patch_size = 2;
    mc.n_classes = 3;
    mc.prompt_len = 1;
    const size_t msp_n = build_prompt_bank(PromptStrategy::msp, mc, reg, 1).entries.size();
    const size_t map_n = build_prompt_bank(PromptStrategy::map, mc, reg, 1).entries.size();
    ok = ok && msp_n == static_cast<size_t>(m) &&
         map_n == (static_cast<size_t>(1) << m) - 1;
    sizes += (m > 1 ? " " : "") + std::to_string(msp_n) + "/" + std::to_string(map_n);
  }
  CHECK(emit(3, "prompt-count law M=1..5 (msp/map): " + sizes, ok));
}

// ---- 4: MSP additivity ------------------------------------------------------

TEST_CASE("complete-case MSP prompt is the bitwise sum of the per-modality prompts") {
  const ModalityRegistry reg = ModalityRegistry::text_image(6, 15, 4, 4);
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.vocab_size = 15;
  mc.max_text_len = 6;
  mc.image_h = 4;
  mc.image_w = 4;
  mc.patch_size = 2;
  mc.n_classes = 4;
  mc.prompt_len = 3;
  bool ok = true;
  for (uint64_t seed = 0; seed < 100 && ok; ++seed) {
    const PromptBank bank = build_prompt_bank(PromptStrategy::msp, mc, reg, seed);
    MissingPattern text_only, image_only;
    text_only.set(reg.index_of("text"));
    image_only.set(reg.index_of("image"));
    const TensorPtr t = select_prompt(bank, text_only);
    const TensorPtr i = select_prompt(bank, image_only);
    const TensorPtr both = select_prompt(bank, MissingPattern::complete(reg.count()));
    for (size_t k = 0; k < both->data.size(); ++k)
      ok = ok && both->data[k] == t->data[k] + i->data[k];
  }
  CHECK(emit(4, "MSP additivity: sum of single-modality prompts, 100 banks, bitwise", ok));
}

// ---- 5: prompts outside the observed patterns stay unlearned ---------------

TEST_CASE("MAP prompt for an unseen pattern keeps its initialization") {
  SyntheticTaskSpec spec;
  spec.A = 2;
  spec.B = 2;
  spec.image_h = 4;
  spec.image_w = 4;
  spec.max_text_len = 6;
  spec.sig_group_size = 2;
  spec.distractor_pool = 4;
  spec.n_samples = 60;
  spec.seed = 21;
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.ffn_mult = 2;
  mc.vocab_size = spec.vocab_size();
  mc.max_text_len = spec.max_text_len;
  mc.patch_size = 2;
  mc.image_h = spec.image_h;
  mc.image_w = spec.image_w;
  mc.n_classes = spec.n_classes();
  mc.prompt_len = 2;
  mc.prompt_layers = {0};

  // MAP, trained where no sample is text-only: P_t must stay at init.
  Dataset data = generate_synthetic(spec);
  ScenarioConfig sc;
  sc.p_img = 1.00;
  sc.p_txt = 0.30;
  sc.seed = 21;
  const Dataset masked = apply_missing(data, sc, PlaceholderPolicy::for_registry(data.registry));
  Model model = build_model(mc, 21);
  PromptBank bank = build_prompt_bank(PromptStrategy::map, mc, data.registry, 21);
  const std::vector<double> p_t_init = bank.find_name("P_t")->tensor->data;
  const std::vector<double> p_c_init = bank.find_name("P_c")->tensor->data;
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 21;
  tc.mode = TrainMode::prompt_tune;
  tc.strategy = PromptStrategy::map;
  ObjectiveConfig oc;
  train(model.backbone, model.head, bank, masked, tc, oc);
  const bool p_t_frozen = bank.find_name("P_t")->tensor->data == p_t_init;
  const bool p_c_moved = bank.find_name("P_c")->tensor->data != p_c_init;

  // MSP on an image-only batch: the task gradient w.r.t. P_ts is exactly zero.
  PromptBank msp_bank = build_prompt_bank(PromptStrategy::msp, mc, data.registry, 22);
  for (const auto& np : msp_bank.parameters()) np.tensor->set_requires_grad(true);
  ScenarioConfig img_only;
  img_only.p_img = 1.0;
  img_only.p_txt = 0.0;
  img_only.seed = 5;
  const Dataset img_data = apply_missing(data, img_only,
                                         PlaceholderPolicy::for_registry(data.registry));
  std::vector<const Sample*> batch;
  std::vector<int> labels;
  for (size_t i = 0; i < 6; ++i) {
    batch.push_back(&img_data.samples[i]);
    labels.push_back(img_data.samples[i].label);
  }
  Model fresh = build_model(mc, 22);
  TensorPtr logits = forward(fresh.backbone, fresh.head, msp_bank, batch);
  TensorPtr loss = task_loss(logits, labels, oc);
  backward(loss);
  const Tensor& p_ts = *msp_bank.find_name("P_ts")->tensor;
  const Tensor& p_is = *msp_bank.find_name("P_is")->tensor;
  bool ts_grad_zero = true;
  for (double g : p_ts.grad) ts_grad_zero = ts_grad_zero && g == 0.0;
  bool is_grad_live = false;
  for (double g : p_is.grad) is_grad_live = is_grad_live || g != 0.0;

  CHECK(emit(5, "unlearned prompts: MAP P_t bitwise at init, MSP grad(P_ts)=0 image-only",
             p_t_frozen && p_c_moved && ts_grad_zero && is_grad_live));
}

// ---- 6: prompt tuning freezes the backbone ----------------------------------

TEST_CASE("prompt tuning leaves every backbone parameter bitwise unchanged") {
  SyntheticTaskSpec spec;
  spec.A = 2;
  spec.B = 2;
  spec.image_h = 4;
  spec.image_w = 4;
  spec.max_text_len = 6;
  spec.sig_group_size = 2;
  spec.distractor_pool = 4;
  spec.n_samples = 48;
  spec.seed = 33;
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.ffn_mult = 2;
  mc.vocab_size = spec.vocab_size();
  mc.max_text_len = spec.max_text_len;
  mc.patch_size = 2;
  mc.image_h = spec.image_h;
  mc.image_w = spec.image_w;
  mc.n_classes = spec.n_classes();
  mc.prompt_len = 2;
  mc.prompt_layers = {0};
  const Dataset data = generate_synthetic(spec);
  bool ok = true;
  for (PromptStrategy strat : {PromptStrategy::map, PromptStrategy::msp}) {
    Model model = build_model(mc, 33);
    PromptBank bank = build_prompt_bank(strat, mc, data.registry, 33);
    const uint64_t backbone_before = params_hash(model.backbone.parameters());
    const uint64_t head_before = params_hash(model.head.parameters());
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 33;
    tc.mode = TrainMode::prompt_tune;
    tc.strategy = strat;
    ObjectiveConfig oc;
    train(model.backbone, model.head, bank, data, tc, oc);
    ok = ok && params_hash(model.backbone.parameters()) == backbone_before &&
         params_hash(model.head.parameters()) != head_before;
  }
  CHECK(emit(6, "freezing: backbone hash unchanged by MAP and MSP prompt tuning", ok));
}

// ---- 7: masking fractions ---------------------------------------------------

TEST_CASE("masking hits the scenario fractions within one sample") {
  SyntheticTaskSpec spec;  // spec-scale task, generation is cheap
  bool ok = true;
  int worst_dev = 0;
  for (const auto& [p_img, p_txt] : std::vector<std::pair<double, double>>{
           {1.00, 0.30}, {0.30, 1.00}, {0.65, 0.65}}) {
    for (int n : {10, 100, 1000}) {
      SyntheticTaskSpec t = spec;
      t.n_samples = n;
      t.seed = 17;
      const Dataset base = generate_synthetic(t);
      for (uint64_t mask_seed : {0ULL, 1ULL, 2ULL}) {
        ScenarioConfig sc;
        sc.p_img = p_img;
        sc.p_txt = p_txt;
        sc.seed = mask_seed;
        const Dataset masked =
            apply_missing(base, sc, PlaceholderPolicy::for_registry(base.registry));
        const int ti = base.registry.index_of("text");
        const int ii = base.registry.index_of("image");
        int complete = 0, image_only = 0, text_only = 0;
        bool none_empty = true;
        for (const auto& s : masked.samples) {
          const bool has_t = s.pattern.has(ti), has_i = s.pattern.has(ii);
          none_empty = none_empty && (has_t || has_i);
          complete += has_t && has_i;
          image_only += has_i && !has_t;
          text_only += has_t && !has_i;
        }
        const int want_complete = static_cast<int>(std::lround((p_img + p_txt - 1.0) * n));
        const int want_img = static_cast<int>(std::lround((1.0 - p_txt) * n));
        const int want_txt = static_cast<int>(std::lround((1.0 - p_img) * n));
        const int dev = std::max({std::abs(complete - want_complete),
                                  std::abs(image_only - want_img),
                                  std::abs(text_only - want_txt)});
        worst_dev = std::max(worst_dev, dev);
        ok = ok && dev <= 1 && none_empty &&
             complete + image_only + text_only == static_cast<int>(masked.samples.size());
      }
    }
  }
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "masking fractions: 3 scenarios x N in {10,100,1000}, worst dev %d",
                worst_dev);
  CHECK(emit(7, detail, ok));
}

// ---- 8: the regularizer keeps the trained prompts near-orthogonal ----------

TEST_CASE("MSP training at lambda 0.15 ends with |cos| below 0.1") {
  const SweepResults& r = sweep();
  int hits = 0;
  double worst = 0.0;
  for (double c : r.cos_end) {
    hits += c < 0.1;
    worst = std::max(worst, c);
  }
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "ortho dynamics: |cos| < 0.1 in %d/5 seeds (worst %.4f), run max %.0fs",
                hits, worst, r.max_msp_run_secs);
  CHECK(emit(8, detail, hits >= 4 && r.max_msp_run_secs < 180.0));
}

// ---- 9: robustness ordering -------------------------------------------------

TEST_CASE("MSP transfers at least as well as MAP and beats the head-only baseline") {
  const SweepResults& r = sweep();
  int msp_ge_map = 0, msp_gt_none = 0;
  for (int seed = 0; seed < 5; ++seed) {
    msp_ge_map += r.transfer[kStratMsp][seed] >= r.transfer[kStratMap][seed];
    msp_gt_none += r.matched[kStratMsp][seed] > r.matched[kStratNone][seed];
  }
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "ordering: msp>=map flipped %d/5, msp>head-only matched %d/5, %.0fs total",
                msp_ge_map, msp_gt_none, r.total_secs);
  CHECK(emit(9, detail, msp_ge_map >= 4 && msp_gt_none >= 4 && r.total_secs < 1800.0));
}

// ---- 10: the testbed separates the modalities as designed -------------------

TEST_CASE("image-only evaluation is capped near the Bayes ceiling") {
  const SweepResults& r = sweep();
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "modality info: complete %.3f >= 0.80, image-only %.3f <= 0.30, bayes %.3f",
                r.complete_acc, r.image_only_acc, r.bayes_expected);
  CHECK(emit(10, detail,
             r.complete_acc >= 0.80 && r.image_only_acc <= 0.30 &&
                 r.bayes_expected >= 0.20 && r.bayes_expected <= 0.30 &&
                 r.image_only_acc <= r.bayes_expected + 0.05));
}

// ---- 11: matrix determinism -------------------------------------------------

TEST_CASE("repeating the matrix reproduces the report files byte for byte") {
  MatrixConfig cfg;
  cfg.task.A = 2;
  cfg.task.B = 2;
  cfg.task.image_h = 4;
  cfg.task.image_w = 4;
  cfg.task.max_text_len = 6;
  cfg.task.sig_group_size = 2;
  cfg.task.distractor_pool = 4;
  cfg.task.n_samples = 96;
  cfg.task.seed = 9;
  cfg.model.d_model = 16;
  cfg.model.n_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.ffn_mult = 2;
  cfg.model.vocab_size = cfg.task.vocab_size();
  cfg.model.max_text_len = cfg.task.max_text_len;
  cfg.model.patch_size = 2;
  cfg.model.image_h = cfg.task.image_h;
  cfg.model.image_w = cfg.task.image_w;
  cfg.model.n_classes = cfg.task.n_classes();
  cfg.model.prompt_len = 2;
  cfg.model.prompt_layers = {0};
  cfg.train.epochs = 2;
  cfg.train.seed = 9;
  cfg.n_eval = 40;
  cfg.train_scenarios = {parse_scenario_pair("1.0,0.3")};
  cfg.eval_scenarios = {parse_scenario_pair("1.0,0.3"), parse_scenario_pair("0.3,1.0")};
  cfg.strategies = {"none", "msp"};
  cfg.seeds = {0, 1};
  cfg.workers = 2;
  const Model pretrained = build_model(cfg.model, 77);

  const auto dir = std::filesystem::temp_directory_path() /
                   ("msplab_accept_det_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  bool ok = true;
  std::string first[3];
  for (int round = 0; round < 2; ++round) {
    const Report report = run_matrix(cfg, pretrained);
    int i = 0;
    for (ReportFormat fmt : {ReportFormat::csv, ReportFormat::json, ReportFormat::markdown}) {
      const std::string path =
          (dir / ("r" + std::to_string(round) + "." + to_string(fmt))).string();
      emit_report(report, fmt, path);
      const std::string bytes = read_text_file(path);
      if (round == 0)
        first[i] = bytes;
      else
        ok = ok && bytes == first[i];
      ++i;
    }
  }
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  CHECK(emit(11, "determinism: csv/json/markdown report files identical across reruns", ok));
}

// ---- 12: metric oracles -----------------------------------------------------

TEST_CASE("metrics agree with brute-force recounts") {
  Rng rng(909090);
  double worst = 0.0;
  bool ok = true;
  for (int inst = 0; inst < 200; ++inst) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 24);
    const int c = 1 + static_cast<int>(rng.next_u64() % 6);

    std::vector<int> preds(static_cast<size_t>(n)), labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      preds[static_cast<size_t>(i)] = static_cast<int>(rng.next_u64() % c);
      labels[static_cast<size_t>(i)] = static_cast<int>(rng.next_u64() % c);
    }
    int hits = 0;
    for (int i = 0; i < n; ++i)
      hits += preds[static_cast<size_t>(i)] == labels[static_cast<size_t>(i)];
    const double acc_brute = static_cast<double>(hits) / n;
    worst = std::max(worst, std::fabs(accuracy(preds, labels) - acc_brute));

    std::vector<std::vector<double>> probs(static_cast<size_t>(n),
                                           std::vector<double>(static_cast<size_t>(c)));
    std::vector<std::vector<int>> truth(static_cast<size_t>(n),
                                        std::vector<int>(static_cast<size_t>(c)));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) {
        probs[static_cast<size_t>(i)][static_cast<size_t>(j)] = rng.next_unit();
        truth[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            static_cast<int>(rng.next_u64() % 2);
      }
    const double thr = 0.05 + 0.9 * rng.next_unit();
    double f1_brute = 0.0;
    for (int j = 0; j < c; ++j) {
      long tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < n; ++i) {
        const bool pred = probs[static_cast<size_t>(i)][static_cast<size_t>(j)] > thr;
        const bool pos = truth[static_cast<size_t>(i)][static_cast<size_t>(j)] == 1;
        tp += pred && pos;
        fp += pred && !pos;
        fn += !pred && pos;
      }
      if (2 * tp + fp + fn > 0)
        f1_brute += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    }
    f1_brute /= c;
    worst = std::max(worst, std::fabs(f1_macro(probs, truth, thr) - f1_brute));
    ok = ok && worst <= 1e-12;
  }
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "metric oracles: 200 instances, worst abs err %.1e", worst);
  CHECK(emit(12, detail, ok));
}
