#pragma once

// Small two-modality transformer encoder (text tokens + image patches behind
// a shared stack of pre-LN blocks) with prompt banks, per-sample prompt
// selection, and checkpoint I/O.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msplab/dataset.hpp"
#include "msplab/tensor.hpp"

namespace msplab {

// Modality rows of the type-embedding table; matches the canonical registry
// order of ModalityRegistry::text_image.
inline constexpr int kTextModality = 0;
inline constexpr int kImageModality = 1;

enum class PromptStrategy { none, map, msp };
enum class TrainMode { finetune_all, prompt_tune, head_only };

PromptStrategy parse_strategy(const std::string& s);  // ConfigError on unknown token
std::string to_string(PromptStrategy s);
TrainMode parse_mode(const std::string& s);  // ConfigError on unknown token
std::string to_string(TrainMode m);

struct ModelConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_mult = 4;
  int vocab_size = 35;
  int max_text_len = 12;
  int patch_size = 4;
  int image_h = 8;
  int image_w = 8;
  int n_classes = 16;
  int prompt_len = 4;
  std::vector<int> prompt_layers = {0};  // strictly increasing, within [0, n_layers)

  void validate() const;  // ConfigError on any violated invariant
  int head_dim() const { return d_model / n_heads; }
  int n_patches() const { return (image_h / patch_size) * (image_w / patch_size); }
  // Sequence length before any prompt rows: [CLS] + text + patches.
  int base_seq_len() const { return 1 + max_text_len + n_patches(); }
};

struct NamedParam {
  std::string name;
  TensorPtr tensor;
};

struct Block {
  TensorPtr ln1_g, ln1_b;
  TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
  TensorPtr ln2_g, ln2_b;
  TensorPtr w1, b1, w2, b2;
};

struct Backbone {
  ModelConfig cfg;
  TensorPtr token_emb;     // vocab x d
  TensorPtr patch_proj_w;  // patch_size^2 x d
  TensorPtr patch_proj_b;  // d
  TensorPtr type_emb;      // one row per modality
  TensorPtr pos_text;      // max_text_len x d
  TensorPtr pos_image;     // n_patches x d
  TensorPtr cls;           // 1 x d
  std::vector<Block> blocks;
  TensorPtr final_ln_g, final_ln_b;

  std::vector<NamedParam> parameters() const;  // stable manifest order
};

struct TaskHead {
  TensorPtr pooler_w, pooler_b;  // d x d, d
  TensorPtr cls_w, cls_b;        // d x n_classes, n_classes

  std::vector<NamedParam> parameters() const;
};

struct Model {
  Backbone backbone;
  TaskHead head;
};

// All parameters Gaussian sigma=0.02 except layernorm gains (1) and biases
// (0); deterministic in seed.
Model build_model(const ModelConfig& cfg, uint64_t seed);

struct PromptEntry {
  std::string name;
  uint32_t mask = 0;  // MSP: single modality bit; MAP: the exact subset
  TensorPtr tensor;   // [n_slices, prompt_len, d_model]
};

struct PromptBank {
  PromptStrategy strategy = PromptStrategy::none;
  int n_slices = 1;
  int prompt_len = 0;
  int d_model = 0;
  std::vector<PromptEntry> entries;

  const PromptEntry* find_mask(uint32_t mask) const;
  const PromptEntry* find_name(const std::string& name) const;
  std::vector<NamedParam> parameters() const;
};

// MSP: one prompt per registry modality (P_ts, P_is). MAP: one per nonempty
// modality subset in ascending mask order (P_t, P_i, P_c for two modalities).
PromptBank build_prompt_bank(PromptStrategy strategy, const ModelConfig& cfg,
                             const ModalityRegistry& registry, uint64_t seed);

// none -> nullptr; MAP -> the prompt keyed by the exact present subset; MSP ->
// element-wise sum over present modalities (the tensor itself when only one is
// present). The result participates in differentiation.
TensorPtr select_prompt(const PromptBank& bank, const MissingPattern& pattern);

// Logits [batch x n_classes]. Prompts from prompt_layers are prepended before
// that layer's attention (later slices replace earlier rows); padding token
// positions are attention-masked; the pooler reads only the CLS position.
TensorPtr forward(const Backbone& bb, const TaskHead& head, const PromptBank& bank,
                  const std::vector<const Sample*>& batch);

// Selects the trainable set for the mode and flips requires_grad so the
// complement is frozen: finetune_all -> backbone + head (strategy must be
// none); prompt_tune -> prompts + head (strategy must not be none);
// head_only -> head alone.
std::vector<NamedParam> trainable_parameters(Backbone& bb, TaskHead& head, PromptBank& bank,
                                             TrainMode mode);

std::vector<NamedParam> all_parameters(const Backbone& bb, const TaskHead& head,
                                       const PromptBank& bank);

// Text manifest (name, dtype, shape per parameter) followed by raw
// little-endian 64-bit floats in manifest order. Loading validates the
// manifest against the passed parameter list and fills values in place.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params);
void load_checkpoint(const std::string& path, const std::vector<NamedParam>& params);

// FNV-1a over parameter names, shapes, and value bytes; order-sensitive.
uint64_t params_hash(const std::vector<NamedParam>& params);

}  // namespace msplab
