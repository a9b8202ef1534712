#include "msplab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "msplab/errors.hpp"
#include "msplab/rng.hpp"

namespace msplab {

// --- enum token helpers -------------------------------------------------------

PromptStrategy parse_strategy(const std::string& s) {
  if (s == "none") return PromptStrategy::none;
  if (s == "map") return PromptStrategy::map;
  if (s == "msp") return PromptStrategy::msp;
  throw ConfigError("unknown prompt strategy '" + s + "' (expected none|map|msp)");
}

std::string to_string(PromptStrategy s) {
  switch (s) {
    case PromptStrategy::none: return "none";
    case PromptStrategy::map: return "map";
    case PromptStrategy::msp: return "msp";
  }
  throw ContractError("unreachable strategy value");
}

TrainMode parse_mode(const std::string& s) {
  if (s == "finetune_all") return TrainMode::finetune_all;
  if (s == "prompt_tune") return TrainMode::prompt_tune;
  if (s == "head_only") return TrainMode::head_only;
  throw ConfigError("unknown train mode '" + s +
                    "' (expected finetune_all|prompt_tune|head_only)");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::finetune_all: return "finetune_all";
    case TrainMode::prompt_tune: return "prompt_tune";
    case TrainMode::head_only: return "head_only";
  }
  throw ContractError("unreachable mode value");
}

// --- config -------------------------------------------------------------------

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_mult <= 0)
    throw ConfigError("model dims must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model=" + std::to_string(d_model) + " not divisible by n_heads=" +
                      std::to_string(n_heads));
  if (vocab_size <= kSepToken) throw ConfigError("vocab_size must cover the special tokens");
  if (max_text_len < 1) throw ConfigError("max_text_len must be >= 1");
  if (patch_size <= 0 || image_h % patch_size != 0 || image_w % patch_size != 0)
    throw ConfigError("patch_size=" + std::to_string(patch_size) +
                      " must divide image " + std::to_string(image_h) + "x" +
                      std::to_string(image_w));
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (prompt_len < 1) throw ConfigError("prompt_len must be >= 1");
  if (prompt_layers.empty()) throw ConfigError("prompt_layers must name at least one layer");
  for (size_t i = 0; i < prompt_layers.size(); ++i) {
    if (prompt_layers[i] < 0 || prompt_layers[i] >= n_layers)
      throw ConfigError("prompt layer " + std::to_string(prompt_layers[i]) +
                        " outside [0," + std::to_string(n_layers) + ")");
    if (i > 0 && prompt_layers[i] <= prompt_layers[i - 1])
      throw ConfigError("prompt_layers must be strictly increasing");
  }
}

// --- construction ---------------------------------------------------------------

namespace {

// Each parameter draws from its own derived stream so initialization is
// independent of construction order changes elsewhere.
struct ParamInit {
  uint64_t seed;
  uint64_t counter = 0;

  TensorPtr gaussian(std::vector<int> shape, double sigma = 0.02) {
    Rng rng = Rng::derived(seed, counter++);
    auto t = Tensor::create(std::move(shape), true);
    for (auto& v : t->data) v = rng.gaussian(sigma);
    return t;
  }
  TensorPtr zeros(std::vector<int> shape) {
    ++counter;
    return Tensor::create(std::move(shape), true);
  }
  TensorPtr ones(std::vector<int> shape) {
    ++counter;
    return Tensor::full(std::move(shape), 1.0, true);
  }
};

}  // namespace

Model build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamInit init{seed};
  Model m;
  m.backbone.cfg = cfg;
  auto& bb = m.backbone;
  bb.token_emb = init.gaussian({cfg.vocab_size, cfg.d_model});
  bb.patch_proj_w = init.gaussian({cfg.patch_size * cfg.patch_size, cfg.d_model});
  bb.patch_proj_b = init.zeros({cfg.d_model});
  bb.type_emb = init.gaussian({2, cfg.d_model});
  bb.pos_text = init.gaussian({cfg.max_text_len, cfg.d_model});
  bb.pos_image = init.gaussian({cfg.n_patches(), cfg.d_model});
  bb.cls = init.gaussian({1, cfg.d_model});
  bb.blocks.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& blk : bb.blocks) {
    blk.ln1_g = init.ones({cfg.d_model});
    blk.ln1_b = init.zeros({cfg.d_model});
    blk.wq = init.gaussian({cfg.d_model, cfg.d_model});
    blk.bq = init.zeros({cfg.d_model});
    blk.wk = init.gaussian({cfg.d_model, cfg.d_model});
    blk.bk = init.zeros({cfg.d_model});
    blk.wv = init.gaussian({cfg.d_model, cfg.d_model});
    blk.bv = init.zeros({cfg.d_model});
    blk.wo = init.gaussian({cfg.d_model, cfg.d_model});
    blk.bo = init.zeros({cfg.d_model});
    blk.ln2_g = init.ones({cfg.d_model});
    blk.ln2_b = init.zeros({cfg.d_model});
    blk.w1 = init.gaussian({cfg.d_model, cfg.ffn_mult * cfg.d_model});
    blk.b1 = init.zeros({cfg.ffn_mult * cfg.d_model});
    blk.w2 = init.gaussian({cfg.ffn_mult * cfg.d_model, cfg.d_model});
    blk.b2 = init.zeros({cfg.d_model});
  }
  bb.final_ln_g = init.ones({cfg.d_model});
  bb.final_ln_b = init.zeros({cfg.d_model});
  m.head.pooler_w = init.gaussian({cfg.d_model, cfg.d_model});
  m.head.pooler_b = init.zeros({cfg.d_model});
  m.head.cls_w = init.gaussian({cfg.d_model, cfg.n_classes});
  m.head.cls_b = init.zeros({cfg.n_classes});
  return m;
}

std::vector<NamedParam> Backbone::parameters() const {
  std::vector<NamedParam> out{
      {"backbone.token_emb", token_emb},     {"backbone.patch_proj_w", patch_proj_w},
      {"backbone.patch_proj_b", patch_proj_b}, {"backbone.type_emb", type_emb},
      {"backbone.pos_text", pos_text},       {"backbone.pos_image", pos_image},
      {"backbone.cls", cls},
  };
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "backbone.block" + std::to_string(i) + ".";
    const Block& b = blocks[i];
    out.push_back({p + "ln1_g", b.ln1_g});
    out.push_back({p + "ln1_b", b.ln1_b});
    out.push_back({p + "wq", b.wq});
    out.push_back({p + "bq", b.bq});
    out.push_back({p + "wk", b.wk});
    out.push_back({p + "bk", b.bk});
    out.push_back({p + "wv", b.wv});
    out.push_back({p + "bv", b.bv});
    out.push_back({p + "wo", b.wo});
    out.push_back({p + "bo", b.bo});
    out.push_back({p + "ln2_g", b.ln2_g});
    out.push_back({p + "ln2_b", b.ln2_b});
    out.push_back({p + "w1", b.w1});
    out.push_back({p + "b1", b.b1});
    out.push_back({p + "w2", b.w2});
    out.push_back({p + "b2", b.b2});
  }
  out.push_back({"backbone.final_ln_g", final_ln_g});
  out.push_back({"backbone.final_ln_b", final_ln_b});
  return out;
}

std::vector<NamedParam> TaskHead::parameters() const {
  return {{"head.pooler_w", pooler_w},
          {"head.pooler_b", pooler_b},
          {"head.cls_w", cls_w},
          {"head.cls_b", cls_b}};
}

// --- prompt banks -----------------------------------------------------------------

const PromptEntry* PromptBank::find_mask(uint32_t mask) const {
  for (const auto& e : entries)
    if (e.mask == mask) return &e;
  return nullptr;
}

const PromptEntry* PromptBank::find_name(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<NamedParam> PromptBank::parameters() const {
  std::vector<NamedParam> out;
  for (const auto& e : entries) out.push_back({"prompt." + e.name, e.tensor});
  return out;
}

namespace {

std::string subset_name(uint32_t mask, const ModalityRegistry& reg, PromptStrategy strategy) {
  const uint32_t full = MissingPattern::complete(reg.count()).present;
  if (strategy == PromptStrategy::map && mask == full) return "P_c";
  std::string tags;
  for (int i = 0; i < reg.count(); ++i)
    if ((mask >> i) & 1u) tags += reg.modalities[static_cast<size_t>(i)].id[0];
  std::sort(tags.begin(), tags.end());
  return "P_" + tags + (strategy == PromptStrategy::msp ? "s" : "");
}

}  // namespace

PromptBank build_prompt_bank(PromptStrategy strategy, const ModelConfig& cfg,
                             const ModalityRegistry& registry, uint64_t seed) {
  cfg.validate();
  registry.validate();
  PromptBank bank;
  bank.strategy = strategy;
  bank.n_slices = static_cast<int>(cfg.prompt_layers.size());
  bank.prompt_len = cfg.prompt_len;
  bank.d_model = cfg.d_model;
  if (strategy == PromptStrategy::none) return bank;

  const int m = registry.count();
  if (m >= 31) throw ConfigError("modality count too large for subset masks");
  std::vector<uint32_t> masks;
  if (strategy == PromptStrategy::msp) {
    for (int i = 0; i < m; ++i) masks.push_back(1u << i);
  } else {
    for (uint32_t mask = 1; mask < (1u << m); ++mask) masks.push_back(mask);
  }
  ParamInit init{seed};
  for (uint32_t mask : masks) {
    PromptEntry e;
    e.mask = mask;
    e.name = subset_name(mask, registry, strategy);
    e.tensor = init.gaussian({bank.n_slices, bank.prompt_len, bank.d_model});
    bank.entries.push_back(std::move(e));
  }
  return bank;
}

TensorPtr select_prompt(const PromptBank& bank, const MissingPattern& pattern) {
  if (pattern.present == 0) throw ContractError("prompt selection on an all-missing pattern");
  if (bank.strategy == PromptStrategy::none) return nullptr;
  if (bank.strategy == PromptStrategy::map) {
    const PromptEntry* e = bank.find_mask(pattern.present);
    if (!e)
      throw ContractError("MAP bank has no prompt for pattern mask " +
                          std::to_string(pattern.present));
    return e->tensor;
  }
  // MSP: element-wise sum over present modalities.
  TensorPtr sum;
  for (const auto& e : bank.entries) {
    if ((pattern.present & e.mask) == 0) continue;
    sum = sum ? add(sum, e.tensor) : e.tensor;
  }
  if (!sum) throw ContractError("MSP bank covers no modality of the sample pattern");
  return sum;
}

// --- forward -----------------------------------------------------------------------

namespace {

TensorPtr forward_one(const Backbone& bb, const TaskHead& head, const PromptBank& bank,
                      const Sample& s) {
  const ModelConfig& cfg = bb.cfg;
  const int d = cfg.d_model;
  const int tlen = cfg.max_text_len;
  const int npatch = cfg.n_patches();
  const int ps = cfg.patch_size;

  if (static_cast<int>(s.text.size()) > tlen)
    throw DataError("sample text length " + std::to_string(s.text.size()) +
                    " exceeds max_text_len " + std::to_string(tlen));
  if (s.image.size() != static_cast<size_t>(cfg.image_h) * cfg.image_w)
    throw DataError("sample image size " + std::to_string(s.image.size()) +
                    " does not match configured " + std::to_string(cfg.image_h) + "x" +
                    std::to_string(cfg.image_w));

  std::vector<int> tokens(static_cast<size_t>(tlen), kPadToken);
  std::copy(s.text.begin(), s.text.end(), tokens.begin());

  auto text = add(add_rowvec(gather_rows(bb.token_emb, tokens),
                             slice_rows(bb.type_emb, kTextModality, kTextModality + 1)),
                  bb.pos_text);

  // Patch grid in row-major patch order, each patch flattened row-major.
  auto patches = Tensor::create({npatch, ps * ps});
  const int pw = cfg.image_w / ps;
  for (int p = 0; p < npatch; ++p) {
    const int pr = p / pw, pc = p % pw;
    for (int r = 0; r < ps; ++r)
      for (int c = 0; c < ps; ++c)
        patches->data[static_cast<size_t>(p) * ps * ps + r * ps + c] =
            s.image[static_cast<size_t>(pr * ps + r) * cfg.image_w + pc * ps + c];
  }
  auto image = add(add_rowvec(add_rowvec(matmul(patches, bb.patch_proj_w), bb.patch_proj_b),
                              slice_rows(bb.type_emb, kImageModality, kImageModality + 1)),
                   bb.pos_image);

  auto x = concat_rows({bb.cls, text, image});

  // Key-side additive attention mask: padding text positions are invisible.
  const int base_len = 1 + tlen + npatch;
  std::vector<double> base_mask(static_cast<size_t>(base_len), 0.0);
  for (int j = 0; j < tlen; ++j)
    if (tokens[static_cast<size_t>(j)] == kPadToken) base_mask[static_cast<size_t>(1 + j)] = -1e9;

  TensorPtr selected = select_prompt(bank, s.pattern);
  TensorPtr prompt_flat;
  if (selected) {
    if (bank.n_slices != static_cast<int>(cfg.prompt_layers.size()))
      throw ContractError("prompt bank has " + std::to_string(bank.n_slices) +
                          " layer slices but the model expects " +
                          std::to_string(cfg.prompt_layers.size()));
    prompt_flat = reshape(selected, {bank.n_slices * bank.prompt_len, bank.d_model});
    if (bank.d_model != d) throw ContractError("prompt width disagrees with d_model");
  }

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  bool has_prompt = false;
  TensorPtr mask_row = Tensor::from_values({base_len}, base_mask);

  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    if (prompt_flat) {
      const auto it =
          std::find(cfg.prompt_layers.begin(), cfg.prompt_layers.end(), layer);
      if (it != cfg.prompt_layers.end()) {
        const int slot = static_cast<int>(it - cfg.prompt_layers.begin());
        auto rows = slice_rows(prompt_flat, slot * bank.prompt_len,
                               (slot + 1) * bank.prompt_len);
        if (!has_prompt) {
          x = concat_rows({rows, x});
          std::vector<double> with_prompt(static_cast<size_t>(bank.prompt_len), 0.0);
          with_prompt.insert(with_prompt.end(), base_mask.begin(), base_mask.end());
          mask_row = Tensor::from_values({base_len + bank.prompt_len}, with_prompt);
          has_prompt = true;
        } else {
          // Later prompt layers replace the existing prompt rows.
          x = concat_rows({rows, slice_rows(x, bank.prompt_len, x->rows())});
        }
      }
    }

    const Block& blk = bb.blocks[static_cast<size_t>(layer)];
    auto h = layernorm(x, blk.ln1_g, blk.ln1_b, 1e-5);
    auto q = add_rowvec(matmul(h, blk.wq), blk.bq);
    auto k = add_rowvec(matmul(h, blk.wk), blk.bk);
    auto v = add_rowvec(matmul(h, blk.wv), blk.bv);
    std::vector<TensorPtr> ctx_heads;
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      const int c0 = hd * cfg.head_dim(), c1 = (hd + 1) * cfg.head_dim();
      auto scores = scale(matmul(slice_cols(q, c0, c1), transpose(slice_cols(k, c0, c1))),
                          inv_sqrt_dh);
      auto attn = softmax(add_rowvec(scores, mask_row), 1);
      ctx_heads.push_back(matmul(attn, slice_cols(v, c0, c1)));
    }
    x = add(x, add_rowvec(matmul(concat_cols(ctx_heads), blk.wo), blk.bo));

    auto h2 = layernorm(x, blk.ln2_g, blk.ln2_b, 1e-5);
    auto ffn = add_rowvec(
        matmul(gelu(add_rowvec(matmul(h2, blk.w1), blk.b1)), blk.w2), blk.b2);
    x = add(x, ffn);
  }

  x = layernorm(x, bb.final_ln_g, bb.final_ln_b, 1e-5);
  const int cls_pos = has_prompt ? bank.prompt_len : 0;
  auto pooled = tanh_op(add_rowvec(
      matmul(slice_rows(x, cls_pos, cls_pos + 1), head.pooler_w), head.pooler_b));
  return add_rowvec(matmul(pooled, head.cls_w), head.cls_b);
}

}  // namespace

TensorPtr forward(const Backbone& bb, const TaskHead& head, const PromptBank& bank,
                  const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ContractError("forward on an empty batch");
  std::vector<TensorPtr> rows;
  rows.reserve(batch.size());
  for (const Sample* s : batch) rows.push_back(forward_one(bb, head, bank, *s));
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

// --- trainable sets -----------------------------------------------------------------

namespace {

void set_grad_flags(const std::vector<NamedParam>& params, bool on) {
  for (const auto& p : params) p.tensor->set_requires_grad(on);
}

}  // namespace

std::vector<NamedParam> trainable_parameters(Backbone& bb, TaskHead& head, PromptBank& bank,
                                             TrainMode mode) {
  switch (mode) {
    case TrainMode::finetune_all: {
      if (bank.strategy != PromptStrategy::none)
        throw ConfigError("finetune_all trains the bare backbone; drop the prompt bank");
      set_grad_flags(bb.parameters(), true);
      set_grad_flags(head.parameters(), true);
      auto out = bb.parameters();
      auto h = head.parameters();
      out.insert(out.end(), h.begin(), h.end());
      return out;
    }
    case TrainMode::prompt_tune: {
      if (bank.strategy == PromptStrategy::none)
        throw ConfigError("prompt_tune requires a MAP or MSP prompt bank");
      set_grad_flags(bb.parameters(), false);
      set_grad_flags(bank.parameters(), true);
      set_grad_flags(head.parameters(), true);
      auto out = bank.parameters();
      auto h = head.parameters();
      out.insert(out.end(), h.begin(), h.end());
      return out;
    }
    case TrainMode::head_only: {
      set_grad_flags(bb.parameters(), false);
      set_grad_flags(bank.parameters(), false);
      set_grad_flags(head.parameters(), true);
      return head.parameters();
    }
  }
  throw ContractError("unreachable mode value");
}

std::vector<NamedParam> all_parameters(const Backbone& bb, const TaskHead& head,
                                       const PromptBank& bank) {
  auto out = bb.parameters();
  auto h = head.parameters();
  out.insert(out.end(), h.begin(), h.end());
  auto p = bank.parameters();
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

// --- checkpoints ---------------------------------------------------------------------

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "msplab-checkpoint v1\n";
  for (const auto& p : params) {
    out << "param " << p.name << " f64 " << p.tensor->shape.size();
    for (int dim : p.tensor->shape) out << ' ' << dim;
    out << '\n';
  }
  out << "DATA\n";
  for (const auto& p : params) {
    for (double v : p.tensor->data) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      unsigned char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
      out.write(reinterpret_cast<const char*>(bytes), 8);
    }
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

void load_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line) || line != "msplab-checkpoint v1")
    throw DataError("'" + path + "' is not a checkpoint (bad magic)");

  size_t next = 0;
  while (std::getline(in, line)) {
    if (line == "DATA") break;
    std::istringstream iss(line);
    std::string tag, name, dtype;
    size_t ndim = 0;
    if (!(iss >> tag >> name >> dtype >> ndim) || tag != "param")
      throw DataError("malformed checkpoint manifest line: " + line);
    if (next >= params.size())
      throw DataError("checkpoint lists extra parameter '" + name + "'");
    const auto& expect = params[next];
    if (name != expect.name)
      throw DataError("checkpoint parameter '" + name + "' where '" + expect.name +
                      "' was expected");
    if (dtype != "f64") throw DataError("unsupported dtype '" + dtype + "' for " + name);
    if (ndim != expect.tensor->shape.size())
      throw DataError("rank mismatch for '" + name + "'");
    for (size_t i = 0; i < ndim; ++i) {
      int dim = 0;
      if (!(iss >> dim)) throw DataError("truncated shape for '" + name + "'");
      if (dim != expect.tensor->shape[i])
        throw DataError("shape mismatch for '" + name + "': checkpoint dim " +
                        std::to_string(dim) + " vs model dim " +
                        std::to_string(expect.tensor->shape[i]));
    }
    ++next;
  }
  if (line != "DATA") throw DataError("checkpoint '" + path + "' has no DATA section");
  if (next != params.size())
    throw DataError("checkpoint is missing parameter '" + params[next].name + "'");

  for (const auto& p : params) {
    for (double& v : p.tensor->data) {
      unsigned char bytes[8];
      in.read(reinterpret_cast<char*>(bytes), 8);
      if (!in) throw DataError("checkpoint data truncated at '" + p.name + "'");
      uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(bytes[i]) << (8 * i);
      std::memcpy(&v, &bits, sizeof v);
    }
  }
  char extra;
  if (in.read(&extra, 1))
    throw DataError("checkpoint has trailing bytes after the declared parameters");
}

uint64_t params_hash(const std::vector<NamedParam>& params) {
  uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const unsigned char* bytes, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) {
    mix(reinterpret_cast<const unsigned char*>(p.name.data()), p.name.size());
    for (int dim : p.tensor->shape)
      mix(reinterpret_cast<const unsigned char*>(&dim), sizeof dim);
    for (double v : p.tensor->data) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      unsigned char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
      mix(bytes, 8);
    }
  }
  return h;
}

}  // namespace msplab
