#pragma once

// Synthetic two-modality dataset generation, the missing-modality masking
// protocol, and dataset file I/O.

#include <cstdint>
#include <string>
#include <vector>

namespace msplab {

inline constexpr int kPadToken = 0;
inline constexpr int kClsToken = 1;
inline constexpr int kSepToken = 2;
inline constexpr int kNumSpecialTokens = 3;

enum class ModalityKind { text, image };

struct ModalityDesc {
  std::string id;
  ModalityKind kind = ModalityKind::text;
  // text: {max_len, vocab_size}; image: {h, w}
  std::vector<int> dims;

  bool operator==(const ModalityDesc&) const = default;
};

// Ordered modality list; bit k of a MissingPattern refers to modalities[k].
struct ModalityRegistry {
  std::vector<ModalityDesc> modalities;

  int count() const { return static_cast<int>(modalities.size()); }
  int index_of(const std::string& id) const;  // DataError when absent
  void validate() const;                      // ConfigError on empty list / duplicate ids

  // The artifact default: text first, then image.
  static ModalityRegistry text_image(int max_text_len, int vocab_size, int h, int w);

  bool operator==(const ModalityRegistry&) const = default;
};

struct MissingPattern {
  uint32_t present = 0;

  bool has(int idx) const { return (present >> idx) & 1u; }
  void set(int idx) { present |= (1u << idx); }
  int count() const;
  bool operator==(const MissingPattern&) const = default;

  static MissingPattern complete(int m);
  // Single-letter tags (first char of each modality id), sorted, e.g. "it".
  std::string to_string(const ModalityRegistry& reg) const;
  static MissingPattern parse(const std::string& s, const ModalityRegistry& reg);
};

struct Sample {
  std::vector<int> text;      // token ids padded to max_text_len
  std::vector<double> image;  // h*w pixels in [0,1], row-major
  int label = 0;
  std::vector<int> multi_hot;  // optional multi-label target; empty for single-label
  MissingPattern pattern;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  ModalityRegistry registry;
  std::vector<Sample> samples;

  size_t size() const { return samples.size(); }

  bool operator==(const Dataset&) const = default;
};

// Constant contents substituted for a masked modality.
struct PlaceholderPolicy {
  std::vector<int> text;      // [CLS, SEP, PAD, ...] at full max_len
  std::vector<double> image;  // every pixel 1.0

  static PlaceholderPolicy for_registry(const ModalityRegistry& reg);
};

// Presence fractions for one training or inference phase. Missing rate is
// 2 - p_img - p_txt; p_img + p_txt >= 1 keeps every sample at least one
// modality.
struct ScenarioConfig {
  double p_img = 1.0;
  double p_txt = 1.0;
  uint64_t seed = 0;

  double frac_complete() const { return p_img + p_txt - 1.0; }
  double frac_image_only() const { return 1.0 - p_txt; }
  double frac_text_only() const { return 1.0 - p_img; }
  void validate() const;  // ConfigError when fractions leave [0,1] or sum < 1
  std::string name() const;  // e.g. "img100_txt30"
};

// Factored synthetic task: label = a*B + b. The image shows block prototype
// a plus Gaussian pixel noise; the text contains signature tokens of group b
// plus distractors, so each modality alone recovers exactly one factor.
struct SyntheticTaskSpec {
  int A = 4;
  int B = 4;
  int image_h = 8;
  int image_w = 8;
  int max_text_len = 12;
  int sig_group_size = 4;
  int distractor_pool = 8;
  double noise_sigma = 0.05;
  double text_noise = 0.25;
  int n_samples = 100;
  uint64_t seed = 0;

  int n_classes() const { return A * B; }
  int vocab_size() const { return kNumSpecialTokens + B * sig_group_size + distractor_pool; }
  void validate() const;  // ConfigError on invariant violation

  // Prototype for image factor a: a contiguous pixel block at 0.8 over a 0.2
  // background. Exposed so tests can run nearest-prototype classification.
  std::vector<double> prototype(int a) const;
  // First token id of text signature group b; group spans [first, first+size).
  int sig_group_first(int b) const { return kNumSpecialTokens + b * sig_group_size; }
};

Dataset generate_synthetic(const SyntheticTaskSpec& spec);

// Per-group sample counts for a scenario over N samples. Rounded to nearest,
// overshoot resolved by decrementing the larger masked group (tie: text-only),
// remainder to complete.
struct GroupCounts {
  int complete = 0;
  int image_only = 0;
  int text_only = 0;
};
GroupCounts scenario_counts(const ScenarioConfig& sc, int n);

Dataset apply_missing(const Dataset& ds, const ScenarioConfig& sc, const PlaceholderPolicy& pol);

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// FNV-1a over registry and sample contents; stable across platforms.
uint64_t dataset_hash(const Dataset& ds);

}  // namespace msplab
