#include "msplab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "msplab/errors.hpp"
#include "msplab/rng.hpp"

namespace msplab {

// --- registry / pattern ------------------------------------------------------

int ModalityRegistry::index_of(const std::string& id) const {
  for (int i = 0; i < count(); ++i)
    if (modalities[i].id == id) return i;
  throw DataError("unknown modality id '" + id + "'");
}

void ModalityRegistry::validate() const {
  if (modalities.empty()) throw ConfigError("modality registry must list at least one modality");
  std::set<std::string> ids, tags;
  for (const auto& m : modalities) {
    if (m.id.empty()) throw ConfigError("modality id must be nonempty");
    if (!ids.insert(m.id).second) throw ConfigError("duplicate modality id '" + m.id + "'");
    if (!tags.insert(m.id.substr(0, 1)).second)
      throw ConfigError("modality ids must start with distinct letters for pattern strings");
  }
}

ModalityRegistry ModalityRegistry::text_image(int max_text_len, int vocab_size, int h, int w) {
  ModalityRegistry reg;
  reg.modalities.push_back({"text", ModalityKind::text, {max_text_len, vocab_size}});
  reg.modalities.push_back({"image", ModalityKind::image, {h, w}});
  reg.validate();
  return reg;
}

int MissingPattern::count() const {
  int c = 0;
  for (uint32_t v = present; v; v >>= 1) c += static_cast<int>(v & 1u);
  return c;
}

MissingPattern MissingPattern::complete(int m) {
  MissingPattern p;
  p.present = m >= 32 ? ~0u : ((1u << m) - 1u);
  return p;
}

std::string MissingPattern::to_string(const ModalityRegistry& reg) const {
  std::string tags;
  for (int i = 0; i < reg.count(); ++i)
    if (has(i)) tags += reg.modalities[i].id[0];
  std::sort(tags.begin(), tags.end());
  return tags;
}

MissingPattern MissingPattern::parse(const std::string& s, const ModalityRegistry& reg) {
  MissingPattern p;
  for (char c : s) {
    int idx = -1;
    for (int i = 0; i < reg.count(); ++i)
      if (reg.modalities[i].id[0] == c) idx = i;
    if (idx < 0) throw DataError("pattern letter '" + std::string(1, c) + "' matches no modality");
    p.set(idx);
  }
  if (p.present == 0) throw DataError("pattern marks no modality present");
  return p;
}

// --- placeholders / scenarios --------------------------------------------------

PlaceholderPolicy PlaceholderPolicy::for_registry(const ModalityRegistry& reg) {
  PlaceholderPolicy pol;
  for (const auto& m : reg.modalities) {
    if (m.kind == ModalityKind::text) {
      pol.text.assign(static_cast<size_t>(m.dims[0]), kPadToken);
      if (m.dims[0] > 0) pol.text[0] = kClsToken;
      if (m.dims[0] > 1) pol.text[1] = kSepToken;
    } else {
      pol.image.assign(static_cast<size_t>(m.dims[0]) * m.dims[1], 1.0);
    }
  }
  return pol;
}

void ScenarioConfig::validate() const {
  if (p_img < 0.0 || p_img > 1.0 || p_txt < 0.0 || p_txt > 1.0)
    throw ConfigError("scenario fractions must lie in [0,1], got p_img=" +
                      std::to_string(p_img) + " p_txt=" + std::to_string(p_txt));
  if (p_img + p_txt < 1.0)
    throw ConfigError("scenario p_img + p_txt must be >= 1 so every sample keeps a modality, "
                      "got " + std::to_string(p_img) + " + " + std::to_string(p_txt));
}

std::string ScenarioConfig::name() const {
  auto pct = [](double p) { return std::to_string(static_cast<int>(std::lround(p * 100.0))); };
  return "img" + pct(p_img) + "_txt" + pct(p_txt);
}

// --- synthetic generation -------------------------------------------------------

void SyntheticTaskSpec::validate() const {
  if (A < 2 || B < 2) throw ConfigError("synthetic task needs A >= 2 and B >= 2");
  if (image_h <= 0 || image_w <= 0) throw ConfigError("image dims must be positive");
  if (max_text_len < 3) throw ConfigError("max_text_len must fit [CLS] x [SEP]");
  if (sig_group_size < 1) throw ConfigError("sig_group_size must be >= 1");
  if (distractor_pool < 1) throw ConfigError("distractor_pool must be >= 1");
  if (noise_sigma < 0.0 || text_noise < 0.0 || text_noise > 1.0)
    throw ConfigError("noise parameters out of range");
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  const int hw = image_h * image_w;
  if (A > hw) throw ConfigError("A exceeds pixel count, prototypes cannot be distinct");
  // Recoverability: every prototype pair must stay separated despite noise.
  const double required = 4.0 * noise_sigma * std::sqrt(static_cast<double>(hw));
  for (int a = 0; a < A; ++a) {
    const auto pa = prototype(a);
    for (int a2 = a + 1; a2 < A; ++a2) {
      const auto pb = prototype(a2);
      double d2 = 0.0;
      for (int i = 0; i < hw; ++i) d2 += (pa[i] - pb[i]) * (pa[i] - pb[i]);
      if (std::sqrt(d2) <= required)
        throw ConfigError("image prototypes " + std::to_string(a) + " and " +
                          std::to_string(a2) + " are closer than 4*sigma*sqrt(H*W); lower "
                          "noise_sigma or enlarge the image");
    }
  }
}

std::vector<double> SyntheticTaskSpec::prototype(int a) const {
  const int hw = image_h * image_w;
  std::vector<double> img(static_cast<size_t>(hw), 0.2);
  const int lo = static_cast<int>((static_cast<int64_t>(a) * hw) / A);
  const int hi = static_cast<int>((static_cast<int64_t>(a) + 1) * hw / A);
  for (int i = lo; i < hi; ++i) img[static_cast<size_t>(i)] = 0.8;
  return img;
}

Dataset generate_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.registry = ModalityRegistry::text_image(spec.max_text_len, spec.vocab_size(), spec.image_h,
                                             spec.image_w);
  ds.samples.resize(static_cast<size_t>(spec.n_samples));
  const int distractor_first = kNumSpecialTokens + spec.B * spec.sig_group_size;
  for (int i = 0; i < spec.n_samples; ++i) {
    // Per-sample sub-seed keeps generation order-free and parallelizable.
    Rng rng = Rng::derived(spec.seed, static_cast<uint64_t>(i));
    Sample& s = ds.samples[static_cast<size_t>(i)];
    const int a = static_cast<int>(rng.below(static_cast<uint64_t>(spec.A)));
    const int b = static_cast<int>(rng.below(static_cast<uint64_t>(spec.B)));
    s.label = a * spec.B + b;
    s.pattern = MissingPattern::complete(ds.registry.count());

    s.image = spec.prototype(a);
    if (spec.noise_sigma > 0.0)
      for (auto& px : s.image)
        px = std::clamp(px + rng.gaussian(spec.noise_sigma), 0.0, 1.0);

    s.text.assign(static_cast<size_t>(spec.max_text_len), kPadToken);
    s.text[0] = kClsToken;
    const int content = spec.max_text_len - 2;
    // Slot 1 always carries a signature token so factor b is never ambiguous.
    for (int k = 0; k < content; ++k) {
      const bool distract = k > 0 && rng.next_unit() < spec.text_noise;
      s.text[static_cast<size_t>(1 + k)] =
          distract ? distractor_first + static_cast<int>(rng.below(
                                             static_cast<uint64_t>(spec.distractor_pool)))
                   : spec.sig_group_first(b) +
                         static_cast<int>(rng.below(static_cast<uint64_t>(spec.sig_group_size)));
    }
    s.text[static_cast<size_t>(1 + content)] = kSepToken;
  }
  return ds;
}

// --- missing-modality protocol -----------------------------------------------------

GroupCounts scenario_counts(const ScenarioConfig& sc, int n) {
  sc.validate();
  GroupCounts g;
  g.image_only = static_cast<int>(std::lround(sc.frac_image_only() * n));
  g.text_only = static_cast<int>(std::lround(sc.frac_text_only() * n));
  // Rounding both masked groups up can overshoot N by at most one; shrink the
  // larger group (tie: text-only) so the remainder stays the complete group.
  while (g.image_only + g.text_only > n) {
    if (g.image_only > g.text_only)
      --g.image_only;
    else
      --g.text_only;
  }
  g.complete = n - g.image_only - g.text_only;
  return g;
}

Dataset apply_missing(const Dataset& ds, const ScenarioConfig& sc, const PlaceholderPolicy& pol) {
  sc.validate();
  const int m = ds.registry.count();
  for (size_t i = 0; i < ds.samples.size(); ++i)
    if (ds.samples[i].pattern != MissingPattern::complete(m))
      throw DataError("apply_missing requires an all-complete dataset; sample " +
                      std::to_string(i) + " is already masked");

  const int n = static_cast<int>(ds.size());
  const GroupCounts g = scenario_counts(sc, n);
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(sc.seed);
  rng.shuffle(order);

  const int text_idx = ds.registry.index_of("text");
  const int image_idx = ds.registry.index_of("image");
  Dataset out = ds;
  for (int k = 0; k < n; ++k) {
    Sample& s = out.samples[static_cast<size_t>(order[static_cast<size_t>(k)])];
    if (k < g.image_only) {
      s.pattern.present &= ~(1u << text_idx);
      s.text = pol.text;
    } else if (k < g.image_only + g.text_only) {
      s.pattern.present &= ~(1u << image_idx);
      s.image = pol.image;
    }
  }
  return out;
}

// --- file I/O ----------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void parse_fail(size_t line_no, const std::string& what) {
  throw DataError("dataset parse error at line " + std::to_string(line_no) + ": " + what);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

// Fields are space-separated key=value tokens; list values are comma-joined.
std::vector<std::pair<std::string, std::string>> parse_fields(const std::string& line,
                                                              size_t line_no) {
  std::vector<std::pair<std::string, std::string>> fields;
  std::istringstream iss(line);
  std::string tok;
  while (iss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) parse_fail(line_no, "token '" + tok + "' is not key=value");
    fields.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
  }
  return fields;
}

const std::string* find_field(const std::vector<std::pair<std::string, std::string>>& fields,
                              const std::string& key) {
  for (const auto& [k, v] : fields)
    if (k == key) return &v;
  return nullptr;
}

int parse_int(const std::string& s, size_t line_no, const std::string& field) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    parse_fail(line_no, "field '" + field + "' has malformed integer '" + s + "'");
  }
}

double parse_double(const std::string& s, size_t line_no, const std::string& field) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    parse_fail(line_no, "field '" + field + "' has malformed float '" + s + "'");
  }
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  ds.registry.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "msplab-dataset v1\n";
  out << "registry";
  for (const auto& m : ds.registry.modalities) {
    out << ' ' << m.id << ':' << (m.kind == ModalityKind::text ? "text" : "image");
    for (int d : m.dims) out << ':' << d;
  }
  out << '\n';
  for (const auto& s : ds.samples) {
    if (s.multi_hot.empty()) {
      out << "label=" << s.label;
    } else {
      out << "label=";
      for (size_t i = 0; i < s.multi_hot.size(); ++i)
        out << (i ? "," : "") << s.multi_hot[i];
    }
    out << " pattern=" << s.pattern.to_string(ds.registry);
    out << " text=";
    for (size_t i = 0; i < s.text.size(); ++i) out << (i ? "," : "") << s.text[i];
    out << " image=";
    for (size_t i = 0; i < s.image.size(); ++i) out << (i ? "," : "") << fmt_double(s.image[i]);
    const auto& img = ds.registry.modalities[static_cast<size_t>(ds.registry.index_of("image"))];
    out << " h=" << img.dims[0] << " w=" << img.dims[1] << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

uint64_t dataset_hash(const Dataset& ds) {
  uint64_t h = 14695981039346656037ULL;
  auto mix_bytes = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  auto mix_int = [&](int v) { mix_bytes(&v, sizeof v); };
  auto mix_double = [&](double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    mix_bytes(bytes, 8);
  };
  for (const auto& m : ds.registry.modalities) {
    mix_bytes(m.id.data(), m.id.size());
    mix_int(static_cast<int>(m.kind));
    for (int d : m.dims) mix_int(d);
  }
  for (const auto& s : ds.samples) {
    mix_int(s.label);
    for (int v : s.multi_hot) mix_int(v);
    mix_int(static_cast<int>(s.pattern.present));
    for (int t : s.text) mix_int(t);
    for (double px : s.image) mix_double(px);
  }
  return h;
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::string line;
  size_t line_no = 0;

  if (!std::getline(in, line)) parse_fail(1, "empty file");
  ++line_no;
  if (line != "msplab-dataset v1") parse_fail(line_no, "unrecognized magic '" + line + "'");

  if (!std::getline(in, line)) parse_fail(2, "missing registry line");
  ++line_no;
  Dataset ds;
  {
    std::istringstream iss(line);
    std::string tok;
    if (!(iss >> tok) || tok != "registry") parse_fail(line_no, "expected registry line");
    while (iss >> tok) {
      const auto parts = split(tok, ':');
      if (parts.size() < 3) parse_fail(line_no, "modality descriptor '" + tok + "' too short");
      ModalityDesc d;
      d.id = parts[0];
      if (parts[1] == "text")
        d.kind = ModalityKind::text;
      else if (parts[1] == "image")
        d.kind = ModalityKind::image;
      else
        parse_fail(line_no, "unknown modality kind '" + parts[1] + "'");
      for (size_t i = 2; i < parts.size(); ++i)
        d.dims.push_back(parse_int(parts[i], line_no, "registry"));
      ds.registry.modalities.push_back(std::move(d));
    }
    try {
      ds.registry.validate();
    } catch (const ConfigError& e) {
      parse_fail(line_no, e.what());
    }
  }

  const int text_idx = ds.registry.index_of("text");
  const int image_idx = ds.registry.index_of("image");
  const int max_len = ds.registry.modalities[static_cast<size_t>(text_idx)].dims[0];
  const auto& img_dims = ds.registry.modalities[static_cast<size_t>(image_idx)].dims;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = parse_fields(line, line_no);
    Sample s;

    const std::string* label = find_field(fields, "label");
    if (!label) parse_fail(line_no, "record is missing the 'label' field");
    if (label->find(',') == std::string::npos) {
      s.label = parse_int(*label, line_no, "label");
    } else {
      for (const auto& part : split(*label, ','))
        s.multi_hot.push_back(parse_int(part, line_no, "label"));
      s.label = static_cast<int>(std::max_element(s.multi_hot.begin(), s.multi_hot.end()) -
                                 s.multi_hot.begin());
    }

    const std::string* pattern = find_field(fields, "pattern");
    if (!pattern) parse_fail(line_no, "record is missing the 'pattern' field");
    try {
      s.pattern = MissingPattern::parse(*pattern, ds.registry);
    } catch (const DataError& e) {
      parse_fail(line_no, e.what());
    }

    const std::string* text = find_field(fields, "text");
    if (!text) parse_fail(line_no, "record is missing the 'text' field");
    for (const auto& part : split(*text, ','))
      s.text.push_back(parse_int(part, line_no, "text"));
    if (static_cast<int>(s.text.size()) > max_len)
      parse_fail(line_no, "text longer than registry max_len");

    const std::string* image = find_field(fields, "image");
    if (!image) parse_fail(line_no, "record is missing the 'image' field");
    for (const auto& part : split(*image, ','))
      s.image.push_back(parse_double(part, line_no, "image"));

    const std::string* h = find_field(fields, "h");
    const std::string* w = find_field(fields, "w");
    if (!h || !w) parse_fail(line_no, "record is missing the 'h'/'w' fields");
    const int hv = parse_int(*h, line_no, "h"), wv = parse_int(*w, line_no, "w");
    if (hv != img_dims[0] || wv != img_dims[1])
      parse_fail(line_no, "image dims disagree with the registry");
    if (s.image.size() != static_cast<size_t>(hv) * static_cast<size_t>(wv))
      parse_fail(line_no, "image pixel count disagrees with h*w");

    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace msplab
