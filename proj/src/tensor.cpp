#include "msplab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "msplab/errors.hpp"

namespace msplab {

namespace {

std::atomic<uint64_t> g_next_node_id{1};

size_t checked_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

// Wires a freshly computed op output into the graph. requires_grad is
// inherited from the parents; the backward rule is kept only when needed.
TensorPtr make_node(std::vector<int> shape, std::vector<double> values,
                    std::vector<TensorPtr> parents, std::function<void()> backward_fn) {
  auto out = std::make_shared<Tensor>();
  out->shape = std::move(shape);
  out->data = std::move(values);
  out->node_id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  out->requires_grad = rg;
  if (rg) {
    out->grad.assign(out->data.size(), 0.0);
    out->parents = std::move(parents);
    out->backward_fn = std::move(backward_fn);
  }
  return out;
}

void require_matrix(const TensorPtr& t, const char* op) {
  if (!t->is_matrix())
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t->shape));
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape)
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
}

constexpr double kGeluCubic = 0.044715;
const double kGeluScale = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

TensorPtr Tensor::create(std::vector<int> shape, bool requires_grad) {
  size_t n = checked_numel(shape);
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(n, 0.0);
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(n, 0.0);
  t->node_id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return t;
}

TensorPtr Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad) {
  size_t n = checked_numel(shape);
  if (n != values.size())
    throw DimensionError("from_values: " + shape_str(shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
  auto t = Tensor::create(std::move(shape), requires_grad);
  t->data = std::move(values);
  return t;
}

TensorPtr Tensor::scalar(double v, bool requires_grad) {
  return Tensor::from_values({1}, {v}, requires_grad);
}

TensorPtr Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  auto t = Tensor::create(std::move(shape), requires_grad);
  std::fill(t->data.begin(), t->data.end(), v);
  return t;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape));
  return data[0];
}

void Tensor::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::set_requires_grad(bool on) {
  requires_grad = on;
  if (on)
    grad.assign(data.size(), 0.0);
  else
    grad.clear();
}

// --- matmul / transpose ----------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a->cols() != b->rows())
    throw DimensionError("matmul dimension mismatch: " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
  const int m = a->rows(), k = a->cols(), n = b->cols();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* A = a->data.data();
  const double* B = b->data.data();
  for (int i = 0; i < m; ++i) {
    double* Ci = out.data() + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = A[static_cast<size_t>(i) * k + p];
      const double* Bp = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
    }
  }
  auto res = make_node({m, n}, std::move(out), {a, b}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a, pb = b;
    res->backward_fn = [o, pa, pb, m, k, n]() {
      const double* G = o->grad.data();
      if (pa->requires_grad) {
        double* dA = pa->grad.data();
        const double* B2 = pb->data.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* Gi = G + static_cast<size_t>(i) * n;
            const double* Bp = B2 + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
            dA[static_cast<size_t>(i) * k + p] += acc;
          }
      }
      if (pb->requires_grad) {
        double* dB = pb->grad.data();
        const double* A2 = pa->data.data();
        for (int p = 0; p < k; ++p) {
          double* dBp = dB + static_cast<size_t>(p) * n;
          for (int i = 0; i < m; ++i) {
            const double aip = A2[static_cast<size_t>(i) * k + p];
            const double* Gi = G + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
          }
        }
      }
    };
  }
  return res;
}

TensorPtr transpose(const TensorPtr& a) {
  require_matrix(a, "transpose");
  const int m = a->rows(), n = a->cols();
  std::vector<double> out(a->numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a->data[static_cast<size_t>(i) * n + j];
  auto res = make_node({n, m}, std::move(out), {a}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a;
    res->backward_fn = [o, pa]() {
      const int m2 = pa->rows(), n2 = pa->cols();
      for (int i = 0; i < m2; ++i)
        for (int j = 0; j < n2; ++j)
          pa->grad[static_cast<size_t>(i) * n2 + j] += o->grad[static_cast<size_t>(j) * m2 + i];
    };
  }
  return res;
}

// --- elementwise -----------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
TensorPtr binary_elementwise(const char* name, const TensorPtr& a, const TensorPtr& b, Fwd fwd,
                             Bwd bwd) {
  require_same_shape(a, b, name);
  std::vector<double> out(a->numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->data[i], b->data[i]);
  auto res = make_node(a->shape, std::move(out), {a, b}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a, pb = b;
    res->backward_fn = [o, pa, pb, bwd]() {
      for (size_t i = 0; i < o->grad.size(); ++i) {
        auto [da, db] = bwd(pa->data[i], pb->data[i]);
        if (pa->requires_grad) pa->grad[i] += o->grad[i] * da;
        if (pb->requires_grad) pb->grad[i] += o->grad[i] * db;
      }
    };
  }
  return res;
}

template <class Fwd, class Bwd>
TensorPtr unary_elementwise(const TensorPtr& a, Fwd fwd, Bwd bwd) {
  std::vector<double> out(a->numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->data[i]);
  auto res = make_node(a->shape, std::move(out), {a}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a;
    res->backward_fn = [o, pa, bwd]() {
      for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i] * bwd(pa->data[i]);
    };
  }
  return res;
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>{y, x}; });
}

TensorPtr div_elem(const TensorPtr& a, const TensorPtr& b) {
  return binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y) { return std::pair<double, double>{1.0 / y, -x / (y * y)}; });
}

TensorPtr scale(const TensorPtr& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return c * x; }, [c](double) { return c; });
}

TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
  require_matrix(a, "add_rowvec");
  const int m = a->rows(), n = a->cols();
  if (static_cast<int>(v->numel()) != n)
    throw DimensionError("add_rowvec: " + shape_str(a->shape) + " + " + shape_str(v->shape));
  std::vector<double> out(a->numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = a->data[static_cast<size_t>(i) * n + j] + v->data[j];
  auto res = make_node(a->shape, std::move(out), {a, v}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a, pv = v;
    res->backward_fn = [o, pa, pv, m, n]() {
      if (pa->requires_grad)
        for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
      if (pv->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) pv->grad[j] += o->grad[static_cast<size_t>(i) * n + j];
    };
  }
  return res;
}

TensorPtr gelu(const TensorPtr& a) {
  return unary_elementwise(
      a,
      [](double x) {
        const double u = kGeluScale * (x + kGeluCubic * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
      },
      [](double x) {
        const double u = kGeluScale * (x + kGeluCubic * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

TensorPtr tanh_op(const TensorPtr& a) {
  return unary_elementwise(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

TensorPtr abs_op(const TensorPtr& a) {
  // Subgradient 0 at exactly 0.
  return unary_elementwise(
      a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

TensorPtr clamp_min(const TensorPtr& a, double floor) {
  // Gradient stops where the clamp is active (x <= floor).
  return unary_elementwise(
      a, [floor](double x) { return x < floor ? floor : x; },
      [floor](double x) { return x > floor ? 1.0 : 0.0; });
}

// --- softmax / layernorm -----------------------------------------------------

TensorPtr softmax(const TensorPtr& a, int axis) {
  const int nd = static_cast<int>(a->shape.size());
  if (axis < 0 || axis >= nd)
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(a->shape));
  const int len = a->shape[axis];
  size_t inner = 1, outer = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= static_cast<size_t>(a->shape[i]);
  for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(a->shape[i]);

  std::vector<double> out(a->numel());
  const size_t stride = inner;
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * static_cast<size_t>(len) * inner + in;
      double mx = a->data[base];
      for (int k = 1; k < len; ++k) mx = std::max(mx, a->data[base + k * stride]);
      double denom = 0.0;
      for (int k = 0; k < len; ++k) {
        const double e = std::exp(a->data[base + k * stride] - mx);
        out[base + k * stride] = e;
        denom += e;
      }
      for (int k = 0; k < len; ++k) out[base + k * stride] /= denom;
    }
  }
  auto res = make_node(a->shape, std::move(out), {a}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a;
    res->backward_fn = [o, pa, len, inner, outer, stride]() {
      for (size_t ou = 0; ou < outer; ++ou) {
        for (size_t in = 0; in < inner; ++in) {
          const size_t base = ou * static_cast<size_t>(len) * inner + in;
          double dot = 0.0;
          for (int k = 0; k < len; ++k)
            dot += o->grad[base + k * stride] * o->data[base + k * stride];
          for (int k = 0; k < len; ++k) {
            const size_t idx = base + k * stride;
            pa->grad[idx] += o->data[idx] * (o->grad[idx] - dot);
          }
        }
      }
    };
  }
  return res;
}

TensorPtr layernorm(const TensorPtr& a, const TensorPtr& gain, const TensorPtr& bias,
                    double eps) {
  if (a->shape.empty()) throw DimensionError("layernorm: scalar input " + shape_str(a->shape));
  const int n = a->shape.back();
  if (static_cast<int>(gain->numel()) != n || static_cast<int>(bias->numel()) != n)
    throw DimensionError("layernorm: gain " + shape_str(gain->shape) + " / bias " +
                         shape_str(bias->shape) + " must match last axis of " +
                         shape_str(a->shape));
  const size_t rows = a->numel() / static_cast<size_t>(n);
  std::vector<double> out(a->numel());
  std::vector<double> inv_sd(rows), means(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* x = a->data.data() + r * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += x[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= n;
    const double isd = 1.0 / std::sqrt(var + eps);
    means[r] = mean;
    inv_sd[r] = isd;
    for (int j = 0; j < n; ++j)
      out[r * n + j] = (x[j] - mean) * isd * gain->data[j] + bias->data[j];
  }
  auto res = make_node(a->shape, std::move(out), {a, gain, bias}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a, pg = gain, pb = bias;
    auto mu = std::make_shared<std::vector<double>>(std::move(means));
    auto isd = std::make_shared<std::vector<double>>(std::move(inv_sd));
    res->backward_fn = [o, pa, pg, pb, mu, isd, n, rows]() {
      for (size_t r = 0; r < rows; ++r) {
        const double* x = pa->data.data() + r * n;
        const double* g = o->grad.data() + r * n;
        const double m = (*mu)[r], s = (*isd)[r];
        double sum_gg = 0.0, sum_ggy = 0.0;
        for (int j = 0; j < n; ++j) {
          const double y = (x[j] - m) * s;
          const double gg = g[j] * pg->data[j];
          sum_gg += gg;
          sum_ggy += gg * y;
          if (pg->requires_grad) pg->grad[j] += g[j] * y;
          if (pb->requires_grad) pb->grad[j] += g[j];
        }
        if (pa->requires_grad) {
          for (int j = 0; j < n; ++j) {
            const double y = (x[j] - m) * s;
            const double gg = g[j] * pg->data[j];
            pa->grad[r * n + j] += s * (gg - sum_gg / n - y * sum_ggy / n);
          }
        }
      }
    };
  }
  return res;
}

// --- reductions --------------------------------------------------------------

TensorPtr sum_all(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->data) s += v;
  auto res = make_node({1}, {s}, {a}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a;
    res->backward_fn = [o, pa]() {
      const double g = o->grad[0];
      for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
    };
  }
  return res;
}

TensorPtr mean_all(const TensorPtr& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a->numel()));
}

TensorPtr l2_norm(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->data) s += v * v;
  const double norm = std::sqrt(s);
  auto res = make_node({1}, {norm}, {a}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a;
    res->backward_fn = [o, pa]() {
      // Subgradient 0 at the origin.
      if (o->data[0] == 0.0) return;
      const double g = o->grad[0] / o->data[0];
      for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g * pa->data[i];
    };
  }
  return res;
}

// --- shape ops ----------------------------------------------------------------

TensorPtr reshape(const TensorPtr& a, std::vector<int> new_shape) {
  if (checked_numel(new_shape) != a->numel())
    throw DimensionError("reshape: " + shape_str(a->shape) + " -> " + shape_str(new_shape) +
                         " changes element count");
  auto res = make_node(std::move(new_shape), a->data, {a}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a;
    res->backward_fn = [o, pa]() {
      for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
    };
  }
  return res;
}

TensorPtr slice_rows(const TensorPtr& a, int r0, int r1) {
  require_matrix(a, "slice_rows");
  if (r0 < 0 || r1 > a->rows() || r0 >= r1)
    throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") out of range for " + shape_str(a->shape));
  const int n = a->cols();
  std::vector<double> out(a->data.begin() + static_cast<size_t>(r0) * n,
                          a->data.begin() + static_cast<size_t>(r1) * n);
  auto res = make_node({r1 - r0, n}, std::move(out), {a}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a;
    res->backward_fn = [o, pa, r0, n]() {
      const size_t offset = static_cast<size_t>(r0) * n;
      for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[offset + i] += o->grad[i];
    };
  }
  return res;
}

TensorPtr slice_cols(const TensorPtr& a, int c0, int c1) {
  require_matrix(a, "slice_cols");
  if (c0 < 0 || c1 > a->cols() || c0 >= c1)
    throw DimensionError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of range for " + shape_str(a->shape));
  const int m = a->rows(), n = a->cols(), w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<size_t>(i) * w + j] = a->data[static_cast<size_t>(i) * n + c0 + j];
  auto res = make_node({m, w}, std::move(out), {a}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pa = a;
    res->backward_fn = [o, pa, c0, m, n, w]() {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          pa->grad[static_cast<size_t>(i) * n + c0 + j] += o->grad[static_cast<size_t>(i) * w + j];
    };
  }
  return res;
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty part list");
  const int n = parts[0]->cols();
  int m = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p->cols() != n)
      throw DimensionError("concat_rows column mismatch: " + shape_str(parts[0]->shape) +
                           " vs " + shape_str(p->shape));
    m += p->rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(m) * n);
  for (const auto& p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
  auto res = make_node({m, n}, std::move(out), parts, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto ps = parts;
    res->backward_fn = [o, ps]() {
      size_t offset = 0;
      for (const auto& p : ps) {
        if (p->requires_grad)
          for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += o->grad[offset + i];
        offset += p->numel();
      }
    };
  }
  return res;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty part list");
  const int m = parts[0]->rows();
  int n = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p->rows() != m)
      throw DimensionError("concat_cols row mismatch: " + shape_str(parts[0]->shape) + " vs " +
                           shape_str(p->shape));
    n += p->cols();
  }
  std::vector<double> out(static_cast<size_t>(m) * n);
  int col = 0;
  for (const auto& p : parts) {
    const int w = p->cols();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<size_t>(i) * n + col + j] = p->data[static_cast<size_t>(i) * w + j];
    col += w;
  }
  auto res = make_node({m, n}, std::move(out), parts, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto ps = parts;
    res->backward_fn = [o, ps, m, n]() {
      int col = 0;
      for (const auto& p : ps) {
        const int w = p->cols();
        if (p->requires_grad)
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              p->grad[static_cast<size_t>(i) * w + j] +=
                  o->grad[static_cast<size_t>(i) * n + col + j];
        col += w;
      }
    };
  }
  return res;
}

TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& indices) {
  require_matrix(table, "gather_rows");
  const int v = table->rows(), d = table->cols();
  for (int idx : indices)
    if (idx < 0 || idx >= v)
      throw DataError("gather_rows: index " + std::to_string(idx) + " out of range [0," +
                      std::to_string(v) + ")");
  std::vector<double> out(indices.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy_n(table->data.begin() + static_cast<size_t>(indices[i]) * d, d,
                out.begin() + i * d);
  auto res =
      make_node({static_cast<int>(indices.size()), d}, std::move(out), {table}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pt = table;
    auto idx = indices;
    res->backward_fn = [o, pt, idx, d]() {
      for (size_t i = 0; i < idx.size(); ++i) {
        double* dst = pt->grad.data() + static_cast<size_t>(idx[i]) * d;
        const double* src = o->grad.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return res;
}

// --- task losses ---------------------------------------------------------------

TensorPtr cross_entropy_multiclass(const TensorPtr& logits, const std::vector<int>& labels) {
  require_matrix(logits, "cross_entropy");
  const int bsz = logits->rows(), ncls = logits->cols();
  if (static_cast<int>(labels.size()) != bsz)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(logits->shape) + " logits");
  for (int y : labels)
    if (y < 0 || y >= ncls)
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                      std::to_string(ncls) + ")");
  double total = 0.0;
  std::vector<double> probs(logits->numel());
  for (int i = 0; i < bsz; ++i) {
    const double* z = logits->data.data() + static_cast<size_t>(i) * ncls;
    double mx = z[0];
    for (int c = 1; c < ncls; ++c) mx = std::max(mx, z[c]);
    double denom = 0.0;
    for (int c = 0; c < ncls; ++c) denom += std::exp(z[c] - mx);
    const double lse = mx + std::log(denom);
    total += lse - z[labels[i]];
    for (int c = 0; c < ncls; ++c)
      probs[static_cast<size_t>(i) * ncls + c] = std::exp(z[c] - lse);
  }
  auto res = make_node({1}, {total / bsz}, {logits}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pl = logits;
    auto pr = std::make_shared<std::vector<double>>(std::move(probs));
    auto lab = labels;
    res->backward_fn = [o, pl, pr, lab, bsz, ncls]() {
      const double g = o->grad[0] / bsz;
      for (int i = 0; i < bsz; ++i)
        for (int c = 0; c < ncls; ++c) {
          const size_t idx = static_cast<size_t>(i) * ncls + c;
          pl->grad[idx] += g * ((*pr)[idx] - (c == lab[i] ? 1.0 : 0.0));
        }
    };
  }
  return res;
}

TensorPtr bce_with_logits(const TensorPtr& logits, const TensorPtr& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  double total = 0.0;
  for (size_t i = 0; i < logits->numel(); ++i) {
    const double z = logits->data[i], t = targets->data[i];
    // max(z,0) - z*t + log(1 + exp(-|z|))
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::fabs(z)));
  }
  const double n = static_cast<double>(logits->numel());
  auto res = make_node({1}, {total / n}, {logits, targets}, nullptr);
  if (res->requires_grad) {
    Tensor* o = res.get();
    auto pl = logits, pt = targets;
    res->backward_fn = [o, pl, pt, n]() {
      const double g = o->grad[0] / n;
      for (size_t i = 0; i < pl->numel(); ++i) {
        const double z = pl->data[i];
        const double sig = 1.0 / (1.0 + std::exp(-z));
        if (pl->requires_grad) pl->grad[i] += g * (sig - pt->data[i]);
        if (pt->requires_grad) pt->grad[i] += g * (-z);
      }
    };
  }
  return res;
}

// --- backward --------------------------------------------------------------------

void backward(const TensorPtr& loss) {
  if (!loss) throw ContractError("backward: null loss");
  if (loss->numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss->shape));
  if (!loss->requires_grad) return;

  // Reachable differentiable subgraph, then reverse creation order: every
  // node is created after its inputs, so descending id visits each node
  // after all of its consumers.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> seen;
  std::vector<Tensor*> stack{loss.get()};
  seen.insert(loss.get());
  while (!stack.empty()) {
    Tensor* t = stack.back();
    stack.pop_back();
    order.push_back(t);
    for (const auto& p : t->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Tensor* x, const Tensor* y) { return x->node_id > y->node_id; });

  // Double-buffer so repeated backward calls accumulate: grads computed in
  // place for this sweep, previous contents added back at the end.
  std::vector<std::vector<double>> saved(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    saved[i] = std::move(order[i]->grad);
    order[i]->grad.assign(order[i]->data.size(), 0.0);
  }
  loss->grad[0] = 1.0;
  for (Tensor* t : order)
    if (t->backward_fn) t->backward_fn();
  for (size_t i = 0; i < order.size(); ++i)
    for (size_t j = 0; j < saved[i].size(); ++j) order[i]->grad[j] += saved[i][j];
}

}  // namespace msplab
