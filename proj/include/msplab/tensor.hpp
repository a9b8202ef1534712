#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace msplab {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major float64 array, optionally recording into the implicit
// define-by-run graph. Values are immutable after creation; only the grad
// buffer mutates (during backward / zero_grad). Node ids are creation-ordered,
// so descending id order is a valid reverse-topological order for backward.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // same length as data iff requires_grad

  std::vector<TensorPtr> parents;
  std::function<void()> backward_fn;  // propagates this->grad into parents
  uint64_t node_id = 0;

  static TensorPtr create(std::vector<int> shape, bool requires_grad = false);
  static TensorPtr from_values(std::vector<int> shape, std::vector<double> values,
                               bool requires_grad = false);
  static TensorPtr scalar(double v, bool requires_grad = false);
  static TensorPtr full(std::vector<int> shape, double v, bool requires_grad = false);

  size_t numel() const { return data.size(); }
  bool is_matrix() const { return shape.size() == 2; }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }
  double item() const;

  void zero_grad();
  void set_requires_grad(bool on);
};

std::string shape_str(const std::vector<int>& shape);

// --- recorded operations -------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr div_elem(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);
// [m x n] + [n] (or [1 x n]) broadcast over rows.
TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v);

TensorPtr gelu(const TensorPtr& a);
TensorPtr tanh_op(const TensorPtr& a);
TensorPtr abs_op(const TensorPtr& a);
TensorPtr clamp_min(const TensorPtr& a, double floor);

TensorPtr softmax(const TensorPtr& a, int axis);
TensorPtr layernorm(const TensorPtr& a, const TensorPtr& gain, const TensorPtr& bias,
                    double eps);

TensorPtr sum_all(const TensorPtr& a);
TensorPtr mean_all(const TensorPtr& a);
TensorPtr l2_norm(const TensorPtr& a);

TensorPtr reshape(const TensorPtr& a, std::vector<int> new_shape);
TensorPtr slice_rows(const TensorPtr& a, int r0, int r1);
TensorPtr slice_cols(const TensorPtr& a, int c0, int c1);
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& indices);

// Batch-mean task losses, numerically stable (log-sum-exp / softplus forms).
TensorPtr cross_entropy_multiclass(const TensorPtr& logits, const std::vector<int>& labels);
TensorPtr bce_with_logits(const TensorPtr& logits, const TensorPtr& targets);

// Reverse-mode sweep from a scalar loss. Repeated calls accumulate into the
// persistent grad buffers of every reachable requires_grad tensor.
void backward(const TensorPtr& loss);

}  // namespace msplab
