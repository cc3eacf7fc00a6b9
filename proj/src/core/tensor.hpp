#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gnnbench {

class Tape;

/// Dense row-major float64 tensor. A Tensor is a cheap handle; copies share
/// storage, deep_copy() clones it. Rank 1 tensors behave as column vectors
/// (cols() == 1), scalars have shape {1}.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor identity(int64_t n);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const;
  int64_t numel() const;
  int64_t rows() const;
  int64_t cols() const;

  Tensor deep_copy() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(int64_t r, int64_t c) const;
  void set(int64_t r, int64_t c, double v);

  bool requires_grad() const;
  void set_requires_grad(bool b);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  struct Impl;  // internal; shared with the tape machinery in tensor.cpp

 private:
  friend class Tape;
  friend Tensor wrap_impl(std::shared_ptr<Impl>);
  friend std::shared_ptr<Impl> unwrap_impl(const Tensor&);
  std::shared_ptr<Impl> impl_;
};

std::string shape_str(const std::vector<int64_t>& shape);

/// Gradient tape. Constructing one makes it the active recorder for the
/// current thread (tapes nest; the innermost records). backward() may run
/// once; the tape is dropped when the object leaves scope.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Seeds d(loss)/d(loss)=1 and walks nodes in reverse recording order.
  void backward(const Tensor& loss);

  size_t num_nodes() const;
  uint64_t generation() const { return generation_; }

 private:
  friend struct TapeAccess;
  struct Node {
    std::shared_ptr<Tensor::Impl> out;
    std::function<void()> backprop;
  };
  std::vector<Node> nodes_;
  uint64_t generation_;
  bool consumed_ = false;
};

/// Convenience: dispatches to the active tape that recorded `loss`.
/// Errors if the loss is non-scalar or was recorded on a dead/foreign tape.
void backward(const Tensor& loss);

// ---- differentiable ops -----------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_rowwise(const Tensor& x, const Tensor& bias);  // [n,c] + [c]
Tensor scale(const Tensor& x, double s);
Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s);  // s: shape {1}
Tensor relu(const Tensor& x);
Tensor prelu(const Tensor& x, const Tensor& slope);  // slope: shape {1}
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor rsqrt(const Tensor& x);
Tensor sign(const Tensor& x);  // gradient defined as zero everywhere
Tensor clip(const Tensor& x, double lo, double hi);
Tensor clip(const Tensor& x, const Tensor& lo, const Tensor& hi);  // bounds constant
Tensor dropout(const Tensor& x, double p, uint64_t seed, bool training);
Tensor sum(const Tensor& x);       // -> scalar
Tensor mean(const Tensor& x);      // -> scalar
Tensor sum_rows(const Tensor& x);  // [n,m] -> [n]
Tensor l1_norm(const Tensor& x);   // -> scalar
Tensor l2_norm(const Tensor& x);   // -> scalar
Tensor diag(const Tensor& x);      // [n,n] -> [n]
Tensor select_rows(const Tensor& x, const std::vector<uint8_t>& mask);
Tensor rows_l2_normalize(const Tensor& x);
Tensor scale_rows(const Tensor& x, const Tensor& v);  // row i scaled by v[i]
Tensor scale_cols(const Tensor& x, const Tensor& v);
Tensor log_softmax(const Tensor& x);
Tensor softmax_rows(const Tensor& x, double temperature);
Tensor nll_loss(const Tensor& logp, const std::vector<int32_t>& targets,
                const std::vector<uint8_t>& mask);

/// Builds a [rows, cols] matrix with values[k] added at positions[k]
/// (positions may repeat; contributions accumulate).
Tensor scatter_add_pairs(const Tensor& values,
                         const std::vector<std::pair<int64_t, int64_t>>& positions, int64_t rows,
                         int64_t cols);

/// Per-column batch normalization. Training mode normalizes with batch
/// statistics and updates the running buffers in place; eval mode uses the
/// running statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor& running_mean, Tensor& running_var, double momentum,
                 double eps, bool training);

/// Detached copy: same values, no tape linkage, requires_grad off.
Tensor detach(const Tensor& x);

}  // namespace gnnbench
