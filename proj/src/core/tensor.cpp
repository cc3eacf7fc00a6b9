#include "core/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "core/rng.hpp"

namespace gnnbench {

struct Tensor::Impl {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates
  bool requires_grad = false;
  uint64_t tape_generation = 0;  // 0 = leaf / not recorded
};

namespace {

thread_local std::vector<Tape*> g_tape_stack;
std::atomic<uint64_t> g_tape_counter{0};

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

using ImplPtr = std::shared_ptr<Tensor::Impl>;

ImplPtr make_impl(std::vector<int64_t> shape, std::vector<double> data) {
  auto impl = std::make_shared<Tensor::Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

double* grad_buf(Tensor::Impl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad.data();
}

}  // namespace

Tensor wrap_impl(ImplPtr impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

ImplPtr unwrap_impl(const Tensor& t) { return t.impl_; }

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  int64_t n = numel_of(shape);
  auto t = wrap_impl(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  int64_t n = numel_of(shape);
  return wrap_impl(make_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (numel_of(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) +
                                " does not match data length " + std::to_string(data.size()));
  auto t = wrap_impl(make_impl(std::move(shape), std::move(data)));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::identity(int64_t n) {
  Tensor t = zeros({n, n});
  for (int64_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1.0;
  return t;
}

const std::vector<int64_t>& Tensor::shape() const { return impl_->shape; }

int64_t Tensor::numel() const { return impl_ ? static_cast<int64_t>(impl_->data.size()) : 0; }

int64_t Tensor::rows() const {
  return impl_->shape.empty() ? 1 : impl_->shape[0];
}

int64_t Tensor::cols() const {
  return impl_->shape.size() >= 2 ? impl_->shape[1] : 1;
}

Tensor Tensor::deep_copy() const {
  auto t = wrap_impl(make_impl(impl_->shape, impl_->data));
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) +
                                " elements, expected 1");
  return impl_->data[0];
}

double Tensor::at(int64_t r, int64_t c) const { return impl_->data[r * cols() + c]; }

void Tensor::set(int64_t r, int64_t c, double v) { impl_->data[r * cols() + c] = v; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool b) { impl_->requires_grad = b; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.clear(); }

// ---- Tape ---------------------------------------------------------------

struct TapeAccess {
  static void record(Tape& tape, ImplPtr out, std::function<void()> fn) {
    out->tape_generation = tape.generation_;
    tape.nodes_.push_back({std::move(out), std::move(fn)});
  }
};

Tape::Tape() : generation_(++g_tape_counter) { g_tape_stack.push_back(this); }

Tape::~Tape() {
  // tapes unwind strictly LIFO
  if (!g_tape_stack.empty() && g_tape_stack.back() == this) g_tape_stack.pop_back();
}

Tape* Tape::active() { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

size_t Tape::num_nodes() const { return nodes_.size(); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar tensor");
  if (consumed_)
    throw std::runtime_error("backward: tape already consumed; build a fresh tape");
  auto li = loss.impl_;
  if (li->tape_generation != generation_)
    throw std::runtime_error("backward: loss was not recorded on this tape (stale tape)");
  li->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->out->grad.empty()) it->backprop();
  }
  consumed_ = true;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar tensor");
  uint64_t gen = unwrap_impl(loss) ? unwrap_impl(loss)->tape_generation : 0;
  for (auto it = g_tape_stack.rbegin(); it != g_tape_stack.rend(); ++it) {
    if ((*it)->generation() == gen) {
      (*it)->backward(loss);
      return;
    }
  }
  throw std::runtime_error("backward: loss was not produced on an active tape (stale tape)");
}

// ---- op plumbing ----------------------------------------------------------

namespace {

bool want_record(std::initializer_list<const Tensor*> inputs) {
  if (g_tape_stack.empty()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor finish(ImplPtr out, std::initializer_list<const Tensor*> inputs,
              std::function<void()> backprop) {
  Tensor result = wrap_impl(out);
  if (want_record(inputs)) {
    result.set_requires_grad(true);
    TapeAccess::record(*Tape::active(), unwrap_impl(result), std::move(backprop));
  }
  return result;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  auto out = make_impl({m, n}, std::vector<double>(m * n, 0.0));
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out->data.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        if (aip == 0.0) continue;
        const double* Bp = B + p * n;
        double* Ci = C + i * n;
        for (int64_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
      }
  }
  auto ai = unwrap_impl(a), bi = unwrap_impl(b);
  return finish(out, {&a, &b}, [ai, bi, out, m, k, n] {
    const double* G = out->grad.data();
    if (ai->requires_grad) {
      double* dA = grad_buf(*ai);
      const double* B = bi->data.data();
      // dA = G * B^T
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          const double* Gi = G + i * n;
          const double* Bp = B + p * n;
          double acc = 0.0;
          for (int64_t j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
          dA[i * k + p] += acc;
        }
    }
    if (bi->requires_grad) {
      double* dB = grad_buf(*bi);
      const double* A = ai->data.data();
      // dB = A^T * G
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          const double* Gi = G + i * n;
          double* dBp = dB + p * n;
          for (int64_t j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("transpose: expected rank-2 tensor, got " + shape_str(a.shape()));
  const int64_t m = a.shape()[0], n = a.shape()[1];
  auto out = make_impl({n, m}, std::vector<double>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[j * m + i] = a.data()[i * n + j];
  auto ai = unwrap_impl(a);
  return finish(out, {&a}, [ai, out, m, n] {
    if (!ai->requires_grad) return;
    double* dA = grad_buf(*ai);
    const double* G = out->grad.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) dA[i * n + j] += G[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  auto out = make_impl(a.shape(), std::vector<double>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out->data[i] = a.data()[i] + b.data()[i];
  auto ai = unwrap_impl(a), bi = unwrap_impl(b);
  return finish(out, {&a, &b}, [ai, bi, out] {
    const auto& G = out->grad;
    if (ai->requires_grad) {
      double* dA = grad_buf(*ai);
      for (size_t i = 0; i < G.size(); ++i) dA[i] += G[i];
    }
    if (bi->requires_grad) {
      double* dB = grad_buf(*bi);
      for (size_t i = 0; i < G.size(); ++i) dB[i] += G[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  auto out = make_impl(a.shape(), std::vector<double>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out->data[i] = a.data()[i] - b.data()[i];
  auto ai = unwrap_impl(a), bi = unwrap_impl(b);
  return finish(out, {&a, &b}, [ai, bi, out] {
    const auto& G = out->grad;
    if (ai->requires_grad) {
      double* dA = grad_buf(*ai);
      for (size_t i = 0; i < G.size(); ++i) dA[i] += G[i];
    }
    if (bi->requires_grad) {
      double* dB = grad_buf(*bi);
      for (size_t i = 0; i < G.size(); ++i) dB[i] -= G[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  auto out = make_impl(a.shape(), std::vector<double>(a.numel()));
  for (int64_t i = 0; i < a.numel(); ++i) out->data[i] = a.data()[i] * b.data()[i];
  auto ai = unwrap_impl(a), bi = unwrap_impl(b);
  return finish(out, {&a, &b}, [ai, bi, out] {
    const auto& G = out->grad;
    if (ai->requires_grad) {
      double* dA = grad_buf(*ai);
      for (size_t i = 0; i < G.size(); ++i) dA[i] += G[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      double* dB = grad_buf(*bi);
      for (size_t i = 0; i < G.size(); ++i) dB[i] += G[i] * ai->data[i];
    }
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  if (x.shape().size() != 2 || bias.numel() != x.shape()[1])
    throw std::invalid_argument("add_rowwise: shapes " + shape_str(x.shape()) + " + " +
                                shape_str(bias.shape()));
  const int64_t n = x.shape()[0], c = x.shape()[1];
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) out->data[i * c + j] = x.data()[i * c + j] + bias.data()[j];
  auto xi = unwrap_impl(x), bi = unwrap_impl(bias);
  return finish(out, {&x, &bias}, [xi, bi, out, n, c] {
    const double* G = out->grad.data();
    if (xi->requires_grad) {
      double* dX = grad_buf(*xi);
      for (int64_t i = 0; i < n * c; ++i) dX[i] += G[i];
    }
    if (bi->requires_grad) {
      double* dB = grad_buf(*bi);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) dB[j] += G[i * c + j];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = x.data()[i] * s;
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, s] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i) dX[i] += out->grad[i] * s;
  });
}

Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("mul_scalar_tensor: s must be scalar");
  const double sv = s.data()[0];
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = x.data()[i] * sv;
  auto xi = unwrap_impl(x), si = unwrap_impl(s);
  return finish(out, {&x, &s}, [xi, si, out, sv] {
    const auto& G = out->grad;
    if (xi->requires_grad) {
      double* dX = grad_buf(*xi);
      for (size_t i = 0; i < G.size(); ++i) dX[i] += G[i] * sv;
    }
    if (si->requires_grad) {
      double* dS = grad_buf(*si);
      double acc = 0.0;
      for (size_t i = 0; i < G.size(); ++i) acc += G[i] * xi->data[i];
      dS[0] += acc;
    }
  });
}

Tensor relu(const Tensor& x) {
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = x.data()[i] > 0 ? x.data()[i] : 0.0;
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i)
      if (xi->data[i] > 0) dX[i] += out->grad[i];
  });
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
  if (slope.numel() != 1) throw std::invalid_argument("prelu: slope must be scalar");
  const double a = slope.data()[0];
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.data()[i];
    out->data[i] = v >= 0 ? v : a * v;
  }
  auto xi = unwrap_impl(x), si = unwrap_impl(slope);
  return finish(out, {&x, &slope}, [xi, si, out, a] {
    const auto& G = out->grad;
    if (xi->requires_grad) {
      double* dX = grad_buf(*xi);
      for (size_t i = 0; i < G.size(); ++i) dX[i] += G[i] * (xi->data[i] >= 0 ? 1.0 : a);
    }
    if (si->requires_grad) {
      double* dS = grad_buf(*si);
      double acc = 0.0;
      for (size_t i = 0; i < G.size(); ++i)
        if (xi->data[i] < 0) acc += G[i] * xi->data[i];
      dS[0] += acc;
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.data()[i];
    out->data[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i) {
      const double s = out->data[i];
      dX[i] += out->grad[i] * s * (1.0 - s);
    }
  });
}

Tensor exp(const Tensor& x) {
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = std::exp(x.data()[i]);
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i) dX[i] += out->grad[i] * out->data[i];
  });
}

Tensor log(const Tensor& x) {
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = std::log(x.data()[i]);
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i) dX[i] += out->grad[i] / xi->data[i];
  });
}

Tensor rsqrt(const Tensor& x) {
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = 1.0 / std::sqrt(x.data()[i]);
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i) {
      const double y = out->data[i];
      dX[i] += out->grad[i] * (-0.5 * y * y * y);
    }
  });
}

Tensor sign(const Tensor& x) {
  // not differentiable; produces a constant (zero-gradient) tensor
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.data()[i];
    out->data[i] = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
  }
  return wrap_impl(out);
}

Tensor clip(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clip: lo > hi");
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = std::clamp(x.data()[i], lo, hi);
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, lo, hi] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i) {
      const double v = xi->data[i];
      if (v >= lo && v <= hi) dX[i] += out->grad[i];
    }
  });
}

Tensor clip(const Tensor& x, const Tensor& lo, const Tensor& hi) {
  check_same_shape("clip", x, lo);
  check_same_shape("clip", x, hi);
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i)
    out->data[i] = std::clamp(x.data()[i], lo.data()[i], hi.data()[i]);
  auto xi = unwrap_impl(x), li = unwrap_impl(lo), hi_ = unwrap_impl(hi);
  return finish(out, {&x}, [xi, li, hi_, out] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i) {
      const double v = xi->data[i];
      if (v >= li->data[i] && v <= hi_->data[i]) dX[i] += out->grad[i];
    }
  });
}

Tensor dropout(const Tensor& x, double p, uint64_t seed, bool training) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must lie in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  Rng rng(seed);
  auto keep = std::make_shared<std::vector<uint8_t>>(x.numel());
  const double inv = 1.0 / (1.0 - p);
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) {
    const bool k = rng.uniform() >= p;
    (*keep)[i] = k;
    out->data[i] = k ? x.data()[i] * inv : 0.0;
  }
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, keep, inv] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t i = 0; i < out->grad.size(); ++i)
      if ((*keep)[i]) dX[i] += out->grad[i] * inv;
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto out = make_impl({1}, {acc});
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    const double g = out->grad[0];
    for (size_t i = 0; i < xi->data.size(); ++i) dX[i] += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  auto out = make_impl({1}, {acc * inv});
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, inv] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    const double g = out->grad[0] * inv;
    for (size_t i = 0; i < xi->data.size(); ++i) dX[i] += g;
  });
}

Tensor sum_rows(const Tensor& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("sum_rows: expected rank-2 tensor, got " + shape_str(x.shape()));
  const int64_t n = x.shape()[0], m = x.shape()[1];
  auto out = make_impl({n}, std::vector<double>(n, 0.0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out->data[i] += x.data()[i * m + j];
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, n, m] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (int64_t i = 0; i < n; ++i) {
      const double g = out->grad[i];
      for (int64_t j = 0; j < m; ++j) dX[i * m + j] += g;
    }
  });
}

Tensor l1_norm(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += std::abs(v);
  auto out = make_impl({1}, {acc});
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    const double g = out->grad[0];
    for (size_t i = 0; i < xi->data.size(); ++i) {
      const double v = xi->data[i];
      dX[i] += g * (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
    }
  });
}

Tensor l2_norm(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  const double norm = std::sqrt(acc);
  auto out = make_impl({1}, {norm});
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, norm] {
    if (!xi->requires_grad || norm == 0.0) return;
    double* dX = grad_buf(*xi);
    const double g = out->grad[0] / norm;
    for (size_t i = 0; i < xi->data.size(); ++i) dX[i] += g * xi->data[i];
  });
}

Tensor diag(const Tensor& x) {
  if (x.shape().size() != 2 || x.shape()[0] != x.shape()[1])
    throw std::invalid_argument("diag: expected square matrix, got " + shape_str(x.shape()));
  const int64_t n = x.shape()[0];
  auto out = make_impl({n}, std::vector<double>(n));
  for (int64_t i = 0; i < n; ++i) out->data[i] = x.data()[i * n + i];
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, n] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (int64_t i = 0; i < n; ++i) dX[i * n + i] += out->grad[i];
  });
}

Tensor select_rows(const Tensor& x, const std::vector<uint8_t>& mask) {
  if (x.shape().size() != 2 || static_cast<int64_t>(mask.size()) != x.shape()[0])
    throw std::invalid_argument("select_rows: mask length " + std::to_string(mask.size()) +
                                " vs tensor " + shape_str(x.shape()));
  const int64_t c = x.shape()[1];
  auto picked = std::make_shared<std::vector<int64_t>>();
  for (int64_t i = 0; i < x.shape()[0]; ++i)
    if (mask[i]) picked->push_back(i);
  const int64_t m = static_cast<int64_t>(picked->size());
  auto out = make_impl({m, c}, std::vector<double>(m * c));
  for (int64_t r = 0; r < m; ++r)
    std::copy_n(x.data().data() + (*picked)[r] * c, c, out->data.data() + r * c);
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, picked, c] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (size_t r = 0; r < picked->size(); ++r)
      for (int64_t j = 0; j < c; ++j) dX[(*picked)[r] * c + j] += out->grad[r * c + j];
  });
}

Tensor rows_l2_normalize(const Tensor& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("rows_l2_normalize: expected rank-2 tensor");
  const int64_t n = x.shape()[0], m = x.shape()[1];
  auto norms = std::make_shared<std::vector<double>>(n, 0.0);
  auto out = make_impl(x.shape(), std::vector<double>(x.numel(), 0.0));
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < m; ++j) acc += x.data()[i * m + j] * x.data()[i * m + j];
    const double nr = std::sqrt(acc);
    (*norms)[i] = nr;
    if (nr >= 1e-12)
      for (int64_t j = 0; j < m; ++j) out->data[i * m + j] = x.data()[i * m + j] / nr;
  }
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, norms, n, m] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (int64_t i = 0; i < n; ++i) {
      const double nr = (*norms)[i];
      if (nr < 1e-12) continue;
      const double* xr = xi->data.data() + i * m;
      const double* gr = out->grad.data() + i * m;
      double dot = 0.0;
      for (int64_t j = 0; j < m; ++j) dot += xr[j] * gr[j];
      const double inv = 1.0 / nr, inv3 = inv * inv * inv;
      for (int64_t j = 0; j < m; ++j) dX[i * m + j] += gr[j] * inv - xr[j] * dot * inv3;
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& v) {
  if (x.shape().size() != 2 || v.numel() != x.shape()[0])
    throw std::invalid_argument("scale_rows: shapes " + shape_str(x.shape()) + " vs " +
                                shape_str(v.shape()));
  const int64_t n = x.shape()[0], m = x.shape()[1];
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out->data[i * m + j] = x.data()[i * m + j] * v.data()[i];
  auto xi = unwrap_impl(x), vi = unwrap_impl(v);
  return finish(out, {&x, &v}, [xi, vi, out, n, m] {
    const double* G = out->grad.data();
    if (xi->requires_grad) {
      double* dX = grad_buf(*xi);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) dX[i * m + j] += G[i * m + j] * vi->data[i];
    }
    if (vi->requires_grad) {
      double* dV = grad_buf(*vi);
      for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < m; ++j) acc += G[i * m + j] * xi->data[i * m + j];
        dV[i] += acc;
      }
    }
  });
}

Tensor scale_cols(const Tensor& x, const Tensor& v) {
  if (x.shape().size() != 2 || v.numel() != x.shape()[1])
    throw std::invalid_argument("scale_cols: shapes " + shape_str(x.shape()) + " vs " +
                                shape_str(v.shape()));
  const int64_t n = x.shape()[0], m = x.shape()[1];
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out->data[i * m + j] = x.data()[i * m + j] * v.data()[j];
  auto xi = unwrap_impl(x), vi = unwrap_impl(v);
  return finish(out, {&x, &v}, [xi, vi, out, n, m] {
    const double* G = out->grad.data();
    if (xi->requires_grad) {
      double* dX = grad_buf(*xi);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) dX[i * m + j] += G[i * m + j] * vi->data[j];
    }
    if (vi->requires_grad) {
      double* dV = grad_buf(*vi);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) dV[j] += G[i * m + j] * xi->data[i * m + j];
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("log_softmax: expected rank-2 tensor, got " +
                                shape_str(x.shape()));
  const int64_t n = x.shape()[0], c = x.shape()[1];
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  auto probs = std::make_shared<std::vector<double>>(x.numel());
  for (int64_t i = 0; i < n; ++i) {
    const double* xr = x.data().data() + i * c;
    double mx = xr[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double lse = 0.0;
    for (int64_t j = 0; j < c; ++j) lse += std::exp(xr[j] - mx);
    lse = mx + std::log(lse);
    for (int64_t j = 0; j < c; ++j) {
      out->data[i * c + j] = xr[j] - lse;
      (*probs)[i * c + j] = std::exp(xr[j] - lse);
    }
  }
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, probs, n, c] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (int64_t i = 0; i < n; ++i) {
      const double* gr = out->grad.data() + i * c;
      double gsum = 0.0;
      for (int64_t j = 0; j < c; ++j) gsum += gr[j];
      for (int64_t j = 0; j < c; ++j) dX[i * c + j] += gr[j] - (*probs)[i * c + j] * gsum;
    }
  });
}

Tensor softmax_rows(const Tensor& x, double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("softmax_rows: temperature must be positive, got " +
                                std::to_string(temperature));
  if (x.shape().size() != 2)
    throw std::invalid_argument("softmax_rows: expected rank-2 tensor");
  const int64_t n = x.shape()[0], c = x.shape()[1];
  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  for (int64_t i = 0; i < n; ++i) {
    const double* xr = x.data().data() + i * c;
    double mx = xr[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp((xr[j] - mx) / temperature);
    for (int64_t j = 0; j < c; ++j) out->data[i * c + j] = std::exp((xr[j] - mx) / temperature) / z;
  }
  auto xi = unwrap_impl(x);
  return finish(out, {&x}, [xi, out, n, c, temperature] {
    if (!xi->requires_grad) return;
    double* dX = grad_buf(*xi);
    for (int64_t i = 0; i < n; ++i) {
      const double* gr = out->grad.data() + i * c;
      const double* pr = out->data.data() + i * c;
      double dot = 0.0;
      for (int64_t j = 0; j < c; ++j) dot += gr[j] * pr[j];
      for (int64_t j = 0; j < c; ++j) dX[i * c + j] += pr[j] * (gr[j] - dot) / temperature;
    }
  });
}

Tensor nll_loss(const Tensor& logp, const std::vector<int32_t>& targets,
                const std::vector<uint8_t>& mask) {
  if (logp.shape().size() != 2)
    throw std::invalid_argument("nll_loss: expected rank-2 log-probabilities");
  const int64_t n = logp.shape()[0], c = logp.shape()[1];
  if (static_cast<int64_t>(targets.size()) != n || static_cast<int64_t>(mask.size()) != n)
    throw std::invalid_argument("nll_loss: targets/mask length must equal row count");
  int64_t m = 0;
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || targets[i] >= c)
      throw std::invalid_argument("nll_loss: target " + std::to_string(targets[i]) +
                                  " out of range [0," + std::to_string(c) + ")");
    acc -= logp.data()[i * c + targets[i]];
    ++m;
  }
  if (m == 0) throw std::invalid_argument("nll_loss: mask selects no rows (degenerate mask)");
  auto out = make_impl({1}, {acc / static_cast<double>(m)});
  auto li = unwrap_impl(logp);
  auto tg = std::make_shared<std::vector<int32_t>>(targets);
  auto mk = std::make_shared<std::vector<uint8_t>>(mask);
  return finish(out, {&logp}, [li, out, tg, mk, n, c, m] {
    if (!li->requires_grad) return;
    double* dL = grad_buf(*li);
    const double g = out->grad[0] / static_cast<double>(m);
    for (int64_t i = 0; i < n; ++i)
      if ((*mk)[i]) dL[i * c + (*tg)[i]] -= g;
  });
}

Tensor scatter_add_pairs(const Tensor& values,
                         const std::vector<std::pair<int64_t, int64_t>>& positions, int64_t rows,
                         int64_t cols) {
  if (values.numel() != static_cast<int64_t>(positions.size()))
    throw std::invalid_argument("scatter_add_pairs: values count " +
                                std::to_string(values.numel()) + " != positions " +
                                std::to_string(positions.size()));
  auto out = make_impl({rows, cols}, std::vector<double>(rows * cols, 0.0));
  for (size_t k = 0; k < positions.size(); ++k) {
    const auto& [r, c] = positions[k];
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      throw std::invalid_argument("scatter_add_pairs: position out of range");
    out->data[r * cols + c] += values.data()[k];
  }
  auto vi = unwrap_impl(values);
  auto pos = std::make_shared<std::vector<std::pair<int64_t, int64_t>>>(positions);
  return finish(out, {&values}, [vi, out, pos, cols] {
    if (!vi->requires_grad) return;
    double* dV = grad_buf(*vi);
    for (size_t k = 0; k < pos->size(); ++k)
      dV[k] += out->grad[(*pos)[k].first * cols + (*pos)[k].second];
  });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor& running_mean, Tensor& running_var, double momentum, double eps,
                 bool training) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("batchnorm: expected rank-2 tensor");
  const int64_t n = x.shape()[0], c = x.shape()[1];
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c)
    throw std::invalid_argument("batchnorm: parameter length must equal feature count");

  auto out = make_impl(x.shape(), std::vector<double>(x.numel()));
  auto mean_v = std::make_shared<std::vector<double>>(c, 0.0);
  auto var_v = std::make_shared<std::vector<double>>(c, 0.0);

  if (training) {
    for (int64_t j = 0; j < c; ++j) {
      double mu = 0.0;
      for (int64_t i = 0; i < n; ++i) mu += x.data()[i * c + j];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double d = x.data()[i * c + j] - mu;
        var += d * d;
      }
      var /= static_cast<double>(n);
      (*mean_v)[j] = mu;
      (*var_v)[j] = var;
      const double unbiased = n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1) : var;
      running_mean.mutable_data()[j] = (1.0 - momentum) * running_mean.data()[j] + momentum * mu;
      running_var.mutable_data()[j] = (1.0 - momentum) * running_var.data()[j] + momentum * unbiased;
    }
  } else {
    for (int64_t j = 0; j < c; ++j) {
      (*mean_v)[j] = running_mean.data()[j];
      (*var_v)[j] = running_var.data()[j];
    }
  }

  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const double xhat = (x.data()[i * c + j] - (*mean_v)[j]) / std::sqrt((*var_v)[j] + eps);
      out->data[i * c + j] = gamma.data()[j] * xhat + beta.data()[j];
    }

  auto xi = unwrap_impl(x), gi = unwrap_impl(gamma), bi = unwrap_impl(beta);
  return finish(out, {&x, &gamma, &beta}, [xi, gi, bi, out, mean_v, var_v, n, c, eps, training] {
    const double* G = out->grad.data();
    for (int64_t j = 0; j < c; ++j) {
      const double istd = 1.0 / std::sqrt((*var_v)[j] + eps);
      double gsum = 0.0, gxhat = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double xhat = (xi->data[i * c + j] - (*mean_v)[j]) * istd;
        gsum += G[i * c + j];
        gxhat += G[i * c + j] * xhat;
      }
      if (gi->requires_grad) grad_buf(*gi)[j] += gxhat;
      if (bi->requires_grad) grad_buf(*bi)[j] += gsum;
      if (xi->requires_grad) {
        double* dX = grad_buf(*xi);
        const double gam = gi->data[j];
        if (training) {
          // gradient through the batch statistics
          for (int64_t i = 0; i < n; ++i) {
            const double xhat = (xi->data[i * c + j] - (*mean_v)[j]) * istd;
            dX[i * c + j] += gam * istd *
                             (G[i * c + j] - gsum / static_cast<double>(n) -
                              xhat * gxhat / static_cast<double>(n));
          }
        } else {
          for (int64_t i = 0; i < n; ++i) dX[i * c + j] += gam * istd * G[i * c + j];
        }
      }
    }
  });
}

Tensor detach(const Tensor& x) {
  return Tensor::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
}

}  // namespace gnnbench
