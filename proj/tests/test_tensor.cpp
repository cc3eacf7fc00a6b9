#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "doctest.h"

using namespace gnnbench;

namespace {

// independent central-difference oracle (forward evaluations only)
std::vector<double> fd_gradient(const std::function<double()>& f, Tensor& x, double h = 1e-5) {
  std::vector<double> g(x.numel());
  auto buf = x.mutable_data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + h;
    const double fp = f();
    buf[i] = orig - h;
    const double fm = f();
    buf[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Tensor rand_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -2, double hi = 2) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(Tensor::identity(2), a);
  for (int64_t i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(a.data()[i]));

  Tensor r = matmul(Tensor::from_data({1, 2}, {1, 2}), Tensor::from_data({2, 1}, {3, 4}));
  CHECK(r.item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("matmul gradient matches central differences on 5x4 by 4x3") {
  Rng rng(11);
  for (int inst = 0; inst < 10; ++inst) {
    Tensor a = rand_tensor({5, 4}, rng);
    Tensor b = rand_tensor({4, 3}, rng);
    Tensor probe = rand_tensor({5, 3}, rng, -1, 1);
    auto f = [&]() { return sum(mul(matmul(a, b), probe)).item(); };

    a.set_requires_grad(true);
    b.set_requires_grad(true);
    {
      Tape tape;
      tape.backward(sum(mul(matmul(a, b), probe)));
    }
    a.set_requires_grad(false);
    b.set_requires_grad(false);
    auto fd_a = fd_gradient(f, a);
    auto fd_b = fd_gradient(f, b);
    for (int64_t i = 0; i < a.numel(); ++i) {
      const double rel = std::abs(a.grad()[i] - fd_a[i]) / std::max(1.0, std::abs(fd_a[i]));
      CHECK(rel < 1e-4);
    }
    for (int64_t i = 0; i < b.numel(); ++i) {
      const double rel = std::abs(b.grad()[i] - fd_b[i]) / std::max(1.0, std::abs(fd_b[i]));
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("log_softmax symmetric two-entry row") {
  Tensor out = log_softmax(Tensor::from_data({1, 2}, {0, 0}));
  CHECK(out.data()[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log_softmax stays finite at |x| = 1e3") {
  Tensor out = log_softmax(Tensor::from_data({1, 2}, {1000, 0}));
  CHECK(std::isfinite(out.data()[0]));
  CHECK(out.data()[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(out.data()[1] == doctest::Approx(-1000.0));
}

TEST_CASE("log_softmax rows exponentiate and sum to one") {
  Rng rng(5);
  for (int inst = 0; inst < 50; ++inst) {
    Tensor x = rand_tensor({4, 6}, rng, -30, 30);
    Tensor out = log_softmax(x);
    for (int64_t i = 0; i < 4; ++i) {
      double s = 0;
      for (int64_t j = 0; j < 6; ++j) s += std::exp(out.at(i, j));
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("nll_loss hand values") {
  const double ln2 = std::log(2.0);
  Tensor logp = Tensor::from_data({1, 2}, {-ln2, -ln2});
  CHECK(nll_loss(logp, {0}, {1}).item() == doctest::Approx(ln2));

  Tensor perfect = Tensor::from_data({1, 2}, {0.0, -50.0});
  CHECK(nll_loss(perfect, {0}, {1}).item() == doctest::Approx(0.0));
}

TEST_CASE("nll_loss random case equals direct summation oracle") {
  Rng rng(9);
  Tensor logp = log_softmax(rand_tensor({7, 4}, rng));
  std::vector<int32_t> targets(7);
  std::vector<uint8_t> mask(7);
  for (int i = 0; i < 7; ++i) {
    targets[i] = static_cast<int32_t>(rng.uniform_int(0, 3));
    mask[i] = rng.uniform() < 0.7;
  }
  mask[0] = 1;  // keep nonempty
  double acc = 0;
  int64_t m = 0;
  for (int i = 0; i < 7; ++i) {
    if (!mask[i]) continue;
    acc -= logp.at(i, targets[i]);
    ++m;
  }
  CHECK(nll_loss(logp, targets, mask).item() ==
        doctest::Approx(acc / static_cast<double>(m)).epsilon(1e-12));
}

TEST_CASE("nll_loss rejects empty mask and bad targets") {
  Tensor logp = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(nll_loss(logp, {0, 0}, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(nll_loss(logp, {5, 0}, {1, 1}), std::invalid_argument);
}

TEST_CASE("sign examples") {
  Tensor out = sign(Tensor::from_data({3}, {0.0, -3.2, 7.0}));
  CHECK(out.data()[0] == 0.0);
  CHECK(out.data()[1] == -1.0);
  CHECK(out.data()[2] == 1.0);
}

TEST_CASE("dropout p=0 is the identity") {
  Rng rng(3);
  Tensor x = rand_tensor({4, 4}, rng);
  Tensor out = dropout(x, 0.0, 123, true);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("dropout rejects p outside [0,1)") {
  Tensor x = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(dropout(x, 1.0, 1, true), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, -0.1, 1, true), std::invalid_argument);
}

TEST_CASE("dropout scales survivors by 1/(1-p) in training only") {
  Tensor x = Tensor::full({100, 1}, 1.0);
  Tensor train_out = dropout(x, 0.5, 7, true);
  for (double v : train_out.data()) CHECK((v == 0.0 || v == doctest::Approx(2.0)));
  Tensor eval_out = dropout(x, 0.5, 7, false);
  for (double v : eval_out.data()) CHECK(v == 1.0);
}

TEST_CASE("clip saturates at the epsilon ball surface") {
  const double eps = 0.25;
  Rng rng(21);
  Tensor x = rand_tensor({3, 3}, rng);
  Tensor shifted = add(x, Tensor::full({3, 3}, 2 * eps));  // x + 2eps
  Tensor lo = add(x, Tensor::full({3, 3}, -eps));
  Tensor hi = add(x, Tensor::full({3, 3}, eps));
  Tensor out = clip(shifted, lo, hi);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(x.data()[i] + eps));
}

TEST_CASE("backward of sum gives all-ones") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tape tape;
  tape.backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of squared l2 norm gives 2x") {
  Rng rng(17);
  Tensor x = rand_tensor({5}, rng);
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(sum(mul(x, x)));
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));
}

TEST_CASE("repeated backward on one tape is an error") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tape tape;
  Tensor loss = sum(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
}

TEST_CASE("backward rejects non-scalar loss and stale tapes") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  {
    Tape tape;
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
  Tensor stale;
  {
    Tape tape;
    stale = sum(x);
  }
  CHECK_THROWS_AS(backward(stale), std::runtime_error);
}

TEST_CASE("tensors without requires_grad never accumulate gradient") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, false);
  Tensor w = Tensor::from_data({3}, {1, 1, 1}, true);
  Tape tape;
  tape.backward(sum(mul(x, w)));
  CHECK_FALSE(x.has_grad());
  CHECK(w.has_grad());
}

TEST_CASE("forward passes are bitwise deterministic given seed, dropout included") {
  Rng rng(33);
  Tensor x = rand_tensor({6, 5}, rng);
  Tensor a = dropout(relu(x), 0.4, 999, true);
  Tensor b = dropout(relu(x), 0.4, 999, true);
  REQUIRE(a.numel() == b.numel());
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("batchnorm normalizes columns in training mode") {
  Rng rng(41);
  Tensor x = rand_tensor({50, 3}, rng);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  Tensor rm = Tensor::zeros({3});
  Tensor rv = Tensor::full({3}, 1.0);
  Tensor out = batchnorm(x, gamma, beta, rm, rv, 0.1, 1e-5, true);
  bool running_mean_moved = false;
  for (int64_t j = 0; j < 3; ++j) {
    double mean = 0;
    for (int64_t i = 0; i < 50; ++i) mean += out.at(i, j);
    mean /= 50;
    CHECK(std::abs(mean) < 1e-10);
    if (rm.data()[j] != 0.0) running_mean_moved = true;
  }
  CHECK(running_mean_moved);
}
