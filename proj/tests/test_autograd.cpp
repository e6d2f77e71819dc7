#include <cmath>
#include <limits>

#include "doctest.h"
#include "gradient_suite.hpp"
#include "minibert/ops.hpp"

using minibert::Rng;
using minibert::Tensor;
namespace ag = minibert::ag;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("matmul") {
  auto id = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
  CHECK(values(ag::matmul(id, b)) == std::vector<float>{5, 6, 7, 8});
  CHECK(ag::matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item() == 11.0f);
  CHECK_THROWS_AS(ag::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), minibert::DimensionError);
}

TEST_CASE("matmul gradient of sum equals row sums of b") {
  Rng rng(7);
  auto a = gradcheck::random_tensor(rng, {3, 4});
  auto b = gradcheck::random_tensor(rng, {4, 2});
  a.set_requires_grad(true);
  ag::backward(ag::sum(ag::matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(b[k * 2] + b[k * 2 + 1]).epsilon(1e-12));
    }
  }
  auto result = gradcheck::check(
      [b](const std::vector<gradcheck::DTensor>& in) { return ag::sum(ag::matmul(in[0], b)); }, {a});
  CHECK(result.max_rel_error < 1e-3);
}

TEST_CASE("elementwise") {
  CHECK(values(ag::add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {0, 0}))) == std::vector<float>{1, 2});
  CHECK(values(ag::scale(Tensor::from({3}, {1, 2, 3}), 2.0f)) == std::vector<float>{2, 4, 6});
  CHECK_THROWS_AS(ag::add(Tensor::zeros({2}), Tensor::zeros({3})), minibert::DimensionError);

  auto a = Tensor::from({3}, {1, -2, 3}, true);
  auto b = Tensor::from({3}, {4, 5, -6});
  ag::backward(ag::sum(ag::mul(a, b)));
  CHECK(values(Tensor::from({3}, {a.grad().begin(), a.grad().end()})) == std::vector<float>{4, 5, -6});
}

TEST_CASE("softmax") {
  auto uniform = ag::softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (float v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto big = ag::softmax(Tensor::from({2}, {1000, 0}), 0);
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(big[1]));

  CHECK_THROWS_AS(ag::softmax(Tensor::zeros({2, 2}), 2), minibert::DimensionError);

  auto masked = ag::softmax(Tensor::from({3}, {1.0f, -std::numeric_limits<float>::infinity(), 2.0f}), 0);
  CHECK(masked[1] == 0.0f);
}

TEST_CASE("softmax rows sum to one for large magnitudes") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> v(4 * 6);
    for (auto& x : v) x = static_cast<float>((rng.uniform01() * 2 - 1) * 1e4);
    auto y = ag::softmax(Tensor::from({4, 6}, v), 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 6; ++c) total += y[r * 6 + c];
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("layer_norm") {
  auto gain = Tensor::filled({3}, 1.0f);
  auto bias = Tensor::zeros({3});
  auto flat = ag::layer_norm(Tensor::from({1, 3}, {5, 5, 5}), gain, bias, 1e-5f);
  for (float v : flat.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));

  auto pair = ag::layer_norm(Tensor::from({1, 2}, {1, 3}), Tensor::filled({2}, 1.0f), Tensor::zeros({2}), 1e-5f);
  // population variance of [1,3] is 1
  CHECK(pair[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(pair[1] == doctest::Approx(1.0).epsilon(1e-4));

  Rng rng(11);
  std::vector<float> v(5 * 8);
  for (auto& x : v) x = static_cast<float>(rng.normal() * 3 + 2);
  auto y = ag::layer_norm(Tensor::from({5, 8}, v), Tensor::filled({8}, 1.0f), Tensor::zeros({8}), 1e-5f);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 8; ++c) mean += y[r * 8 + c];
    mean /= 8;
    for (std::size_t c = 0; c < 8; ++c) var += (y[r * 8 + c] - mean) * (y[r * 8 + c] - mean);
    var /= 8;
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("gelu") {
  CHECK(ag::gelu(Tensor::from({1}, {0})).item() == 0.0f);
  CHECK(ag::gelu(Tensor::from({1}, {10})).item() == doctest::Approx(10.0));
  CHECK(ag::gelu(Tensor::from({1}, {-0.75f})).item() < 0.0f);
}

TEST_CASE("embedding_lookup") {
  auto table = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  std::vector<std::int32_t> first{0};
  CHECK(values(ag::embedding_lookup(table, first)) == std::vector<float>{1, 2});

  std::vector<std::int32_t> twice{2, 2};
  ag::backward(ag::sum(ag::embedding_lookup(table, twice)));
  CHECK(std::vector<float>(table.grad().begin(), table.grad().end()) == std::vector<float>{0, 0, 0, 0, 2, 2});

  std::vector<std::int32_t> bad{3};
  CHECK_THROWS_AS(ag::embedding_lookup(table, bad), minibert::IndexError);
}

TEST_CASE("embedding_lookup backward matches one-hot matmul") {
  Rng rng(5);
  auto table = gradcheck::random_tensor(rng, {8, 4});
  auto weights = gradcheck::random_tensor(rng, {3, 4});
  std::vector<std::int32_t> ids{3, 1, 3};

  table.set_requires_grad(true);
  ag::backward(ag::sum(ag::mul(ag::embedding_lookup(table, ids), weights)));
  std::vector<double> gathered(table.grad().begin(), table.grad().end());

  std::vector<double> onehot(3 * 8, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) onehot[i * 8 + static_cast<std::size_t>(ids[i])] = 1.0;
  auto table2 = table.detach();
  table2.set_requires_grad(true);
  ag::backward(ag::sum(ag::mul(ag::matmul(gradcheck::DTensor::from({3, 8}, onehot), table2), weights)));
  for (std::size_t i = 0; i < gathered.size(); ++i) CHECK(gathered[i] == doctest::Approx(table2.grad()[i]));
}

TEST_CASE("dropout") {
  Rng rng(1);
  auto x = Tensor::from({4}, {1, 2, 3, 4});
  CHECK(values(ag::dropout(x, 0.0, true, &rng)) == values(x));
  CHECK(values(ag::dropout(x, 0.7, false, &rng)) == values(x));
  CHECK_THROWS_AS(ag::dropout(x, 1.0, true, &rng), minibert::ParameterError);

  auto ones = Tensor::filled({10000}, 1.0f);
  Rng seeded(42);
  auto y = ag::dropout(ones, 0.5, true, &seeded);
  double mean = 0;
  for (float v : y.data()) mean += v;
  mean /= 10000;
  CHECK(mean >= 0.95);
  CHECK(mean <= 1.05);

  Rng a(9), b(9);
  CHECK(values(ag::dropout(ones, 0.3, true, &a)) == values(ag::dropout(ones, 0.3, true, &b)));
}

TEST_CASE("cross_entropy_weighted") {
  std::vector<std::int32_t> label{0};
  std::vector<double> unit{1, 1, 1};
  auto sure = ag::cross_entropy_weighted(Tensor::from({1, 3}, {100, 0, 0}), label, unit);
  CHECK(sure.item() == doctest::Approx(0.0).epsilon(1e-6));

  auto uniform = ag::cross_entropy_weighted(Tensor::from({1, 3}, {0, 0, 0}), label, unit);
  CHECK(uniform.item() == doctest::Approx(std::log(3.0)).epsilon(1e-6));

  // a class at 25% frequency carries weight sqrt(1/0.25) = 2
  std::vector<double> weights{2, 1, 1};
  auto weighted = ag::cross_entropy_weighted(Tensor::from({1, 3}, {0, 0, 0}), label, weights);
  CHECK(weighted.item() == doctest::Approx(2 * std::log(3.0)).epsilon(1e-6));

  std::vector<std::int32_t> bad{3};
  CHECK_THROWS_AS(ag::cross_entropy_weighted(Tensor::zeros({1, 3}), bad, unit), minibert::IndexError);
}

TEST_CASE("mse_loss") {
  std::vector<double> target{1, 1};
  CHECK(ag::mse_loss(Tensor::from({2}, {1, 1}), target).item() == 0.0f);
  CHECK(ag::mse_loss(Tensor::from({2}, {0, 1}), target).item() == doctest::Approx(0.5));
  std::vector<double> three{1, 2, 3};
  CHECK_THROWS_AS(ag::mse_loss(Tensor::zeros({2}), three), minibert::DimensionError);

  auto pred = Tensor::from({2}, {0.5f, 3.0f}, true);
  ag::backward(ag::mse_loss(pred, target));
  CHECK(pred.grad()[0] == doctest::Approx(2 * (0.5 - 1) / 2));
  CHECK(pred.grad()[1] == doctest::Approx(2 * (3.0 - 1) / 2));
}

TEST_CASE("backward") {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  ag::backward(ag::sum(x));
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{1, 1, 1});

  auto s = Tensor::from({1}, {3}, true);
  ag::backward(ag::sum(ag::mul(s, s)));
  CHECK(s.grad()[0] == 6.0f);

  // accumulates without a reset
  ag::backward(ag::sum(ag::mul(s, s)));
  CHECK(s.grad()[0] == 12.0f);

  CHECK_THROWS_AS(ag::backward(ag::mul(x, x)), minibert::ContractError);
}

TEST_CASE("ignored parameter keeps zero gradient") {
  auto used = Tensor::from({2}, {1, 2}, true);
  auto ignored = Tensor::from({2}, {3, 4}, true);
  auto unused_branch = ag::mul(ignored, ignored);
  ag::backward(ag::sum(used));
  CHECK_FALSE(ignored.has_grad());
  (void)unused_branch;
}

TEST_CASE("tape visits each operation once") {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = ag::mul(x, x);
  auto z = ag::add(y, y);  // y reached twice
  auto loss = ag::sum(z);
  ag::Tape<float> tape(loss);
  CHECK(tape.size() == 3);
  CHECK(tape.operations().back() == loss.node().get());
  ag::backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("no-grad guard records nothing") {
  auto x = Tensor::from({2}, {1, 2}, true);
  ag::NoGradGuard guard;
  auto y = ag::mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite-difference suite, 20 seeds") {
  for (const auto& c : gradcheck::run_gradient_suite(20)) {
    INFO(c.op);
    CHECK(c.worst_rel_error < 1e-3);
  }
}
