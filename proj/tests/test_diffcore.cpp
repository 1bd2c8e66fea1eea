#include <cmath>
#include <filesystem>
#include <random>

#include <doctest.h>

#include "nga/diff/adam.hpp"
#include "nga/diff/checkpoint.hpp"
#include "nga/diff/nn.hpp"
#include "nga/diff/tensor.hpp"
#include "nga/error.hpp"
#include "support.hpp"

using namespace nga::diff;
using testing::finite_difference_check;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, v, grad);
}

// Weighted sum with fixed random weights so every output element matters.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(y.shape(), rng, -1.0, 1.0, false);
  return sum(mul(y, w));
}

}  // namespace

TEST_CASE("softmax closed forms") {
  auto a = softmax(Tensor::from({2}, {0.0, 0.0}), 0);
  CHECK(a.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a.at(1) == doctest::Approx(0.5).epsilon(1e-15));

  auto b = softmax(Tensor::from({2}, {0.0, std::log(3.0)}), 0);
  CHECK(b.at(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(b.at(1) == doctest::Approx(0.75).epsilon(1e-12));

  std::mt19937_64 rng(1);
  auto x = random_tensor({4, 3}, rng, -3, 3, false);
  for (std::size_t axis : {0u, 1u}) {
    auto base = softmax(x, axis);
    auto shifted = softmax(add_scalar(x, 7.25), axis);
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(base.at(i) == doctest::Approx(shifted.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("softmax axis sums and invalid axis") {
  std::mt19937_64 rng(2);
  auto x = random_tensor({5, 4}, rng, -10, 10, false);
  auto col = softmax(x, 0);
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      s += col.at(i, j);
      CHECK(col.at(i, j) > 0.0);
      CHECK(col.at(i, j) < 1.0);
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  auto row = softmax(x, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += row.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(softmax(x, 2), nga::Error);
}

TEST_CASE("backward: closed-form gradients") {
  auto x = Tensor::scalar(3.0, true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  auto v = Tensor::from({2}, {0.0, 0.0}, true);
  auto s = softmax(v, 0);
  backward(gather_flat(s, std::vector<std::size_t>{0}));
  CHECK(v.grad()[0] == doctest::Approx(0.25));
  CHECK(v.grad()[1] == doctest::Approx(-0.25));
}

TEST_CASE("backward overwrites instead of accumulating and rejects non-scalars") {
  auto x = Tensor::scalar(2.0, true);
  auto loss = mul(x, x);
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK_THROWS_AS(backward(Tensor::from({2}, {1.0, 2.0}, true)), nga::Error);
}

TEST_CASE("no-grad guard records nothing") {
  auto x = Tensor::scalar(2.0, true);
  Tensor y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = mul(x, x);
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("shape errors are argument errors") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), nga::Error);
  CHECK_THROWS_AS(add(a, Tensor::zeros({4})), nga::Error);
  try {
    matmul(a, b);
  } catch (const nga::Error& e) {
    CHECK(e.kind() == nga::ErrorKind::kArgument);
  }
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), nga::Error);
}

TEST_CASE("finite differences: every op on 10 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto row = random_tensor({4}, rng);
    auto m = random_tensor({4, 2}, rng);
    auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    auto g = random_tensor({4}, rng, 0.5, 1.5);
    auto sh = random_tensor({4}, rng);
    // Keep relu inputs away from the kink at 0.
    auto kinkless = random_tensor({3, 4}, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < kinkless.size(); ++i) {
      if (i % 2) kinkless.mutable_data()[i] = -kinkless.at(i);
    }
    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases{
        {"add", [&] { return probe(add(a, b), seed); }},
        {"add-broadcast", [&] { return probe(add(a, row), seed); }},
        {"sub", [&] { return probe(sub(a, b), seed); }},
        {"mul", [&] { return probe(mul(a, b), seed); }},
        {"mul-broadcast", [&] { return probe(mul(a, row), seed); }},
        {"scale", [&] { return probe(scale(a, -1.7), seed); }},
        {"add_scalar", [&] { return probe(add_scalar(a, 0.3), seed); }},
        {"matmul", [&] { return probe(matmul(a, m), seed); }},
        {"matmul_nt", [&] { return probe(matmul_nt(a, b), seed); }},
        {"transpose", [&] { return probe(transpose(a), seed); }},
        {"sigmoid", [&] { return probe(sigmoid(a), seed); }},
        {"relu", [&] { return probe(relu(kinkless), seed); }},
        {"exp", [&] { return probe(exp(a), seed); }},
        {"log", [&] { return probe(log(pos), seed); }},
        {"softmax0", [&] { return probe(softmax(a, 0), seed); }},
        {"softmax1", [&] { return probe(softmax(a, 1), seed); }},
        {"log_softmax0", [&] { return probe(log_softmax(a, 0), seed); }},
        {"log_softmax1", [&] { return probe(log_softmax(a, 1), seed); }},
        {"layer_norm", [&] { return probe(layer_norm(a, g, sh, 1e-5), seed); }},
        {"sum", [&] { return sum(mul(a, a)); }},
        {"mean", [&] { return mean(mul(a, b)); }},
        {"concat_cols", [&] { return probe(concat_cols(std::vector<Tensor>{a, b}), seed); }},
        {"concat_rows", [&] { return probe(concat_rows(std::vector<Tensor>{a, b}), seed); }},
        {"slice_cols", [&] { return probe(slice_cols(a, 1, 2), seed); }},
        {"gather_rows", [&] { return probe(gather_rows(a, std::vector<std::size_t>{2, 0, 2}), seed); }},
        {"gather_flat", [&] { return probe(gather_flat(reshape(a, {12}), std::vector<std::size_t>{0, 5, 5, 11}), seed); }},
        {"reshape", [&] { return probe(reshape(a, {2, 6}), seed); }},
    };
    for (const auto& [name, fn] : cases) {
      const auto r = finite_difference_check({a, b, row, m, pos, g, sh, kinkless}, fn);
      INFO(name << " seed " << seed);
      CHECK(r.max_relative_error < 1e-4);
      worst = std::max(worst, r.max_relative_error);
    }
  }
  MESSAGE("worst relative error over ops: " << worst);
}

TEST_CASE("finite differences: attention block and composed network") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ParameterSet params;
    auto block = make_attention_block(params, "blk", 8, 2, 16, rng);
    auto lin = make_linear(params, "in", 3, 8, rng);
    std::mt19937_64 data_rng(seed + 50);
    auto x = random_tensor({5, 3}, data_rng, -1, 1, false);
    auto q = random_tensor({2, 3}, data_rng, -1, 1, false);
    std::vector<Tensor> leaves;
    for (auto& [name, t] : params.entries()) leaves.push_back(t);
    const auto r = finite_difference_check(leaves, [&] {
      auto kv = lin(x);
      auto self = attention_block(kv, kv, block);
      auto cross = attention_block(lin(q), self, block);
      return probe(sigmoid(cross), seed);
    });
    INFO("seed " << seed);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("attention weights: singleton, sums, permutation invariance") {
  Rng rng(4);
  ParameterSet params;
  auto block = make_attention_block(params, "a", 4, 2, 8, rng);
  std::mt19937_64 data_rng(9);

  std::vector<Tensor> weights;
  auto q1 = random_tensor({1, 4}, data_rng, -1, 1, false);
  auto kv1 = random_tensor({1, 4}, data_rng, -1, 1, false);
  attention_block(q1, kv1, block, {false, &weights});
  REQUIRE(weights.size() == 2);
  for (const auto& w : weights) CHECK(w.at(0) == 1.0);

  weights.clear();
  auto q = random_tensor({3, 4}, data_rng, -1, 1, false);
  auto kv = random_tensor({3, 4}, data_rng, -1, 1, false);
  auto out = attention_block(q, kv, block, {false, &weights});
  CHECK(out.shape() == Shape{3, 4});
  for (const auto& w : weights) {
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 3; ++j) s += w.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }

  auto permuted = gather_rows(kv, std::vector<std::size_t>{2, 0, 1});
  auto out2 = attention_block(q, permuted, block);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.at(i) == doctest::Approx(out2.at(i)).epsilon(1e-12));

  CHECK_THROWS_AS(attention_block(random_tensor({2, 3}, data_rng, -1, 1, false), kv, block), nga::Error);
}

TEST_CASE("adam: first step, zero gradient, symmetry") {
  AdamState state;
  state.config.learning_rate = 0.1;
  std::vector<Tensor> p{Tensor::from({1}, {1.0}, true)};
  adam_step(state, p, std::vector<std::vector<double>>{{1.0}});
  CHECK(p[0].at(0) - 1.0 == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(state.step == 1);

  AdamState zero;
  std::vector<Tensor> q{Tensor::from({2}, {0.5, -2.0}, true)};
  for (int i = 0; i < 5; ++i) adam_step(zero, q, std::vector<std::vector<double>>{{0.0, 0.0}});
  CHECK(std::abs(q[0].at(0) - 0.5) < 1e-9);
  CHECK(std::abs(q[0].at(1) + 2.0) < 1e-9);
  CHECK(zero.step == 5);

  AdamState sym;
  std::vector<Tensor> twins{Tensor::from({1}, {0.3}, true), Tensor::from({1}, {0.3}, true)};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int i = 0; i < 50; ++i) {
    const double g = n(rng);
    adam_step(sym, twins, std::vector<std::vector<double>>{{g}, {g}});
  }
  CHECK(twins[0].at(0) == twins[1].at(0));

  CHECK_THROWS_AS(adam_step(sym, twins, std::vector<std::vector<double>>{{1.0, 2.0}, {1.0}}), nga::Error);
}

TEST_CASE("checkpoint round trip is bit-exact and validates shapes") {
  Rng rng(8);
  ParameterSet a;
  make_mlp(a, "m", 3, 5, 2, rng);
  const auto doc = to_checkpoint(a, {{"kind", "test"}});
  CHECK(doc.at("format") == kCheckpointFormat);
  CHECK(doc.at("version") == kCheckpointVersion);

  const auto path = std::filesystem::temp_directory_path() / "nga_ckpt_test.json";
  write_json_file(path, doc);
  Rng other(99);
  ParameterSet b;
  make_mlp(b, "m", 3, 5, 2, other);
  CHECK(a.checksum() != b.checksum());
  load_checkpoint(b, read_json_file(path));
  CHECK(a.checksum() == b.checksum());

  ParameterSet c;
  make_mlp(c, "m", 3, 4, 2, other);
  CHECK_THROWS_AS(load_checkpoint(c, doc), nga::Error);
  std::filesystem::remove(path);
}

TEST_CASE("deterministic forward") {
  Rng r1(5), r2(5);
  ParameterSet p1, p2;
  auto b1 = make_attention_block(p1, "x", 8, 2, 16, r1);
  auto b2 = make_attention_block(p2, "x", 8, 2, 16, r2);
  CHECK(p1.checksum() == p2.checksum());
  std::mt19937_64 d(1);
  auto x = random_tensor({4, 8}, d, -1, 1, false);
  auto y1 = attention_block(x, x, b1), y2 = attention_block(x, x, b2);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1.at(i) == y2.at(i));
}
