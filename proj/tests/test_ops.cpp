#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "devlbert/error.hpp"
#include "devlbert/ops.hpp"
#include "gradcheck.hpp"

using namespace devlbert;

namespace {

Tensor randn(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (auto& v : data) v = rng.gaussian();
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

void expect_gradcheck(const gradcheck::Program& program,
                      std::vector<std::pair<std::string, Tensor>> inputs,
                      gradcheck::Options opt = {}) {
  auto r = gradcheck::check(program, std::move(inputs), opt);
  INFO(gradcheck::describe(r));
  CHECK(r.ok);
}

}  // namespace

// ---------------------------------------------------------------- values

TEST_CASE("matmul values") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(19));
  CHECK(c.at(0, 1) == doctest::Approx(22));
  CHECK(c.at(1, 0) == doctest::Approx(43));
  CHECK(c.at(1, 1) == doctest::Approx(50));

  CHECK_THROWS_AS(matmul(a, Tensor({3, 2}, 1.0)), DimensionError);
}

TEST_CASE("softmax values and row normalization") {
  Tensor x({1, 3}, {1, 2, 3});
  Tensor s = softmax(x, 1);
  // exp([1,2,3]) normalized, computed independently at double precision
  CHECK(s.at(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(s.at(0, 2) == doctest::Approx(0.66524095577482190).epsilon(1e-12));

  // shift invariance: softmax(x + c) == softmax(x)
  Tensor shifted = softmax(Tensor({1, 3}, {1001, 1002, 1003}), 1);
  for (int j = 0; j < 3; ++j) {
    CHECK(shifted.at(0, j) == doctest::Approx(s.at(0, j)).epsilon(1e-12));
  }

  Rng rng(1);
  Tensor big = randn({4, 7}, rng, false);
  Tensor sm = softmax(big, 1);
  for (int i = 0; i < 4; ++i) {
    double row = 0;
    for (int j = 0; j < 7; ++j) row += sm.at(i, j);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax along axis 0") {
  Tensor x({2, 2}, {0, 10, 0, 20});
  Tensor s = softmax(x, 0);
  double c0 = s.at(0, 0) + s.at(1, 0);
  double c1 = s.at(0, 1) + s.at(1, 1);
  CHECK(c0 == doctest::Approx(1.0));
  CHECK(c1 == doctest::Approx(1.0));
  CHECK(s.at(0, 0) == doctest::Approx(0.5));
  CHECK(s.at(1, 1) > 0.99);
}

TEST_CASE("layer_norm values") {
  Tensor x({1, 2}, {1, 3});
  Tensor gain({2}, 1.0);
  Tensor bias({2}, 0.0);
  Tensor y = layer_norm(x, gain, bias);
  // mean 2, var 1 -> (x - 2) / sqrt(1 + 1e-5)
  CHECK(y.at(0, 0) == doctest::Approx(-0.9999950000374997).epsilon(1e-10));
  CHECK(y.at(0, 1) == doctest::Approx(0.9999950000374997).epsilon(1e-10));
}

TEST_CASE("cross_entropy_soft values") {
  // equal logits, uniform target over 4 classes -> log 4
  Tensor logits({1, 4}, 0.0, false);
  Tensor target({1, 4}, 0.25);
  CHECK(cross_entropy_soft(logits, target).value() ==
        doctest::Approx(1.3862943611198906).epsilon(1e-12));

  // one-hot target picks out -log softmax at the hot index
  Tensor l2({1, 3}, {1, 2, 3});
  Tensor t2({1, 3}, {0, 0, 1});
  CHECK(cross_entropy_soft(l2, t2).value() ==
        doctest::Approx(-std::log(0.66524095577482190)).epsilon(1e-10));

  // invalid target distribution is rejected
  Tensor bad({1, 3}, {0.5, 0.2, 0.2});
  CHECK_THROWS_AS(cross_entropy_soft(l2, bad), ValidationError);
  Tensor negative({1, 3}, {1.2, -0.2, 0.0});
  CHECK_THROWS_AS(cross_entropy_soft(l2, negative), ValidationError);
}

TEST_CASE("cross_entropy_soft survives extreme logits") {
  Tensor logits({1, 2}, {1000.0, -1000.0}, false);
  Tensor target({1, 2}, {1.0, 0.0});
  double v = cross_entropy_soft(logits, target).value();
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  Tensor flipped({1, 2}, {0.0, 1.0});
  double w = cross_entropy_soft(logits, flipped).value();
  CHECK(std::isfinite(w));
  CHECK(w == doctest::Approx(2000.0).epsilon(1e-9));
}

TEST_CASE("bce_with_logits values") {
  Tensor zero({1}, {0.0});
  Tensor one({1}, {1.0});
  CHECK(bce_with_logits(zero, one).value() == doctest::Approx(0.6931471805599453).epsilon(1e-12));

  // large logits stay finite in both directions
  Tensor big({2}, {40.0, -40.0});
  Tensor labels({2}, {1.0, 0.0});
  CHECK(bce_with_logits(big, labels).value() == doctest::Approx(0.0).epsilon(1e-12));
  Tensor wrong({2}, {0.0, 1.0});
  CHECK(bce_with_logits(big, wrong).value() == doctest::Approx(40.0).epsilon(1e-9));
}

TEST_CASE("gelu and relu values") {
  Tensor x({3}, {-1.0, 0.0, 1.0});
  Tensor g = gelu(x);
  CHECK(g.buffer()[0] == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
  CHECK(g.buffer()[1] == doctest::Approx(0.0));
  CHECK(g.buffer()[2] == doctest::Approx(0.8413447460685429).epsilon(1e-12));

  Tensor r = relu(x);
  CHECK(r.buffer()[0] == 0.0);
  CHECK(r.buffer()[2] == 1.0);
}

TEST_CASE("gather, concat, slicing, pooling values") {
  Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor g = gather_rows(x, {2, 0, 2});
  CHECK(g.shape() == Shape{3, 2});
  CHECK(g.at(0, 0) == 5);
  CHECK(g.at(1, 1) == 2);
  CHECK(g.at(2, 1) == 6);
  CHECK_THROWS_AS(gather_rows(x, {3}), ValidationError);
  CHECK_THROWS_AS(gather_rows(x, {-1}), ValidationError);

  Tensor y({1, 2}, {9, 9});
  Tensor cat0 = concat(x, y, 0);
  CHECK(cat0.shape() == Shape{4, 2});
  CHECK(cat0.at(3, 0) == 9);
  Tensor z({3, 1}, {7, 8, 9});
  Tensor cat1 = concat(x, z, 1);
  CHECK(cat1.shape() == Shape{3, 3});
  CHECK(cat1.at(1, 2) == 8);

  Tensor rows = slice_rows(x, 1, 3);
  CHECK(rows.shape() == Shape{2, 2});
  CHECK(rows.at(0, 0) == 3);
  Tensor cols = slice_cols(x, 1, 2);
  CHECK(cols.shape() == Shape{3, 1});
  CHECK(cols.at(2, 0) == 6);

  Tensor mp0 = mean_pool(x, 0);
  CHECK(mp0.shape() == Shape{2});
  CHECK(mp0.buffer()[0] == doctest::Approx(3.0));
  CHECK(mp0.buffer()[1] == doctest::Approx(4.0));
  Tensor mp1 = mean_pool(x, 1);
  CHECK(mp1.shape() == Shape{3});
  CHECK(mp1.buffer()[2] == doctest::Approx(5.5));
}

TEST_CASE("one_hot and reshape") {
  Tensor oh = one_hot({1, 0}, 3);
  CHECK(oh.shape() == Shape{2, 3});
  CHECK(oh.at(0, 1) == 1.0);
  CHECK(oh.at(0, 0) == 0.0);
  CHECK(oh.at(1, 0) == 1.0);
  CHECK_THROWS_AS(one_hot({3}, 3), ValidationError);

  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = reshape(x, {3, 2});
  CHECK(r.at(2, 1) == 6);
  CHECK_THROWS_AS(reshape(x, {4, 2}), DimensionError);
}

// ------------------------------------------------------------- gradients

TEST_CASE("gradcheck matmul") {
  Rng rng(11);
  Tensor a = randn({3, 4}, rng);
  Tensor b = randn({4, 2}, rng);
  expect_gradcheck([&] { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
}

TEST_CASE("matmul gradient against hand computation") {
  // f = sum(a @ b) with b fixed: df/da = row sums of b broadcast
  Tensor a({1, 2}, {1, 1}, true);
  Tensor b({2, 2}, {1, 2, 3, 4});
  sum(matmul(a, b)).backward();
  CHECK(a.grad()[0] == doctest::Approx(3.0));
  CHECK(a.grad()[1] == doctest::Approx(7.0));
}

TEST_CASE("gradcheck elementwise ops") {
  Rng rng(12);
  Tensor a = randn({2, 3}, rng);
  Tensor b = randn({2, 3}, rng);
  expect_gradcheck([&] { return sum(mul(add(a, b), sub(a, b))); }, {{"a", a}, {"b", b}});
  expect_gradcheck([&] { return sum(scale(mul(a, a), 0.5)); }, {{"a", a}});
}

TEST_CASE("gradcheck activations") {
  Rng rng(13);
  Tensor x = randn({3, 3}, rng);
  // keep relu probes away from the kink at 0
  for (auto& v : x.buffer())
    if (std::abs(v) < 1e-2) v = 0.5;
  expect_gradcheck([&] { return sum(relu(x)); }, {{"x", x}});
  expect_gradcheck([&] { return sum(gelu(x)); }, {{"x", x}});
}

TEST_CASE("gradcheck softmax both axes") {
  Rng rng(14);
  Tensor x = randn({3, 4}, rng);
  Tensor w = randn({3, 4}, rng, false);
  expect_gradcheck([&] { return sum(mul(softmax(x, 1), w)); }, {{"x", x}});
  expect_gradcheck([&] { return sum(mul(softmax(x, 0), w)); }, {{"x", x}});
}

TEST_CASE("gradcheck layer_norm") {
  Rng rng(15);
  Tensor x = randn({4, 6}, rng);
  Tensor gain = randn({6}, rng);
  Tensor bias = randn({6}, rng);
  Tensor w = randn({4, 6}, rng, false);
  expect_gradcheck([&] { return sum(mul(layer_norm(x, gain, bias), w)); },
                   {{"x", x}, {"gain", gain}, {"bias", bias}});
}

TEST_CASE("gradcheck cross_entropy_soft on logits and targets") {
  Rng rng(16);
  Tensor logits = randn({3, 5}, rng);
  // build a valid distribution that also requires grad
  std::vector<double> t(15);
  Rng tr(99);
  for (int i = 0; i < 3; ++i) {
    double row = 0;
    for (int j = 0; j < 5; ++j) {
      t[i * 5 + j] = 0.1 + tr.uniform();
      row += t[i * 5 + j];
    }
    for (int j = 0; j < 5; ++j) t[i * 5 + j] /= row;
  }
  Tensor targets({3, 5}, t, true);
  expect_gradcheck([&] { return cross_entropy_soft(logits, targets); },
                   {{"logits", logits}});
}

TEST_CASE("gradcheck bce_with_logits") {
  Rng rng(17);
  Tensor logits = randn({4}, rng);
  Tensor labels({4}, {1.0, 0.0, 1.0, 0.0});
  expect_gradcheck([&] { return bce_with_logits(logits, labels); }, {{"logits", logits}});
}

TEST_CASE("gradcheck structural ops") {
  Rng rng(18);
  Tensor x = randn({4, 3}, rng);
  Tensor y = randn({2, 3}, rng);
  Tensor w = randn({6, 3}, rng, false);
  expect_gradcheck([&] { return sum(mul(concat(x, y, 0), w)); }, {{"x", x}, {"y", y}});

  Tensor z = randn({4, 2}, rng);
  Tensor w2 = randn({4, 5}, rng, false);
  expect_gradcheck([&] { return sum(mul(concat(x, z, 1), w2)); }, {{"x", x}, {"z", z}});

  expect_gradcheck([&] { return sum(gather_rows(x, {0, 2, 2, 1})); }, {{"x", x}});
  expect_gradcheck([&] { return sum(slice_rows(x, 1, 3)); }, {{"x", x}});
  expect_gradcheck([&] { return sum(slice_cols(x, 0, 2)); }, {{"x", x}});
  expect_gradcheck([&] { return sum(mean_pool(x, 0)); }, {{"x", x}});
  expect_gradcheck([&] { return sum(mean_pool(x, 1)); }, {{"x", x}});
  expect_gradcheck([&] { return sum(reshape(x, {2, 6})); }, {{"x", x}});
  expect_gradcheck([&] { return sum(transpose(x)); }, {{"x", x}});
}

TEST_CASE("gradcheck add_rowwise and div_scalar") {
  Rng rng(19);
  Tensor x = randn({3, 4}, rng);
  Tensor bias = randn({4}, rng);
  expect_gradcheck([&] { return sum(mul(add_rowwise(x, bias), x)); },
                   {{"x", x}, {"bias", bias}});

  Tensor num = randn({2, 2}, rng);
  Tensor den({1}, {2.5}, true);
  expect_gradcheck([&] { return sum(mul(div_scalar(num, den), num)); },
                   {{"num", num}, {"den", den}});
}

TEST_CASE("gradcheck embedding_lookup accumulates duplicates") {
  Rng rng(20);
  Tensor table = randn({5, 3}, rng);
  expect_gradcheck([&] { return sum(embedding_lookup(table, {1, 1, 4, 0})); },
                   {{"table", table}});

  // duplicate row used twice gets twice the gradient
  Tensor t2 = randn({3, 2}, rng);
  sum(embedding_lookup(t2, {1, 1})).backward();
  CHECK(t2.grad()[2] == doctest::Approx(2.0));
  CHECK(t2.grad()[0] == doctest::Approx(0.0));
}

TEST_CASE("gradcheck composite expression") {
  // a small end-to-end chain through several ops at once
  Rng rng(21);
  Tensor x = randn({4, 6}, rng);
  Tensor w1 = randn({6, 8}, rng);
  Tensor b1 = randn({8}, rng);
  Tensor w2 = randn({8, 5}, rng);
  Tensor gain = randn({5}, rng);
  Tensor bias = randn({5}, rng);
  std::vector<double> t(4 * 5, 0.2);
  Tensor targets({4, 5}, t);
  auto program = [&] {
    Tensor h = gelu(add_rowwise(matmul(x, w1), b1));
    Tensor logits = layer_norm(matmul(h, w2), gain, bias);
    return cross_entropy_soft(logits, targets);
  };
  expect_gradcheck(program,
                   {{"x", x}, {"w1", w1}, {"b1", b1}, {"w2", w2}, {"gain", gain}, {"bias", bias}},
                   {.h = 1e-5, .tol = 1e-4, .max_entries_per_input = 16});
}
