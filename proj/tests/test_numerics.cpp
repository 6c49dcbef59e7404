#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "devlbert/checkpoint.hpp"
#include "devlbert/error.hpp"
#include "devlbert/ops.hpp"
#include "devlbert/optimizer.hpp"

using namespace devlbert;

namespace {

std::string temp_path(const std::string& stem) {
  return std::string("/tmp/devlbert_test_") + stem + "_" + std::to_string(::getpid()) + ".bin";
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("sgd step is lr times gradient") {
  Tensor w({2}, {1.0, -2.0}, true);
  Optimizer opt({{"w", w}}, {.type = "sgd", .lr = 0.1});
  sum(mul(w, w)).backward();  // grad = 2w
  opt.step();
  CHECK(w.at(0) == doctest::Approx(1.0 - 0.1 * 2.0));
  CHECK(w.at(1) == doctest::Approx(-2.0 + 0.1 * 4.0));
}

TEST_CASE("adam first step has magnitude close to lr") {
  // with bias correction, |update| = lr * g / (sqrt(g^2) + eps) ~= lr
  Tensor w({1}, {5.0}, true);
  Optimizer opt({{"w", w}}, {.type = "adam", .lr = 0.01});
  scale(w, 1000.0).backward();  // huge constant gradient
  opt.step();
  CHECK(std::abs(5.0 - w.at(0)) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Tensor w({3}, {1.0, 2.0, 3.0}, true);
  Optimizer opt({{"w", w}}, {});
  // populated but all-zero gradient
  scale(sum(w), 0.0).backward();
  opt.step();
  CHECK(w.at(0) == 1.0);
  CHECK(w.at(1) == 2.0);
  CHECK(w.at(2) == 3.0);

  // gradient never populated at all
  Optimizer opt2({{"w", w}}, {});
  w.zero_grad();
  opt2.step();
  CHECK(w.at(0) == 1.0);
}

TEST_CASE("adam minimizes a quadratic") {
  Tensor w({2}, {4.0, -3.0}, true);
  Optimizer opt({{"w", w}}, {.type = "adam", .lr = 0.05});
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    sum(mul(w, w)).backward();
    opt.step();
  }
  CHECK(std::abs(w.at(0)) < 1e-3);
  CHECK(std::abs(w.at(1)) < 1e-3);
}

TEST_CASE("weight decay pulls parameters toward zero") {
  Tensor w({1}, {1.0}, true);
  Optimizer opt({{"w", w}}, {.type = "sgd", .lr = 0.1, .weight_decay = 0.5});
  scale(w, 0.0).backward();  // zero task gradient
  opt.step();
  CHECK(w.at(0) == doctest::Approx(1.0 - 0.1 * 0.5));
}

TEST_CASE("optimizer validates parameter names") {
  Tensor a({1}, 0.0, true), b({1}, 0.0, true);
  CHECK_THROWS_AS(Optimizer({{"w", a}, {"w", b}}, {}), ValidationError);
  CHECK_THROWS_AS(Optimizer({{"", a}}, {}), ValidationError);
  CHECK_THROWS_AS(Optimizer({{"w", a}}, {.type = "momentum"}), ValidationError);
}

TEST_CASE("checkpoint round trip preserves exact bits") {
  std::vector<Parameter> params;
  params.push_back({"layer.weight", Tensor({2, 3}, {0.1, -0.2, 1e-300, 3.125, -7.5, 0.0})});
  params.push_back({"layer.bias", Tensor({3}, {1.0 / 3.0, 2.0 / 7.0, -1e16})});
  const std::string path = temp_path("roundtrip");

  nlohmann::json meta = {{"seed", 42}, {"note", "unit"}};
  save_checkpoint(path, params, meta);
  Checkpoint ckpt = load_checkpoint(path);

  REQUIRE(ckpt.params.size() == 2);
  CHECK(ckpt.meta["seed"] == 42);
  CHECK(ckpt.params[0].name == "layer.weight");
  CHECK(ckpt.params[0].tensor.shape() == Shape{2, 3});
  for (int i = 0; i < 6; ++i) {
    CHECK(ckpt.params[0].tensor.buffer()[i] == params[0].tensor.buffer()[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint writes are byte-identical across runs") {
  std::vector<Parameter> params{{"w", Tensor({4}, {1.5, -2.25, 0.0, 9.75})}};
  const std::string p1 = temp_path("bytes1"), p2 = temp_path("bytes2");
  save_checkpoint(p1, params, {{"k", "v"}});
  save_checkpoint(p2, params, {{"k", "v"}});
  CHECK(slurp(p1) == slurp(p2));
  CHECK_FALSE(slurp(p1).empty());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("restore validates names and shapes") {
  const std::string path = temp_path("restore");
  save_checkpoint(path, {{"w", Tensor({2}, {1.0, 2.0})}});
  Checkpoint ckpt = load_checkpoint(path);

  std::vector<Parameter> ok{{"w", Tensor({2}, 0.0, true)}};
  restore_parameters(ckpt, ok);
  CHECK(ok[0].tensor.at(1) == 2.0);

  std::vector<Parameter> wrong_shape{{"w", Tensor({3}, 0.0)}};
  CHECK_THROWS_AS(restore_parameters(ckpt, wrong_shape), ValidationError);
  std::vector<Parameter> missing{{"v", Tensor({2}, 0.0)}};
  CHECK_THROWS_AS(restore_parameters(ckpt, missing), ValidationError);
  std::remove(path.c_str());
}

TEST_CASE("malformed checkpoints are rejected") {
  const std::string path = temp_path("malformed");

  {
    std::ofstream out(path, std::ios::binary);
    out << "short";
  }
  CHECK_THROWS_AS(load_checkpoint(path), ValidationError);

  {
    // header length claims more than the file holds
    std::ofstream out(path, std::ios::binary);
    const char len[8] = {(char)0xFF, 0, 0, 0, 0, 0, 0, 0};
    out.write(len, 8);
    out << "{}";
  }
  CHECK_THROWS_AS(load_checkpoint(path), ValidationError);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), ValidationError);
  std::remove(path.c_str());
}

TEST_CASE("truncated payload is rejected") {
  const std::string path = temp_path("truncated");
  save_checkpoint(path, {{"w", Tensor({8}, 1.0)}});
  std::string bytes = slurp(path);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
  }
  CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
  std::remove(path.c_str());
}
