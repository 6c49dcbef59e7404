#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "devlbert/causal_stats.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "devlbert/rng.hpp"

using namespace devlbert;

namespace {

using Rational = boost::multiprecision::cpp_rational;

StatsRecord rec(std::vector<std::string> x, std::vector<std::string> y,
                std::vector<std::string> z) {
  return {std::move(x), std::move(y), std::move(z)};
}

/// Adds `count` to a single (x,y,z) cell by replaying single-triple records.
template <typename Count>
void bump(CooccurrenceTable<Count>& table, const std::string& x, const std::string& y,
          const std::string& z, int count) {
  for (int i = 0; i < count; ++i) table.add(rec({x}, {y}, {z}));
}

/// Independent exact-arithmetic oracle over a flat triple list. Marginals
/// are brute-force sums, all division is rational.
struct Oracle {
  struct Cell {
    std::string x, y, z;
    std::uint64_t n;
  };
  std::vector<Cell> cells;

  Rational n_x(const std::string& x) const {
    Rational t = 0;
    for (const auto& c : cells)
      if (c.x == x) t += c.n;
    return t;
  }
  Rational n_xy(const std::string& x, const std::string& y) const {
    Rational t = 0;
    for (const auto& c : cells)
      if (c.x == x && c.y == y) t += c.n;
    return t;
  }
  Rational n_xz(const std::string& x, const std::string& z) const {
    Rational t = 0;
    for (const auto& c : cells)
      if (c.x == x && c.z == z) t += c.n;
    return t;
  }
  Rational n_z(const std::string& z) const {
    Rational t = 0;
    for (const auto& c : cells)
      if (c.z == z) t += c.n;
    return t;
  }
  Rational n_xyz(const std::string& x, const std::string& y, const std::string& z) const {
    Rational t = 0;
    for (const auto& c : cells)
      if (c.x == x && c.y == y && c.z == z) t += c.n;
    return t;
  }
  std::vector<std::string> zs() const {
    std::vector<std::string> out;
    for (const auto& c : cells)
      if (std::find(out.begin(), out.end(), c.z) == out.end()) out.push_back(c.z);
    return out;
  }

  /// nullopt where the estimator is undefined.
  std::optional<Rational> conditional(const std::string& y, const std::string& x) const {
    Rational nx = n_x(x);
    if (nx == 0) return std::nullopt;
    return n_xy(x, y) / nx;
  }

  std::optional<Rational> interventional(const std::string& y, const std::string& x) const {
    Rational acc = 0, covered = 0;
    for (const auto& z : zs()) {
      Rational nz = n_z(z);
      Rational nxz = n_xz(x, z);
      if (nz == 0 || nxz == 0) continue;
      covered += nz;
      acc += n_xyz(x, y, z) / nxz * nz;
    }
    if (covered == 0) return std::nullopt;
    return acc / covered;
  }
};

double to_double(const Rational& r) { return r.convert_to<double>(); }

/// Fixture used by several cases: counts over x∈{a,b}, y∈{u,v}, z∈{s,t,w}.
CooccurrenceTable<std::uint64_t> hand_table() {
  CooccurrenceTable<std::uint64_t> t;
  bump(t, "a", "u", "s", 4);
  bump(t, "a", "v", "s", 2);
  bump(t, "b", "u", "s", 1);
  bump(t, "b", "v", "s", 3);
  bump(t, "a", "u", "t", 1);
  bump(t, "a", "v", "t", 5);
  bump(t, "b", "u", "t", 2);
  bump(t, "a", "u", "w", 2);
  return t;
}

}  // namespace

TEST_CASE("hand-built table matches hand-computed marginals and estimates") {
  auto t = hand_table();
  CHECK(t.total() == 20);
  CHECK(t.n_x("a") == 14);
  CHECK(t.n_xy("a", "u") == 7);
  CHECK(t.n_z("s") == 10);
  CHECK(t.n_z("t") == 8);
  CHECK(t.n_z("w") == 2);
  CHECK(t.n_xz("b", "w") == 0);
  CHECK(t.n_xyz("a", "v", "t") == 5);
  CHECK(t.observed_z() == std::vector<std::string>{"s", "t", "w"});

  // P(u|a) = 7/14, P(u|do(a)) = (4/6·10 + 1/6·8 + 2/2·2) / 20 = 10/20
  CHECK(t.conditional("u", "a") == 7.0 / 14.0);
  double cov = -1;
  CHECK(std::abs(t.interventional("u", "a", nullptr, &cov) - 0.5) < 1e-12);
  CHECK(cov == 1.0);

  // For x=b the w stratum has N(b,w)=0: skipped, prior renormalized.
  // P(u|do(b)) = (1/4·10 + 2/2·8) / 18 = 10.5/18, coverage 18/20.
  CHECK(std::abs(t.interventional("u", "b", nullptr, &cov) - 10.5 / 18.0) < 1e-12);
  CHECK(std::abs(cov - 0.9) < 1e-12);
}

TEST_CASE("a single record gives unit probabilities and full coverage") {
  CooccurrenceTable<std::uint64_t> t;
  t.add(rec({"a"}, {"u"}, {"s"}));
  CHECK(t.total() == 1);
  CHECK(t.conditional("u", "a") == 1.0);
  double cov = 0;
  CHECK(t.interventional("u", "a", nullptr, &cov) == 1.0);
  CHECK(cov == 1.0);
  CHECK(t.conditional("v", "a") == 0.0);
}

TEST_CASE("queries on an empty table throw ValidationError") {
  CooccurrenceTable<std::uint64_t> t;
  CHECK_THROWS_AS(t.conditional("u", "a"), ValidationError);
  CHECK_THROWS_AS(t.interventional("u", "a"), ValidationError);
}

TEST_CASE("unseen x makes both estimators undefined") {
  auto t = hand_table();
  CHECK_THROWS_AS(t.conditional("u", "q"), UndefinedError);
  CHECK_THROWS_AS(t.interventional("u", "q"), UndefinedError);
}

TEST_CASE("presence counting deduplicates; multiplicity counts every combination") {
  CooccurrenceTable<std::uint64_t> presence;
  presence.add(rec({"a", "a", "b"}, {"u", "u"}, {"s"}));
  CHECK(presence.n_xyz("a", "u", "s") == 1);
  CHECK(presence.n_xyz("b", "u", "s") == 1);
  CHECK(presence.total() == 2);

  CooccurrenceTable<std::uint64_t> multi;
  multi.add(rec({"a", "a", "b"}, {"u", "u"}, {"s"}), /*multiplicity=*/true);
  CHECK(multi.n_xyz("a", "u", "s") == 4);
  CHECK(multi.n_xyz("b", "u", "s") == 2);
  CHECK(multi.total() == 6);
}

TEST_CASE("y always co-present with x gives conditional exactly 1") {
  CooccurrenceTable<std::uint64_t> t;
  bump(t, "a", "u", "s", 3);
  bump(t, "a", "u", "t", 5);
  bump(t, "b", "v", "s", 2);  // other pairs don't disturb N(a,·)
  CHECK(t.conditional("u", "a") == 1.0);
  CHECK(t.interventional("u", "a") == 1.0);
}

TEST_CASE("single stratum collapses the adjustment onto the conditional") {
  CooccurrenceTable<Rational, Rational> t;
  for (int i = 0; i < 4; ++i) t.add(rec({"a"}, {"u"}, {"s"}));
  for (int i = 0; i < 2; ++i) t.add(rec({"a"}, {"v"}, {"s"}));
  for (int i = 0; i < 3; ++i) t.add(rec({"b"}, {"u"}, {"s"}));
  CHECK(t.interventional("u", "a") == t.conditional("u", "a"));
  CHECK(t.conditional("u", "a") == Rational(4, 6));
}

TEST_CASE("factorized counts (z independent of x,y) collapse exactly") {
  // counts(x,y,z) = f(x,y)·g(z) makes P(y|x,z) constant in z, so the
  // adjustment must reproduce P(y|x). Exact in rational mode.
  CooccurrenceTable<Rational, Rational> t;
  auto f = [](const std::string& x, const std::string& y) {
    if (x == "a") return y == "u" ? 2 : 1;
    return y == "u" ? 1 : 3;
  };
  auto g = [](const std::string& z) { return z == "s" ? 1 : 2; };
  for (std::string x : {"a", "b"})
    for (std::string y : {"u", "v"})
      for (std::string z : {"s", "t"})
        for (int i = 0; i < f(x, y) * g(z); ++i) t.add(rec({x}, {y}, {z}));
  for (std::string x : {"a", "b"}) {
    for (std::string y : {"u", "v"}) {
      CHECK(t.interventional(y, x) == t.conditional(y, x));
    }
  }
  CHECK(t.conditional("u", "a") == Rational(2, 3));
}

TEST_CASE("scaling every count leaves both estimators unchanged") {
  CooccurrenceTable<Rational, Rational> exact;
  CooccurrenceTable<std::uint64_t> plain = hand_table();
  for (const auto& [key, n] : plain.counts()) {
    for (std::uint64_t i = 0; i < n; ++i) {
      exact.add(rec({std::get<0>(key)}, {std::get<1>(key)}, {std::get<2>(key)}));
    }
  }
  Rational cond = exact.conditional("u", "b");
  Rational interv = exact.interventional("u", "b");
  exact.scale(Rational(7));
  CHECK(exact.conditional("u", "b") == cond);
  CHECK(exact.interventional("u", "b") == interv);

  double dcond = plain.conditional("u", "b");
  double dinterv = plain.interventional("u", "b");
  plain.scale(7);
  CHECK(plain.total() == 140);
  CHECK(plain.conditional("u", "b") == dcond);
  CHECK(std::abs(plain.interventional("u", "b") - dinterv) < 1e-12);
}

TEST_CASE("adjustment throws UndefinedError when every stratum is undefined") {
  CooccurrenceTable<std::uint64_t> t;
  bump(t, "a", "u", "s", 3);
  bump(t, "b", "v", "t", 2);
  // x=b never occurs under z=s and x=a never under z=t, but each has one
  // defined stratum; a y-side-only symbol has none.
  CHECK_THROWS_AS(t.interventional("u", "u"), UndefinedError);
}

TEST_CASE("conditionals over the y vocabulary sum to 1") {
  auto t = hand_table();
  for (std::string x : {"a", "b"}) {
    double s = t.conditional("u", x) + t.conditional("v", x);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("restricting the z vocabulary restricts the adjustment") {
  auto t = hand_table();
  std::vector<std::string> only_s{"s"};
  double cov = 0;
  // single stratum s: P(u|a,s) = 4/6
  CHECK(std::abs(t.interventional("u", "a", &only_s, &cov) - 4.0 / 6.0) < 1e-12);
  // coverage is measured against the full prior, so restricting z lowers it
  CHECK(std::abs(cov - 0.5) < 1e-12);
}

TEST_CASE("200 random tables agree with the exact rational oracle") {
  Rng rng(0x5CA1AB1EULL);
  std::vector<std::string> xs, ys, zs;
  for (int i = 0; i < 10; ++i) xs.push_back("x" + std::to_string(i));
  for (int i = 0; i < 10; ++i) ys.push_back("y" + std::to_string(i));
  for (int i = 0; i < 5; ++i) zs.push_back("z" + std::to_string(i));

  int checked_cond = 0, checked_interv = 0, undefined_agreements = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Rng sub = rng.substream(static_cast<std::uint64_t>(trial));
    CooccurrenceTable<std::uint64_t> table;
    Oracle oracle;
    for (const auto& x : xs) {
      if (x == "x9") continue;  // held out so undefined queries occur
      for (const auto& y : ys) {
        for (const auto& z : zs) {
          if (sub.uniform() >= 0.25) continue;  // keep tables sparse
          int n = 1 + sub.uniform_int(5);
          bump(table, x, y, z, n);
          oracle.cells.push_back({x, y, z, static_cast<std::uint64_t>(n)});
        }
      }
    }
    if (oracle.cells.empty()) continue;
    for (int q = 0; q < 10; ++q) {
      const auto& x = xs[static_cast<size_t>(sub.uniform_int(10))];
      const auto& y = ys[static_cast<size_t>(sub.uniform_int(10))];

      auto want_cond = oracle.conditional(y, x);
      if (want_cond) {
        CHECK(std::abs(table.conditional(y, x) - to_double(*want_cond)) <= 1e-12);
        ++checked_cond;
      } else {
        CHECK_THROWS_AS(table.conditional(y, x), UndefinedError);
        ++undefined_agreements;
      }

      auto want_interv = oracle.interventional(y, x);
      if (want_interv) {
        CHECK(std::abs(table.interventional(y, x) - to_double(*want_interv)) <= 1e-12);
        ++checked_interv;
      } else {
        CHECK_THROWS_AS(table.interventional(y, x), UndefinedError);
      }
    }
  }
  // the sampler must actually exercise both sides
  CHECK(checked_cond > 1000);
  CHECK(checked_interv > 1000);
  CHECK(undefined_agreements > 0);
}

TEST_CASE("strict vocabularies reject unknown symbols") {
  CooccurrenceTable<std::uint64_t> t;
  t.set_vocab({"a"}, {"u"}, {"s"});
  CHECK_NOTHROW(t.add(rec({"a"}, {"u"}, {"s"})));
  CHECK_THROWS_AS(t.add(rec({"b"}, {"u"}, {"s"})), ValidationError);
  CHECK_THROWS_AS(t.add(rec({"a"}, {"q"}, {"s"})), ValidationError);
  CHECK_THROWS_AS(t.add(rec({"a"}, {"u"}, {"r"})), ValidationError);
}

TEST_CASE("parse_stats_record reports the line number and coerces integers") {
  CHECK_THROWS_WITH_AS(parse_stats_record("not json", 7), doctest::Contains("line 7"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(parse_stats_record("[1,2]", 3), doctest::Contains("line 3"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(parse_stats_record(R"({"x": ["a"], "y": ["u"]})", 2),
                       doctest::Contains("\"z\""), ValidationError);
  CHECK_THROWS_WITH_AS(parse_stats_record(R"({"x": "a", "y": ["u"], "z": ["s"]})", 4),
                       doctest::Contains("line 4"), ValidationError);
  CHECK_THROWS_AS(parse_stats_record(R"({"x": [1.5], "y": ["u"], "z": ["s"]})", 1),
                  ValidationError);

  StatsRecord r = parse_stats_record(R"({"x": ["a", 3], "y": ["u"], "z": [12]})", 1);
  CHECK(r.x == std::vector<std::string>{"a", "3"});
  CHECK(r.z == std::vector<std::string>{"12"});
}

TEST_CASE("read_stats_jsonl skips blank lines and keeps 1-based numbering") {
  std::istringstream in(
      "{\"x\": [\"a\"], \"y\": [\"u\"], \"z\": [\"s\"]}\n"
      "\n"
      "{\"x\": [\"b\"], \"y\": [\"v\"], \"z\": [\"t\"]}\n");
  auto records = read_stats_jsonl(in);
  REQUIRE(records.size() == 2);
  CHECK(records[1].x == std::vector<std::string>{"b"});

  std::istringstream bad(
      "{\"x\": [\"a\"], \"y\": [\"u\"], \"z\": [\"s\"]}\n"
      "{oops\n");
  CHECK_THROWS_WITH_AS(read_stats_jsonl(bad), doctest::Contains("line 2"), ValidationError);
}

TEST_CASE("ingest equals manual accumulation") {
  std::vector<StatsRecord> records{rec({"a"}, {"u"}, {"s"}), rec({"a", "b"}, {"u"}, {"s"})};
  auto t = ingest(records);
  CHECK(t.n_xyz("a", "u", "s") == 2);
  CHECK(t.n_xyz("b", "u", "s") == 1);
}

TEST_CASE("make_report sorts by gap and marks 0/0 ratios as infinite") {
  auto t = hand_table();
  StatsReport report =
      make_report(t, {{"a", "never"}, {"b", "u"}, {"a", "u"}});
  REQUIRE(report.pairs.size() == 3);
  // gaps: (a,never) 0; (b,u) 0.5 - 10.5/18 < 0; (a,u) 0.5 - 0.5 = 0.
  // descending and stable: the two zero-gap pairs keep input order.
  CHECK(report.pairs[0].x == "a");
  CHECK(report.pairs[0].y == "never");
  CHECK(report.pairs[1].y == "u");
  CHECK(report.pairs[1].x == "a");
  CHECK(report.pairs[2].x == "b");
  CHECK(std::isinf(report.pairs[0].ratio));

  nlohmann::json j = report_to_json(report);
  REQUIRE(j.at("pairs").size() == 3);
  CHECK(j["pairs"][0]["ratio"].is_null());
  CHECK(j["pairs"][1]["ratio"].get<double>() == doctest::Approx(1.0));
  CHECK(j["pairs"][0]["gap"].get<double>() == 0.0);

  std::string text = report_to_text(report);
  CHECK(text.find("conditional") != std::string::npos);
  CHECK(text.find("inf") != std::string::npos);
  CHECK(text.find("never") != std::string::npos);
}
