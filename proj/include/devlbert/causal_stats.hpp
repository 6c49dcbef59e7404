#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "devlbert/error.hpp"

namespace devlbert {

/// One ingested pair, already projected onto its X-side tokens, Y-side
/// tokens, and the confounder tokens present.
struct StatsRecord {
  std::vector<std::string> x, y, z;
};

/// Sparse N(x,y,z) co-occurrence counts. Count is the accumulator type:
/// uint64_t for plain tables, double for scaled ones, or an exact rational
/// (boost::multiprecision::cpp_rational) for oracle-grade arithmetic, in
/// which case queries are exact too.
///
/// Counting convention: one increment per distinct (x,y,z) triple per record
/// (presence, not multiplicity) unless `multiplicity` is requested, which
/// counts every combination of occurrences.
template <typename Count, typename Prob = double>
class CooccurrenceTable {
 public:
  using Key = std::tuple<std::string, std::string, std::string>;

  /// Optional strict vocabularies; empty means open vocabulary.
  void set_vocab(std::vector<std::string> x_vocab, std::vector<std::string> y_vocab,
                 std::vector<std::string> z_vocab) {
    x_vocab_ = std::move(x_vocab);
    y_vocab_ = std::move(y_vocab);
    z_vocab_ = std::move(z_vocab);
  }

  void add(const StatsRecord& record, bool multiplicity = false) {
    check_vocab(record.x, x_vocab_, "x");
    check_vocab(record.y, y_vocab_, "y");
    check_vocab(record.z, z_vocab_, "z");
    if (multiplicity) {
      for (const auto& x : record.x)
        for (const auto& y : record.y)
          for (const auto& z : record.z) counts_[{x, y, z}] += Count(1);
      return;
    }
    std::set<Key> seen;
    for (const auto& x : record.x)
      for (const auto& y : record.y)
        for (const auto& z : record.z) seen.insert({x, y, z});
    for (const auto& key : seen) counts_[key] += Count(1);
  }

  void scale(const Count& k) {
    for (auto& [key, n] : counts_) n *= k;
  }

  const std::map<Key, Count>& counts() const { return counts_; }

  // Marginals are recomputed from the sparse entries on every call so they
  // can never go stale.
  Count total() const {
    Count t(0);
    for (const auto& [key, n] : counts_) t += n;
    return t;
  }

  Count n_x(const std::string& x) const {
    Count t(0);
    for (const auto& [key, n] : counts_)
      if (std::get<0>(key) == x) t += n;
    return t;
  }

  Count n_xy(const std::string& x, const std::string& y) const {
    Count t(0);
    for (const auto& [key, n] : counts_)
      if (std::get<0>(key) == x && std::get<1>(key) == y) t += n;
    return t;
  }

  Count n_xz(const std::string& x, const std::string& z) const {
    Count t(0);
    for (const auto& [key, n] : counts_)
      if (std::get<0>(key) == x && std::get<2>(key) == z) t += n;
    return t;
  }

  Count n_z(const std::string& z) const {
    Count t(0);
    for (const auto& [key, n] : counts_)
      if (std::get<2>(key) == z) t += n;
    return t;
  }

  Count n_xyz(const std::string& x, const std::string& y, const std::string& z) const {
    auto it = counts_.find({x, y, z});
    return it == counts_.end() ? Count(0) : it->second;
  }

  /// Every z symbol appearing in the counts, sorted.
  std::vector<std::string> observed_z() const {
    std::set<std::string> zs;
    for (const auto& [key, n] : counts_) zs.insert(std::get<2>(key));
    return {zs.begin(), zs.end()};
  }

  /// P(y|x) = N(x,y)/N(x).
  Prob conditional(const std::string& y, const std::string& x) const {
    if (counts_.empty()) throw ValidationError("co-occurrence table is empty");
    Count nx = n_x(x);
    if (nx == Count(0)) throw UndefinedError("conditional undefined: N(" + x + ") = 0");
    return Prob(n_xy(x, y)) / Prob(nx);
  }

  /// Backdoor adjustment P(y|do(x)) = Σ_z P(y|x,z)·P(z), skipping strata
  /// with N(x,z)=0 and renormalizing the prior over the defined ones.
  /// `coverage_out`, when given, receives the defined strata's share of the
  /// total prior mass. The z vocabulary defaults to every z in the table.
  Prob interventional(const std::string& y, const std::string& x,
                      const std::vector<std::string>* z_vocab = nullptr,
                      Prob* coverage_out = nullptr) const {
    if (counts_.empty()) throw ValidationError("co-occurrence table is empty");
    std::vector<std::string> zs = z_vocab ? *z_vocab : observed_z();
    Count grand_total = total();
    Count covered(0), prior_mass(0);
    Prob acc(0);
    for (const auto& z : zs) {
      Count nz = n_z(z);
      if (nz == Count(0)) continue;  // zero prior contributes nothing
      prior_mass += nz;
      Count nxz = n_xz(x, z);
      if (nxz == Count(0)) continue;  // undefined stratum: skip and renormalize
      covered += nz;
      acc += Prob(n_xyz(x, y, z)) / Prob(nxz) * Prob(nz);
    }
    if (covered == Count(0)) {
      throw UndefinedError("adjustment undefined: every stratum has N(" + x + ", z) = 0");
    }
    if (coverage_out) {
      *coverage_out = prior_mass == Count(0) ? Prob(0) : Prob(covered) / Prob(grand_total);
    }
    return acc / Prob(covered);
  }

 private:
  static void check_vocab(const std::vector<std::string>& symbols,
                          const std::vector<std::string>& vocab, const char* side) {
    if (vocab.empty()) return;
    for (const auto& s : symbols) {
      if (std::find(vocab.begin(), vocab.end(), s) == vocab.end()) {
        throw ValidationError(std::string("unknown ") + side + " symbol: " + s);
      }
    }
  }

  std::vector<std::string> x_vocab_, y_vocab_, z_vocab_;
  std::map<Key, Count> counts_;
};

/// Parses one JSONL line of the form {"x": [...], "y": [...], "z": [...]}.
StatsRecord parse_stats_record(const std::string& line, int line_number);

/// Reads a whole JSONL stream; errors carry the 1-based line number.
std::vector<StatsRecord> read_stats_jsonl(std::istream& in);

/// Folds a record stream into a table.
CooccurrenceTable<std::uint64_t> ingest(const std::vector<StatsRecord>& records,
                                        bool multiplicity = false);

struct PairReport {
  std::string x, y;
  double conditional = 0;
  double interventional = 0;
  double ratio = 0;     // conditional / interventional
  double coverage = 0;  // prior mass of defined strata
};

struct StatsReport {
  std::vector<PairReport> pairs;  // sorted by conditional - interventional, descending
};

/// Conditional vs interventional for each requested pair, sorted by gap.
StatsReport make_report(const CooccurrenceTable<std::uint64_t>& table,
                        const std::vector<std::pair<std::string, std::string>>& pairs,
                        const std::vector<std::string>* z_vocab = nullptr);

nlohmann::json report_to_json(const StatsReport& report);
std::string report_to_text(const StatsReport& report);

}  // namespace devlbert
