#pragma once

// Utterance-level ASR decoder signals and their unit-interval scaling.
//
// Upstream (real or synthetic) ASR emits, per word of the 1-best
// hypothesis: a graph cost, an acoustic cost, a posterior confidence and a
// count of alternative word options. This module averages them into the
// fixed 4-vector [avg graph cost, avg acoustic cost, avg confidence,
// avg alternatives] and min-max scales each dimension over a fitting set.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddsd/common.hpp"
#include "ddsd/manifest.hpp"

namespace ddsd {

// Per-word decoder measurements for one utterance, parallel lists.
struct LatticeSummary {
  std::vector<double> graph_costs;
  std::vector<double> acoustic_costs;
  std::vector<double> confidences;        // in [0,1] per word
  std::vector<double> alternative_counts;

  void validate() const {
    const std::size_t n = graph_costs.size();
    if (n == 0)
      throw ValidationError("lattice summary has zero words; decoder signals are undefined");
    if (acoustic_costs.size() != n || confidences.size() != n || alternative_counts.size() != n)
      throw ValidationError("lattice summary lists have unequal lengths");
    for (double c : confidences)
      if (!(c >= 0.0 && c <= 1.0))
        throw ValidationError("per-word confidence outside [0,1]: " + std::to_string(c));
  }
};

// Arithmetic mean of each per-word list.
inline DecoderSignals summarize(const LatticeSummary& lattice) {
  lattice.validate();
  const auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  DecoderSignals out;
  out.graph_cost = mean(lattice.graph_costs);
  out.acoustic_cost = mean(lattice.acoustic_costs);
  out.confidence = mean(lattice.confidences);
  out.alternatives = mean(lattice.alternative_counts);
  return out;
}

// Per-dimension min-max scaler over the 4 decoder signals.
//
// transform maps x -> (x - min) / (max - min), clamped to [0,1] so
// inference-time values outside the fitted range stay in M2's input domain.
// A degenerate dimension (max == min) carries no information and maps to 0.
class MinMaxScaler {
public:
  MinMaxScaler() = default;
  MinMaxScaler(const std::array<double, 4>& mins, const std::array<double, 4>& maxs)
      : min_(mins), max_(maxs), fitted_(true) {
    for (int k = 0; k < 4; ++k)
      if (!(min_[k] <= max_[k]))
        throw ValidationError("scaler min > max in dimension " + std::to_string(k));
  }

  static MinMaxScaler fit(const std::vector<DecoderSignals>& dataset) {
    if (dataset.empty()) throw ValidationError("cannot fit a scaler on an empty dataset");
    std::array<double, 4> mins = dataset.front().as_array();
    std::array<double, 4> maxs = mins;
    for (const auto& d : dataset) {
      const auto a = d.as_array();
      for (int k = 0; k < 4; ++k) {
        mins[k] = std::min(mins[k], a[k]);
        maxs[k] = std::max(maxs[k], a[k]);
      }
    }
    return MinMaxScaler(mins, maxs);
  }

  bool fitted() const { return fitted_; }
  const std::array<double, 4>& mins() const { return min_; }
  const std::array<double, 4>& maxs() const { return max_; }

  DecoderSignals transform(const DecoderSignals& raw) const {
    if (!fitted_) throw ValidationError("scaler used before fitting");
    const auto a = raw.as_array();
    std::array<double, 4> out{};
    for (int k = 0; k < 4; ++k) {
      const double range = max_[k] - min_[k];
      if (range > 0.0) {
        out[k] = std::clamp((a[k] - min_[k]) / range, 0.0, 1.0);
      } else {
        out[k] = 0.0;
      }
    }
    return DecoderSignals::from_array(out);
  }

private:
  std::array<double, 4> min_{};
  std::array<double, 4> max_{};
  bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Lattice-summary ingestion (JSONL): one object per utterance carrying the
// four per-word arrays, for users supplying real ASR outputs.
//   {"id": "...", "graph_costs": [...], "acoustic_costs": [...],
//    "confidences": [...], "alternative_counts": [...]}
// ---------------------------------------------------------------------------

struct LatticeRow {
  std::string id;
  LatticeSummary lattice;
};

inline std::vector<LatticeRow> lattice_rows_from_jsonl(const std::string& text) {
  std::vector<LatticeRow> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    ++line_no;
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fail = [&](const std::string& why) -> void {
      throw DataError("lattice line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      fail(std::string("invalid JSON: ") + ex.what());
    }
    if (!row.is_object()) fail("row is not a JSON object");
    static const std::set<std::string> kKnown = {"id", "graph_costs", "acoustic_costs",
                                                 "confidences", "alternative_counts"};
    for (auto it = row.begin(); it != row.end(); ++it)
      if (!kKnown.count(it.key())) fail("unknown field '" + it.key() + "'");
    for (const auto& key : kKnown)
      if (!row.contains(key)) fail("missing field '" + std::string(key) + "'");
    LatticeRow r;
    if (!row["id"].is_string() || row["id"].get<std::string>().empty())
      fail("'id' must be a non-empty string");
    r.id = row["id"].get<std::string>();
    const auto read_list = [&](const char* key) {
      const auto& arr = row[key];
      if (!arr.is_array()) fail(std::string("'") + key + "' must be an array of numbers");
      std::vector<double> v;
      v.reserve(arr.size());
      for (const auto& x : arr) {
        if (!x.is_number()) fail(std::string("'") + key + "' must be an array of numbers");
        const double d = x.get<double>();
        if (!std::isfinite(d)) fail(std::string("'") + key + "' contains a non-finite value");
        v.push_back(d);
      }
      return v;
    };
    r.lattice.graph_costs = read_list("graph_costs");
    r.lattice.acoustic_costs = read_list("acoustic_costs");
    r.lattice.confidences = read_list("confidences");
    r.lattice.alternative_counts = read_list("alternative_counts");
    try {
      r.lattice.validate();
    } catch (const ValidationError& ex) {
      fail(ex.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ddsd
