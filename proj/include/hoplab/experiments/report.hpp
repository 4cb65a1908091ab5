#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/kg/types.hpp"
#include "hoplab/trainer/metrics.hpp"

namespace hoplab::experiments {

struct RegimePreset {
  std::string name;
  kg::Regime regime;
  std::string doc;
};

inline const std::vector<RegimePreset>& regime_presets() {
  static const std::vector<RegimePreset> kPresets = {
      {"natural", kg::Regime::kNatural,
       "ID-only compositional supervision; the delayed-generalization "
       "baseline"},
      {"hop1_full", kg::Regime::kHop1Full,
       "every OOD fact additionally trained in hop-1 position with an ID "
       "partner"},
      {"hop2_full", kg::Regime::kHop2Full,
       "every OOD fact additionally trained in hop-2 position with an ID "
       "partner; accuracy rises without bridge recovery"},
      {"both_full", kg::Regime::kBothFull,
       "hop-1 and hop-2 injection combined; fastest route to the "
       "generalizing circuit"}};
  return kPresets;
}

struct RegimeSummary {
  std::optional<std::uint64_t> train_saturation_step;  // train_accuracy >= sat
  std::optional<std::uint64_t> ood_crossing_step;      // ood_accuracy >= ood
  std::optional<double> final_bridge_rate_among_correct;
  std::optional<double> gap_ratio;  // crossing / saturation, both present
};

// First-crossing scan over a loaded metrics CSV. Steps must be strictly
// increasing; thresholds that are never crossed leave their fields empty.
inline RegimeSummary summarize_metrics(const trainer::CsvTable& table,
                                       double sat_threshold = 0.99,
                                       double ood_threshold = 0.9) {
  const std::size_t step_col = table.column_index("step");
  const std::size_t train_col = table.column_index("train_accuracy");
  const std::size_t ood_col = table.column_index("ood_accuracy");
  const std::size_t bridge_col =
      table.column_index("bridge_rate_among_correct");
  RegimeSummary s;
  double prev_step = -1.0;
  for (const std::vector<double>& row : table.rows) {
    const double step = row[step_col];
    if (step <= prev_step)
      throw ParseError("metrics steps are not strictly increasing at step " +
                       std::to_string(std::uint64_t(step)));
    prev_step = step;
    if (!s.train_saturation_step && row[train_col] >= sat_threshold)
      s.train_saturation_step = std::uint64_t(step);
    if (!s.ood_crossing_step && row[ood_col] >= ood_threshold)
      s.ood_crossing_step = std::uint64_t(step);
  }
  if (!table.rows.empty())
    s.final_bridge_rate_among_correct = table.rows.back()[bridge_col];
  if (s.train_saturation_step && s.ood_crossing_step &&
      *s.train_saturation_step > 0)
    s.gap_ratio =
        double(*s.ood_crossing_step) / double(*s.train_saturation_step);
  return s;
}

// First step at which a column reaches the threshold, if any.
inline std::optional<std::uint64_t> first_crossing(
    const trainer::CsvTable& table, const std::string& column,
    double threshold) {
  const std::size_t step_col = table.column_index("step");
  const std::size_t col = table.column_index(column);
  for (const std::vector<double>& row : table.rows)
    if (row[col] >= threshold) return std::uint64_t(row[step_col]);
  return std::nullopt;
}

// Value of a column at an exact step; the step must exist as a row.
inline std::optional<double> value_at_step(const trainer::CsvTable& table,
                                           const std::string& column,
                                           std::uint64_t step) {
  const std::size_t step_col = table.column_index("step");
  const std::size_t col = table.column_index(column);
  for (const std::vector<double>& row : table.rows)
    if (std::uint64_t(row[step_col]) == step) return row[col];
  return std::nullopt;
}

}  // namespace hoplab::experiments
