#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fewsound {

// One evaluation result fragment; four of these (way 5/10 x shot 1/5) form a
// full comparison-table row for a model.
struct EvalRow {
  std::string model;
  bool attentional = false;
  std::string depth;
  std::size_t params = 0;
  std::size_t way = 0;
  std::size_t shot = 0;
  double accuracy = 0.0;
  double ci95 = 0.0;
  std::string section;
  std::size_t episodes = 0;
  std::uint64_t seed = 0;
};

// Appends to a fragment CSV, writing the header when the file is new.
void append_eval_row(const std::string& path, const EvalRow& row);
std::vector<EvalRow> read_eval_rows(const std::string& path);

struct ReportTables {
  std::string csv;
  std::string text;
};

// Pivots fragments into a comparison table: one row per (model, attentional),
// one column per (way, shot) setting, plus per-model delta rows between the
// attentional and plain variants.
ReportTables build_report(const std::vector<EvalRow>& rows);

}  // namespace fewsound
