#include "fewsound/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fewsound/common.hpp"

namespace fewsound {

namespace {

constexpr const char* kHeader =
    "model,attentional,depth,params,way,shot,accuracy,ci95,section,episodes,seed";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", v * 100.0);
  return buf;
}

std::string pct_ci(double v, double ci) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.1f\xC2\xB1%.1f%%", v * 100.0, ci * 100.0);
  return buf;
}

}  // namespace

void append_eval_row(const std::string& path, const EvalRow& row) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataError("cannot write report rows: " + path);
  if (fresh) f << kHeader << '\n';
  f << row.model << ',' << (row.attentional ? 1 : 0) << ',' << row.depth << ','
    << row.params << ',' << row.way << ',' << row.shot << ',' << row.accuracy << ','
    << row.ci95 << ',' << row.section << ',' << row.episodes << ',' << row.seed << '\n';
}

std::vector<EvalRow> read_eval_rows(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read report rows: " + path);
  std::vector<EvalRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != kHeader) throw DataError("report row header mismatch in " + path);
      continue;
    }
    const auto fields = split_csv(line);
    if (fields.size() != 11) throw DataError("malformed report row: '" + line + "'");
    EvalRow row;
    row.model = fields[0];
    row.attentional = fields[1] == "1";
    row.depth = fields[2];
    row.params = std::stoull(fields[3]);
    row.way = std::stoull(fields[4]);
    row.shot = std::stoull(fields[5]);
    row.accuracy = std::stod(fields[6]);
    row.ci95 = std::stod(fields[7]);
    row.section = fields[8];
    row.episodes = std::stoull(fields[9]);
    row.seed = std::stoull(fields[10]);
    rows.push_back(std::move(row));
  }
  return rows;
}

ReportTables build_report(const std::vector<EvalRow>& rows) {
  // Column set in deterministic order, rows grouped by (model, attentional).
  std::vector<std::pair<std::size_t, std::size_t>> settings;
  for (const auto& r : rows) {
    const auto s = std::pair{r.way, r.shot};
    if (std::find(settings.begin(), settings.end(), s) == settings.end())
      settings.push_back(s);
  }
  std::sort(settings.begin(), settings.end());

  struct Group {
    std::string depth;
    std::size_t params = 0;
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> cells;
  };
  std::map<std::pair<std::string, bool>, Group> groups;
  for (const auto& r : rows) {
    Group& g = groups[{r.model, r.attentional}];
    g.depth = r.depth;
    g.params = r.params;
    g.cells[{r.way, r.shot}] = {r.accuracy, r.ci95};
  }

  ReportTables out;
  {
    std::ostringstream csv;
    csv << "model,attentional,depth,params";
    for (const auto& [way, shot] : settings)
      csv << ",acc_" << way << "w_" << shot << "s,ci_" << way << "w_" << shot << "s";
    csv << '\n';
    for (const auto& [key, g] : groups) {
      csv << key.first << ',' << (key.second ? 1 : 0) << ',' << g.depth << ',' << g.params;
      for (const auto& s : settings) {
        const auto it = g.cells.find(s);
        if (it == g.cells.end()) {
          csv << ",,";
        } else {
          csv << ',' << it->second.first << ',' << it->second.second;
        }
      }
      csv << '\n';
    }
    out.csv = csv.str();
  }

  {
    std::vector<std::vector<std::string>> table;
    std::vector<std::string> head{"model", "att", "depth", "params"};
    for (const auto& [way, shot] : settings)
      head.push_back(std::to_string(way) + "-way " + std::to_string(shot) + "-shot");
    table.push_back(head);

    for (const auto& [key, g] : groups) {
      std::vector<std::string> row{key.first, key.second ? "yes" : "no", g.depth,
                                   std::to_string(g.params)};
      for (const auto& s : settings) {
        const auto it = g.cells.find(s);
        row.push_back(it == g.cells.end() ? "-"
                                          : pct_ci(it->second.first, it->second.second));
      }
      table.push_back(row);
    }

    // Delta rows where a model has both variants.
    for (const auto& [key, g] : groups) {
      if (key.second) continue;
      const auto it_att = groups.find({key.first, true});
      if (it_att == groups.end()) continue;
      std::vector<std::string> row{key.first + " \xCE\x94(att-plain)", "", "", ""};
      for (const auto& s : settings) {
        const auto a = it_att->second.cells.find(s);
        const auto b = g.cells.find(s);
        row.push_back(a == it_att->second.cells.end() || b == g.cells.end()
                          ? "-"
                          : pct(a->second.first - b->second.first));
      }
      table.push_back(row);
    }

    std::vector<std::size_t> widths(table[0].size(), 0);
    auto display_width = [](const std::string& s) {
      std::size_t w = 0;
      for (const char c : s)
        if ((static_cast<unsigned char>(c) & 0xc0) != 0x80) ++w;  // UTF-8 continuation
      return w;
    };
    for (const auto& row : table)
      for (std::size_t i = 0; i < row.size(); ++i)
        widths[i] = std::max(widths[i], display_width(row[i]));

    std::ostringstream text;
    for (std::size_t r = 0; r < table.size(); ++r) {
      for (std::size_t i = 0; i < table[r].size(); ++i) {
        text << table[r][i]
             << std::string(widths[i] - display_width(table[r][i]) + 2, ' ');
      }
      text << '\n';
      if (r == 0) {
        std::size_t total = 0;
        for (const std::size_t w : widths) total += w + 2;
        text << std::string(total, '-') << '\n';
      }
    }
    out.text = text.str();
  }
  return out;
}

}  // namespace fewsound
