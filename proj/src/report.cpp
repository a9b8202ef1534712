#include "msplab/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "msplab/errors.hpp"

namespace msplab {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

std::string fmt_display(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return std::string(buf);
}

// Fields are embedded in csv and markdown unquoted.
void check_plain(const std::string& field, const char* what) {
  if (field.empty()) throw DataError(std::string("report ") + what + " must be nonempty");
  if (field.find_first_of(",|\n\r") != std::string::npos)
    throw DataError(std::string("report ") + what + " must not contain ',', '|' or newlines: '" +
                    field + "'");
}

}  // namespace

void Report::validate() const {
  if (rows.empty()) throw DataError("report has no rows");
  std::set<std::tuple<std::string, std::string, std::string, uint64_t, std::string>> seen;
  for (const auto& r : rows) {
    check_plain(r.train_scenario, "train scenario");
    check_plain(r.eval_scenario, "eval scenario");
    check_plain(r.strategy, "strategy");
    check_plain(r.metric, "metric name");
    if (!(r.value >= 0.0 && r.value <= 1.0))
      throw DataError("report value " + fmt_double(r.value) + " leaves [0,1]");
    auto key = std::make_tuple(r.train_scenario, r.eval_scenario, r.strategy, r.seed, r.metric);
    if (!seen.insert(key).second)
      throw DataError("duplicate report cell " + r.train_scenario + "/" + r.eval_scenario + "/" +
                      r.strategy + "/seed=" + std::to_string(r.seed));
  }
}

std::vector<AggregateCell> aggregate(const Report& report) {
  std::vector<AggregateCell> cells;
  std::map<std::tuple<std::string, std::string, std::string, std::string>, size_t> index;
  std::vector<std::vector<double>> values;
  for (const auto& r : report.rows) {
    auto key = std::make_tuple(r.train_scenario, r.eval_scenario, r.strategy, r.metric);
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, cells.size());
      AggregateCell c;
      c.train_scenario = r.train_scenario;
      c.eval_scenario = r.eval_scenario;
      c.strategy = r.strategy;
      c.metric = r.metric;
      cells.push_back(c);
      values.emplace_back();
      it = index.find(key);
    }
    values[it->second].push_back(r.value);
    cells[it->second].flagged = cells[it->second].flagged || r.flagged;
  }
  for (size_t i = 0; i < cells.size(); ++i) {
    const auto& v = values[i];
    cells[i].n = static_cast<int>(v.size());
    double sum = 0.0;
    for (double x : v) sum += x;
    cells[i].mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - cells[i].mean) * (x - cells[i].mean);
      cells[i].stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
  }
  return cells;
}

ReportFormat parse_format(const std::string& token) {
  if (token == "csv") return ReportFormat::csv;
  if (token == "json") return ReportFormat::json;
  if (token == "markdown") return ReportFormat::markdown;
  throw ConfigError("unknown report format '" + token + "' (use csv, json or markdown)");
}

std::string to_string(ReportFormat fmt) {
  switch (fmt) {
    case ReportFormat::csv: return "csv";
    case ReportFormat::json: return "json";
    case ReportFormat::markdown: return "markdown";
  }
  throw ContractError("unreachable format value");
}

namespace {

std::string render_csv(const Report& report) {
  std::string out = "train_scenario,eval_scenario,strategy,seed,metric,value,flagged\n";
  for (const auto& r : report.rows) {
    out += r.train_scenario + ',' + r.eval_scenario + ',' + r.strategy + ',' +
           std::to_string(r.seed) + ',' + r.metric + ',' + fmt_double(r.value) + ',' +
           (r.flagged ? "1" : "0") + '\n';
  }
  return out;
}

std::string render_json(const Report& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"train_scenario", r.train_scenario},
                    {"eval_scenario", r.eval_scenario},
                    {"strategy", r.strategy},
                    {"seed", r.seed},
                    {"metric", r.metric},
                    {"value", r.value},
                    {"flagged", r.flagged}});
  }
  nlohmann::json doc;
  doc["rows"] = std::move(rows);
  return doc.dump(2) + "\n";
}

// Ordered distinct values, first appearance first.
template <class Get>
std::vector<std::string> distinct(const std::vector<AggregateCell>& cells, Get get) {
  std::vector<std::string> out;
  for (const auto& c : cells) {
    const std::string& v = get(c);
    bool found = false;
    for (const auto& o : out)
      if (o == v) {
        found = true;
        break;
      }
    if (!found) out.push_back(v);
  }
  return out;
}

std::string render_markdown(const Report& report) {
  const auto cells = aggregate(report);
  const auto strategies = distinct(cells, [](const AggregateCell& c) { return c.strategy; });
  const auto metrics = distinct(cells, [](const AggregateCell& c) { return c.metric; });
  const auto trains = distinct(cells, [](const AggregateCell& c) { return c.train_scenario; });
  const auto evals = distinct(cells, [](const AggregateCell& c) { return c.eval_scenario; });

  auto find_cell = [&](const std::string& t, const std::string& e, const std::string& s,
                       const std::string& m) -> const AggregateCell* {
    for (const auto& c : cells)
      if (c.train_scenario == t && c.eval_scenario == e && c.strategy == s && c.metric == m)
        return &c;
    return nullptr;
  };

  // A grid position is bolded in the strategy table holding its best mean.
  auto best_strategy = [&](const std::string& t, const std::string& e,
                           const std::string& m) -> const AggregateCell* {
    const AggregateCell* best = nullptr;
    for (const auto& s : strategies) {
      const AggregateCell* c = find_cell(t, e, s, m);
      if (c && (!best || c->mean > best->mean)) best = c;
    }
    return best;
  };

  std::string out = "# Scenario matrix report\n";
  for (const auto& m : metrics) {
    for (const auto& s : strategies) {
      out += "\n## " + s + " (" + m + ")\n\n| train \\ eval |";
      for (const auto& e : evals) out += " " + e + " |";
      out += "\n|---|";
      for (size_t i = 0; i < evals.size(); ++i) out += "---|";
      out += "\n";
      for (const auto& t : trains) {
        out += "| " + t + " |";
        for (const auto& e : evals) {
          const AggregateCell* c = find_cell(t, e, s, m);
          if (!c) {
            out += " - |";
            continue;
          }
          std::string text = fmt_display(c->mean) + " +- " + fmt_display(c->stddev);
          if (c->flagged) text += " (!)";
          if (best_strategy(t, e, m) == c) text = "**" + text + "**";
          out += " " + text + " |";
        }
        out += "\n";
      }
    }
  }
  out += "\nCells show mean +- sample std over seeds; bold marks the best strategy for that "
         "train/eval pair; (!) flags a zero-division metric convention.\n";
  return out;
}

}  // namespace

std::string render_report(const Report& report, ReportFormat fmt) {
  report.validate();
  switch (fmt) {
    case ReportFormat::csv: return render_csv(report);
    case ReportFormat::json: return render_json(report);
    case ReportFormat::markdown: return render_markdown(report);
  }
  throw ContractError("unreachable format value");
}

void emit_report(const Report& report, ReportFormat fmt, const std::string& path) {
  write_text_file(path, render_report(report, fmt));
}

Report report_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report json parse error: ") + e.what());
  }
  try {
    Report report;
    for (const auto& j : doc.at("rows")) {
      ReportRow r;
      r.train_scenario = j.at("train_scenario").get<std::string>();
      r.eval_scenario = j.at("eval_scenario").get<std::string>();
      r.strategy = j.at("strategy").get<std::string>();
      r.seed = j.at("seed").get<uint64_t>();
      r.metric = j.at("metric").get<std::string>();
      r.value = j.at("value").get<double>();
      r.flagged = j.value("flagged", false);
      report.rows.push_back(std::move(r));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report json field error: ") + e.what());
  }
}

Report report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "train_scenario,eval_scenario,strategy,seed,metric,value,flagged")
    throw DataError("report csv is missing the expected header");
  Report report;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    ReportRow r;
    auto next = [&](const char* what) {
      if (!std::getline(ls, cell, ','))
        throw DataError("report csv line " + std::to_string(lineno) + " is missing " + what);
      return cell;
    };
    r.train_scenario = next("train_scenario");
    r.eval_scenario = next("eval_scenario");
    r.strategy = next("strategy");
    try {
      r.seed = std::stoull(next("seed"));
      r.metric = next("metric");
      r.value = std::stod(next("value"));
      const std::string flag = next("flagged");
      if (flag != "0" && flag != "1")
        throw DataError("report csv line " + std::to_string(lineno) + " has a non-boolean flag");
      r.flagged = flag == "1";
    } catch (const std::invalid_argument&) {
      throw DataError("report csv line " + std::to_string(lineno) + " has a malformed number");
    } catch (const std::out_of_range&) {
      throw DataError("report csv line " + std::to_string(lineno) + " has an out-of-range number");
    }
    report.rows.push_back(std::move(r));
  }
  return report;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("failed reading file: " + path);
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out << content;
  if (!out) throw DataError("failed writing file: " + path);
}

}  // namespace msplab
