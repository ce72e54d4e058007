#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gecadapt/error.hpp"
#include "gecadapt/harness.hpp"

namespace gecadapt {

namespace fs = std::filesystem;

namespace {

constexpr ErrorType kTableTypes[] = {ErrorType::Det,  ErrorType::Prep, ErrorType::Verb,
                                     ErrorType::Tense, ErrorType::NNum, ErrorType::Noun,
                                     ErrorType::Pron};

enum class KeyKind { Level, L1, L1Level };

KeyKind kind_of(const SubsetKey& k) {
  if (k.is_l1_level()) return KeyKind::L1Level;
  return k.level ? KeyKind::Level : KeyKind::L1;
}

std::string format_cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  // Avoid printing "-0.0" for small negative values.
  const double r = std::round(*v * 10.0) / 10.0;
  std::snprintf(buf, sizeof buf, "%.1f", r == 0.0 ? 0.0 : r);
  return buf;
}

void append_avg(Table& t) {
  t.col_labels.push_back("Avg.");
  for (auto& row : t.cells) {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : row)
      if (c) {
        sum += *c;
        ++n;
      }
    row.push_back(n ? std::optional<double>(sum / n) : std::nullopt);
  }
}

}  // namespace

std::vector<Table> make_tables(const ScenarioReport& report) {
  const auto missing = report.missing_cells();
  if (!missing.empty()) {
    std::string msg = "report is missing " + std::to_string(missing.size()) + " cell(s):";
    for (const auto& m : missing) msg += " " + m;
    throw ValidationError(msg);
  }
  std::vector<Table> tables;
  const std::pair<KeyKind, const char*> kinds[] = {
      {KeyKind::Level, "Level"}, {KeyKind::L1, "L1"}, {KeyKind::L1Level, "L1-Level"}};
  for (const auto& [kind, title] : kinds) {
    std::vector<SubsetKey> keys;
    for (const auto& k : report.keys)
      if (kind_of(k) == kind) keys.push_back(k);
    if (keys.empty()) continue;
    Table t;
    t.title = title;
    for (const auto& k : keys) t.col_labels.push_back(k.name());
    for (Scenario s : report.scenarios) {
      if (!applicable(s, keys.front())) continue;
      t.row_labels.emplace_back(to_string(s));
      std::vector<std::optional<double>> row;
      for (const auto& k : keys) {
        const auto f = report.mean_f(s, k);
        row.push_back(f ? std::optional<double>(*f * 100.0) : std::nullopt);
      }
      t.cells.push_back(std::move(row));
    }
    append_avg(t);
    tables.push_back(std::move(t));
  }
  return tables;
}

std::string to_csv(const Table& t) {
  std::ostringstream out;
  out << "scenario";
  for (const auto& c : t.col_labels) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    out << t.row_labels[r];
    for (const auto& c : t.cells[r]) out << ',' << format_cell(c);
    out << '\n';
  }
  return out.str();
}

std::string to_markdown(const Table& t) {
  std::vector<std::vector<std::string>> grid;
  grid.push_back({t.title.empty() ? std::string("scenario") : t.title});
  for (const auto& c : t.col_labels) grid[0].push_back(c);
  for (std::size_t r = 0; r < t.row_labels.size(); ++r) {
    grid.push_back({t.row_labels[r]});
    for (const auto& c : t.cells[r]) grid.back().push_back(format_cell(c));
  }
  std::vector<std::size_t> width(grid[0].size(), 3);
  for (const auto& row : grid)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  const auto emit = [&](const std::vector<std::string>& row) {
    out << '|';
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      out << ' ' << (c == 0 ? row[c] + pad : pad + row[c]) << " |";
    }
    out << '\n';
  };
  emit(grid[0]);
  out << '|';
  for (std::size_t c = 0; c < width.size(); ++c)
    out << (c == 0 ? ' ' + std::string(width[c], '-') + " |" : ' ' + std::string(width[c] - 1, '-') + ": |");
  out << '\n';
  for (std::size_t r = 1; r < grid.size(); ++r) emit(grid[r]);
  return out.str();
}

Table parse_csv_table(std::string_view csv) {
  std::istringstream in{std::string(csv)};
  std::string line;
  const auto fields = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  Table t;
  if (!std::getline(in, line)) throw ParseError("empty table", 1);
  auto header = fields(line);
  if (header.empty() || header[0] != "scenario") throw ParseError("expected 'scenario' header", 1);
  t.col_labels.assign(header.begin() + 1, header.end());
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    auto f = fields(line);
    if (f.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields", n);
    t.row_labels.push_back(f[0]);
    std::vector<std::optional<double>> row;
    for (std::size_t c = 1; c < f.size(); ++c) {
      if (f[c].empty()) {
        row.push_back(std::nullopt);
        continue;
      }
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(f[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != f[c].size()) throw ParseError("bad number '" + f[c] + "'", n);
      row.push_back(v);
    }
    t.cells.push_back(std::move(row));
  }
  return t;
}

std::vector<fs::path> emit_tables(const ScenarioReport& report, const fs::path& dir) {
  std::vector<fs::path> out;
  fs::create_directories(dir);
  for (const auto& t : make_tables(report)) {
    std::string stem = t.title;
    std::replace(stem.begin(), stem.end(), '-', '_');
    std::transform(stem.begin(), stem.end(), stem.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const auto& [ext, text] :
         {std::pair<const char*, std::string>{".csv", to_csv(t)}, {".md", to_markdown(t)}}) {
      const fs::path p = dir / ("table_" + stem + ext);
      std::ofstream f(p);
      if (!f) throw Error("cannot write " + p.string());
      f << text;
      out.push_back(p);
    }
  }
  return out;
}

Table emit_error_type_table(std::span<const TypeTableInput> inputs) {
  Table t;
  t.title = "Error type";
  for (ErrorType e : kTableTypes) t.col_labels.emplace_back(to_string(e));
  for (const auto& in : inputs) {
    if (in.system.empty() && !in.sources.empty())
      throw ValidationError("no system hypotheses for " + in.key.name());
    if (in.random.empty() && !in.sources.empty())
      throw ValidationError("no Random hypotheses for " + in.key.name());
    if (in.system.size() != in.sources.size() || in.random.size() != in.sources.size() ||
        in.golds.size() != in.sources.size())
      throw ValidationError("hypotheses for " + in.key.name() + " do not align with the test set");
    const auto deltas = per_type_report(in.sources, in.system, in.random, in.golds);
    t.row_labels.push_back(in.key.name());
    std::vector<std::optional<double>> row;
    for (ErrorType e : kTableTypes) {
      const auto it = std::find_if(deltas.begin(), deltas.end(),
                                   [&](const TypeDelta& d) { return d.type == e; });
      row.push_back(it == deltas.end() ? std::nullopt : std::optional<double>(it->delta_points));
    }
    t.cells.push_back(std::move(row));
  }
  return t;
}

std::vector<TypeTableInput> type_table_inputs(const ScenarioReport& report, Scenario scenario,
                                              std::span<const SubsetKey> keys) {
  std::vector<TypeTableInput> out;
  for (const auto& k : keys) {
    TypeTableInput in;
    in.key = k;
    for (auto seed : report.seeds) {
      const ReportRow* sys = report.find(scenario, k, seed);
      const ReportRow* rnd = report.find(Scenario::Random, k, seed);
      if (!sys || !rnd)
        throw ValidationError("hypotheses missing for " + k.name() + " seed " +
                              std::to_string(seed));
      const Corpus test = load_corpus(sys->test_set);
      auto hs = read_hypotheses(sys->hypotheses);
      auto hr = read_hypotheses(rnd->hypotheses);
      if (hs.size() != test.size() || hr.size() != test.size())
        throw ValidationError("hypothesis files for " + k.name() + " do not match the test set");
      for (std::size_t i = 0; i < test.size(); ++i) {
        in.sources.push_back(test[i].source);
        in.golds.push_back(test[i].edits);
        in.system.push_back(std::move(hs[i]));
        in.random.push_back(std::move(hr[i]));
      }
    }
    out.push_back(std::move(in));
  }
  return out;
}

std::vector<Tokens> read_hypotheses(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  std::vector<Tokens> out;
  std::string line;
  // Tokens were written space-separated; splitting on whitespace alone keeps
  // tokens such as "<unk>" intact.
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    out.emplace_back(std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>());
  }
  return out;
}

void write_hypotheses(const fs::path& path, std::span<const Tokens> hyps) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw Error("cannot write " + tmp.string());
    for (const auto& h : hyps) f << join_tokens(h) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace gecadapt
