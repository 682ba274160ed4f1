#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedmask/core.hpp"
#include "fedmask/fedkc.hpp"
#include "fedmask/oneshot.hpp"
#include "fedmask/partition.hpp"

namespace fedmask {

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, delim)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  if (is_absent(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::io, "cannot open " + p.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
  return out;
}

[[noreturn]] inline void parse_error(const std::filesystem::path& p, std::size_t row, std::size_t col,
                                     const std::string& what) {
  throw Error(ErrorKind::parse, p.string() + ": row " + std::to_string(row) + ", column " + std::to_string(col) + ": " + what);
}

}  // namespace detail

struct CsvOptions {
  std::optional<std::string> label_column;  // header name, or 0-based index when there is no header
  char delimiter = ',';
};

/// Rectangular numeric table with an optional header row (detected when any
/// cell of the first row is not a number). Rows and columns in errors are
/// 1-based line and field numbers.
inline Dataset load_csv(const std::filesystem::path& path, const CsvOptions& opt = {}) {
  auto in = detail::open_in(path);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_no;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (detail::trim(line).empty()) continue;
    rows.push_back(detail::split(line, opt.delimiter));
    line_no.push_back(n);
  }
  if (rows.empty()) throw Error(ErrorKind::parse, path.string() + ": empty table");

  bool header = false;
  for (const auto& c : rows.front())
    if (!detail::parse_double(c)) header = true;
  const std::size_t width = rows.front().size();

  std::optional<std::size_t> label_col;
  if (opt.label_column) {
    if (header) {
      for (std::size_t c = 0; c < width; ++c)
        if (rows.front()[c] == *opt.label_column) label_col = c;
    } else if (const auto v = detail::parse_double(*opt.label_column); v && *v >= 0 && *v < static_cast<double>(width)) {
      label_col = static_cast<std::size_t>(*v);
    }
    if (!label_col) throw Error(ErrorKind::parse, path.string() + ": label column '" + *opt.label_column + "' not found");
  }

  Dataset d;
  d.dim = width - (label_col ? 1 : 0);
  std::map<std::string, std::size_t> label_ids;
  std::vector<std::string> raw_labels;
  for (std::size_t r = header ? 1 : 0; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    if (cells.size() != width)
      detail::parse_error(path, line_no[r], std::min(cells.size(), width) + 1,
                          "expected " + std::to_string(width) + " fields, found " + std::to_string(cells.size()));
    std::vector<double> p;
    p.reserve(d.dim);
    for (std::size_t c = 0; c < width; ++c) {
      if (label_col && c == *label_col) {
        raw_labels.push_back(cells[c]);
        continue;
      }
      const auto v = detail::parse_double(cells[c]);
      if (!v) detail::parse_error(path, line_no[r], c + 1, "not a number: '" + cells[c] + "'");
      p.push_back(*v);
    }
    d.points.push_back(std::move(p));
  }
  if (label_col) {
    // Integer labels keep their order; other labels are numbered by sorted name.
    bool numeric = true;
    for (const auto& s : raw_labels) numeric = numeric && detail::parse_double(s).has_value();
    std::map<double, std::size_t> num_ids;
    for (const auto& s : raw_labels) {
      if (numeric)
        num_ids.emplace(*detail::parse_double(s), 0);
      else
        label_ids.emplace(s, 0);
    }
    std::size_t next = 0;
    for (auto& [k, v] : num_ids) v = next++;
    for (auto& [k, v] : label_ids) v = next++;
    for (const auto& s : raw_labels)
      d.labels.push_back(numeric ? num_ids.at(*detail::parse_double(s)) : label_ids.at(s));
  }
  return d;
}

inline void write_csv(const std::filesystem::path& path, const Dataset& d) {
  auto out = detail::open_out(path);
  for (std::size_t m = 0; m < d.dim; ++m) out << (m ? "," : "") << "x" << m;
  if (d.has_labels()) out << ",label";
  out << "\n";
  for (std::size_t p = 0; p < d.size(); ++p) {
    for (std::size_t m = 0; m < d.dim; ++m) out << (m ? "," : "") << detail::format_double(d.points[p][m]);
    if (d.has_labels()) out << "," << d.labels[p];
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Scenario directories
//
//   masks.txt          "dim <d>" then one line per participant: "<i>: <indices...>"
//   participant_<i>.csv d columns, NA for masked entries, no header
//   truth.csv          participant,local_index,central_index,label

inline void export_scenario(const std::filesystem::path& dir, const Scenario& s) {
  std::filesystem::create_directories(dir);
  {
    auto out = detail::open_out(dir / "masks.txt");
    out << "dim " << s.dim << "\n";
    for (std::size_t i = 0; i < s.num_participants(); ++i) {
      out << i << ":";
      for (auto m : s.participants[i].mask.indices()) out << " " << m;
      out << "\n";
    }
  }
  for (std::size_t i = 0; i < s.num_participants(); ++i) {
    auto out = detail::open_out(dir / ("participant_" + std::to_string(i) + ".csv"));
    for (const auto& row : s.participants[i].rows) {
      for (std::size_t m = 0; m < row.size(); ++m) out << (m ? "," : "") << detail::format_double(row[m]);
      out << "\n";
    }
  }
  auto out = detail::open_out(dir / "truth.csv");
  out << "participant,local_index,central_index,label\n";
  for (std::size_t i = 0; i < s.num_participants(); ++i)
    for (std::size_t p = 0; p < s.participants[i].size(); ++p) {
      out << i << "," << p << "," << (s.provenance.empty() ? p : s.provenance[i][p]) << ",";
      if (s.has_truth())
        out << s.truth[i][p];
      else
        out << "NA";
      out << "\n";
    }
}

inline Scenario import_scenario(const std::filesystem::path& dir) {
  Scenario s;
  std::vector<FeatureMask> masks;
  {
    const auto path = dir / "masks.txt";
    auto in = detail::open_in(path);
    std::string word;
    if (!(in >> word >> s.dim) || word != "dim") detail::parse_error(path, 1, 1, "expected 'dim <d>'");
    std::string line;
    std::getline(in, line);
    for (std::size_t row = 2; std::getline(in, line); ++row) {
      if (detail::trim(line).empty()) continue;
      const auto colon = line.find(':');
      if (colon == std::string::npos) detail::parse_error(path, row, 1, "expected '<participant>: <indices>'");
      std::istringstream idx(line.substr(colon + 1));
      std::vector<std::size_t> v;
      std::size_t m = 0;
      while (idx >> m) v.push_back(m);
      masks.emplace_back(s.dim, std::move(v));
    }
  }
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto path = dir / ("participant_" + std::to_string(i) + ".csv");
    auto in = detail::open_in(path);
    MaskedDataset x{i, masks[i], {}};
    std::string line;
    for (std::size_t row = 1; std::getline(in, line); ++row) {
      if (detail::trim(line).empty()) continue;
      const auto cells = detail::split(line, ',');
      if (cells.size() != s.dim)
        detail::parse_error(path, row, std::min(cells.size(), s.dim) + 1, "expected " + std::to_string(s.dim) + " fields");
      std::vector<double> r(s.dim, absent());
      for (std::size_t m = 0; m < s.dim; ++m) {
        if (masks[i].contains(m)) {
          const auto v = detail::parse_double(cells[m]);
          if (!v) detail::parse_error(path, row, m + 1, "observed entry is not a number");
          r[m] = *v;
        } else if (cells[m] != "NA") {
          detail::parse_error(path, row, m + 1, "masked entry must be NA");
        }
      }
      x.rows.push_back(std::move(r));
    }
    s.participants.push_back(std::move(x));
  }
  s.truth.resize(masks.size());
  s.provenance.resize(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    s.truth[i].assign(s.participants[i].size(), 0);
    s.provenance[i].assign(s.participants[i].size(), 0);
  }
  const auto path = dir / "truth.csv";
  auto in = detail::open_in(path);
  std::string line;
  std::getline(in, line);
  bool labelled = true;
  std::size_t max_label = 0;
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != 4) detail::parse_error(path, row, std::min<std::size_t>(cells.size(), 4) + 1, "expected 4 fields");
    std::size_t v[3];
    for (std::size_t c = 0; c < 3; ++c) {
      const auto d = detail::parse_double(cells[c]);
      if (!d || *d < 0) detail::parse_error(path, row, c + 1, "expected a nonnegative integer");
      v[c] = static_cast<std::size_t>(*d);
    }
    if (v[0] >= masks.size() || v[1] >= s.participants[v[0]].size())
      detail::parse_error(path, row, 1, "participant or local index out of range");
    s.provenance[v[0]][v[1]] = v[2];
    if (cells[3] == "NA") {
      labelled = false;
    } else {
      const auto d = detail::parse_double(cells[3]);
      if (!d || *d < 0) detail::parse_error(path, row, 4, "expected a label");
      s.truth[v[0]][v[1]] = static_cast<std::size_t>(*d);
      max_label = std::max(max_label, s.truth[v[0]][v[1]]);
    }
  }
  s.num_clusters = labelled ? max_label + 1 : 0;
  if (!labelled) s.truth.assign(masks.size(), {});
  return s;
}

// ---------------------------------------------------------------------------
// Result tables

/// One row per centroid: slot, then d values (NA off mask).
inline void write_centroids(const std::filesystem::path& path, std::span<const Centroid> cs) {
  auto out = detail::open_out(path);
  for (std::size_t a = 0; a < cs.size(); ++a) {
    out << a;
    for (double v : cs[a].values) out << "," << detail::format_double(v);
    out << "\n";
  }
}

inline std::vector<Centroid> read_centroids(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<Centroid> out;
  std::string line;
  for (std::size_t row = 1; std::getline(in, line); ++row) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() < 2) detail::parse_error(path, row, 1, "expected slot and values");
    Centroid c;
    std::vector<std::size_t> observed;
    for (std::size_t m = 1; m < cells.size(); ++m) {
      if (cells[m] == "NA") {
        c.values.push_back(absent());
        continue;
      }
      const auto v = detail::parse_double(cells[m]);
      if (!v) detail::parse_error(path, row, m + 1, "not a number");
      c.values.push_back(*v);
      observed.push_back(m - 1);
    }
    c.mask = FeatureMask(c.values.size(), observed);
    out.push_back(std::move(c));
  }
  return out;
}

/// round,slot,values... with round 0 the initialization.
inline void write_history(const std::filesystem::path& path, const Algorithm1Result& r) {
  auto out = detail::open_out(path);
  auto emit = [&out](std::size_t round, const GlobalCentroidSet& g) {
    for (std::size_t a = 0; a < g.size(); ++a) {
      out << round << "," << a;
      for (double v : g.entries[a].values) out << "," << detail::format_double(v);
      out << "\n";
    }
  };
  emit(0, r.initial);
  for (std::size_t t = 0; t < r.history.size(); ++t) emit(t + 1, r.history[t]);
}

/// step<TAB>left members<TAB>right members<TAB>force, members as participant:index.
inline void write_merge_log(const std::filesystem::path& path, const MergeForest& f) {
  auto out = detail::open_out(path);
  auto members = [&f](const std::vector<std::size_t>& g) {
    std::string s;
    for (std::size_t z = 0; z < g.size(); ++z)
      s += (z ? " " : "") + std::to_string(f.ids[g[z]].participant) + ":" + std::to_string(f.ids[g[z]].local_index);
    return s;
  };
  out << "step\tleft\tright\tforce\n";
  for (const auto& st : f.steps)
    out << st.step << "\t" << members(st.left) << "\t" << members(st.right) << "\t" << detail::format_double(st.force) << "\n";
}

}  // namespace fedmask
