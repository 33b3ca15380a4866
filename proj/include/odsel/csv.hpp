#pragma once

// Minimal CSV reading/writing: comma separated, optional double-quoted fields,
// first row is the header. Whitespace around unquoted fields is trimmed.
// Lines starting with '#' are comments; they are collected, not parsed.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace odsel {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> comments;  // '#'-lines, without the marker
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') { field += '"'; ++i; }
        else quoted = false;
      } else field += c;
    } else if (c == '"' && trim(field).empty()) {
      quoted = true;
      field.clear();
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else field += c;
  }
  out.push_back(trim(field));
  return out;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV file: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(detail::trim(line.substr(1)));
      continue;
    }
    auto fields = detail::split_csv_line(line);
    if (first) { t.header = fields; first = false; continue; }
    if (fields.size() != t.header.size())
      throw std::runtime_error("ragged CSV row in " + path + ": " + line);
    t.rows.push_back(std::move(fields));
  }
  if (first) throw std::runtime_error("empty CSV file: " + path);
  return t;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) { if (c == '"') out += "\"\""; else out += c; }
  out += "\"";
  return out;
}

inline void write_csv(const std::string& path, const CsvTable& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write CSV file: " + path);
  for (const auto& c : t.comments) out << "# " << c << "\n";
  for (std::size_t j = 0; j < t.header.size(); ++j)
    out << (j ? "," : "") << csv_escape(t.header[j]);
  out << "\n";
  for (const auto& r : t.rows) {
    for (std::size_t j = 0; j < r.size(); ++j)
      out << (j ? "," : "") << csv_escape(r[j]);
    out << "\n";
  }
}

}  // namespace odsel
