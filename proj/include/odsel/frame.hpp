#pragma once

// DesignFrame: one row per experimental unit, string-valued columns. Factor
// levels are taken from the frame in order of first appearance.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "odsel/csv.hpp"

namespace odsel {

class DesignFrame {
public:
  DesignFrame() = default;

  explicit DesignFrame(CsvTable t) : header_(std::move(t.header)) {
    cols_.resize(header_.size());
    for (auto& r : t.rows)
      for (std::size_t j = 0; j < header_.size(); ++j)
        cols_[j].push_back(std::move(r[j]));
    for (std::size_t j = 0; j < header_.size(); ++j) {
      if (index_.count(header_[j]))
        throw std::runtime_error("duplicate column name: " + header_[j]);
      index_[header_[j]] = int(j);
    }
  }

  static DesignFrame from_csv(const std::string& path) {
    return DesignFrame(read_csv(path));
  }

  int n() const { return cols_.empty() ? 0 : int(cols_[0].size()); }
  int ncol() const { return int(header_.size()); }
  const std::vector<std::string>& names() const { return header_; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& col(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::runtime_error("frame has no column '" + name + "'");
    return cols_[it->second];
  }

  std::vector<std::string>& col_mut(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::runtime_error("frame has no column '" + name + "'");
    return cols_[it->second];
  }

  void add_col(const std::string& name, std::vector<std::string> values) {
    if (has(name)) throw std::runtime_error("column exists: " + name);
    if (n() > 0 && int(values.size()) != n())
      throw std::runtime_error("column length mismatch for '" + name + "'");
    index_[name] = int(header_.size());
    header_.push_back(name);
    cols_.push_back(std::move(values));
  }

  // Levels in order of first appearance.
  std::vector<std::string> levels(const std::string& name) const {
    std::vector<std::string> lv;
    std::map<std::string, int> seen;
    for (const auto& v : col(name))
      if (seen.emplace(v, 0).second) lv.push_back(v);
    return lv;
  }

  // Per-row level codes plus the level list.
  std::pair<std::vector<int>, std::vector<std::string>> codes(
      const std::string& name) const {
    std::vector<std::string> lv = levels(name);
    std::map<std::string, int> pos;
    for (std::size_t k = 0; k < lv.size(); ++k) pos[lv[k]] = int(k);
    std::vector<int> c;
    c.reserve(std::size_t(n()));
    for (const auto& v : col(name)) c.push_back(pos[v]);
    return {std::move(c), std::move(lv)};
  }

  CsvTable to_csv() const {
    CsvTable t;
    t.header = header_;
    t.rows.resize(std::size_t(n()));
    for (int i = 0; i < n(); ++i) {
      t.rows[std::size_t(i)].resize(header_.size());
      for (std::size_t j = 0; j < header_.size(); ++j)
        t.rows[std::size_t(i)][j] = cols_[j][std::size_t(i)];
    }
    return t;
  }

  void write(const std::string& path) const { write_csv(path, to_csv()); }

private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> cols_;
  std::map<std::string, int> index_;
};

}  // namespace odsel
