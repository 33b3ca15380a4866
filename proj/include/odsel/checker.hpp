#pragma once

// Independent design checker. Re-verifies the constraints a finished design
// claims to satisfy (replication counts, run binarity, block resolution,
// swap-class integrity) by plain counting over the frame, sharing no state or
// bookkeeping with the search.

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "frame.hpp"
#include "model.hpp"

namespace odsel {

struct CheckIssue {
  std::string rule;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckIssue> issues;

  bool ok() const { return issues.empty(); }

  void add(const std::string& rule, const std::string& detail) {
    issues.push_back({rule, detail});
  }

  std::string summary() const {
    if (ok()) return "pass";
    std::ostringstream os;
    os << issues.size() << " violation(s)";
    for (const auto& is : issues) os << "; " << is.rule << ": " << is.detail;
    return os.str();
  }
};

// Each treatment level occurs in `treat_col` exactly as many times as the
// expected table says (missing or extra levels are violations too).
inline void check_replication(
    CheckReport& rep, const DesignFrame& frame, const std::string& treat_col,
    const std::vector<std::pair<std::string, int>>& expected) {
  std::map<std::string, int> got;
  for (const auto& v : frame.col(treat_col)) ++got[v];
  std::set<std::string> listed;
  for (const auto& [name, r] : expected) {
    listed.insert(name);
    auto it = got.find(name);
    const int actual = it == got.end() ? 0 : it->second;
    if (actual != r)
      rep.add("replication", treat_col + "=" + name + " occurs " +
                                 std::to_string(actual) + " times, expected " +
                                 std::to_string(r));
  }
  for (const auto& [name, cnt] : got)
    if (!listed.count(name))
      rep.add("replication", treat_col + "=" + name + " occurs " +
                                 std::to_string(cnt) +
                                 " times but is not in the scheme");
}

// Every non-exempt treatment level occurs at most once per block level.
inline void check_binarity(CheckReport& rep, const DesignFrame& frame,
                           const std::string& treat_col,
                           const std::string& block_col,
                           const std::set<std::string>& exempt = {}) {
  const auto& t = frame.col(treat_col);
  const auto& b = frame.col(block_col);
  std::map<std::pair<std::string, std::string>, int> cnt;
  for (std::size_t u = 0; u < t.size(); ++u) ++cnt[{t[u], b[u]}];
  for (const auto& [key, c] : cnt)
    if (c > 1 && !exempt.count(key.first))
      rep.add("binarity", treat_col + "=" + key.first + " occurs " +
                              std::to_string(c) + " times in " + block_col +
                              "=" + key.second);
}

// Each subject treatment occurs exactly once per block level (resolution,
// e.g. one copy of every check variety in every zone).
inline void check_resolution(CheckReport& rep, const DesignFrame& frame,
                             const std::string& treat_col,
                             const std::string& block_col,
                             const std::set<std::string>& subjects) {
  const auto& t = frame.col(treat_col);
  const auto& b = frame.col(block_col);
  const auto blocks = frame.levels(block_col);
  std::map<std::pair<std::string, std::string>, int> cnt;
  for (std::size_t u = 0; u < t.size(); ++u)
    if (subjects.count(t[u])) ++cnt[{t[u], b[u]}];
  for (const auto& s : subjects)
    for (const auto& bl : blocks) {
      auto it = cnt.find({s, bl});
      const int c = it == cnt.end() ? 0 : it->second;
      if (c != 1)
        rep.add("resolution", treat_col + "=" + s + " occurs " +
                                  std::to_string(c) + " times in " +
                                  block_col + "=" + bl + ", expected 1");
    }
}

// The design may only permute treatment tuples within swap classes: per class
// level, the multiset of treatment tuples must match between the initial and
// final frames, and the class column itself must be row-identical.
inline void check_class_integrity(CheckReport& rep, const DesignFrame& before,
                                  const DesignFrame& after,
                                  const std::vector<std::string>& treat_cols,
                                  const std::string& class_col) {
  if (before.n() != after.n()) {
    rep.add("swap-class", "row counts differ: " + std::to_string(before.n()) +
                              " vs " + std::to_string(after.n()));
    return;
  }
  const auto& cb = before.col(class_col);
  const auto& ca = after.col(class_col);
  std::map<std::string, std::multiset<std::string>> mb, ma;
  for (int u = 0; u < before.n(); ++u) {
    if (cb[std::size_t(u)] != ca[std::size_t(u)]) {
      rep.add("swap-class", "class column " + class_col + " changed at row " +
                                std::to_string(u));
      return;
    }
    std::string tb, ta;
    for (const auto& c : treat_cols) {
      tb += before.col(c)[std::size_t(u)] + "\x1f";
      ta += after.col(c)[std::size_t(u)] + "\x1f";
    }
    mb[cb[std::size_t(u)]].insert(tb);
    ma[cb[std::size_t(u)]].insert(ta);
  }
  for (const auto& [cls, tuples] : mb)
    if (ma[cls] != tuples)
      rep.add("swap-class",
              "treatment tuples in class " + cls + " were not preserved");
}

// Levels of `treat_col` carried by rows matching a "column=value" selector
// (the exemption convention used by the search options).
inline std::set<std::string> selected_levels(const DesignFrame& frame,
                                             const std::string& treat_col,
                                             const std::string& selector) {
  std::set<std::string> out;
  if (selector.empty()) return out;
  auto eq = selector.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("selector must be column=value, got " + selector);
  const auto& sel = frame.col(selector.substr(0, eq));
  const auto& t = frame.col(treat_col);
  const std::string val = selector.substr(eq + 1);
  for (std::size_t u = 0; u < sel.size(); ++u)
    if (sel[u] == val) out.insert(t[u]);
  return out;
}

// Run every check a model spec implies for a finished design: swap-class
// integrity against the initial frame, and binarity (with exempt levels) for
// each declared constraint.
inline CheckReport check_against_spec(const ModelSpec& spec,
                                      const DesignFrame& initial,
                                      const DesignFrame& final_frame,
                                      const std::vector<std::string>& treat_cols) {
  CheckReport rep;
  if (!spec.swap_factor.empty())
    check_class_integrity(rep, initial, final_frame, treat_cols,
                          spec.swap_factor);
  for (const auto& bc : spec.search.binary) {
    auto exempt = selected_levels(final_frame, bc.treatment,
                                  spec.search.binary_exempt);
    check_binarity(rep, final_frame, bc.treatment, bc.block, exempt);
  }
  return rep;
}

}  // namespace odsel
