#pragma once

// Tabu search with random-walk restarts over constrained pairwise
// interchanges of permute-set rows, minimizing the A-criterion.
//
// One tabu loop = one neighbourhood sweep (evaluate a capped sample of
// admissible candidate pairs, commit the best non-tabu move, aspiration
// allowing tabu moves that beat the incumbent) plus restart logic: after
// `stall` consecutive loops without improving the incumbent, `rw_steps`
// random admissible swaps are committed unconditionally. Admissible means:
// same swap class, differing treatment tuples, and run-binarity constraints
// preserved. The search returns the best design visited.

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "odsel/frame.hpp"
#include "odsel/mme.hpp"
#include "odsel/model.hpp"
#include "odsel/rng.hpp"

namespace odsel {

struct MoveRecord {
  int loop = 0;
  char kind = 's';  // 's' sweep commit, 'w' random-walk commit
  int i = 0, j = 0;
  double A_after = 0;
};

struct LoopTrace {
  int loop = 0;
  double A_current = 0, A_best = 0;
  long commits = 0;
  int rw_moves = 0;
  bool moved = false;
};

struct SearchReport {
  double A_initial = 0, A_best = 0;
  long evaluations = 0, commits = 0;
  int loops_run = 0;
  bool stopped_early = false;
  std::vector<int> best_row_at;
  std::vector<MoveRecord> moves;
  std::vector<LoopTrace> loops;
};

// Rewrites the treatment-side columns of a frame according to a permutation:
// row u receives the treatment labels of input row row_at[u].
inline DesignFrame apply_permutation(const DesignFrame& frame,
                                     const std::vector<int>& row_at,
                                     const std::vector<std::string>& cols) {
  DesignFrame out = frame;
  for (const auto& c : cols) {
    const auto& src = frame.col(c);
    auto& dst = out.col_mut(c);
    for (std::size_t u = 0; u < src.size(); ++u)
      dst[u] = src[std::size_t(row_at[u])];
  }
  return out;
}

namespace detail {

// Run-binarity bookkeeping for one treatment:block constraint: every
// non-exempt treatment level occurs at most once per block level. The
// exemption selector "column=value" marks treatment levels carried by frame
// rows matching it (e.g. check varieties flagged in a marker column).
class BinaryGuard {
public:
  BinaryGuard(const BinaryConstraint& bc, const DesignFrame& frame,
              const std::string& exempt_selector) {
    auto [tcodes, tlevels] = frame.codes(bc.treatment);
    auto [bcodes, blevels] = frame.codes(bc.block);
    tcodes_ = std::move(tcodes);
    bcodes_ = std::move(bcodes);
    nt_ = int(tlevels.size());
    nb_ = int(blevels.size());
    exempt_.assign(std::size_t(nt_), false);
    if (!exempt_selector.empty()) {
      auto eq = exempt_selector.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(
            "binary exemption selector must be column=value, got " +
            exempt_selector);
      const auto& col = frame.col(exempt_selector.substr(0, eq));
      const std::string val = exempt_selector.substr(eq + 1);
      for (std::size_t r = 0; r < col.size(); ++r)
        if (col[r] == val) exempt_[std::size_t(tcodes_[r])] = true;
    }
    counts_.assign(std::size_t(nt_) * std::size_t(nb_), 0);
    name_ = bc.treatment + ":" + bc.block;
  }

  void reset(const std::vector<int>& row_at) {
    std::fill(counts_.begin(), counts_.end(), 0);
    for (std::size_t u = 0; u < row_at.size(); ++u)
      ++at(tcodes_[std::size_t(row_at[u])], bcodes_[u]);
    for (int t = 0; t < nt_; ++t) {
      if (exempt_[std::size_t(t)]) continue;
      for (int b = 0; b < nb_; ++b)
        if (at(t, b) > 1)
          throw std::runtime_error(
              "initial configuration violates the binarity constraint " +
              name_);
    }
  }

  bool feasible(int i, int j, const std::vector<int>& row_at) const {
    const int bi = bcodes_[std::size_t(i)], bj = bcodes_[std::size_t(j)];
    if (bi == bj) return true;
    const int ti = tcodes_[std::size_t(row_at[std::size_t(i)])];
    const int tj = tcodes_[std::size_t(row_at[std::size_t(j)])];
    if (ti == tj) return true;
    if (!exempt_[std::size_t(tj)] && at(tj, bi) > 0) return false;
    if (!exempt_[std::size_t(ti)] && at(ti, bj) > 0) return false;
    return true;
  }

  // Called with row_at already swapped.
  void apply(int i, int j, const std::vector<int>& row_at) {
    const int bi = bcodes_[std::size_t(i)], bj = bcodes_[std::size_t(j)];
    const int ti_new = tcodes_[std::size_t(row_at[std::size_t(i)])];
    const int tj_new = tcodes_[std::size_t(row_at[std::size_t(j)])];
    ++at(ti_new, bi);
    --at(ti_new, bj);
    ++at(tj_new, bj);
    --at(tj_new, bi);
  }

private:
  int& at(int t, int b) { return counts_[std::size_t(t) * std::size_t(nb_) + std::size_t(b)]; }
  int at(int t, int b) const {
    return counts_[std::size_t(t) * std::size_t(nb_) + std::size_t(b)];
  }
  std::vector<int> tcodes_, bcodes_;
  std::vector<int> counts_;
  std::vector<bool> exempt_;
  int nt_ = 0, nb_ = 0;
  std::string name_;
};

}  // namespace detail

inline SearchReport tabu_rw_search(
    CriterionEngine& eng, const DesignFrame& frame, const SearchOptions& opt,
    const std::function<void(const LoopTrace&)>& progress = {}) {
  const int n = eng.n();
  Rng rng(opt.seed);

  // swap classes with at least two members
  std::map<int, std::vector<int>> by_class;
  for (int u = 0; u < n; ++u) by_class[eng.swap_class(u)].push_back(u);
  std::vector<std::vector<int>> classes;
  for (auto& [c, members] : by_class)
    if (members.size() > 1) classes.push_back(std::move(members));
  long total_pairs = 0;
  for (const auto& cl : classes)
    total_pairs += long(cl.size()) * long(cl.size() - 1) / 2;

  std::vector<detail::BinaryGuard> guards;
  for (const auto& bc : opt.binary)
    guards.emplace_back(bc, frame, opt.binary_exempt);
  for (auto& g : guards) g.reset(eng.row_at());

  SearchReport rep;
  rep.A_initial = eng.criterion();
  rep.A_best = rep.A_initial;
  rep.best_row_at = eng.row_at();

  const long cap = opt.cap > 0 ? opt.cap : 20L * n;
  const bool enumerate = total_pairs <= cap;

  auto feasible = [&](int i, int j) {
    for (const auto& g : guards)
      if (!g.feasible(i, j, eng.row_at())) return false;
    return true;
  };
  auto commit = [&](int i, int j, int loop, char kind) {
    eng.commit_swap(i, j);
    for (auto& g : guards) g.apply(i, j, eng.row_at());
    ++rep.commits;
    rep.moves.push_back({loop, kind, i, j, eng.criterion()});
    if (eng.criterion() < rep.A_best - 1e-13) {
      rep.A_best = eng.criterion();
      rep.best_row_at = eng.row_at();
    }
  };

  std::map<std::pair<int, int>, int> tabu_until;
  int stall = 0;

  for (int loop = 0; loop < opt.maxit; ++loop) {
    const double best_before = rep.A_best;

    // --- neighbourhood sweep: find the best admissible move ---
    int bi = -1, bj = -1;
    double bA = 0;
    long evaluable = 0;
    auto consider = [&](int i, int j) {
      if (eng.same_treat(i, j)) return;
      if (!feasible(i, j)) return;
      ++evaluable;
      const double Anew = eng.eval_swap(i, j);
      ++rep.evaluations;
      auto key = std::make_pair(std::min(i, j), std::max(i, j));
      auto it = tabu_until.find(key);
      const bool is_tabu = it != tabu_until.end() && it->second > loop;
      if (is_tabu && !(Anew < rep.A_best - 1e-12)) return;  // aspiration
      if (bi < 0 || Anew < bA) {
        bi = i;
        bj = j;
        bA = Anew;
      }
    };
    if (enumerate) {
      for (const auto& cl : classes)
        for (std::size_t x = 0; x + 1 < cl.size(); ++x)
          for (std::size_t y = x + 1; y < cl.size(); ++y)
            consider(cl[x], cl[y]);
    } else {
      for (long k = 0; k < cap; ++k) {
        const auto& cl = classes[rng.below(classes.size())];
        std::uint64_t x = rng.below(cl.size());
        std::uint64_t y = rng.below(cl.size() - 1);
        if (y >= x) ++y;
        consider(cl[std::size_t(x)], cl[std::size_t(y)]);
      }
    }

    LoopTrace lt;
    lt.loop = loop;
    lt.moved = bi >= 0;
    if (bi >= 0) {
      commit(bi, bj, loop, 's');
      tabu_until[{std::min(bi, bj), std::max(bi, bj)}] = loop + opt.tabu_tenure;
    }

    // stop conditions
    bool stop = false;
    if (opt.stop_at && rep.A_best <= *opt.stop_at + 1e-10) {
      rep.stopped_early = true;
      stop = true;
    }
    if (enumerate && evaluable == 0) stop = true;  // nothing to ever do

    // --- restart logic ---
    stall = rep.A_best < best_before - 1e-13 ? 0 : stall + 1;
    int rw_done = 0;
    if (!stop && stall >= opt.stall && loop + 1 < opt.maxit &&
        !classes.empty()) {
      for (int k = 0; k < opt.rw_steps; ++k) {
        // rejection-sample an admissible pair
        for (long att = 0; att < 200L * std::max(1, int(classes.size())); ++att) {
          const auto& cl = classes[rng.below(classes.size())];
          std::uint64_t x = rng.below(cl.size());
          std::uint64_t y = rng.below(cl.size() - 1);
          if (y >= x) ++y;
          const int i = cl[std::size_t(x)], j = cl[std::size_t(y)];
          if (eng.same_treat(i, j) || !feasible(i, j)) continue;
          commit(i, j, loop, 'w');
          ++rw_done;
          break;
        }
      }
      stall = 0;
    }

    lt.A_current = eng.criterion();
    lt.A_best = rep.A_best;
    lt.commits = rep.commits;
    lt.rw_moves = rw_done;
    rep.loops.push_back(lt);
    if (progress) progress(lt);
    ++rep.loops_run;
    if (stop) break;
  }

  // land on the best design visited; the rebuild clears incremental drift
  eng.set_perm(rep.best_row_at);
  rep.A_best = eng.criterion();
  return rep;
}

}  // namespace odsel
