#pragma once

// Stage builders for the selection-experiment design pipeline.
//
// Stage 2 allocates replication: genotypes are assigned to replication
// classes (r_j replicates, capacity m_j) by searching an m-row working model
// with one row per genotype, fixed mean, additive genetic effects
// vm(name)[sigma_a2] and per-class residual variance sigma_e2 + sigma2/r_j
// (a dsum residual over the class factor). Exchanging two rows reassigns the
// two genotypes' replication classes.
//
// Stage 3 allocates plots: the stage-2 replication counts are laid out on
// the plot frame by a constrained greedy fill (pinned genotypes one per
// pin-block level, remaining genotypes at most once per binarity block),
// then refined in one or two search steps with swap classes and binarity
// constraints from the step configuration.
//
// The MESE builders emit the compound-symmetry working models for
// multi-environment designs and the genotype-to-site concurrence model; the
// efficiency study runs the 2x2 factorial of (informed vs random replication
// allocation) x (relatedness-aware vs independent plot model) and scores
// every arm under the relatedness-aware model.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "odsel/frame.hpp"
#include "odsel/mme.hpp"
#include "odsel/model.hpp"
#include "odsel/relmat.hpp"
#include "odsel/rng.hpp"
#include "odsel/search.hpp"

namespace odsel {

// ---------------------------------------------------------------------------
// stage 2: replication allocation
// ---------------------------------------------------------------------------

struct ReplicationScheme {
  std::vector<int> reps;      // r_j per class
  std::vector<int> capacity;  // m_j genotypes per class

  int n_classes() const { return int(reps.size()); }
  int total_plots() const {
    int n = 0;
    for (std::size_t j = 0; j < reps.size(); ++j) n += reps[j] * capacity[j];
    return n;
  }
  void validate(int m) const {
    if (reps.empty() || reps.size() != capacity.size())
      throw std::runtime_error("replication scheme: reps/capacity mismatch");
    int mm = 0;
    for (std::size_t j = 0; j < reps.size(); ++j) {
      if (reps[j] < 1 || capacity[j] < 0)
        throw std::runtime_error("replication scheme: nonpositive entry");
      mm += capacity[j];
    }
    if (mm != m)
      throw std::runtime_error("replication scheme: class capacities sum to " +
                               std::to_string(mm) + " but there are " +
                               std::to_string(m) + " genotypes");
  }
};

struct Stage2Problem {
  std::vector<std::string> genotypes;
  // allowed class indices per genotype (empty inner vector = any class)
  std::vector<std::vector<int>> allowed;
  ReplicationScheme scheme;
  double sigma_a2 = 1.0;
  double sigma_e2 = 0.0;
  double sigma2 = 1.0;  // stage-2 working residual scale
};

struct Stage2Design {
  ModelSpec spec;
  DesignFrame frame;  // columns: name, repclass, reps, swp (class-sorted rows)
};

namespace detail {

inline std::vector<int> stage2_assign(const Stage2Problem& pb, bool random_fill,
                                      Rng* rng) {
  const int m = int(pb.genotypes.size());
  const int k = pb.scheme.n_classes();
  pb.scheme.validate(m);
  std::vector<std::vector<int>> allowed;
  allowed.resize(std::size_t(m));
  for (int g = 0; g < m; ++g) {
    if (!pb.allowed.empty()) allowed[std::size_t(g)] = pb.allowed[std::size_t(g)];
    if (allowed[std::size_t(g)].empty())
      for (int j = 0; j < k; ++j) allowed[std::size_t(g)].push_back(j);
    for (int j : allowed[std::size_t(g)])
      if (j < 0 || j >= k)
        throw std::runtime_error("allowed class out of range for genotype " +
                                 pb.genotypes[std::size_t(g)]);
  }

  auto greedy = [&](const std::vector<int>& order) {
    std::vector<int> assign(std::size_t(m), -1);
    std::vector<int> left = pb.scheme.capacity;
    for (int g : order) {
      int pick = -1;
      for (int j : allowed[std::size_t(g)])
        if (left[std::size_t(j)] > 0 &&
            (pick < 0 || left[std::size_t(j)] > left[std::size_t(pick)]))
          pick = j;
      if (pick < 0) return std::vector<int>();
      assign[std::size_t(g)] = pick;
      --left[std::size_t(pick)];
    }
    return assign;
  };

  std::vector<int> order(std::size_t(m), 0);
  for (int g = 0; g < m; ++g) order[std::size_t(g)] = g;
  if (random_fill) {
    if (!rng) throw std::invalid_argument("random fill needs an RNG");
    for (int attempt = 0; attempt < 100; ++attempt) {
      std::vector<int> ord = order;
      rng->shuffle(ord);
      std::vector<int> assign(std::size_t(m), -1);
      std::vector<int> left = pb.scheme.capacity;
      bool ok = true;
      for (int g : ord) {
        std::vector<int> open;
        for (int j : allowed[std::size_t(g)])
          if (left[std::size_t(j)] > 0) open.push_back(j);
        if (open.empty()) {
          ok = false;
          break;
        }
        int j = open[std::size_t(rng->below(open.size()))];
        assign[std::size_t(g)] = j;
        --left[std::size_t(j)];
      }
      if (ok) return assign;
    }
    // fall through to the deterministic fill if rejection keeps failing
  }
  // most-constrained genotypes first
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return allowed[std::size_t(a)].size() < allowed[std::size_t(b)].size();
  });
  std::vector<int> assign = greedy(order);
  if (assign.empty())
    throw std::runtime_error(
        "replication scheme is infeasible for the allowed-class constraints");
  return assign;
}

}  // namespace detail

// Builds the genotype-level working design. With random_fill the initial
// class assignment is a uniformly drawn valid one instead of the greedy fill.
inline Stage2Design stage2_build(const Stage2Problem& pb,
                                 bool random_fill = false, Rng* rng = nullptr) {
  const int m = int(pb.genotypes.size());
  const int k = pb.scheme.n_classes();
  if (pb.sigma_a2 <= 0 || pb.sigma_e2 < 0 || pb.sigma2 <= 0)
    throw std::runtime_error("stage 2 variance parameters must be positive");
  std::vector<int> assign = detail::stage2_assign(pb, random_fill, rng);

  // swap classes: genotypes sharing an identical allowed-class set may trade
  // places; the slot keeps the class id because exchanges stay inside it
  std::map<std::string, int> swp_ids;
  std::vector<int> swp(std::size_t(m), 0);
  for (int g = 0; g < m; ++g) {
    std::string key;
    if (pb.allowed.empty() || pb.allowed[std::size_t(g)].empty())
      key = "*";
    else
      for (int j : pb.allowed[std::size_t(g)]) key += std::to_string(j) + "|";
    auto it = swp_ids.emplace(key, int(swp_ids.size())).first;
    swp[std::size_t(g)] = it->second;
  }

  CsvTable tab;
  tab.header = {"name", "repclass", "reps", "swp"};
  for (int j = 0; j < k; ++j)
    for (int g = 0; g < m; ++g)
      if (assign[std::size_t(g)] == j)
        tab.rows.push_back({pb.genotypes[std::size_t(g)],
                            "c" + std::to_string(j + 1),
                            std::to_string(pb.scheme.reps[std::size_t(j)]),
                            "s" + std::to_string(swp[std::size_t(g)])});
  DesignFrame frame(tab);

  ModelSpec spec;
  Term mean = parse_term("mean");
  Term gen = parse_term("vm(name,G)");
  gen.random = true;
  gen.params = {pb.sigma_a2};
  spec.terms = {mean, gen};
  spec.residual = parse_term("dsum(units | repclass)");
  for (int j = 0; j < k; ++j)
    spec.residual.params.push_back(pb.sigma_e2 +
                                   pb.sigma2 / double(pb.scheme.reps[std::size_t(j)]));
  spec.permute = {1};
  spec.objective = {1};
  spec.swap_factor = "swp";
  validate_marginality(spec);
  return {spec, frame};
}

// (name, reps) pairs in frame row order from a stage-2 design frame.
inline std::vector<std::pair<std::string, int>> replication_counts(
    const DesignFrame& frame) {
  const auto& names = frame.col("name");
  const auto& reps = frame.col("reps");
  std::vector<std::pair<std::string, int>> out;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < names.size(); ++r) {
    if (!seen.insert(names[r]).second)
      throw std::runtime_error("duplicate genotype in stage-2 frame: " +
                               names[r]);
    out.emplace_back(names[r], std::stoi(reps[r]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// stage 3: plot allocation
// ---------------------------------------------------------------------------

struct Stage3StepConfig {
  std::vector<std::string> random;  // term texts; genotype term(s) included
  std::vector<double> params;       // flat variance list for `random`
  std::string residual;             // term text; "" = idv(units)
  std::vector<double> residual_params;  // [] = {1}
  std::string swap_pin_block;       // pinned plots: class = this column's level
  std::string swap_free_block;      // other plots pooled by this column ("" = one class)
  std::vector<std::string> binary;  // "treat:block" constraints
  SearchOptions search;
};

struct Stage3Config {
  std::string genotype = "name";
  int pin_reps = 0;       // genotypes with this replication are pinned (0 = none)
  std::string pin_block;  // pinned genotypes placed once per level of this column
};

// Greedy constrained fill of the genotype column onto the plot frame. Pinned
// genotypes are placed first, at most one plot per pin-block level; remaining
// genotypes are placed most-replicated first, at most one plot per level of
// every binarity block, always in the block with the most free plots. An rng
// randomizes placement among equally good plots.
inline DesignFrame stage3_initial_allocation(
    const DesignFrame& plots, const std::string& genotype_col,
    const std::vector<std::pair<std::string, int>>& counts,
    const std::set<std::string>& pinned, const std::string& pin_block,
    const std::vector<std::string>& binary_blocks, Rng* rng = nullptr) {
  const int n = plots.n();
  int total = 0;
  for (const auto& [g, r] : counts) total += r;
  if (total != n)
    throw std::runtime_error("replication counts sum to " +
                             std::to_string(total) + " but the plot frame has " +
                             std::to_string(n) + " rows");

  std::vector<std::vector<int>> bcodes;
  std::vector<int> bcard;
  for (const auto& b : binary_blocks) {
    auto [codes, levels] = plots.codes(b);
    bcodes.push_back(std::move(codes));
    bcard.push_back(int(levels.size()));
  }
  std::vector<int> pincodes;
  int pincard = 0;
  if (!pin_block.empty()) {
    auto [codes, levels] = plots.codes(pin_block);
    pincodes = std::move(codes);
    pincard = int(levels.size());
  }

  std::vector<bool> used(std::size_t(n), false);
  std::vector<std::string> geno;
  geno.resize(std::size_t(n));

  // deterministic placement order: pinned first, then most-replicated first
  std::vector<std::pair<std::string, int>> order = counts;
  std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    const bool pa = pinned.count(a.first) > 0, pb = pinned.count(b.first) > 0;
    if (pa != pb) return pa;
    return a.second > b.second;
  });

  auto free_in = [&](const std::vector<int>& codes, int card) {
    std::vector<int> cnt(std::size_t(card), 0);
    for (int u = 0; u < n; ++u)
      if (!used[std::size_t(u)]) ++cnt[std::size_t(codes[std::size_t(u)])];
    return cnt;
  };

  for (const auto& [g, r] : order) {
    const bool pin = pinned.count(g) > 0;
    std::vector<int> occupied_pin(std::size_t(std::max(pincard, 1)), 0);
    std::vector<std::vector<int>> occupied_bin;
    for (int c : bcard) occupied_bin.emplace_back(std::size_t(c), 0);

    for (int copy = 0; copy < r; ++copy) {
      // score candidate plots: feasibility first, then balance
      int best = -1;
      long bestscore = -1;
      std::vector<int> ties;
      std::vector<std::vector<int>> freecnt;
      for (std::size_t b = 0; b < bcodes.size(); ++b)
        freecnt.push_back(free_in(bcodes[b], bcard[std::size_t(b)]));
      std::vector<int> freepin =
          pin && pincard > 0 ? free_in(pincodes, pincard) : std::vector<int>();
      for (int u = 0; u < n; ++u) {
        if (used[std::size_t(u)]) continue;
        if (pin && pincard > 0 &&
            occupied_pin[std::size_t(pincodes[std::size_t(u)])] > 0)
          continue;
        if (!pin) {
          bool bad = false;
          for (std::size_t b = 0; b < bcodes.size(); ++b)
            if (occupied_bin[b][std::size_t(bcodes[b][std::size_t(u)])] > 0) {
              bad = true;
              break;
            }
          if (bad) continue;
        }
        // prefer plots in blocks with many free plots (keeps the fill balanced)
        long score = 0;
        for (std::size_t b = 0; b < bcodes.size(); ++b)
          score += freecnt[b][std::size_t(bcodes[b][std::size_t(u)])];
        if (pin && pincard > 0)
          score += freepin[std::size_t(pincodes[std::size_t(u)])];
        if (score > bestscore) {
          bestscore = score;
          best = u;
          ties.clear();
          ties.push_back(u);
        } else if (score == bestscore) {
          ties.push_back(u);
        }
      }
      if (best < 0)
        throw std::runtime_error(
            "no feasible initial plot for genotype " + g +
            " (the replication/constraint combination is unsatisfiable)");
      int chosen = rng ? ties[std::size_t(rng->below(ties.size()))] : best;
      used[std::size_t(chosen)] = true;
      geno[std::size_t(chosen)] = g;
      if (pin && pincard > 0)
        ++occupied_pin[std::size_t(pincodes[std::size_t(chosen)])];
      for (std::size_t b = 0; b < bcodes.size(); ++b)
        ++occupied_bin[b][std::size_t(bcodes[b][std::size_t(chosen)])];
    }
  }

  DesignFrame out = plots;
  out.add_col(genotype_col, geno);
  return out;
}

// Swap-class column: pinned plots keep their pin-block level as class; the
// rest share one class or pool by a block column.
inline void add_swap_column(DesignFrame& frame, const std::string& swpcol,
                            const std::string& genotype_col,
                            const std::set<std::string>& pinned,
                            const std::string& pin_block,
                            const std::string& free_block) {
  const auto& geno = frame.col(genotype_col);
  std::vector<std::string> swp(geno.size());
  for (std::size_t u = 0; u < geno.size(); ++u) {
    const bool pin = pinned.count(geno[u]) > 0;
    if (pin && !pin_block.empty())
      swp[u] = "p" + frame.col(pin_block)[u];
    else if (!pin && !free_block.empty())
      swp[u] = "f" + frame.col(free_block)[u];
    else
      swp[u] = pin ? "p*" : "f*";
  }
  if (frame.has(swpcol))
    frame.col_mut(swpcol) = swp;
  else
    frame.add_col(swpcol, swp);
}

struct Stage3Step {
  ModelSpec spec;
  DesignFrame frame;
};

// One plot-allocation step: attach the swap-class column and assemble the
// model spec (fixed mean, the configured random terms with the genotype
// term(s) permuted, binarity constraints with pinned genotypes exempt).
inline Stage3Step stage3_step_build(const DesignFrame& plots_with_genotype,
                                    const std::string& genotype_col,
                                    const Stage3StepConfig& cfg,
                                    const std::set<std::string>& pinned) {
  Stage3Step st;
  st.frame = plots_with_genotype;
  add_swap_column(st.frame, "swp", genotype_col, pinned, cfg.swap_pin_block,
                  cfg.swap_free_block);

  ModelSpec& spec = st.spec;
  spec.terms.push_back(parse_term("mean"));
  std::vector<int> permute;
  for (const auto& txt : cfg.random) {
    Term t = parse_term(txt);
    if (t.vfn == VarFn::fixed_term) t.vfn = VarFn::idv;
    t.random = true;
    const bool has_geno =
        std::find(t.factors.begin(), t.factors.end(), genotype_col) !=
        t.factors.end();
    spec.terms.push_back(t);
    if (has_geno) permute.push_back(int(spec.terms.size()) - 1);
  }
  if (permute.empty())
    throw std::runtime_error("stage-3 step has no random term involving " +
                             genotype_col);
  spec.permute = permute;
  spec.objective = {permute.front()};
  spec.residual = cfg.residual.empty() ? parse_term("idv(units)")
                                       : parse_term(cfg.residual);
  spec.swap_factor = "swp";
  spec.search = cfg.search;
  for (const auto& b : cfg.binary) {
    auto pos = b.find(':');
    if (pos == std::string::npos)
      throw std::runtime_error("binary constraint must be treat:block, got " +
                               b);
    spec.search.binary.push_back({b.substr(0, pos), b.substr(pos + 1)});
  }
  if (spec.search.binary_exempt.empty() && !pinned.empty()) {
    const auto& geno = st.frame.col(genotype_col);
    std::vector<std::string> pin(geno.size());
    for (std::size_t u = 0; u < geno.size(); ++u)
      pin[u] = pinned.count(geno[u]) > 0 ? "1" : "0";
    if (st.frame.has("pin"))
      st.frame.col_mut("pin") = pin;
    else
      st.frame.add_col("pin", pin);
    spec.search.binary_exempt = "pin=1";
  }

  const int dsg = spec.residual.vfn == VarFn::dsum
                      ? int(st.frame.levels(spec.residual.group).size())
                      : -1;
  std::vector<double> resid = cfg.residual_params;
  if (resid.empty() && spec.residual.vfn == VarFn::idv) resid = {1.0};
  bind_params(spec, cfg.params, resid, dsg);
  validate_marginality(spec);
  return st;
}

// Lowered cs terms aside, the MESE working models are emitted directly.

struct CsGeneticModel {
  double d_a = 0, psi_a = 0, d_e = 0, psi_e = 0;
  int check() const {
    if (d_a <= 0 || psi_a <= 0 || d_e <= 0 || psi_e <= 0)
      throw std::runtime_error("CS variance components must be positive");
    return 0;
  }
};

// Compound-symmetry MESE model over t sites.
//   objective = "total":    ric(genotype, G)[d_a, d_e] + idv(env:genotype)[psi_a+psi_e]
//   objective = "additive": vm(genotype, G)[d_a] + idv(genotype)[d_e]
//                           + vm(env:genotype, G)[psi_a] + idv(env:genotype)[psi_e]
// with fixed mean and site effects; `env` must be an aliased copy of `site`.
inline ModelSpec mese_build_cs(const DesignFrame& frame,
                               const CsGeneticModel& cs,
                               const std::string& objective,
                               const std::string& genotype = "name",
                               const std::string& site = "Site",
                               const std::string& env = "Env",
                               double sigma2 = 1.0) {
  cs.check();
  const int t = int(frame.levels(site).size());
  if (t < 2)
    throw std::runtime_error(
        "multi-environment model needs at least two sites (single site: use "
        "the single-environment path)");
  if (frame.codes(site).first != frame.codes(env).first)
    throw std::runtime_error("'" + env + "' must be an aliased copy of '" +
                             site + "'");

  ModelSpec spec;
  spec.terms.push_back(parse_term("mean"));
  spec.terms.push_back(parse_term(site));  // fixed site means

  auto add_random = [&](const std::string& txt, std::vector<double> params) {
    Term tm = parse_term(txt);
    tm.random = true;
    tm.params = std::move(params);
    spec.terms.push_back(tm);
    return int(spec.terms.size()) - 1;
  };

  if (objective == "total") {
    int f = add_random("ric(" + genotype + ",G)", {cs.d_a, cs.d_e});
    int d = add_random("idv(" + env + ":" + genotype + ")",
                       {cs.psi_a + cs.psi_e});
    spec.permute = {f, d};
    spec.objective = {f};
  } else if (objective == "additive") {
    int fa = add_random("vm(" + genotype + ",G)", {cs.d_a});
    int fe = add_random("idv(" + genotype + ")", {cs.d_e});
    int da = add_random("vm(" + env + ":" + genotype + ",G)", {cs.psi_a});
    int de = add_random("idv(" + env + ":" + genotype + ")", {cs.psi_e});
    spec.permute = {fa, fe, da, de};
    spec.objective = {fa};
  } else {
    throw std::runtime_error("objective must be 'total' or 'additive', got '" +
                             objective + "'");
  }
  spec.residual = parse_term("idv(units)");
  spec.residual.params = {sigma2};
  validate_marginality(spec);
  return spec;
}

// Genotype-to-site concurrence model, mirroring the single-environment
// replication stage: the genotype main effects are the objective, carried as
// the common genetic factor with Var = d_a G_r + d_e I_m, plus site-specific
// deviations idv(env:genotype)[d_g] with d_g = psi_a + psi_e, fixed mean and
// site means, residual idv[sigma2]. Exchanges move genotype-site incidences
// within the given swap classes; relatedness makes concurrence with close
// relatives less informative, so the search spreads families across sites.
inline ModelSpec mese_stage2_site_allocation(const DesignFrame& frame,
                                             const CsGeneticModel& cs,
                                             double sigma2 = 1.0,
                                             const std::string& genotype = "name",
                                             const std::string& site = "Site",
                                             const std::string& env = "Env",
                                             const std::string& swap = "") {
  ModelSpec spec = mese_build_cs(frame, cs, "total", genotype, site, env, sigma2);
  spec.swap_factor = swap;
  return spec;
}

// ---------------------------------------------------------------------------
// efficiency study
// ---------------------------------------------------------------------------

struct EfficiencyArm {
  std::string label;  // AA, AI, IA, II
  double A_true = 0;
  double E = 0;
};

struct EfficiencyStudyResult {
  std::vector<EfficiencyArm> arms;
  double A_best = 0;
};

struct EfficiencyProblem {
  Stage2Problem stage2;
  RelationshipMatrix Gr;
  DesignFrame plots;                  // plot structure (no genotype column)
  std::string genotype = "name";
  std::vector<std::string> blocking;  // extra random terms for the plot model
  std::vector<double> blocking_params;
  double sigma2 = 1.0;                // plot-model residual variance
  std::vector<std::string> binary;    // binarity constraints for allocation
  SearchOptions s2;
  SearchOptions s3;
};

// One seeded run of the 2x2 factorial. First letter: replication allocation
// informed by the genetic model (A) or random-valid (I). Second letter: plot
// allocation searched under the relatedness-aware model (A) or under
// independent genotype effects with the matched marginal variance (I). All
// four designs are scored under the relatedness-aware model; E = best/A.
inline EfficiencyStudyResult efficiency_study(const EfficiencyProblem& pb,
                                              std::uint64_t seed) {
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", pb.Gr);

  // stage-2 allocations
  Rng fill_rng(sub_seed(seed, 1));
  Stage2Design s2_informed = stage2_build(pb.stage2);
  {
    CriterionEngine eng(s2_informed.spec, s2_informed.frame, mats);
    SearchOptions o = pb.s2;
    o.seed = sub_seed(seed, 0);
    SearchReport rep = tabu_rw_search(eng, s2_informed.frame, o);
    s2_informed.frame = apply_permutation(s2_informed.frame, rep.best_row_at,
                                          {"name"});
  }
  Stage2Design s2_random = stage2_build(pb.stage2, true, &fill_rng);

  auto counts_informed = replication_counts(s2_informed.frame);
  auto counts_random = replication_counts(s2_random.frame);

  // matched marginal variance for the independent plot model
  RicVariance rv{pb.Gr.submatrix(pb.stage2.genotypes), pb.stage2.sigma_a2,
                 pb.stage2.sigma_e2};
  const double sigma_g2 = rv.collapsed_variance();

  // block columns used by the initial fill (from treat:block constraints)
  std::vector<std::string> fill_blocks;
  for (const auto& b : pb.binary) {
    auto pos = b.find(':');
    if (pos != std::string::npos) fill_blocks.push_back(b.substr(pos + 1));
  }

  auto plot_spec = [&](bool aware) {
    Stage3StepConfig cfg;
    if (aware) {
      cfg.random.push_back("ric(" + pb.genotype + ",G)");
      cfg.params = {pb.stage2.sigma_a2, pb.stage2.sigma_e2};
    } else {
      cfg.random.push_back("idv(" + pb.genotype + ")");
      cfg.params = {sigma_g2};
    }
    for (const auto& b : pb.blocking) cfg.random.push_back(b);
    cfg.params.insert(cfg.params.end(), pb.blocking_params.begin(),
                      pb.blocking_params.end());
    cfg.residual_params = {pb.sigma2};
    cfg.binary = pb.binary;
    cfg.search = pb.s3;
    return cfg;
  };

  EfficiencyStudyResult out;
  const std::set<std::string> no_pins;
  int armno = 0;
  for (const char s2c : {'A', 'I'}) {
    const auto& counts = s2c == 'A' ? counts_informed : counts_random;
    DesignFrame alloc = stage3_initial_allocation(
        pb.plots, pb.genotype, counts, no_pins, "", fill_blocks, nullptr);
    for (const char s3c : {'A', 'I'}) {
      Stage3StepConfig cfg = plot_spec(s3c == 'A');
      cfg.search.seed = sub_seed(seed, 2 + std::uint64_t(armno));
      Stage3Step step = stage3_step_build(alloc, pb.genotype, cfg, no_pins);
      CriterionEngine eng(step.spec, step.frame, mats);
      SearchReport rep = tabu_rw_search(eng, step.frame, cfg.search);
      DesignFrame final_frame =
          apply_permutation(step.frame, rep.best_row_at, {pb.genotype});

      // score under the relatedness-aware model
      Stage3StepConfig truecfg = plot_spec(true);
      Stage3Step truestep = stage3_step_build(final_frame, pb.genotype, truecfg,
                                              no_pins);
      CriterionEngine trueeng(truestep.spec, truestep.frame, mats);
      out.arms.push_back(
          {std::string(1, s2c) + s3c, trueeng.criterion(), 0.0});
      ++armno;
    }
  }
  out.A_best = out.arms[0].A_true;
  for (const auto& a : out.arms) out.A_best = std::min(out.A_best, a.A_true);
  for (auto& a : out.arms) a.E = out.A_best / a.A_true;
  return out;
}

}  // namespace odsel
