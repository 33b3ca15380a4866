#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "odsel/checker.hpp"
#include "odsel/pedigree.hpp"
#include "odsel/search.hpp"
#include "odsel/stages.hpp"
#include "oracle.hpp"

using odsel::CriterionEngine;
using odsel::CsGeneticModel;
using odsel::CsvTable;
using odsel::DesignFrame;
using odsel::ModelSpec;
using odsel::RelationshipMatrix;
using odsel::Stage2Problem;

namespace {

RelationshipMatrix sib_pairs(const std::vector<std::string>& labels) {
  const int m = int(labels.size());
  RelationshipMatrix rm;
  rm.source = "grm";
  rm.labels = labels;
  rm.G = Eigen::MatrixXd::Identity(m, m);
  for (int p = 0; p + 1 < m; p += 2) {
    rm.G(p, p + 1) = 0.5;
    rm.G(p + 1, p) = 0.5;
  }
  return rm;
}

std::vector<std::string> gnames(int m, const std::string& prefix = "g") {
  std::vector<std::string> out;
  for (int i = 0; i < m; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

// Two full-sib families {g1,g2,g3} and {g4,g5,g6}.
RelationshipMatrix two_families() {
  RelationshipMatrix rm;
  rm.source = "grm";
  rm.labels = gnames(6);
  rm.G = Eigen::MatrixXd::Identity(6, 6);
  for (int f = 0; f < 2; ++f)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) rm.G(3 * f + a, 3 * f + b) = 0.5;
  return rm;
}

// Multi-environment frame: each genotype once per site plus optional extra
// (site, genotype) plots; Env is an aliased copy of Site.
DesignFrame mese_frame(int m, int t,
                       const std::vector<std::pair<int, int>>& extra = {}) {
  CsvTable tab;
  tab.header = {"name", "Site", "Env"};
  auto row = [&](int s, int g) {
    tab.rows.push_back({"g" + std::to_string(g + 1), "s" + std::to_string(s + 1),
                        "e" + std::to_string(s + 1)});
  };
  for (int s = 0; s < t; ++s)
    for (int g = 0; g < m; ++g) row(s, g);
  for (const auto& [s, g] : extra) row(s, g);
  return DesignFrame(tab);
}

double direct_cs_A(const DesignFrame& frame, const CsGeneticModel& cs,
                   const Eigen::MatrixXd& Gr, bool additive,
                   bool simplified_marginal, double sigma2) {
  return oracle::direct_cs_A(frame, cs.d_a, cs.psi_a, cs.d_e, cs.psi_e, Gr,
                             additive, simplified_marginal, sigma2);
}

}  // namespace

TEST_CASE("replication classes carry collapsed per-class residual variances") {
  Stage2Problem pb;
  pb.genotypes = gnames(10);
  pb.scheme.reps = {1, 2, 6};
  pb.scheme.capacity = {5, 3, 2};
  pb.sigma_a2 = 0.434;
  pb.sigma_e2 = 0.2;
  pb.sigma2 = 1.0;
  auto d = odsel::stage2_build(pb);

  REQUIRE(d.spec.residual.vfn == odsel::VarFn::dsum);
  REQUIRE(d.spec.residual.params.size() == 3);
  REQUIRE(d.spec.residual.params[0] == Catch::Approx(1.2).margin(1e-12));
  REQUIRE(d.spec.residual.params[1] == Catch::Approx(0.7).margin(1e-12));
  REQUIRE(d.spec.residual.params[2] == Catch::Approx(0.2 + 1.0 / 6.0).margin(1e-12));
  REQUIRE(d.spec.residual.params[2] == Catch::Approx(0.3667).margin(5e-5));

  // class-sorted frame with one row per genotype
  REQUIRE(d.frame.n() == 10);
  const auto& rc = d.frame.col("repclass");
  REQUIRE(std::is_sorted(rc.begin(), rc.end()));
  REQUIRE(int(std::count(rc.begin(), rc.end(), "c1")) == 5);
  REQUIRE(int(std::count(rc.begin(), rc.end(), "c2")) == 3);
  REQUIRE(int(std::count(rc.begin(), rc.end(), "c3")) == 2);
  REQUIRE(d.spec.swap_factor == "swp");
  REQUIRE(pb.scheme.total_plots() == 23);

  auto counts = odsel::replication_counts(d.frame);
  REQUIRE(counts.size() == 10);
  int total = 0;
  for (const auto& [g, r] : counts) total += r;
  REQUIRE(total == 23);
}

TEST_CASE("stage-2 frames are class-sorted with eligibility swap classes") {
  Stage2Problem pb;
  pb.genotypes = gnames(4);
  pb.allowed = {{}, {}, {0}, {1}};
  pb.scheme.reps = {1, 2};
  pb.scheme.capacity = {2, 2};
  auto d = odsel::stage2_build(pb);

  REQUIRE(d.frame.col("name") == std::vector<std::string>{"g1", "g3", "g2", "g4"});
  REQUIRE(d.frame.col("repclass") ==
          std::vector<std::string>{"c1", "c1", "c2", "c2"});
  REQUIRE(d.frame.col("reps") == std::vector<std::string>{"1", "1", "2", "2"});
  REQUIRE(d.frame.col("swp") == std::vector<std::string>{"s0", "s1", "s0", "s2"});

  // genotypes with identical eligibility share a swap class in the engine
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", RelationshipMatrix::identity(4));
  CriterionEngine eng(d.spec, d.frame, mats);
  REQUIRE(eng.swap_class(0) == eng.swap_class(2));
  REQUIRE(eng.swap_class(0) != eng.swap_class(1));
  REQUIRE(eng.swap_class(1) != eng.swap_class(3));

  pb.scheme.capacity = {2, 1};
  REQUIRE_THROWS_WITH(odsel::stage2_build(pb),
                      Catch::Matchers::ContainsSubstring("capacities sum"));
  pb.scheme.capacity = {2, 2};
  pb.allowed = {{}, {}, {5}, {1}};
  REQUIRE_THROWS_WITH(odsel::stage2_build(pb),
                      Catch::Matchers::ContainsSubstring("out of range"));

  Stage2Problem tight;
  tight.genotypes = {"a", "b"};
  tight.allowed = {{0}, {0}};
  tight.scheme.reps = {1, 1};
  tight.scheme.capacity = {1, 1};
  REQUIRE_THROWS_WITH(odsel::stage2_build(tight),
                      Catch::Matchers::ContainsSubstring("infeasible"));

  pb.allowed.clear();
  pb.scheme.reps = {0, 2};
  REQUIRE_THROWS_WITH(odsel::stage2_build(pb),
                      Catch::Matchers::ContainsSubstring("nonpositive"));
  pb.scheme.reps = {1, 2};
  pb.sigma_a2 = 0.0;
  REQUIRE_THROWS_WITH(odsel::stage2_build(pb),
                      Catch::Matchers::ContainsSubstring("positive"));
}

TEST_CASE("replication counts reject duplicate genotypes") {
  CsvTable t;
  t.header = {"name", "repclass", "reps", "swp"};
  t.rows = {{"g1", "c1", "1", "s0"}, {"g1", "c1", "1", "s0"}};
  DesignFrame frame(t);
  REQUIRE_THROWS_WITH(odsel::replication_counts(frame),
                      Catch::Matchers::ContainsSubstring("duplicate"));
}

TEST_CASE("identity relatedness makes stage-2 exchanges immaterial") {
  Stage2Problem pb;
  pb.genotypes = gnames(6);
  pb.scheme.reps = {1, 2};
  pb.scheme.capacity = {3, 3};
  pb.sigma_e2 = 0.2;
  auto d = odsel::stage2_build(pb);

  CriterionEngine::MatrixMap mats;
  mats.emplace("G", RelationshipMatrix::identity(6));
  CriterionEngine eng(d.spec, d.frame, mats);
  const double a0 = eng.criterion();

  odsel::Rng rng(42);
  std::vector<int> perm(6);
  for (int k = 0; k < 20; ++k) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    eng.set_perm(perm);
    REQUIRE(eng.criterion() == Catch::Approx(a0).epsilon(1e-11));
  }
}

TEST_CASE("stage-2 search matches the exhaustive assignment optimum") {
  // parent-offspring pedigree relating the six genotypes
  auto ped = odsel::Pedigree::from_records(
      {"g1", "g2", "g3", "g4", "g5", "g6"}, {"", "", "g1", "g1", "g1", "g2"},
      {"", "", "g2", "g2", "g3", "g3"});
  RelationshipMatrix rm;
  rm.source = "pedigree";
  rm.labels = ped.id;
  rm.G = odsel::nrm_tabular(ped);

  Stage2Problem pb;
  pb.genotypes = gnames(6);
  pb.scheme.reps = {1, 2};
  pb.scheme.capacity = {3, 3};
  pb.sigma_e2 = 0.2;
  auto d = odsel::stage2_build(pb);
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", rm);

  // dense-oracle enumeration over every row permutation; the distinct values
  // collapse onto the C(6,3) = 20 class assignments
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  double a_opt = std::numeric_limits<double>::infinity();
  std::set<long long> distinct;
  do {
    DesignFrame f = odsel::apply_permutation(d.frame, perm, {"name"});
    const double a = oracle::acriterion(d.spec, f, mats);
    a_opt = std::min(a_opt, a);
    distinct.insert(std::llround(a * 1e9));
  } while (std::next_permutation(perm.begin(), perm.end()));
  REQUIRE(distinct.size() <= 20);
  REQUIRE(distinct.size() > 1);

  CriterionEngine eng(d.spec, d.frame, mats);
  odsel::SearchOptions opt = d.spec.search;
  opt.maxit = 50;
  opt.tabu_tenure = 7;
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::iota(perm.begin(), perm.end(), 0);
    eng.set_perm(perm);
    opt.seed = seed;
    auto rep = odsel::tabu_rw_search(eng, d.frame, opt);
    if (rep.A_best <= a_opt + 1e-8) ++hits;
  }
  INFO("optimum hits: " << hits << "/10");
  REQUIRE(hits >= 9);
}

TEST_CASE("stage-3 initial allocation honours counts, pins, and binarity") {
  CsvTable t;
  t.header = {"blk"};
  for (int b = 0; b < 4; ++b)
    for (int k = 0; k < 4; ++k) t.rows.push_back({"b" + std::to_string(b + 1)});
  DesignFrame plots(t);

  SECTION("binary blocks bound per-genotype block occupancy") {
    std::vector<std::pair<std::string, int>> counts = {
        {"g1", 4}, {"g2", 4}, {"g3", 4}, {"g4", 4}};
    odsel::Rng rng(9);
    DesignFrame out = odsel::stage3_initial_allocation(plots, "name", counts, {},
                                                       "", {"blk"}, &rng);
    odsel::CheckReport chk;
    odsel::check_replication(chk, out, "name", counts);
    odsel::check_binarity(chk, out, "name", "blk");
    REQUIRE(chk.ok());
  }

  SECTION("pinned genotypes resolve once per pin-block level") {
    std::vector<std::pair<std::string, int>> counts = {
        {"chk", 4}, {"g1", 4}, {"g2", 4}, {"g3", 4}};
    DesignFrame out = odsel::stage3_initial_allocation(
        plots, "name", counts, {"chk"}, "blk", {"blk"}, nullptr);
    odsel::CheckReport chk;
    odsel::check_resolution(chk, out, "name", "blk", {"chk"});
    odsel::check_binarity(chk, out, "name", "blk");
    odsel::check_replication(chk, out, "name", counts);
    REQUIRE(chk.ok());
  }

  SECTION("unsatisfiable replication is rejected") {
    std::vector<std::pair<std::string, int>> counts = {
        {"g1", 5}, {"g2", 4}, {"g3", 4}, {"g4", 3}};
    REQUIRE_THROWS_WITH(odsel::stage3_initial_allocation(plots, "name", counts,
                                                         {}, "", {"blk"}, nullptr),
                        Catch::Matchers::ContainsSubstring("no feasible"));
    std::vector<std::pair<std::string, int>> bad = {{"g1", 3}};
    REQUIRE_THROWS_WITH(odsel::stage3_initial_allocation(plots, "name", bad, {},
                                                         "", {}, nullptr),
                        Catch::Matchers::ContainsSubstring("sum to"));
  }
}

TEST_CASE("swap-class columns mark pinned and free plots") {
  CsvTable t;
  t.header = {"name", "blk", "sec"};
  t.rows = {{"chk", "b1", "x"}, {"g1", "b1", "x"}, {"chk", "b2", "y"},
            {"g2", "b2", "y"}};
  DesignFrame frame(t);

  odsel::add_swap_column(frame, "swp", "name", {"chk"}, "blk", "");
  REQUIRE(frame.col("swp") ==
          std::vector<std::string>{"pb1", "f*", "pb2", "f*"});
  odsel::add_swap_column(frame, "swp", "name", {"chk"}, "", "sec");
  REQUIRE(frame.col("swp") ==
          std::vector<std::string>{"p*", "fx", "p*", "fy"});
  odsel::add_swap_column(frame, "swp", "name", {}, "", "");
  REQUIRE(frame.col("swp") ==
          std::vector<std::string>{"f*", "f*", "f*", "f*"});
}

TEST_CASE("stage-3 step models permute the genotype terms under pinned exemptions") {
  // 16 plots: four blocks of four, grouped in two column groups
  CsvTable t;
  t.header = {"blk", "colgrp"};
  for (int b = 0; b < 4; ++b)
    for (int k = 0; k < 4; ++k)
      t.rows.push_back({"b" + std::to_string(b + 1), b < 2 ? "c1" : "c2"});
  DesignFrame plots(t);

  std::vector<std::pair<std::string, int>> counts = {
      {"chk", 4}, {"g1", 2}, {"g2", 2}, {"g3", 2},
      {"g4", 2},  {"g5", 2}, {"g6", 2}};
  const std::set<std::string> pinned = {"chk"};
  odsel::Rng rng(3);
  DesignFrame alloc = odsel::stage3_initial_allocation(
      plots, "name", counts, pinned, "blk", {"colgrp"}, &rng);

  odsel::Stage3StepConfig cfg;
  cfg.random = {"ric(name,G)", "idv(colgrp)"};
  cfg.params = {0.8, 0.2, 0.4};
  cfg.binary = {"name:colgrp"};
  cfg.swap_pin_block = "blk";
  cfg.search.maxit = 15;
  cfg.search.seed = 11;
  auto step = odsel::stage3_step_build(alloc, "name", cfg, pinned);

  REQUIRE(step.spec.permute == std::vector<int>{1});
  REQUIRE(step.spec.objective == std::vector<int>{1});
  REQUIRE(step.spec.terms[1].vfn == odsel::VarFn::ric);
  REQUIRE(step.spec.terms[1].params == std::vector<double>{0.8, 0.2});
  REQUIRE(step.spec.terms[2].params == std::vector<double>{0.4});
  REQUIRE(step.spec.residual.params == std::vector<double>{1.0});
  REQUIRE(step.spec.swap_factor == "swp");
  REQUIRE(step.spec.search.binary.size() == 1);
  REQUIRE(step.spec.search.binary[0].treatment == "name");
  REQUIRE(step.spec.search.binary[0].block == "colgrp");
  REQUIRE(step.spec.search.binary_exempt == "pin=1");
  const auto& pin = step.frame.col("pin");
  const auto& name = step.frame.col("name");
  const auto& blk = step.frame.col("blk");
  const auto& swp = step.frame.col("swp");
  for (std::size_t u = 0; u < pin.size(); ++u) {
    REQUIRE(pin[u] == (name[u] == "chk" ? "1" : "0"));
    REQUIRE(swp[u] == (name[u] == "chk" ? "p" + blk[u] : "f*"));
  }

  // end-to-end: the searched design keeps every constraint
  RelationshipMatrix rm = sib_pairs({"g1", "g2", "g3", "g4", "g5", "g6", "chk"});
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", rm);
  CriterionEngine eng(step.spec, step.frame, mats);
  auto rep = odsel::tabu_rw_search(eng, step.frame, step.spec.search);
  REQUIRE(rep.A_best <= rep.A_initial + 1e-12);
  DesignFrame fin =
      odsel::apply_permutation(step.frame, rep.best_row_at, {"name", "pin"});
  odsel::CheckReport chk;
  odsel::check_replication(chk, fin, "name", counts);
  odsel::check_resolution(chk, fin, "name", "blk", {"chk"});
  odsel::check_binarity(chk, fin, "name", "colgrp", {"chk"});
  REQUIRE(chk.ok());

  // bare random factor names are promoted to independent effects
  odsel::Stage3StepConfig bare;
  bare.random = {"name"};
  bare.params = {1.0};
  auto st2 = odsel::stage3_step_build(alloc, "name", bare, {});
  REQUIRE(st2.spec.terms[1].vfn == odsel::VarFn::idv);

  odsel::Stage3StepConfig nogeno;
  nogeno.random = {"idv(colgrp)"};
  nogeno.params = {0.4};
  REQUIRE_THROWS_WITH(odsel::stage3_step_build(alloc, "name", nogeno, {}),
                      Catch::Matchers::ContainsSubstring("no random term"));
}

TEST_CASE("total-merit model matches the direct Kronecker oracle under identity relatedness") {
  CsGeneticModel cs{1.0, 1.0, 1.0, 1.0};
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", RelationshipMatrix::identity(4));
  const Eigen::MatrixXd Gr = Eigen::MatrixXd::Identity(4, 4);

  // the reference layout: two sites, four genotypes, four plots per site
  DesignFrame frame = mese_frame(4, 2);
  ModelSpec spec = odsel::mese_build_cs(frame, cs, "total");
  CriterionEngine eng(spec, frame, mats);
  REQUIRE(eng.criterion() ==
          Catch::Approx(direct_cs_A(frame, cs, Gr, false, false, 1.0))
              .epsilon(1e-8));

  // unbalanced p-rep layout with unequal components
  CsGeneticModel cs2{0.7, 0.4, 0.3, 0.2};
  DesignFrame frame2 = mese_frame(4, 2, {{0, 0}, {1, 2}});
  ModelSpec spec2 = odsel::mese_build_cs(frame2, cs2, "total", "name", "Site",
                                         "Env", 1.3);
  CriterionEngine eng2(spec2, frame2, mats);
  REQUIRE(eng2.criterion() ==
          Catch::Approx(direct_cs_A(frame2, cs2, Gr, false, false, 1.3))
              .epsilon(1e-8));
}

TEST_CASE("additive model matches the direct Kronecker oracle with arbitrary relatedness") {
  CsGeneticModel cs{0.7, 0.4, 0.3, 0.2};
  RelationshipMatrix rm = sib_pairs(gnames(4));
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", rm);

  for (int variant = 0; variant < 2; ++variant) {
    DesignFrame frame = variant == 0
                            ? mese_frame(4, 2)
                            : mese_frame(4, 3, {{0, 1}, {2, 3}, {1, 0}});
    const Eigen::MatrixXd Gr = rm.submatrix(frame.levels("name"));
    ModelSpec spec = odsel::mese_build_cs(frame, cs, "additive");
    CriterionEngine eng(spec, frame, mats);
    REQUIRE(eng.criterion() ==
            Catch::Approx(direct_cs_A(frame, cs, Gr, true, false, 1.0))
                .epsilon(1e-8));
  }
}

TEST_CASE("total-merit model is a lossless reparameterization of its site-by-genotype marginal") {
  CsGeneticModel cs{0.9, 0.35, 0.25, 0.15};
  RelationshipMatrix rm = sib_pairs(gnames(5));
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", rm);
  DesignFrame frame = mese_frame(5, 2, {{0, 4}, {1, 1}});
  const Eigen::MatrixXd Gr = rm.submatrix(frame.levels("name"));

  ModelSpec spec = odsel::mese_build_cs(frame, cs, "total");
  CriterionEngine eng(spec, frame, mats);
  REQUIRE(eng.criterion() ==
          Catch::Approx(direct_cs_A(frame, cs, Gr, false, true, 1.0))
              .epsilon(1e-8));
}

TEST_CASE("across-site covariance of the compound-symmetry model") {
  // d J_t + psi I_t with t=3, d=1, psi=0.5 has spectrum {3.5, 0.5, 0.5}
  Eigen::MatrixXd Gs =
      1.0 * Eigen::MatrixXd::Ones(3, 3) + 0.5 * Eigen::MatrixXd::Identity(3, 3);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gs);
  REQUIRE(es.eigenvalues()(0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(es.eigenvalues()(1) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(es.eigenvalues()(2) == Catch::Approx(3.5).margin(1e-12));
}

TEST_CASE("identity relatedness collapses the common factor to independent effects") {
  CsGeneticModel cs{0.6, 0.3, 0.4, 0.2};
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", RelationshipMatrix::identity(4));
  DesignFrame frame = mese_frame(4, 2, {{1, 3}});

  ModelSpec spec = odsel::mese_build_cs(frame, cs, "total");
  CriterionEngine eng(spec, frame, mats);

  // replace ric(name,G) with idv(name) at the summed variance d_a + d_e
  ModelSpec alt = spec;
  odsel::Term f = odsel::parse_term("idv(name)");
  f.random = true;
  f.params = {cs.d_a + cs.d_e};
  alt.terms[2] = f;
  CriterionEngine eng2(alt, frame, mats);
  REQUIRE(eng.criterion() == Catch::Approx(eng2.criterion()).epsilon(1e-10));
}

TEST_CASE("multi-environment model validation") {
  CsGeneticModel cs{1, 1, 1, 1};
  DesignFrame one_site = mese_frame(4, 1);
  REQUIRE_THROWS_WITH(odsel::mese_build_cs(one_site, cs, "total"),
                      Catch::Matchers::ContainsSubstring("two sites"));

  DesignFrame frame = mese_frame(4, 2);
  REQUIRE_THROWS_WITH(odsel::mese_build_cs(frame, cs, "everything"),
                      Catch::Matchers::ContainsSubstring("total"));

  CsGeneticModel bad{1, 1, 0, 1};
  REQUIRE_THROWS_WITH(odsel::mese_build_cs(frame, bad, "total"),
                      Catch::Matchers::ContainsSubstring("positive"));

  // Env must alias Site: break the copy on one row
  CsvTable t;
  t.header = {"name", "Site", "Env"};
  t.rows = {{"g1", "s1", "e1"}, {"g2", "s1", "e1"}, {"g1", "s2", "e2"},
            {"g2", "s2", "e1"}};
  DesignFrame broken(t);
  REQUIRE_THROWS_WITH(odsel::mese_build_cs(broken, cs, "total"),
                      Catch::Matchers::ContainsSubstring("aliased"));
}

TEST_CASE("site allocation spreads families across site pairs") {
  RelationshipMatrix rm = two_families();
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", rm);
  CsGeneticModel cs{1.0, 0.25, 0.3, 0.25};

  // each genotype tested at two of three sites; `assign` maps genotype ->
  // site-pair index over {s1s2, s1s3, s2s3}; every site hosts four plots
  const std::array<std::array<int, 2>, 3> pairs = {{{0, 1}, {0, 2}, {1, 2}}};
  auto build = [&](const std::array<int, 6>& assign) {
    CsvTable t;
    t.header = {"name", "Site", "Env"};
    for (int s = 0; s < 3; ++s)
      for (int g = 0; g < 6; ++g)
        for (int k : pairs[std::size_t(assign[std::size_t(g)])])
          if (k == s)
            t.rows.push_back({"g" + std::to_string(g + 1),
                              "s" + std::to_string(s + 1),
                              "e" + std::to_string(s + 1)});
    return DesignFrame(t);
  };
  auto sibs_sharing = [&](const std::array<int, 6>& assign) {
    int shared = 0;
    for (int f = 0; f < 2; ++f)
      for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b)
          if (assign[std::size_t(3 * f + a)] == assign[std::size_t(3 * f + b)])
            ++shared;
    return shared;
  };

  double spread_lo = 1e30, spread_hi = -1e30;
  double clus_lo = 1e30, clus_hi = -1e30;
  std::array<int, 6> assign = {0, 0, 1, 1, 2, 2};
  std::vector<int> work(assign.begin(), assign.end());
  std::sort(work.begin(), work.end());
  do {
    std::copy(work.begin(), work.end(), assign.begin());
    DesignFrame frame = build(assign);
    ModelSpec spec = odsel::mese_stage2_site_allocation(frame, cs);
    CriterionEngine eng(spec, frame, mats);
    const double a = eng.criterion();
    if (sibs_sharing(assign) == 0) {
      spread_lo = std::min(spread_lo, a);
      spread_hi = std::max(spread_hi, a);
    } else {
      clus_lo = std::min(clus_lo, a);
      clus_hi = std::max(clus_hi, a);
    }
  } while (std::next_permutation(work.begin(), work.end()));

  // label symmetry within each group, strict separation between them
  REQUIRE(spread_hi - spread_lo < 1e-9);
  REQUIRE(clus_hi - clus_lo < 1e-9);
  REQUIRE(spread_hi < clus_lo - 1e-4);

  // the constrained search reaches the spread optimum from a clustered start
  DesignFrame start = build({0, 0, 1, 1, 2, 2});
  ModelSpec spec = odsel::mese_stage2_site_allocation(start, cs);
  spec.search.binary.push_back({"name", "Site"});
  spec.search.maxit = 40;
  spec.search.seed = 2;
  CriterionEngine eng(spec, start, mats);
  auto rep = odsel::tabu_rw_search(eng, start, spec.search);
  REQUIRE(rep.A_best == Catch::Approx(spread_lo).epsilon(1e-8));
  DesignFrame fin = odsel::apply_permutation(start, rep.best_row_at, {"name"});
  odsel::CheckReport chk;
  odsel::check_binarity(chk, fin, "name", "Site");
  REQUIRE(chk.ok());
}

TEST_CASE("complete concurrence makes every site allocation equivalent") {
  RelationshipMatrix rm = two_families();
  CriterionEngine::MatrixMap mats;
  mats.emplace("G", rm);
  CsGeneticModel cs{1.0, 0.25, 0.3, 0.25};

  auto build = [&](const std::array<int, 6>& order) {
    CsvTable t;
    t.header = {"name", "Site", "Env"};
    for (int s = 0; s < 3; ++s)
      for (int g : order)
        t.rows.push_back({"g" + std::to_string(g + 1),
                          "s" + std::to_string(s + 1),
                          "e" + std::to_string(s + 1)});
    return DesignFrame(t);
  };
  DesignFrame f1 = build({0, 1, 2, 3, 4, 5});
  DesignFrame f2 = build({5, 4, 3, 2, 1, 0});
  DesignFrame f3 = build({2, 0, 4, 1, 5, 3});
  ModelSpec spec = odsel::mese_stage2_site_allocation(f1, cs);
  const double a1 = CriterionEngine(spec, f1, mats).criterion();
  const double a2 = CriterionEngine(spec, f2, mats).criterion();
  const double a3 = CriterionEngine(spec, f3, mats).criterion();
  REQUIRE(a1 == Catch::Approx(a2).epsilon(1e-10));
  REQUIRE(a1 == Catch::Approx(a3).epsilon(1e-10));
}

TEST_CASE("efficiency study labels arms and normalizes against the best") {
  odsel::EfficiencyProblem pb;
  pb.stage2.genotypes = gnames(8);
  pb.stage2.scheme.reps = {1, 2};
  pb.stage2.scheme.capacity = {4, 4};
  pb.stage2.sigma_a2 = 0.8;
  pb.stage2.sigma_e2 = 0.2;
  pb.Gr = sib_pairs(gnames(8));

  CsvTable t;
  t.header = {"blk"};
  for (int b = 0; b < 3; ++b)
    for (int k = 0; k < 4; ++k) t.rows.push_back({"b" + std::to_string(b + 1)});
  pb.plots = DesignFrame(t);
  pb.blocking = {"idv(blk)"};
  pb.blocking_params = {0.4};
  pb.binary = {"name:blk"};
  pb.s2.maxit = 10;
  pb.s3.maxit = 10;

  auto res = odsel::efficiency_study(pb, 5);
  REQUIRE(res.arms.size() == 4);
  REQUIRE(res.arms[0].label == "AA");
  REQUIRE(res.arms[1].label == "AI");
  REQUIRE(res.arms[2].label == "IA");
  REQUIRE(res.arms[3].label == "II");
  int at_one = 0;
  for (const auto& arm : res.arms) {
    REQUIRE(arm.A_true > 0);
    REQUIRE(arm.E > 0);
    REQUIRE(arm.E <= 1.0 + 1e-12);
    if (arm.E == 1.0) ++at_one;
    REQUIRE(res.A_best <= arm.A_true + 1e-12);
  }
  REQUIRE(at_one >= 1);

  // deterministic in the seed
  auto res2 = odsel::efficiency_study(pb, 5);
  for (int k = 0; k < 4; ++k)
    REQUIRE(res.arms[std::size_t(k)].A_true == res2.arms[std::size_t(k)].A_true);
}
