#pragma once

// Command-line front end. Four commands share one option surface:
//   design      build a design from a model doc (single model or the staged
//               [stage2]/[stage3.stepN] pipeline), write design CSV +
//               manifest + optional JSON-lines trace
//   evaluate    score an existing design under a model doc
//   efficiency  run the seeded 2x2 replication/plot-allocation factorial
//   simped      generate a synthetic pedigree
// Exit codes: 0 ok, 1 error, 2 bad usage, 3 constraint checker failed.

#include <chrono>
#include <cmath>
#include <fstream>
#include <type_traits>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "checker.hpp"
#include "csv.hpp"
#include "frame.hpp"
#include "manifest.hpp"
#include "mme.hpp"
#include "model.hpp"
#include "pedigree.hpp"
#include "relmat.hpp"
#include "rng.hpp"
#include "search.hpp"
#include "simulate.hpp"
#include "stages.hpp"
#include "toml.hpp"
#include "version.hpp"

namespace odsel {

struct CliArgs {
  std::string spec;
  std::string data;
  std::string pedigree;
  std::string grm;
  std::string out;
  std::string trace;
  std::uint64_t seed = 1;
  bool seed_given = false;
  long maxit = -1;  // <0: use the doc's value
  bool deterministic = false;
};

namespace cli_detail {

inline CriterionEngine::MatrixMap load_matrices(const CliArgs& a,
                                                const std::string& name) {
  CriterionEngine::MatrixMap mats;
  if (!a.pedigree.empty() && !a.grm.empty())
    throw std::runtime_error("--pedigree and --grm are mutually exclusive");
  if (!a.pedigree.empty())
    mats.emplace(name,
                 RelationshipMatrix::from_pedigree(Pedigree::from_csv(a.pedigree)));
  else if (!a.grm.empty())
    mats.emplace(name, ingest_grm(a.grm));
  return mats;
}

inline void hash_inputs(RunManifest& m, const CliArgs& a) {
  for (const std::string& p : {a.spec, a.data, a.pedigree, a.grm})
    if (!p.empty()) m.input_hash[p] = hash_file(p);
}

class TraceWriter {
public:
  explicit TraceWriter(const std::string& path) {
    if (path.empty()) return;
    out_.open(path);
    if (!out_) throw std::runtime_error("cannot write trace file: " + path);
  }

  std::function<void(const LoopTrace&)> callback(const std::string& phase) {
    if (!out_.is_open()) return {};
    return [this, phase](const LoopTrace& t) {
      nlohmann::ordered_json j;
      if (!phase.empty()) j["phase"] = phase;
      j["loop"] = t.loop;
      j["A"] = t.A_current;
      j["A_best"] = t.A_best;
      j["commits"] = t.commits;
      j["rw_moves"] = t.rw_moves;
      out_ << j.dump() << "\n";
    };
  }

private:
  std::ofstream out_;
};

// Columns rewritten by a permutation: the treat-side factors, the exemption
// marker column (a treatment attribute by convention), and any extras the doc
// lists under permute.reorder.
inline std::vector<std::string> permuted_columns(const ModelSpec& spec,
                                                 const CriterionEngine& eng,
                                                 const DesignFrame& frame) {
  std::vector<std::string> cols = eng.treatment_factors();
  auto push = [&](const std::string& c) {
    if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
  };
  if (!spec.search.binary_exempt.empty()) {
    auto eq = spec.search.binary_exempt.find('=');
    if (eq != std::string::npos) {
      std::string c = spec.search.binary_exempt.substr(0, eq);
      if (frame.has(c)) push(c);
    }
  }
  for (const auto& c : spec.reorder) {
    if (!frame.has(c))
      throw std::runtime_error("reorder column not in the data: " + c);
    push(c);
  }
  return cols;
}

inline void write_design(const std::string& path, const DesignFrame& frame,
                         double A, const std::string& manifest_path) {
  CsvTable t = frame.to_csv();
  std::ostringstream a;
  a.precision(12);
  a << "A = " << A;
  t.comments.push_back(a.str());
  t.comments.push_back("manifest: " + manifest_path);
  write_csv(path, t);
}

inline double wall_since(
    const std::chrono::steady_clock::time_point& t0, bool deterministic) {
  if (deterministic) return 0.0;
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

// ---------------------------------------------------------------------------
// design: single model doc
// ---------------------------------------------------------------------------

inline int design_single(const CliArgs& a, const TomlDoc& doc) {
  const auto t0 = std::chrono::steady_clock::now();
  DesignFrame frame = DesignFrame::from_csv(a.data);
  ModelSpec spec = parse_model_doc(doc);
  if (a.maxit >= 0) spec.search.maxit = a.maxit;
  if (a.seed_given) spec.search.seed = a.seed;

  std::string matname = "G";
  if (auto* v = detail::find_key(doc, "data", "matrix"))
    matname = v->as_string();
  auto mats = load_matrices(a, matname);

  CriterionEngine eng(spec, frame, mats);
  TraceWriter tracer(a.trace);
  SearchReport rep = tabu_rw_search(eng, frame, spec.search,
                                    tracer.callback(""));

  std::vector<std::string> cols = permuted_columns(spec, eng, frame);
  DesignFrame out = apply_permutation(frame, rep.best_row_at, cols);
  CheckReport chk = check_against_spec(spec, frame, out,
                                       eng.treatment_factors());

  std::cout.precision(10);
  std::cout << "n = " << eng.n() << ", A initial = " << rep.A_initial
            << ", A best = " << rep.A_best
            << ", evaluations = " << rep.evaluations
            << ", commits = " << rep.commits << ", loops = " << rep.loops_run
            << (rep.stopped_early ? " (stopped early)" : "") << "\n"
            << "checks: " << chk.summary() << "\n";

  if (!a.out.empty()) {
    const std::string mpath = a.out + ".manifest.json";
    write_design(a.out, out, rep.A_best, mpath);
    RunManifest m;
    m.command = "design";
    m.spec_path = a.spec;
    hash_inputs(m, a);
    m.seed = spec.search.seed;
    m.wall_ms = wall_since(t0, a.deterministic);
    m.final_A = rep.A_best;
    m.has_final_A = true;
    m.check_summary = chk.summary();
    m.extra["out"] = a.out;
    write_manifest(mpath, m);
  }
  return chk.ok() ? 0 : 3;
}

// ---------------------------------------------------------------------------
// design: staged pipeline doc
// ---------------------------------------------------------------------------

inline void read_search_keys(const TomlSection& sec, SearchOptions& so) {
  auto geti = [&](const char* k, auto& dst) {
    auto it = sec.find(k);
    if (it != sec.end())
      dst = static_cast<std::remove_reference_t<decltype(dst)>>(
          it->second.as_int());
  };
  geti("maxit", so.maxit);
  geti("tabu_tenure", so.tabu_tenure);
  geti("rw_steps", so.rw_steps);
  geti("cap", so.cap);
  geti("stall", so.stall);
  geti("refactor_every", so.refactor_every);
  if (auto it = sec.find("stop_at"); it != sec.end())
    so.stop_at = it->second.as_number();
}

struct PipelineDoc {
  std::string genotypes_path;
  std::string group_col = "group";
  Stage2Problem stage2;
  SearchOptions s2_search;
  Stage3Config s3;
  std::vector<Stage3StepConfig> steps;
};

inline PipelineDoc parse_pipeline_doc(const TomlDoc& doc, const CliArgs& a) {
  PipelineDoc p;
  auto key = [&](const std::string& sec, const char* k) {
    return detail::find_key(doc, sec, k);
  };

  if (auto* v = key("data", "genotypes")) p.genotypes_path = v->as_string();
  if (p.genotypes_path.empty())
    throw std::runtime_error("pipeline doc needs [data] genotypes = \"<csv>\"");
  if (auto* v = key("data", "group_col")) p.group_col = v->as_string();

  CsvTable gt = read_csv(p.genotypes_path);
  DesignFrame gframe(gt);
  const std::string namecol = gframe.names().front();
  p.stage2.genotypes = gframe.col(namecol);

  auto* reps = key("stage2", "reps");
  auto* cap = key("stage2", "capacity");
  if (!reps || !cap)
    throw std::runtime_error("[stage2] needs reps and capacity arrays");
  for (double r : reps->as_numbers()) p.stage2.scheme.reps.push_back(int(r));
  for (double c : cap->as_numbers()) p.stage2.scheme.capacity.push_back(int(c));
  if (auto* v = key("stage2", "sigma_a2")) p.stage2.sigma_a2 = v->as_number();
  if (auto* v = key("stage2", "sigma_e2")) p.stage2.sigma_e2 = v->as_number();
  if (auto* v = key("stage2", "sigma2")) p.stage2.sigma2 = v->as_number();
  if (auto it = doc.find("stage2"); it != doc.end())
    read_search_keys(it->second, p.s2_search);

  // allowed classes by group: [stage2.groups] maps group label -> 1-based ids
  if (auto git = doc.find("stage2.groups"); git != doc.end()) {
    if (!gframe.has(p.group_col))
      throw std::runtime_error("genotype table has no column '" + p.group_col +
                               "' for [stage2.groups]");
    const auto& grp = gframe.col(p.group_col);
    p.stage2.allowed.resize(p.stage2.genotypes.size());
    for (std::size_t g = 0; g < grp.size(); ++g) {
      auto it = git->second.find(grp[g]);
      if (it == git->second.end()) continue;  // any class
      for (double j : it->second.as_numbers())
        p.stage2.allowed[g].push_back(int(j) - 1);
    }
  }

  if (auto* v = key("stage3", "genotype")) p.s3.genotype = v->as_string();
  if (auto* v = key("stage3", "pin_reps")) p.s3.pin_reps = int(v->as_int());
  if (auto* v = key("stage3", "pin_block")) p.s3.pin_block = v->as_string();

  for (int k = 1;; ++k) {
    auto it = doc.find("stage3.step" + std::to_string(k));
    if (it == doc.end()) break;
    const TomlSection& sec = it->second;
    Stage3StepConfig cfg;
    if (auto f = sec.find("random"); f != sec.end())
      cfg.random = f->second.as_strings();
    if (auto f = sec.find("params"); f != sec.end())
      cfg.params = f->second.as_numbers();
    if (auto f = sec.find("residual"); f != sec.end())
      cfg.residual = f->second.as_string();
    if (auto f = sec.find("residual_params"); f != sec.end())
      cfg.residual_params = f->second.as_numbers();
    if (auto f = sec.find("swap_pin_block"); f != sec.end())
      cfg.swap_pin_block = f->second.as_string();
    if (auto f = sec.find("swap_free_block"); f != sec.end())
      cfg.swap_free_block = f->second.as_string();
    if (auto f = sec.find("binary"); f != sec.end())
      cfg.binary = f->second.as_strings();
    read_search_keys(sec, cfg.search);
    p.steps.push_back(std::move(cfg));
  }
  if (p.steps.empty())
    throw std::runtime_error("pipeline doc has no [stage3.step1] section");
  if (a.maxit >= 0) {
    p.s2_search.maxit = a.maxit;
    for (auto& s : p.steps) s.search.maxit = a.maxit;
  }
  return p;
}

inline int design_pipeline(const CliArgs& a, const TomlDoc& doc) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineDoc p = parse_pipeline_doc(doc, a);
  DesignFrame plots = DesignFrame::from_csv(a.data);
  std::string matname = "G";
  if (auto* v = detail::find_key(doc, "data", "matrix"))
    matname = v->as_string();
  auto mats = load_matrices(a, matname);
  TraceWriter tracer(a.trace);
  const std::uint64_t master = a.seed;

  // stage 2: replication allocation
  Stage2Design s2 = stage2_build(p.stage2);
  {
    CriterionEngine eng(s2.spec, s2.frame, mats);
    SearchOptions so = p.s2_search;
    so.seed = sub_seed(master, 0);
    SearchReport rep = tabu_rw_search(eng, s2.frame, so,
                                      tracer.callback("stage2"));
    s2.frame = apply_permutation(s2.frame, rep.best_row_at, {"name"});
    std::cout.precision(10);
    std::cout << "stage2: A = " << rep.A_best << " after " << rep.commits
              << " commits\n";
  }
  if (!a.out.empty()) s2.frame.write(a.out + ".stage2.csv");
  auto counts = replication_counts(s2.frame);

  std::set<std::string> pinned;
  if (p.s3.pin_reps > 0)
    for (const auto& [g, r] : counts)
      if (r == p.s3.pin_reps) pinned.insert(g);

  // union of binarity blocks keeps the greedy fill feasible for every step
  std::vector<std::string> fill_blocks;
  for (const auto& st : p.steps)
    for (const auto& b : st.binary) {
      auto pos = b.find(':');
      if (pos == std::string::npos)
        throw std::runtime_error("binary constraint must be treat:block: " + b);
      std::string blk = b.substr(pos + 1);
      if (std::find(fill_blocks.begin(), fill_blocks.end(), blk) ==
          fill_blocks.end())
        fill_blocks.push_back(blk);
    }

  Rng fill_rng(sub_seed(master, 1));
  DesignFrame current = stage3_initial_allocation(
      plots, p.s3.genotype, counts, pinned, p.s3.pin_block, fill_blocks,
      &fill_rng);

  CheckReport chk;
  for (std::size_t k = 0; k < p.steps.size(); ++k) {
    Stage3StepConfig cfg = p.steps[k];
    cfg.search.seed = sub_seed(master, 2 + k);
    const std::string phase = "step" + std::to_string(k + 1);
    Stage3Step step = stage3_step_build(current, p.s3.genotype, cfg, pinned);
    CriterionEngine eng(step.spec, step.frame, mats);
    SearchReport rep = tabu_rw_search(eng, step.frame, cfg.search,
                                      tracer.callback(phase));
    std::vector<std::string> cols = permuted_columns(step.spec, eng, step.frame);
    DesignFrame next = apply_permutation(step.frame, rep.best_row_at, cols);
    check_class_integrity(chk, step.frame, next, eng.treatment_factors(),
                          "swp");
    std::cout << phase << ": A = " << rep.A_best << " after " << rep.commits
              << " commits\n";
    if (!a.out.empty()) next.write(a.out + "." + phase + ".csv");
    current = std::move(next);
  }

  // independent verification of everything the pipeline promised
  check_replication(chk, current, p.s3.genotype, counts);
  if (!pinned.empty() && !p.s3.pin_block.empty())
    check_resolution(chk, current, p.s3.genotype, p.s3.pin_block, pinned);
  for (const auto& st : p.steps)
    for (const auto& b : st.binary) {
      auto pos = b.find(':');
      check_binarity(chk, current, b.substr(0, pos), b.substr(pos + 1),
                     pinned);
    }
  std::cout << "checks: " << chk.summary() << "\n";

  if (!a.out.empty()) {
    const std::string mpath = a.out + ".manifest.json";
    CsvTable t = current.to_csv();
    t.comments.push_back("manifest: " + mpath);
    write_csv(a.out, t);
    RunManifest m;
    m.command = "design";
    m.spec_path = a.spec;
    hash_inputs(m, a);
    m.input_hash[p.genotypes_path] = hash_file(p.genotypes_path);
    m.seed = master;
    m.wall_ms = wall_since(t0, a.deterministic);
    m.check_summary = chk.summary();
    m.extra["out"] = a.out;
    m.extra["pipeline"] = "stage2+" + std::to_string(p.steps.size()) + "steps";
    write_manifest(mpath, m);
  }
  return chk.ok() ? 0 : 3;
}

inline bool is_pipeline_doc(const TomlDoc& doc) {
  for (const auto& [name, sec] : doc)
    if (name == "stage2" || name.rfind("stage3", 0) == 0) return true;
  return false;
}

inline int cmd_design(const CliArgs& a) {
  TomlDoc doc = parse_toml_file(a.spec);
  if (a.data.empty()) throw std::runtime_error("design needs --data");
  return is_pipeline_doc(doc) ? design_pipeline(a, doc) : design_single(a, doc);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

inline int cmd_evaluate(const CliArgs& a) {
  TomlDoc doc = parse_toml_file(a.spec);
  if (a.data.empty()) throw std::runtime_error("evaluate needs --data");
  DesignFrame frame = DesignFrame::from_csv(a.data);
  ModelSpec spec = parse_model_doc(doc);
  std::string matname = "G";
  if (auto* v = detail::find_key(doc, "data", "matrix"))
    matname = v->as_string();
  auto mats = load_matrices(a, matname);
  CriterionEngine eng(spec, frame, mats);

  const int l = eng.n_objective();
  std::cout.precision(10);
  std::cout << "A = " << eng.criterion() << "\n"
            << "trace(Lambda) = " << eng.trace_lambda() << "\n"
            << "objective levels = " << l << "\n"
            << "mean pev = " << eng.trace_lambda() / double(l) << "\n";
  if (eng.augmented())
    std::cout << "note: singular coefficient matrix, criterion computed on "
                 "the estimable contrasts\n";

  // replication table over the treatment tuple
  const auto& tf = eng.treatment_factors();
  std::map<std::string, int> repcount;
  for (int u = 0; u < frame.n(); ++u) {
    std::string key;
    for (const auto& c : tf) {
      if (!key.empty()) key += ":";
      key += frame.col(c)[std::size_t(u)];
    }
    ++repcount[key];
  }
  std::map<int, int> histogram;  // replication -> #treatments
  for (const auto& [g, c] : repcount) ++histogram[c];
  std::cout << "replication profile:";
  for (const auto& [r, c] : histogram)
    std::cout << " " << c << "x" << r;
  std::cout << "\n";

  if (!a.out.empty()) {
    CsvTable t;
    t.header = {"treatment", "count"};
    for (const auto& [g, c] : repcount) t.rows.push_back({g, std::to_string(c)});
    std::ostringstream hd;
    hd.precision(12);
    hd << "A = " << eng.criterion() << ", trace = " << eng.trace_lambda();
    t.comments.push_back(hd.str());
    write_csv(a.out, t);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// efficiency
// ---------------------------------------------------------------------------

inline int cmd_efficiency(const CliArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  TomlDoc doc = parse_toml_file(a.spec);
  if (a.data.empty()) throw std::runtime_error("efficiency needs --data");
  PipelineDoc p;
  {
    // reuse the [data]/[stage2] conventions of the pipeline doc
    TomlDoc d2 = doc;
    if (d2.find("stage3.step1") == d2.end()) d2["stage3.step1"] = {};
    p = parse_pipeline_doc(d2, a);
  }

  EfficiencyProblem pb;
  pb.stage2 = p.stage2;
  pb.plots = DesignFrame::from_csv(a.data);
  std::string matname = "G";
  if (auto* v = detail::find_key(doc, "data", "matrix"))
    matname = v->as_string();
  auto mats = load_matrices(a, matname);
  if (mats.empty())
    throw std::runtime_error("efficiency needs --pedigree or --grm");
  pb.Gr = mats.begin()->second;

  int nseeds = 1;
  if (auto* v = detail::find_key(doc, "efficiency", "seeds"))
    nseeds = int(v->as_int());
  if (auto* v = detail::find_key(doc, "efficiency", "genotype"))
    pb.genotype = v->as_string();
  if (auto* v = detail::find_key(doc, "efficiency", "blocking"))
    pb.blocking = v->as_strings();
  if (auto* v = detail::find_key(doc, "efficiency", "blocking_params"))
    pb.blocking_params = v->as_numbers();
  if (auto* v = detail::find_key(doc, "efficiency", "sigma2"))
    pb.sigma2 = v->as_number();
  if (auto* v = detail::find_key(doc, "efficiency", "binary"))
    pb.binary = v->as_strings();
  pb.s2 = p.s2_search;
  if (auto it = doc.find("efficiency"); it != doc.end())
    read_search_keys(it->second, pb.s3);
  if (a.maxit >= 0) {
    pb.s2.maxit = a.maxit;
    pb.s3.maxit = a.maxit;
  }

  std::map<std::string, double> sumA, sumE;
  std::vector<std::string> order;
  CsvTable perseed;
  perseed.header = {"seed", "arm", "A", "E"};
  for (int i = 0; i < nseeds; ++i) {
    EfficiencyStudyResult r = efficiency_study(pb, sub_seed(a.seed, std::uint64_t(i)));
    for (const auto& arm : r.arms) {
      if (!sumA.count(arm.label)) order.push_back(arm.label);
      sumA[arm.label] += arm.A_true;
      sumE[arm.label] += arm.E;
      std::ostringstream av, ev;
      av.precision(12);
      ev.precision(12);
      av << arm.A_true;
      ev << arm.E;
      perseed.rows.push_back({std::to_string(i), arm.label, av.str(), ev.str()});
    }
    std::cerr << "seed " << i + 1 << "/" << nseeds << " done\n";
  }

  std::cout.precision(6);
  std::cout << "arm  mean_A        mean_E\n";
  for (const auto& lab : order)
    std::cout << lab << "   " << sumA[lab] / nseeds << "   "
              << sumE[lab] / nseeds << "\n";

  if (!a.out.empty()) {
    write_csv(a.out, perseed);
    RunManifest m;
    m.command = "efficiency";
    m.spec_path = a.spec;
    hash_inputs(m, a);
    m.seed = a.seed;
    m.wall_ms = wall_since(t0, a.deterministic);
    m.check_summary = "n/a";
    m.extra["out"] = a.out;
    write_manifest(a.out + ".manifest.json", m);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// simped
// ---------------------------------------------------------------------------

inline int cmd_simped(const SimPedigreeOptions& opt, const CliArgs& a) {
  if (a.out.empty()) throw std::runtime_error("simped needs --out");
  SimPedigree sp = simulate_pedigree(opt);
  CsvTable t;
  t.header = {"id", "sire", "dam", "generation", "family"};
  std::map<std::string, int> gen_of;
  for (std::size_t g = 0; g < sp.generation.size(); ++g)
    for (const auto& id : sp.generation[g]) gen_of[id] = int(g) + 1;
  for (int i = 0; i < sp.ped.size(); ++i) {
    const std::string& id = sp.ped.id[std::size_t(i)];
    auto fam = sp.family.find(id);
    t.rows.push_back(
        {id,
         sp.ped.sire[std::size_t(i)] < 0
             ? ""
             : sp.ped.id[std::size_t(sp.ped.sire[std::size_t(i)])],
         sp.ped.dam[std::size_t(i)] < 0
             ? ""
             : sp.ped.id[std::size_t(sp.ped.dam[std::size_t(i)])],
         std::to_string(gen_of[id]),
         fam == sp.family.end() ? "" : fam->second});
  }
  write_csv(a.out, t);
  std::cout << "wrote " << sp.ped.size() << " individuals ("
            << sp.generation.size() << " generations) to " << a.out << "\n";
  return 0;
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"model-based design of selection experiments"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CliArgs a;
  SimPedigreeOptions sim;

  auto add_common = [&](CLI::App* c, bool needs_spec) {
    auto* s = c->add_option("--spec", a.spec, "model/pipeline document (TOML)");
    if (needs_spec) s->required();
    c->add_option("--data", a.data, "input frame CSV");
    c->add_option("--pedigree", a.pedigree, "pedigree CSV (id,sire,dam)");
    c->add_option("--grm", a.grm, "relationship matrix (CSV or coordinate)");
    c->add_option("--seed", a.seed, "master seed")
        ->check(CLI::NonNegativeNumber);
    c->add_option("--maxit", a.maxit, "override search loop budget");
    c->add_option("--out", a.out, "output path (design/table CSV)");
    c->add_option("--trace", a.trace, "JSON-lines search trace path");
    c->add_flag("--deterministic", a.deterministic,
                "zero wall-clock in manifests for byte-identical reruns");
  };

  CLI::App* design = app.add_subcommand("design", "construct a design");
  add_common(design, true);
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a design");
  add_common(evaluate, true);
  CLI::App* efficiency =
      app.add_subcommand("efficiency", "replication/plot allocation factorial");
  add_common(efficiency, true);
  CLI::App* simped = app.add_subcommand("simped", "simulate a pedigree");
  add_common(simped, false);
  simped->add_option("--founders", sim.founders, "founder count");
  simped->add_option("--generations", sim.generations, "generation count");
  simped->add_option("--families", sim.families, "matings per generation");
  simped->add_option("--family-size", sim.family_size, "offspring per mating");
  simped->add_flag("--selfing", sim.selfing, "self instead of cross");

  std::vector<const char*> argv;
  argv.push_back("odsel");
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  a.seed_given = app.get_subcommands().front()->count("--seed") > 0;
  sim.seed = a.seed;

  try {
    CLI::App* cmd = app.get_subcommands().front();
    if (cmd == design) return cli_detail::cmd_design(a);
    if (cmd == evaluate) return cli_detail::cmd_evaluate(a);
    if (cmd == efficiency) return cli_detail::cmd_efficiency(a);
    if (cmd == simped) return cli_detail::cmd_simped(sim, a);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace odsel
