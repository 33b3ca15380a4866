#pragma once

// Model specification for design search: fixed/random terms over frame
// factors, a residual model, and the permute/objective/swap structure that
// defines which design-matrix rows the search may exchange.
//
// Term grammar:
//   mean | 1                 overall mean
//   A | A:B                  factor or interaction (fixed, or idv if random)
//   idv(A[:B])               independent effects, one variance
//   vm(f, M)                 sigma^2 * M over the last factor of f
//   ric(f, M)                sigma_a^2 * M + sigma_e^2 * I over the last factor
//   cs(E:g, M)               compound-symmetry genetic pair, lowered at parse
//                            time to ric(g, M) + idv(E:g)
//   idv(units) / dsum(units | g)   residual models
// In vm/ric interaction terms the matrix attaches to the last (fastest
// varying) factor; earlier factors contribute identity blocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "odsel/frame.hpp"
#include "odsel/toml.hpp"

namespace odsel {

enum class VarFn { fixed_term, idv, vm, ric, dsum, cs };

inline int varfn_arity(VarFn v) {
  switch (v) {
    case VarFn::fixed_term: return 0;
    case VarFn::idv: return 1;
    case VarFn::vm: return 1;
    case VarFn::ric: return 2;
    case VarFn::dsum: return -1;  // one per group level, bound later
    case VarFn::cs: return 4;
  }
  return 0;
}

struct Term {
  std::string text;                   // normalized source text
  std::vector<std::string> factors;   // empty = overall mean
  VarFn vfn = VarFn::fixed_term;
  std::string matrix_ref;             // vm/ric/cs
  std::string group;                  // dsum group factor
  bool random = false;
  std::vector<double> params;

  bool is_mean() const { return factors.empty(); }

  bool operator==(const Term& o) const {
    return text == o.text && factors == o.factors && vfn == o.vfn &&
           matrix_ref == o.matrix_ref && group == o.group &&
           random == o.random && params == o.params;
  }
};

struct BinaryConstraint {
  std::string treatment;  // treatment factor kept binary
  std::string block;      // block factor
  bool operator==(const BinaryConstraint& o) const {
    return treatment == o.treatment && block == o.block;
  }
};

struct SearchOptions {
  long maxit = 10;
  std::uint64_t seed = 1;
  int tabu_tenure = 20;
  int rw_steps = 5;
  long cap = 0;  // candidate pairs per sweep; 0 means 20*n
  int stall = 3;
  std::string mode = "tabu_rw";
  std::optional<double> stop_at;
  long refactor_every = 500;
  std::vector<BinaryConstraint> binary;
  std::string binary_exempt;  // selector "column=level" on treatment rows
  std::vector<std::string> objective_exclude;

  bool operator==(const SearchOptions& o) const {
    return maxit == o.maxit && seed == o.seed && tabu_tenure == o.tabu_tenure &&
           rw_steps == o.rw_steps && cap == o.cap && stall == o.stall &&
           mode == o.mode && stop_at == o.stop_at &&
           refactor_every == o.refactor_every && binary == o.binary &&
           binary_exempt == o.binary_exempt &&
           objective_exclude == o.objective_exclude;
  }
};

struct ModelSpec {
  std::vector<Term> terms;     // fixed and random model terms
  Term residual;
  std::vector<int> permute;    // indices into terms, objective first
  std::vector<int> objective;  // indices into terms, subset of permute
  std::string swap_factor;
  std::vector<std::string> reorder;
  bool omit_mean = false;
  SearchOptions search;

  bool operator==(const ModelSpec& o) const {
    return terms == o.terms && residual == o.residual && permute == o.permute &&
           objective == o.objective && swap_factor == o.swap_factor &&
           reorder == o.reorder && omit_mean == o.omit_mean &&
           search == o.search;
  }

  const Term& term(int i) const { return terms[std::size_t(i)]; }

  bool is_permute(int i) const {
    return std::find(permute.begin(), permute.end(), i) != permute.end();
  }
};

// ---------------------------------------------------------------------------
// term grammar
// ---------------------------------------------------------------------------

namespace detail {

inline std::string strip_spaces(const std::string& s) {
  std::string out;
  for (char c : s)
    if (c != ' ' && c != '\t') out += c;
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) { out.push_back(cur); cur.clear(); }
    else cur += c;
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline Term parse_term(const std::string& raw) {
  std::string s = detail::strip_spaces(raw);
  if (s.empty()) throw std::runtime_error("empty model term");
  Term t;

  auto parse_factors = [&](const std::string& f) {
    if (f.empty()) throw std::runtime_error("empty factor list in term: " + raw);
    auto parts = detail::split(f, ':');
    for (const auto& p : parts)
      if (p.empty())
        throw std::runtime_error("malformed interaction in term: " + raw);
    return parts;
  };

  std::size_t open = s.find('(');
  if (open == std::string::npos) {
    if (s == "mean" || s == "1") {
      t.text = "mean";
      return t;
    }
    t.factors = parse_factors(s);
    t.text = s;
    return t;
  }

  if (s.back() != ')')
    throw std::runtime_error("malformed variance function in term: " + raw);
  std::string fn = s.substr(0, open);
  std::string inner = s.substr(open + 1, s.size() - open - 2);

  if (fn == "idv") {
    t.vfn = VarFn::idv;
    t.factors = parse_factors(inner);
    t.text = "idv(" + inner + ")";
    return t;
  }
  if (fn == "dsum") {
    auto parts = detail::split(inner, '|');
    if (parts.size() != 2 || parts[0] != "units" || parts[1].empty())
      throw std::runtime_error("dsum term must be dsum(units | group): " + raw);
    t.vfn = VarFn::dsum;
    t.group = parts[1];
    t.text = "dsum(units|" + t.group + ")";
    return t;
  }
  if (fn == "vm" || fn == "ric" || fn == "cs") {
    auto parts = detail::split(inner, ',');
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty())
      throw std::runtime_error(fn + " term must be " + fn + "(factor, matrix): " + raw);
    t.vfn = fn == "vm" ? VarFn::vm : (fn == "ric" ? VarFn::ric : VarFn::cs);
    t.factors = parse_factors(parts[0]);
    t.matrix_ref = parts[1];
    if (t.vfn == VarFn::cs && t.factors.size() != 2)
      throw std::runtime_error("cs term needs an environment:genotype pair: " + raw);
    t.text = fn + "(" + parts[0] + "," + parts[1] + ")";
    return t;
  }
  throw std::runtime_error("unknown variance function '" + fn + "' in term: " + raw);
}

inline std::string term_text(const Term& t) { return t.text; }

// ---------------------------------------------------------------------------
// spec document parsing
// ---------------------------------------------------------------------------

namespace detail {

inline const TomlValue* find_key(const TomlDoc& doc, const std::string& sec,
                                 const std::string& key) {
  auto s = doc.find(sec);
  if (s == doc.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  return &k->second;
}

inline int find_term(const std::vector<Term>& terms, const std::string& raw) {
  std::string want = parse_term(raw).text;
  for (std::size_t i = 0; i < terms.size(); ++i)
    if (terms[i].text == want) return int(i);
  throw std::runtime_error("term '" + raw + "' is not a declared model term");
}

}  // namespace detail

// Bind flat parameter vectors to terms in declaration order. `dsum_groups`
// gives the residual group level count (required for dsum residuals).
inline void bind_params(ModelSpec& spec, const std::vector<double>& random_params,
                        const std::vector<double>& residual_params,
                        int dsum_groups = -1) {
  std::size_t k = 0;
  for (auto& t : spec.terms) {
    if (!t.random) continue;
    int a = varfn_arity(t.vfn);
    if (k + std::size_t(a) > random_params.size())
      throw std::runtime_error(
          "too few values in params.random: term '" + t.text + "' needs " +
          std::to_string(a) + " more");
    t.params.assign(random_params.begin() + long(k),
                    random_params.begin() + long(k) + a);
    k += std::size_t(a);
  }
  if (k != random_params.size())
    throw std::runtime_error("params.random has unused trailing values");

  int need = spec.residual.vfn == VarFn::dsum ? dsum_groups : 1;
  if (need < 0)
    throw std::runtime_error("dsum residual needs the group level count");
  if (int(residual_params.size()) != need)
    throw std::runtime_error("params.residual needs " + std::to_string(need) +
                             " value(s), got " +
                             std::to_string(residual_params.size()));
  spec.residual.params = residual_params;

  for (const auto& t : spec.terms)
    for (double p : t.params)
      if (!(p > 0.0))
        throw std::runtime_error("non-positive variance parameter in term '" +
                                 t.text + "'");
  for (double p : spec.residual.params)
    if (!(p > 0.0))
      throw std::runtime_error("non-positive residual variance parameter");
}

// Lower cs terms into their common-factor pair: ric(g, M) with (d_a, d_e) as
// the main term (inherits objective membership) and idv(E:g) with psi_a+psi_e
// as a linked permute term.
inline void lower_cs_terms(ModelSpec& spec) {
  for (int i = 0; i < int(spec.terms.size()); ++i) {
    Term t = spec.terms[std::size_t(i)];
    if (t.vfn != VarFn::cs) continue;
    if (t.params.size() != 4)
      throw std::runtime_error("cs term '" + t.text + "' needs 4 variance values");
    const double da = t.params[0], psia = t.params[1];
    const double de = t.params[2], psie = t.params[3];

    Term main;
    main.vfn = VarFn::ric;
    main.factors = {t.factors[1]};
    main.matrix_ref = t.matrix_ref;
    main.random = true;
    main.params = {da, de};
    main.text = "ric(" + t.factors[1] + "," + t.matrix_ref + ")";

    Term delta;
    delta.vfn = VarFn::idv;
    delta.factors = t.factors;
    delta.random = true;
    delta.params = {psia + psie};
    delta.text = "idv(" + t.factors[0] + ":" + t.factors[1] + ")";

    spec.terms[std::size_t(i)] = main;
    spec.terms.push_back(delta);
    const int delta_idx = int(spec.terms.size()) - 1;
    if (spec.is_permute(i)) spec.permute.push_back(delta_idx);
  }
}

inline ModelSpec parse_model_doc(const TomlDoc& doc);

inline ModelSpec parse_model_spec(const std::string& text) {
  return parse_model_doc(parse_toml(text));
}

inline ModelSpec parse_model_doc(const TomlDoc& doc) {
  ModelSpec spec;

  if (auto* v = detail::find_key(doc, "fixed", "omit_mean"))
    spec.omit_mean = v->as_bool();

  std::set<std::string> seen;
  auto add_term = [&](const std::string& raw, bool random) {
    Term t = parse_term(raw);
    t.random = random;
    if (t.is_mean() && random)
      throw std::runtime_error("the overall mean cannot be a random term");
    if (!seen.insert(t.text).second)
      throw std::runtime_error("duplicate model term: " + t.text);
    spec.terms.push_back(std::move(t));
  };

  bool have_mean = false;
  if (auto* v = detail::find_key(doc, "fixed", "terms")) {
    for (const auto& raw : v->as_strings()) {
      add_term(raw, false);
      if (spec.terms.back().is_mean()) have_mean = true;
    }
  }
  if (!have_mean && !spec.omit_mean) {
    Term mean;
    mean.text = "mean";
    spec.terms.insert(spec.terms.begin(), mean);
    seen.insert("mean");
  }
  if (have_mean && spec.omit_mean)
    throw std::runtime_error("omit_mean = true but 'mean' is listed in fixed terms");

  if (auto* v = detail::find_key(doc, "random", "terms"))
    for (const auto& raw : v->as_strings()) add_term(raw, true);

  if (auto* v = detail::find_key(doc, "residual", "term")) {
    spec.residual = parse_term(v->as_string());
    if (spec.residual.vfn == VarFn::idv) {
      if (spec.residual.factors != std::vector<std::string>{"units"})
        throw std::runtime_error("residual must be idv(units) or dsum(units | g)");
      spec.residual.factors.clear();
      spec.residual.text = "idv(units)";
    } else if (spec.residual.vfn != VarFn::dsum) {
      throw std::runtime_error("residual must be idv(units) or dsum(units | g)");
    }
  } else {
    spec.residual.vfn = VarFn::idv;
    spec.residual.text = "idv(units)";
  }
  spec.residual.random = true;

  if (auto* v = detail::find_key(doc, "permute", "terms"))
    for (const auto& raw : v->as_strings())
      spec.permute.push_back(detail::find_term(spec.terms, raw));
  if (auto* v = detail::find_key(doc, "permute", "objective")) {
    for (const auto& raw : v->as_strings()) {
      int idx = detail::find_term(spec.terms, raw);
      if (!spec.is_permute(idx))
        throw std::runtime_error("objective term '" + raw +
                                 "' is not in the permute set");
      spec.objective.push_back(idx);
    }
  } else {
    spec.objective = spec.permute;
  }
  if (auto* v = detail::find_key(doc, "permute", "swap"))
    spec.swap_factor = v->as_string();
  if (auto* v = detail::find_key(doc, "permute", "reorder"))
    spec.reorder = v->as_strings();
  if (auto* v = detail::find_key(doc, "permute", "objective_exclude"))
    spec.search.objective_exclude = v->as_strings();

  auto& so = spec.search;
  if (auto* v = detail::find_key(doc, "search", "maxit")) so.maxit = v->as_int();
  if (auto* v = detail::find_key(doc, "search", "seed"))
    so.seed = std::uint64_t(v->as_int());
  if (auto* v = detail::find_key(doc, "search", "tabu_tenure"))
    so.tabu_tenure = int(v->as_int());
  if (auto* v = detail::find_key(doc, "search", "rw_steps"))
    so.rw_steps = int(v->as_int());
  if (auto* v = detail::find_key(doc, "search", "cap")) so.cap = v->as_int();
  if (auto* v = detail::find_key(doc, "search", "stall")) so.stall = int(v->as_int());
  if (auto* v = detail::find_key(doc, "search", "mode")) {
    so.mode = v->as_string();
    if (so.mode != "tabu_rw")
      throw std::runtime_error("unknown search mode '" + so.mode + "'");
  }
  if (auto* v = detail::find_key(doc, "search", "stop_at"))
    so.stop_at = v->as_number();
  if (auto* v = detail::find_key(doc, "search", "refactor_every"))
    so.refactor_every = v->as_int();
  if (auto* v = detail::find_key(doc, "search", "binary")) {
    for (const auto& raw : v->as_strings()) {
      auto parts = detail::split(detail::strip_spaces(raw), ':');
      if (parts.size() != 2 || parts[0].empty() || parts[1].empty())
        throw std::runtime_error("binary constraint must be 'treat:block': " + raw);
      so.binary.push_back({parts[0], parts[1]});
    }
  }
  if (auto* v = detail::find_key(doc, "search", "binary_exempt"))
    so.binary_exempt = v->as_string();
  if (auto* v = detail::find_key(doc, "search", "objective_exclude"))
    so.objective_exclude = v->as_strings();

  std::vector<double> rp, ep;
  if (auto* v = detail::find_key(doc, "params", "random")) rp = v->as_numbers();
  if (auto* v = detail::find_key(doc, "params", "residual")) {
    if (v->is_array()) ep = v->as_numbers();
    else ep = {v->as_number()};
  }
  bool any_random = false;
  for (const auto& t : spec.terms) any_random |= t.random;
  if (any_random || !rp.empty() || !ep.empty()) {
    if (spec.residual.vfn == VarFn::dsum) {
      if (ep.empty())
        throw std::runtime_error(
            "dsum residual requires params.residual (one value per group level)");
      bind_params(spec, rp, ep, int(ep.size()));
    } else {
      if (ep.empty()) ep = {1.0};
      bind_params(spec, rp, ep);
    }
  }

  lower_cs_terms(spec);
  return spec;
}

inline ModelSpec parse_model_spec_file(const std::string& path) {
  return parse_model_doc(parse_toml_file(path));
}

// ---------------------------------------------------------------------------
// serialization (lowered form; parse(serialize(s)) == s)
// ---------------------------------------------------------------------------

inline std::string serialize_model_spec(const ModelSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  auto term_list = [&](bool random) {
    std::string out;
    for (const auto& t : spec.terms) {
      if (t.random != random) continue;
      if (!out.empty()) out += ", ";
      out += "\"" + t.text + "\"";
    }
    return out;
  };

  os << "[fixed]\n";
  os << "terms = [" << term_list(false) << "]\n";
  os << "omit_mean = " << (spec.omit_mean ? "true" : "false") << "\n\n";

  os << "[random]\n";
  os << "terms = [" << term_list(true) << "]\n\n";

  os << "[residual]\n";
  os << "term = \"" << spec.residual.text << "\"\n\n";

  os << "[permute]\n";
  os << "terms = [";
  for (std::size_t i = 0; i < spec.permute.size(); ++i)
    os << (i ? ", " : "") << "\"" << spec.term(spec.permute[i]).text << "\"";
  os << "]\n";
  os << "objective = [";
  for (std::size_t i = 0; i < spec.objective.size(); ++i)
    os << (i ? ", " : "") << "\"" << spec.term(spec.objective[i]).text << "\"";
  os << "]\n";
  if (!spec.swap_factor.empty()) os << "swap = \"" << spec.swap_factor << "\"\n";
  if (!spec.reorder.empty()) {
    os << "reorder = [";
    for (std::size_t i = 0; i < spec.reorder.size(); ++i)
      os << (i ? ", " : "") << "\"" << spec.reorder[i] << "\"";
    os << "]\n";
  }
  os << "\n[search]\n";
  const auto& so = spec.search;
  os << "maxit = " << so.maxit << "\n";
  os << "seed = " << so.seed << "\n";
  os << "tabu_tenure = " << so.tabu_tenure << "\n";
  os << "rw_steps = " << so.rw_steps << "\n";
  os << "cap = " << so.cap << "\n";
  os << "stall = " << so.stall << "\n";
  os << "mode = \"" << so.mode << "\"\n";
  if (so.stop_at) os << "stop_at = " << *so.stop_at << "\n";
  os << "refactor_every = " << so.refactor_every << "\n";
  if (!so.binary.empty()) {
    os << "binary = [";
    for (std::size_t i = 0; i < so.binary.size(); ++i)
      os << (i ? ", " : "") << "\"" << so.binary[i].treatment << ":"
         << so.binary[i].block << "\"";
    os << "]\n";
  }
  if (!so.binary_exempt.empty())
    os << "binary_exempt = \"" << so.binary_exempt << "\"\n";
  if (!so.objective_exclude.empty()) {
    os << "objective_exclude = [";
    for (std::size_t i = 0; i < so.objective_exclude.size(); ++i)
      os << (i ? ", " : "") << "\"" << so.objective_exclude[i] << "\"";
    os << "]\n";
  }

  os << "\n[params]\n";
  std::vector<double> rp;
  for (const auto& t : spec.terms)
    if (t.random) rp.insert(rp.end(), t.params.begin(), t.params.end());
  os << "random = [";
  for (std::size_t i = 0; i < rp.size(); ++i) os << (i ? ", " : "") << rp[i];
  os << "]\n";
  os << "residual = [";
  for (std::size_t i = 0; i < spec.residual.params.size(); ++i)
    os << (i ? ", " : "") << spec.residual.params[i];
  os << "]\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// validation and expansion
// ---------------------------------------------------------------------------

// Marginality: the factors of the first permute term are the treatment-side
// factors — their level assignments move with the row permutation. A static
// term referencing one of them would be built once from the initial layout
// and silently go stale under swaps, so it is rejected. Factors of permuted
// interaction terms that are *not* treatment-side stay anchored to the plot
// and may freely appear in static terms (the overall mean is always exempt).
inline void validate_marginality(const ModelSpec& spec) {
  if (spec.permute.empty()) return;
  const Term& first = spec.term(spec.permute.front());
  const std::set<std::string> tf(first.factors.begin(), first.factors.end());
  for (int si = 0; si < int(spec.terms.size()); ++si) {
    if (spec.is_permute(si)) continue;
    const Term& s = spec.term(si);
    for (const auto& f : s.factors)
      if (tf.count(f))
        throw std::runtime_error(
            "marginality violation: static term '" + s.text +
            "' references the permuted treatment factor '" + f + "'");
  }
}

inline void validate_spec(const ModelSpec& spec, const DesignFrame& frame) {
  for (const auto& t : spec.terms)
    for (const auto& f : t.factors)
      if (!frame.has(f))
        throw std::runtime_error("term '" + t.text +
                                 "' references unknown factor '" + f + "'");
  if (spec.residual.vfn == VarFn::dsum && !frame.has(spec.residual.group))
    throw std::runtime_error("dsum group factor '" + spec.residual.group +
                             "' is not a frame column");
  if (!spec.swap_factor.empty() && !frame.has(spec.swap_factor))
    throw std::runtime_error("swap factor '" + spec.swap_factor +
                             "' is not a frame column");
  for (const auto& r : spec.reorder)
    if (!frame.has(r))
      throw std::runtime_error("reorder column '" + r +
                               "' is not a frame column");
  for (const auto& b : spec.search.binary) {
    if (!frame.has(b.treatment) || !frame.has(b.block))
      throw std::runtime_error("binary constraint '" + b.treatment + ":" +
                               b.block + "' references unknown columns");
  }
  validate_marginality(spec);
}

struct TermLayout {
  int term = -1;      // index into spec.terms
  int offset = 0;     // first column in the stacked design matrix
  int cols = 0;
  std::vector<int> cards;  // level counts per factor, first slowest
};

struct Layout {
  std::vector<TermLayout> items;  // permute terms first (objective leading)
  int total = 0;
  int permute_cols = 0;
  int objective_cols = 0;
};

// Column layout of [W1 W2]: objective permute terms, linked permute terms,
// then static terms. Column counts are products of frame level counts.
inline Layout expand_terms(const ModelSpec& spec, const DesignFrame& frame) {
  Layout lay;
  auto push = [&](int ti) {
    const Term& t = spec.term(ti);
    TermLayout tl;
    tl.term = ti;
    tl.offset = lay.total;
    tl.cols = 1;
    for (const auto& f : t.factors) {
      int card = int(frame.levels(f).size());
      tl.cards.push_back(card);
      tl.cols *= card;
    }
    lay.total += tl.cols;
    lay.items.push_back(std::move(tl));
  };

  std::vector<int> ordered;
  for (int i : spec.objective) ordered.push_back(i);
  for (int i : spec.permute)
    if (std::find(spec.objective.begin(), spec.objective.end(), i) ==
        spec.objective.end())
      ordered.push_back(i);
  for (int i : ordered) push(i);
  lay.permute_cols = lay.total;
  lay.objective_cols = 0;
  for (std::size_t k = 0; k < spec.objective.size(); ++k)
    lay.objective_cols += lay.items[k].cols;

  for (int i = 0; i < int(spec.terms.size()); ++i)
    if (!spec.is_permute(i)) push(i);
  return lay;
}

}  // namespace odsel
