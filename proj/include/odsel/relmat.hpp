#pragma once

// Relationship matrices for genetic effects: pedigree NRMs (with labels and a
// sparse inverse) and externally supplied GRMs. Provides label-matched
// submatrices, positive-definiteness repair by diagonal jitter, and the
// related-with-independent-conditional (ric) variance helper
//   Var(u_g) = sigma_a^2 * G_r + sigma_e^2 * I.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "odsel/pedigree.hpp"

namespace odsel {

struct RelationshipMatrix {
  std::string source;                 // "pedigree", "grm", "identity"
  std::vector<std::string> labels;    // level labels, may be empty for raw GRMs
  Eigen::MatrixXd G;                  // dense relationship matrix
  Eigen::SparseMatrix<double> Ginv_sparse;  // only for pedigree NRMs
  bool has_sparse_inverse = false;
  double jitter = 0.0;                // diagonal shift applied during ingest

  int dim() const { return int(G.rows()); }

  static RelationshipMatrix from_pedigree(const Pedigree& ped) {
    RelationshipMatrix r;
    r.source = "pedigree";
    r.labels = ped.id;
    r.G = nrm_tabular(ped);
    r.Ginv_sparse = nrm_inverse_sparse(ped);
    r.has_sparse_inverse = true;
    return r;
  }

  static RelationshipMatrix identity(int m) {
    RelationshipMatrix r;
    r.source = "identity";
    r.G = Eigen::MatrixXd::Identity(m, m);
    return r;
  }

  // Submatrix over the given labels (label-matched when labels are present,
  // otherwise positional: label k -> row k is required to already hold).
  Eigen::MatrixXd submatrix(const std::vector<std::string>& want) const {
    const int k = int(want.size());
    if (labels.empty()) {
      if (k != dim())
        throw std::runtime_error(
            "relationship matrix has no labels and its dimension (" +
            std::to_string(dim()) + ") differs from the factor level count (" +
            std::to_string(k) + ")");
      return G;
    }
    std::map<std::string, int> pos;
    for (std::size_t i = 0; i < labels.size(); ++i) pos[labels[i]] = int(i);
    std::vector<int> idx;
    idx.reserve(std::size_t(k));
    for (const auto& w : want) {
      auto it = pos.find(w);
      if (it == pos.end())
        throw std::runtime_error("relationship matrix has no entry for level '" +
                                 w + "'");
      idx.push_back(it->second);
    }
    Eigen::MatrixXd S(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) S(i, j) = G(idx[std::size_t(i)], idx[std::size_t(j)]);
    return S;
  }

  bool covers(const std::vector<std::string>& want) const {
    if (labels.empty()) return int(want.size()) == dim();
    std::map<std::string, int> pos;
    for (std::size_t i = 0; i < labels.size(); ++i) pos[labels[i]] = int(i);
    for (const auto& w : want)
      if (!pos.count(w)) return false;
    return true;
  }

  // True when `want` is exactly the full label set in matrix order.
  bool matches_exactly(const std::vector<std::string>& want) const {
    if (labels.empty() || int(want.size()) != dim()) return false;
    for (int i = 0; i < dim(); ++i)
      if (labels[std::size_t(i)] != want[std::size_t(i)]) return false;
    return true;
  }
};

namespace detail {

inline bool is_number_token(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace detail

// Reads a GRM from either a symmetric dense CSV (optional header row with
// labels) or coordinate-format text with lines "i j value" (1-based).
// Symmetry is validated; if not positive definite, one diagonal jitter is
// applied and recorded.
inline RelationshipMatrix ingest_grm(const std::string& path,
                                     double sym_tol = 1e-10,
                                     double jitter = 1e-8) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open GRM file: " + path);
  std::string first;
  std::getline(in, first);
  in.close();

  RelationshipMatrix r;
  r.source = "grm";

  bool coordinate = first.find(',') == std::string::npos;
  if (coordinate) {
    std::ifstream body(path);
    int maxidx = 0;
    std::vector<std::tuple<int, int, double>> entries;
    std::string line;
    while (std::getline(body, line)) {
      std::istringstream ls(line);
      int i, j;
      double v;
      if (!(ls >> i >> j >> v)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        throw std::runtime_error("bad GRM coordinate line: " + line);
      }
      if (i < 1 || j < 1)
        throw std::runtime_error("GRM coordinate indices are 1-based");
      entries.emplace_back(i - 1, j - 1, v);
      maxidx = std::max(maxidx, std::max(i, j));
    }
    r.G = Eigen::MatrixXd::Zero(maxidx, maxidx);
    for (auto& [i, j, v] : entries) {
      r.G(i, j) = v;
      r.G(j, i) = v;
    }
  } else {
    CsvTable t = read_csv(path);
    bool labeled = false;
    for (const auto& h : t.header)
      if (!detail::is_number_token(h)) labeled = true;
    const int m = int(t.header.size());
    if (labeled) {
      r.labels = t.header;
      if (int(t.rows.size()) != m)
        throw std::runtime_error("GRM CSV is not square");
    } else if (int(t.rows.size()) + 1 != m) {
      throw std::runtime_error("GRM CSV is not square");
    }
    r.G.setZero(m, m);
    int row0 = 0;
    if (!labeled) {
      for (int j = 0; j < m; ++j) r.G(0, j) = std::stod(t.header[std::size_t(j)]);
      row0 = 1;
    }
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (int(t.rows[i].size()) != m)
        throw std::runtime_error("GRM CSV is not square");
      for (int j = 0; j < m; ++j)
        r.G(int(i) + row0, j) = std::stod(t.rows[i][std::size_t(j)]);
    }
  }

  double asym = (r.G - r.G.transpose()).cwiseAbs().maxCoeff();
  if (asym > sym_tol)
    throw std::runtime_error("GRM is not symmetric (max asymmetry " +
                             std::to_string(asym) + ")");
  r.G = 0.5 * (r.G + r.G.transpose());

  Eigen::LLT<Eigen::MatrixXd> llt(r.G);
  if (llt.info() != Eigen::Success) {
    r.G.diagonal().array() += jitter;
    r.jitter = jitter;
    Eigen::LLT<Eigen::MatrixXd> llt2(r.G);
    if (llt2.info() != Eigen::Success)
      throw std::runtime_error(
          "GRM is not positive definite even after diagonal jitter");
  }
  return r;
}

// Var(u_g) = sigma_a^2 * G_r + sigma_e^2 * I_m over a fixed level set.
struct RicVariance {
  Eigen::MatrixXd Gr;
  double sigma_a2 = 0.0;
  double sigma_e2 = 0.0;

  int dim() const { return int(Gr.rows()); }

  Eigen::MatrixXd variance() const {
    Eigen::MatrixXd V = sigma_a2 * Gr;
    V.diagonal().array() += sigma_e2;
    return V;
  }

  Eigen::MatrixXd inverse() const {
    Eigen::MatrixXd V = variance();
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("ric variance matrix is not positive definite");
    return llt.solve(Eigen::MatrixXd::Identity(dim(), dim()));
  }

  double mean_diag() const { return Gr.trace() / double(dim()); }

  // Identity-relatedness collapse: sigma_g^2 = abar*sigma_a^2 + sigma_e^2.
  double collapsed_variance() const {
    return mean_diag() * sigma_a2 + sigma_e2;
  }
};

}  // namespace odsel
