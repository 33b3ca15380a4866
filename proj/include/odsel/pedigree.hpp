#pragma once

// Pedigree handling and numerator relationship matrix (NRM) algebra:
//  - tabular NRM recursion a_ij = 0.5*(a_{j,s(i)} + a_{j,d(i)}), a_ii = 1 + F_i
//  - inbreeding coefficients without forming A (gene-flow back-tracing)
//  - sparse NRM inverse from Mendelian sampling variances; nonzeros only among
//    individual/sire/dam index triples
// Unknown parents are coded -1; selfing (sire == dam) is supported.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "odsel/csv.hpp"

namespace odsel {

struct Pedigree {
  std::vector<std::string> id;
  std::vector<int> sire;  // index into id, or -1
  std::vector<int> dam;

  int size() const { return int(id.size()); }

  // Parents must precede offspring; reorder on construction if needed.
  static Pedigree from_records(std::vector<std::string> ids,
                               std::vector<std::string> sires,
                               std::vector<std::string> dams) {
    const int m = int(ids.size());
    std::map<std::string, int> pos;
    for (int i = 0; i < m; ++i) {
      if (!pos.emplace(ids[i], i).second)
        throw std::runtime_error("duplicate pedigree id: " + ids[i]);
    }
    auto parent_idx = [&](const std::string& p, int row) {
      if (p.empty() || p == "0" || p == "NA" || p == ".") return -1;
      auto it = pos.find(p);
      if (it == pos.end())
        throw std::runtime_error("pedigree row " + ids[std::size_t(row)] +
                                 " references unknown parent '" + p + "'");
      return it->second;
    };
    std::vector<int> s(m), d(m);
    for (int i = 0; i < m; ++i) {
      s[std::size_t(i)] = parent_idx(sires[std::size_t(i)], i);
      d[std::size_t(i)] = parent_idx(dams[std::size_t(i)], i);
    }

    // Kahn topological order (parents first); cycles are an error.
    std::vector<int> indeg(std::size_t(m), 0);
    std::vector<std::vector<int>> children;
    children.resize(std::size_t(m));
    for (int i = 0; i < m; ++i)
      for (int p : {s[std::size_t(i)], d[std::size_t(i)]})
        if (p >= 0) { children[std::size_t(p)].push_back(i); ++indeg[std::size_t(i)]; }
    // selfing contributes the same parent twice; count is still correct
    std::vector<int> order;
    order.reserve(std::size_t(m));
    std::vector<int> queue;
    for (int i = 0; i < m; ++i)
      if (indeg[std::size_t(i)] == 0) queue.push_back(i);
    std::size_t qh = 0;
    while (qh < queue.size()) {
      int u = queue[qh++];
      order.push_back(u);
      for (int c : children[std::size_t(u)])
        if (--indeg[std::size_t(c)] == 0) queue.push_back(c);
    }
    if (int(order.size()) != m)
      throw std::runtime_error("pedigree contains a cycle");

    std::vector<int> rank(std::size_t(m), 0);
    for (int k = 0; k < m; ++k) rank[std::size_t(order[std::size_t(k)])] = k;
    Pedigree ped;
    ped.id.resize(std::size_t(m));
    ped.sire.resize(std::size_t(m));
    ped.dam.resize(std::size_t(m));
    for (int i = 0; i < m; ++i) {
      int r = rank[std::size_t(i)];
      ped.id[std::size_t(r)] = ids[std::size_t(i)];
      ped.sire[std::size_t(r)] = s[std::size_t(i)] < 0 ? -1 : rank[std::size_t(s[std::size_t(i)])];
      ped.dam[std::size_t(r)] = d[std::size_t(i)] < 0 ? -1 : rank[std::size_t(d[std::size_t(i)])];
    }
    return ped;
  }

  // CSV columns: id, sire, dam (empty/0/NA = unknown parent).
  static Pedigree from_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    if (t.header.size() < 3)
      throw std::runtime_error("pedigree CSV needs columns id,sire,dam");
    std::vector<std::string> ids, sires, dams;
    for (auto& r : t.rows) {
      ids.push_back(r[0]);
      sires.push_back(r[1]);
      dams.push_back(r[2]);
    }
    return from_records(std::move(ids), std::move(sires), std::move(dams));
  }

  int index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (id[std::size_t(i)] == name) return i;
    throw std::runtime_error("pedigree has no individual '" + name + "'");
  }
};

// Dense NRM by the tabular method. Quadratic in the pedigree size.
inline Eigen::MatrixXd nrm_tabular(const Pedigree& ped) {
  const int m = ped.size();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    const int s = ped.sire[std::size_t(i)], d = ped.dam[std::size_t(i)];
    for (int j = 0; j < i; ++j) {
      double v = 0.0;
      if (s >= 0) v += 0.5 * A(j, s);
      if (d >= 0) v += 0.5 * A(j, d);
      A(i, j) = A(j, i) = v;
    }
    double f = (s >= 0 && d >= 0) ? 0.5 * A(s, d) : 0.0;
    A(i, i) = 1.0 + f;
  }
  return A;
}

// Inbreeding coefficients by back-tracing gene flow (per-individual ancestor
// accumulation); never forms A. a_ii = sum_k v_k^2 * w_k with w_k the
// Mendelian sampling variance of ancestor k.
inline std::vector<double> inbreeding(const Pedigree& ped) {
  const int m = ped.size();
  std::vector<double> F(std::size_t(m), 0.0);
  std::vector<double> msv(std::size_t(m), 0.0);  // Mendelian sampling variances
  std::vector<double> v(std::size_t(m), 0.0);
  std::vector<int> touched;

  for (int i = 0; i < m; ++i) {
    const int s = ped.sire[std::size_t(i)], d = ped.dam[std::size_t(i)];
    if (s >= 0 && d >= 0)
      msv[std::size_t(i)] = 0.5 - 0.25 * (F[std::size_t(s)] + F[std::size_t(d)]);
    else if (s >= 0 || d >= 0) {
      int p = s >= 0 ? s : d;
      msv[std::size_t(i)] = 0.75 - 0.25 * F[std::size_t(p)];
    } else
      msv[std::size_t(i)] = 1.0;

    touched.clear();
    v[std::size_t(i)] = 1.0;
    touched.push_back(i);
    double aii = 0.0;
    for (int k = i; k >= 0; --k) {
      if (v[std::size_t(k)] == 0.0) continue;
      const double vk = v[std::size_t(k)];
      aii += vk * vk * msv[std::size_t(k)];
      const int ks = ped.sire[std::size_t(k)], kd = ped.dam[std::size_t(k)];
      if (ks >= 0) {
        if (v[std::size_t(ks)] == 0.0) touched.push_back(ks);
        v[std::size_t(ks)] += 0.5 * vk;
      }
      if (kd >= 0) {
        if (v[std::size_t(kd)] == 0.0) touched.push_back(kd);
        v[std::size_t(kd)] += 0.5 * vk;
      }
    }
    F[std::size_t(i)] = aii - 1.0;
    for (int k : touched) v[std::size_t(k)] = 0.0;
  }
  return F;
}

// Sparse NRM inverse: A^-1 = sum_i (1/msv_i) * w_i w_i^T with
// w_i = e_i - 0.5 e_sire - 0.5 e_dam (terms coalesce under selfing).
inline Eigen::SparseMatrix<double> nrm_inverse_sparse(const Pedigree& ped) {
  const int m = ped.size();
  std::vector<double> F = inbreeding(ped);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(std::size_t(m) * 9);
  for (int i = 0; i < m; ++i) {
    const int s = ped.sire[std::size_t(i)], d = ped.dam[std::size_t(i)];
    double msv;
    if (s >= 0 && d >= 0)
      msv = 0.5 - 0.25 * (F[std::size_t(s)] + F[std::size_t(d)]);
    else if (s >= 0 || d >= 0)
      msv = 0.75 - 0.25 * F[std::size_t(s >= 0 ? s : d)];
    else
      msv = 1.0;
    if (msv <= 0.0)
      throw std::runtime_error(
          "pedigree implies non-positive Mendelian sampling variance at " +
          ped.id[std::size_t(i)]);
    const double w = 1.0 / msv;

    // pairs (index, coefficient) of w_i, with selfing coalesced
    int idx[3];
    double cf[3];
    int k = 0;
    idx[0] = i; cf[0] = 1.0; k = 1;
    if (s >= 0 && s == d) { idx[k] = s; cf[k] = -1.0; ++k; }
    else {
      if (s >= 0) { idx[k] = s; cf[k] = -0.5; ++k; }
      if (d >= 0) { idx[k] = d; cf[k] = -0.5; ++k; }
    }
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        trip.emplace_back(idx[a], idx[b], w * cf[a] * cf[b]);
  }
  Eigen::SparseMatrix<double> Ainv(m, m);
  Ainv.setFromTriplets(trip.begin(), trip.end());
  return Ainv;
}

}  // namespace odsel
