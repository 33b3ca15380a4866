#pragma once

// Mixed-model-equations workspace and A-criterion engine.
//
// The model y = W1*b1 + W2*b2 + e is split into permuted effects (W1, the
// objective block leading) and static effects (W2). The static block is
// absorbed once:
//   C11 = W1' P2 W1 + G1*,   P2 = Rinv - Rinv W2 F W2' Rinv,
//   F   = ginv(W2' Rinv W2 + G2*).
// The design criterion is the mean pairwise prediction-error variance of the
// objective effects,
//   A = (2/(l-1)) * (tr(L) - 1'L1/l),  L = objective block of inv(C11),
// evaluated and maintained under row exchanges of W1 by symmetric rank-<=4
// Woodbury updates of inv(C11). Exchanging units i and j replaces two rows,
// W1 <- W1 + e_i a' + e_j b', giving
//   C11_new = C11 + U S U',  U = [a b g_i g_j],  g_x = W1' P2 e_x,
//   S = [[P, I2], [I2, 0]],  P = [[p_ii, p_ij], [p_ij, p_jj]],  p_xy = e_x' P2 e_y,
// which collapses to the rank-2 form U = [a, g_i - g_j] when b = -a (all
// changed term columns share the unit-side part, e.g. single-site designs).
//
// Fixed permuted effects make C11 singular. When every kernel vector is
// block-constant over the fixed permute terms and constant over the objective
// columns (the connected-design case), C11 is augmented by a scaled kernel
// projector; the pairwise-contrast criterion is provably unchanged and the
// kernel is invariant under row exchanges, so the fast update path stays
// exact. Any other singularity means inestimable objective contrasts and
// raises an error.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "odsel/frame.hpp"
#include "odsel/model.hpp"
#include "odsel/relmat.hpp"

namespace odsel {

// A = (2/(l-1)) * (tr - sum/l); for l = 1 the single prediction-error
// variance itself.
inline double acriterion(double tr, double sum, int l) {
  if (l < 1) throw std::invalid_argument("acriterion: empty objective");
  if (l == 1) return tr;
  return 2.0 / double(l - 1) * (tr - sum / double(l));
}

inline double acriterion(const Eigen::MatrixXd& lambda) {
  return acriterion(lambda.trace(), lambda.sum(), int(lambda.rows()));
}

// Moore-Penrose pseudo-inverse of a symmetric matrix.
inline Eigen::MatrixXd pinv_psd(const Eigen::MatrixXd& S, double rel_tol = 1e-12) {
  if (S.rows() == 0) return S;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  const auto& ev = eig.eigenvalues();
  double tol = rel_tol * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd inv = ev;
  for (int i = 0; i < inv.size(); ++i)
    inv[i] = std::abs(ev[i]) > tol ? 1.0 / ev[i] : 0.0;
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

// Prediction-error variance matrix D1 * ginv(C11) * D1' with an estimability
// check: the solve residual must stay below tol * ||D1||.
inline Eigen::MatrixXd lambda_from_c11(const Eigen::MatrixXd& C11,
                                       const Eigen::MatrixXd& D1,
                                       double tol = 1e-6) {
  if (D1.cols() != C11.rows())
    throw std::invalid_argument("lambda_from_c11: dimension mismatch");
  Eigen::MatrixXd Cinv = pinv_psd(C11);
  Eigen::MatrixXd X = Cinv * D1.transpose();
  double resid = (C11 * X - D1.transpose()).norm();
  if (resid > tol * std::max(1.0, D1.norm()))
    throw std::runtime_error(
        "objective effects are not estimable under this design (solve residual " +
        std::to_string(resid) + ")");
  return D1 * X;
}

// ---------------------------------------------------------------------------
// criterion engine
// ---------------------------------------------------------------------------

class CriterionEngine {
public:
  using MatrixMap = std::map<std::string, RelationshipMatrix>;

  CriterionEngine(const ModelSpec& spec, const DesignFrame& frame,
                  const MatrixMap& matrices)
      : spec_(spec) {
    validate_spec(spec_, frame);
    if (spec_.permute.empty())
      throw std::runtime_error("model spec declares no permute terms");
    if (spec_.objective.empty())
      throw std::runtime_error("model spec declares no objective terms");
    build_static(frame, matrices);
    rebuild();
  }

  int n() const { return n_; }
  int p() const { return p_; }
  int s() const { return s_; }
  int n_objective() const { return int(obj_cols_.size()); }
  bool augmented() const { return aug_; }

  double criterion() const { return A_; }
  double trace_lambda() const { return tr_; }
  double sum_lambda() const { return s1_; }
  long commits() const { return commits_; }

  const std::vector<int>& row_at() const { return row_at_; }
  const std::vector<std::string>& treatment_factors() const {
    return treat_factors_;
  }

  int swap_class(int unit) const { return unit_class_[std::size_t(unit)]; }

  // Identical treatment tuples make an exchange a no-op for the criterion.
  bool same_treat(int i, int j) const {
    const int ri = row_at_[std::size_t(i)], rj = row_at_[std::size_t(j)];
    for (const auto& t : pterms_)
      if (treat_part(t, ri) != treat_part(t, rj)) return false;
    return true;
  }

  void set_perm(const std::vector<int>& row_at) {
    if (int(row_at.size()) != n_)
      throw std::invalid_argument("set_perm: wrong length");
    std::vector<int> seen(row_at.begin(), row_at.end());
    std::sort(seen.begin(), seen.end());
    for (int u = 0; u < n_; ++u)
      if (seen[std::size_t(u)] != u)
        throw std::invalid_argument("set_perm: not a permutation");
    row_at_ = row_at;
    rebuild();
  }

  // A after exchanging the treatment rows at units i and j; state unchanged.
  double eval_swap(int i, int j) {
    compute_delta(i, j, d_);
    return d_.A_new;
  }

  // Exchange rows at units i and j and maintain the inverse.
  void commit_swap(int i, int j) {
    compute_delta(i, j, d_);
    apply_delta(i, j, d_);
    ++commits_;
    if (++since_rebuild_ >= spec_.search.refactor_every) rebuild();
  }

  // Full refactorization from the current permutation (drift control).
  void rebuild() {
    refresh_cols();
    build_dynamic();
    since_rebuild_ = 0;
  }

  // Reduced coefficient matrix, rebuilt on demand (diagnostics and oracles).
  Eigen::MatrixXd c11() const {
    Eigen::MatrixXd C = G1_;
    for (int u = 0; u < n_; ++u) {
      const double r = rinv_[u];
      for (int t = 0; t < nterms_; ++t)
        for (int t2 = 0; t2 < nterms_; ++t2)
          C(cols_(u, t), cols_(u, t2)) += r;
    }
    if (s_ > 0) {
      Eigen::MatrixXd BW = Eigen::MatrixXd::Zero(p_, s_);
      for (int u = 0; u < n_; ++u)
        for (int t = 0; t < nterms_; ++t)
          BW.row(cols_(u, t)) += rinv_[u] * W2_.row(u);
      Eigen::MatrixXd BWF = BW * F_;
      C.noalias() -= BWF * BW.transpose();
    }
    return 0.5 * (C + C.transpose()).eval();
  }

  // Objective-block prediction-error variance matrix (exact; uses the
  // pseudo-inverse route when C11 is singular).
  Eigen::MatrixXd lambda() const {
    const int l = int(obj_cols_.size());
    if (!aug_) {
      Eigen::MatrixXd L(l, l);
      for (int a = 0; a < l; ++a)
        for (int b = 0; b < l; ++b)
          L(a, b) = M_(obj_cols_[std::size_t(a)], obj_cols_[std::size_t(b)]);
      return L;
    }
    Eigen::MatrixXd D1 = Eigen::MatrixXd::Zero(l, p_);
    for (int a = 0; a < l; ++a) D1(a, obj_cols_[std::size_t(a)]) = 1.0;
    return lambda_from_c11(c11(), D1);
  }

  // Static-side views for white-box property tests.
  const Eigen::MatrixXd& w2() const { return W2_; }
  const Eigen::MatrixXd& absorb_ginv() const { return F_; }
  const Eigen::VectorXd& rinv() const { return rinv_; }
  const std::vector<int>& objective_cols() const { return obj_cols_; }

private:
  struct FactorPiece {
    bool treat = false;  // level read from the moved row, else from the unit
    int stride = 1;
    std::vector<int> codes;
  };
  struct PTerm {
    int term = -1;
    int offset = 0;
    int cols = 0;
    bool fixed = false;
    std::vector<FactorPiece> pieces;
  };
  struct SparseVec {
    int idx[8];
    double val[8];
    int n = 0;
    void add(int i, double v) {
      idx[n] = i;
      val[n] = v;
      ++n;
    }
  };
  struct Delta {
    int rank = 0;  // 0 (no-op), 2, or 4
    double A_new = 0, tr_new = 0, s1_new = 0;
    double corr_tr = 0, corr_s1 = 0;
    SparseVec a, b;
    Eigen::Matrix4d Kinv4;
    Eigen::Matrix2d Kinv2;
  };

  int treat_part(const PTerm& t, int row) const {
    int c = 0;
    for (const auto& pc : t.pieces)
      if (pc.treat) c += pc.stride * pc.codes[std::size_t(row)];
    return c;
  }
  int plot_part(const PTerm& t, int unit) const {
    int c = 0;
    for (const auto& pc : t.pieces)
      if (!pc.treat) c += pc.stride * pc.codes[std::size_t(unit)];
    return c;
  }
  int col_of(int t, int unit, int row) const {
    const PTerm& pt = pterms_[std::size_t(t)];
    return pt.offset + plot_part(pt, unit) + treat_part(pt, row);
  }

  static const RelationshipMatrix& resolve_matrix(const MatrixMap& mats,
                                                  const std::string& ref) {
    auto it = mats.find(ref);
    if (it != mats.end()) return it->second;
    if (mats.size() == 1) return mats.begin()->second;
    throw std::runtime_error("no relationship matrix bound for reference '" +
                             ref + "'");
  }

  // Penalty block for one term (inverse variance); zero for fixed terms.
  Eigen::MatrixXd penalty_block(const Term& t, const DesignFrame& frame,
                                const MatrixMap& mats, int cols) const {
    if (t.vfn == VarFn::fixed_term) return Eigen::MatrixXd::Zero(cols, cols);
    if (t.vfn == VarFn::idv) {
      if (t.params.size() != 1)
        throw std::runtime_error("term '" + t.text + "' is missing its variance");
      return Eigen::MatrixXd::Identity(cols, cols) / t.params[0];
    }
    if (t.vfn == VarFn::vm || t.vfn == VarFn::ric) {
      auto levels = frame.levels(t.factors.back());
      const RelationshipMatrix& rm = resolve_matrix(mats, t.matrix_ref);
      const int m = int(levels.size());
      Eigen::MatrixXd inv;
      if (t.vfn == VarFn::vm) {
        if (t.params.size() != 1)
          throw std::runtime_error("term '" + t.text + "' is missing its variance");
        if (rm.has_sparse_inverse && rm.matches_exactly(levels))
          inv = Eigen::MatrixXd(rm.Ginv_sparse) / t.params[0];
        else {
          Eigen::MatrixXd Gsub = rm.submatrix(levels);
          Eigen::LLT<Eigen::MatrixXd> llt(Gsub);
          if (llt.info() != Eigen::Success)
            throw std::runtime_error("relationship matrix for term '" + t.text +
                                     "' is not positive definite");
          inv = llt.solve(Eigen::MatrixXd::Identity(m, m)) / t.params[0];
        }
      } else {
        if (t.params.size() != 2)
          throw std::runtime_error("term '" + t.text + "' needs two variances");
        RicVariance rv{rm.submatrix(levels), t.params[0], t.params[1]};
        inv = rv.inverse();
      }
      const int reps = cols / m;
      Eigen::MatrixXd block = Eigen::MatrixXd::Zero(cols, cols);
      for (int r = 0; r < reps; ++r) block.block(r * m, r * m, m, m) = inv;
      return block;
    }
    throw std::runtime_error("term '" + t.text + "' cannot appear in the model");
  }

  void build_static(const DesignFrame& frame, const MatrixMap& mats) {
    n_ = frame.n();
    if (n_ == 0) throw std::runtime_error("design frame is empty");

    // treatment-side factors: those of the first permute term, by convention
    treat_factors_ = spec_.term(spec_.permute.front()).factors;
    if (treat_factors_.empty())
      throw std::runtime_error("first permute term must involve a factor");

    Layout lay = expand_terms(spec_, frame);
    p_ = lay.permute_cols;

    std::set<std::string> tf(treat_factors_.begin(), treat_factors_.end());
    for (const auto& tl : lay.items) {
      if (tl.offset >= p_) continue;
      const Term& t = spec_.term(tl.term);
      PTerm pt;
      pt.term = tl.term;
      pt.offset = tl.offset;
      pt.cols = tl.cols;
      pt.fixed = t.vfn == VarFn::fixed_term;
      int stride = tl.cols;
      bool any_treat = false;
      for (std::size_t f = 0; f < t.factors.size(); ++f) {
        FactorPiece pc;
        stride /= tl.cards[f];
        pc.stride = stride;
        pc.treat = tf.count(t.factors[f]) != 0;
        pc.codes = frame.codes(t.factors[f]).first;
        any_treat |= pc.treat;
        pt.pieces.push_back(std::move(pc));
      }
      if (!any_treat)
        throw std::runtime_error("permute term '" + t.text +
                                 "' has no treatment-side factor");
      pterms_.push_back(std::move(pt));
    }
    nterms_ = int(pterms_.size());

    // residual weights
    rinv_.resize(n_);
    if (spec_.residual.vfn == VarFn::idv) {
      double s2 = spec_.residual.params.empty() ? 1.0 : spec_.residual.params[0];
      rinv_.setConstant(1.0 / s2);
    } else {
      auto [gcodes, glevels] = frame.codes(spec_.residual.group);
      if (spec_.residual.params.size() != glevels.size())
        throw std::runtime_error(
            "dsum residual needs " + std::to_string(glevels.size()) +
            " variances (one per level of " + spec_.residual.group + "), got " +
            std::to_string(spec_.residual.params.size()));
      for (int u = 0; u < n_; ++u)
        rinv_[u] =
            1.0 / spec_.residual.params[std::size_t(gcodes[std::size_t(u)])];
    }

    // static design matrix and its penalty
    s_ = lay.total - p_;
    W2_ = Eigen::MatrixXd::Zero(n_, s_);
    Eigen::MatrixXd G2 = Eigen::MatrixXd::Zero(s_, s_);
    for (const auto& tl : lay.items) {
      if (tl.offset < p_) continue;
      const Term& t = spec_.term(tl.term);
      const int off = tl.offset - p_;
      if (t.is_mean()) {
        W2_.col(off).setOnes();
      } else {
        std::vector<std::vector<int>> codes;
        for (const auto& f : t.factors) codes.push_back(frame.codes(f).first);
        for (int u = 0; u < n_; ++u) {
          int c = 0;
          for (std::size_t f = 0; f < codes.size(); ++f)
            c = c * tl.cards[f] + codes[f][std::size_t(u)];
          W2_(u, off + c) = 1.0;
        }
      }
      G2.block(off, off, tl.cols, tl.cols) =
          penalty_block(t, frame, mats, tl.cols);
    }

    // permute-term penalties
    G1_ = Eigen::MatrixXd::Zero(p_, p_);
    expect_singular_ = false;
    for (const auto& pt : pterms_) {
      G1_.block(pt.offset, pt.offset, pt.cols, pt.cols) =
          penalty_block(spec_.term(pt.term), frame, mats, pt.cols);
      expect_singular_ |= pt.fixed;
    }

    // absorb the static block
    if (s_ > 0) {
      Eigen::MatrixXd S22 = W2_.transpose() * rinv_.asDiagonal() * W2_ + G2;
      F_ = pinv_psd(S22);
    } else {
      F_.resize(0, 0);
    }

    // objective columns (leading blocks), minus excluded levels
    std::set<std::string> excl(spec_.search.objective_exclude.begin(),
                               spec_.search.objective_exclude.end());
    std::set<std::string> seen_excl;
    for (std::size_t k = 0; k < spec_.objective.size(); ++k) {
      const PTerm& pt = pterms_[k];
      const Term& t = spec_.term(pt.term);
      const auto levels = frame.levels(t.factors.back());
      const int m = int(levels.size());
      for (int c = 0; c < pt.cols; ++c) {
        const std::string& lab = levels[std::size_t(c % m)];
        if (excl.count(lab)) {
          seen_excl.insert(lab);
          continue;
        }
        obj_cols_.push_back(pt.offset + c);
      }
    }
    for (const auto& e : excl)
      if (!seen_excl.count(e))
        throw std::runtime_error("objective_exclude level '" + e +
                                 "' does not occur in the objective terms");
    if (obj_cols_.empty())
      throw std::runtime_error("objective set is empty after exclusions");

    // swap classes
    if (!spec_.swap_factor.empty())
      unit_class_ = frame.codes(spec_.swap_factor).first;
    else
      unit_class_.assign(std::size_t(n_), 0);

    row_at_.resize(std::size_t(n_));
    for (int u = 0; u < n_; ++u) row_at_[std::size_t(u)] = u;
    cols_.resize(n_, nterms_);

    fi_.resize(std::max(s_, 1));
    fj_.resize(std::max(s_, 1));
    gi_.resize(p_);
    gj_.resize(p_);
    MU_.resize(p_, 4);
  }

  void refresh_cols() {
    for (int u = 0; u < n_; ++u)
      for (int t = 0; t < nterms_; ++t)
        cols_(u, t) = col_of(t, u, row_at_[std::size_t(u)]);
  }

  void build_dynamic() {
    B_ = Eigen::MatrixXd::Zero(p_, s_);
    if (s_ > 0)
      for (int u = 0; u < n_; ++u)
        for (int t = 0; t < nterms_; ++t)
          B_.row(cols_(u, t)) += rinv_[u] * W2_.row(u);

    Eigen::MatrixXd C = c11();

    aug_ = false;
    Eigen::LLT<Eigen::MatrixXd> llt;
    if (!expect_singular_) {
      llt.compute(C);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error(
            "C11 is singular; the permuted random effects do not give a "
            "positive definite system");
      M_ = llt.solve(Eigen::MatrixXd::Identity(p_, p_));
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
      const auto& ev = eig.eigenvalues();
      const double tol = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
      int nker = 0;
      while (nker < p_ && ev[nker] <= tol) ++nker;
      if (nker == 0) {
        llt.compute(C);
        if (llt.info() != Eigen::Success)
          throw std::runtime_error("C11 factorization failed");
        M_ = llt.solve(Eigen::MatrixXd::Identity(p_, p_));
      } else {
        check_kernel(eig.eigenvectors().leftCols(nker));
        aug_ = true;
        caug_ = C.trace() / double(p_);
        Eigen::MatrixXd Caug = C;
        Caug.noalias() += caug_ * eig.eigenvectors().leftCols(nker) *
                          eig.eigenvectors().leftCols(nker).transpose();
        llt.compute(Caug);
        if (llt.info() != Eigen::Success)
          throw std::runtime_error("augmented C11 factorization failed");
        M_ = llt.solve(Eigen::MatrixXd::Identity(p_, p_));
      }
    }
    M_ = 0.5 * (M_ + M_.transpose()).eval();

    if (s_ > 0) {
      N_.noalias() = M_ * B_;
      Q_.noalias() = B_.transpose() * N_;
    } else {
      N_.resize(p_, 0);
      Q_.resize(0, 0);
    }

    tr_ = 0;
    s1_ = 0;
    for (int a : obj_cols_) {
      tr_ += M_(a, a);
      for (int b : obj_cols_) s1_ += M_(a, b);
    }
    A_ = acriterion(tr_, s1_, int(obj_cols_.size()));
  }

  // Kernel admissibility for the augmentation fast path: every kernel vector
  // must be constant within each fixed permute block, (near) zero elsewhere,
  // and constant across the objective columns. Such kernels are invariant
  // under row exchanges, and the augmented inverse then yields the exact
  // pairwise-contrast criterion.
  void check_kernel(const Eigen::MatrixXd& K) const {
    for (int k = 0; k < K.cols(); ++k) {
      Eigen::VectorXd kv = K.col(k);
      Eigen::VectorXd recon = Eigen::VectorXd::Zero(p_);
      for (const auto& pt : pterms_) {
        if (!pt.fixed) continue;
        double mean = kv.segment(pt.offset, pt.cols).mean();
        recon.segment(pt.offset, pt.cols).setConstant(mean);
      }
      if ((kv - recon).norm() > 1e-6)
        throw std::runtime_error(
            "C11 kernel has unsupported structure (objective effects "
            "disconnected beyond fixed-level means)");
      double ref = kv[obj_cols_.front()];
      for (int c : obj_cols_)
        if (std::abs(kv[c] - ref) > 1e-6)
          throw std::runtime_error(
              "objective contrasts are not estimable under this design "
              "(disconnected objective effects)");
    }
  }

  // --- swap algebra --------------------------------------------------------

  void compute_delta(int i, int j, Delta& d) {
    if (i == j) throw std::invalid_argument("swap of a unit with itself");
    if (i < 0 || j < 0 || i >= n_ || j >= n_)
      throw std::invalid_argument("swap unit out of range");
    if (unit_class_[std::size_t(i)] != unit_class_[std::size_t(j)])
      throw std::runtime_error("swap crosses constraint classes");

    const int ri = row_at_[std::size_t(i)], rj = row_at_[std::size_t(j)];
    d.a.n = d.b.n = 0;
    bool neg = true;  // b == -a with matching column order
    for (int t = 0; t < nterms_; ++t) {
      const PTerm& pt = pterms_[std::size_t(t)];
      const int ti = treat_part(pt, ri), tj = treat_part(pt, rj);
      if (ti == tj) continue;
      const int pi = cols_(i, t) - ti;  // offset + plot part at unit i
      const int pj = cols_(j, t) - tj;
      d.a.add(pi + tj, 1.0);
      d.a.add(pi + ti, -1.0);
      d.b.add(pj + ti, 1.0);
      d.b.add(pj + tj, -1.0);
      if (pi != pj) neg = false;
    }
    if (d.a.n == 0) {  // identical treatment tuples: exchange is a no-op
      d.rank = 0;
      d.A_new = A_;
      d.tr_new = tr_;
      d.s1_new = s1_;
      return;
    }

    // g_x = W1' P2 e_x and M g_x via the absorbed representation
    const double rvi = rinv_[i], rvj = rinv_[j];
    double pii = rvi, pjj = rvj, pij = 0.0;
    if (s_ > 0) {
      fi_.head(s_).noalias() = F_ * (W2_.row(i).transpose() * rvi);
      fj_.head(s_).noalias() = F_ * (W2_.row(j).transpose() * rvj);
      pii -= rvi * (W2_.row(i) * fi_.head(s_))(0);
      pjj -= rvj * (W2_.row(j) * fj_.head(s_))(0);
      pij = -rvi * (W2_.row(i) * fj_.head(s_))(0);
      gi_.noalias() = -(B_ * fi_.head(s_));
      gj_.noalias() = -(B_ * fj_.head(s_));
      MU_.col(2).noalias() = -(N_ * fi_.head(s_));
      MU_.col(3).noalias() = -(N_ * fj_.head(s_));
    } else {
      gi_.setZero();
      gj_.setZero();
      MU_.col(2).setZero();
      MU_.col(3).setZero();
    }
    for (int t = 0; t < nterms_; ++t) {
      const int ci = cols_(i, t), cj = cols_(j, t);
      gi_[ci] += rvi;
      gj_[cj] += rvj;
      MU_.col(2) += rvi * M_.col(ci);
      MU_.col(3) += rvj * M_.col(cj);
    }

    MU_.col(0).setZero();
    for (int k = 0; k < d.a.n; ++k)
      MU_.col(0) += d.a.val[k] * M_.col(d.a.idx[k]);

    if (neg) {
      // rank-2 path: U = [a, g], g = g_i - g_j, Sinv = [[0,1],[1,-alpha]]
      d.rank = 2;
      const double alpha = pii + pjj - 2.0 * pij;
      MU_.col(1) = MU_.col(2) - MU_.col(3);
      gi_ -= gj_;  // gi_ now holds g
      double aMa = 0, aMg = 0;
      for (int k = 0; k < d.a.n; ++k) {
        aMa += d.a.val[k] * MU_(d.a.idx[k], 0);
        aMg += d.a.val[k] * MU_(d.a.idx[k], 1);
      }
      const double gMg = gi_.dot(MU_.col(1));
      Eigen::Matrix2d K;
      K << aMa, aMg + 1.0, aMg + 1.0, gMg - alpha;
      Eigen::FullPivLU<Eigen::Matrix2d> lu(K);
      if (!lu.isInvertible())
        throw std::runtime_error("degenerate exchange update (rank 2)");
      d.Kinv2 = lu.inverse();
      accumulate_corrections(d);
    } else {
      // rank-4 path: U = [a b g_i g_j], Sinv = [[0,I],[I,-P]]
      d.rank = 4;
      MU_.col(1).setZero();
      for (int k = 0; k < d.b.n; ++k)
        MU_.col(1) += d.b.val[k] * M_.col(d.b.idx[k]);
      Eigen::Matrix4d K;
      for (int c = 0; c < 4; ++c) {
        double va = 0, vb = 0;
        for (int k = 0; k < d.a.n; ++k) va += d.a.val[k] * MU_(d.a.idx[k], c);
        for (int k = 0; k < d.b.n; ++k) vb += d.b.val[k] * MU_(d.b.idx[k], c);
        K(0, c) = va;
        K(1, c) = vb;
      }
      K(2, 0) = K(0, 2);
      K(2, 1) = K(1, 2);
      K(3, 0) = K(0, 3);
      K(3, 1) = K(1, 3);
      K(2, 2) = gi_.dot(MU_.col(2));
      K(2, 3) = K(3, 2) = gi_.dot(MU_.col(3));
      K(3, 3) = gj_.dot(MU_.col(3));
      K(0, 2) += 1.0;
      K(2, 0) += 1.0;
      K(1, 3) += 1.0;
      K(3, 1) += 1.0;
      K(2, 2) -= pii;
      K(2, 3) -= pij;
      K(3, 2) -= pij;
      K(3, 3) -= pjj;
      Eigen::FullPivLU<Eigen::Matrix4d> lu(K);
      if (!lu.isInvertible())
        throw std::runtime_error("degenerate exchange update (rank 4)");
      d.Kinv4 = lu.inverse();
      accumulate_corrections(d);
    }

    d.tr_new = tr_ - d.corr_tr;
    d.s1_new = s1_ - d.corr_s1;
    d.A_new = acriterion(d.tr_new, d.s1_new, int(obj_cols_.size()));
  }

  // V = objective rows of MU; corr_tr = tr(Kinv V'V), corr_s1 = v1' Kinv v1.
  void accumulate_corrections(Delta& d) {
    if (d.rank == 2) {
      Eigen::Matrix2d VtV = Eigen::Matrix2d::Zero();
      Eigen::Vector2d v1 = Eigen::Vector2d::Zero();
      for (int c : obj_cols_) {
        Eigen::Vector2d r(MU_(c, 0), MU_(c, 1));
        VtV.noalias() += r * r.transpose();
        v1 += r;
      }
      d.corr_tr = (d.Kinv2 * VtV).trace();
      d.corr_s1 = v1.dot(d.Kinv2 * v1);
    } else {
      Eigen::Matrix4d VtV = Eigen::Matrix4d::Zero();
      Eigen::Vector4d v1 = Eigen::Vector4d::Zero();
      for (int c : obj_cols_) {
        Eigen::Vector4d r(MU_(c, 0), MU_(c, 1), MU_(c, 2), MU_(c, 3));
        VtV.noalias() += r * r.transpose();
        v1 += r;
      }
      d.corr_tr = (d.Kinv4 * VtV).trace();
      d.corr_s1 = v1.dot(d.Kinv4 * v1);
    }
  }

  void apply_delta(int i, int j, Delta& d) {
    std::swap(row_at_[std::size_t(i)], row_at_[std::size_t(j)]);
    if (d.rank == 0) return;
    const int r = d.rank;
    auto MU = MU_.leftCols(r);

    // B_new and N' = M_old * B_new (MU columns were computed from M_old)
    if (s_ > 0) {
      Eigen::RowVectorXd w2i = rinv_[i] * W2_.row(i);
      Eigen::RowVectorXd w2j = rinv_[j] * W2_.row(j);
      if (r == 2) {
        Eigen::RowVectorXd w = w2i - w2j;  // b = -a
        for (int k = 0; k < d.a.n; ++k)
          B_.row(d.a.idx[k]) += d.a.val[k] * w;
        N_.noalias() += MU.col(0) * w;
      } else {
        for (int k = 0; k < d.a.n; ++k)
          B_.row(d.a.idx[k]) += d.a.val[k] * w2i;
        for (int k = 0; k < d.b.n; ++k)
          B_.row(d.b.idx[k]) += d.b.val[k] * w2j;
        N_.noalias() += MU.col(0) * w2i + MU.col(1) * w2j;
      }

      // N <- N' - MU Kinv (U' N'); U'N' rows: sparse for a/b, dense for g
      Eigen::MatrixXd UtN(r, s_);
      for (int c = 0; c < s_; ++c) {
        double va = 0;
        for (int k = 0; k < d.a.n; ++k) va += d.a.val[k] * N_(d.a.idx[k], c);
        UtN(0, c) = va;
      }
      if (r == 2) {
        UtN.row(1) = gi_.transpose() * N_;  // gi_ holds g = g_i - g_j
        N_.noalias() -= MU * (d.Kinv2 * UtN);
      } else {
        for (int c = 0; c < s_; ++c) {
          double vb = 0;
          for (int k = 0; k < d.b.n; ++k) vb += d.b.val[k] * N_(d.b.idx[k], c);
          UtN(1, c) = vb;
        }
        UtN.row(2) = gi_.transpose() * N_;
        UtN.row(3) = gj_.transpose() * N_;
        N_.noalias() -= MU * (d.Kinv4 * UtN);
      }
    }

    // M <- M - MU Kinv MU'
    if (r == 2) {
      Eigen::Matrix<double, Eigen::Dynamic, 2> T = MU * d.Kinv2;
      M_.noalias() -= T * MU.transpose();
    } else {
      Eigen::Matrix<double, Eigen::Dynamic, 4> T = MU * d.Kinv4;
      M_.noalias() -= T * MU.transpose();
    }

    if (s_ > 0) Q_.noalias() = B_.transpose() * N_;

    tr_ = d.tr_new;
    s1_ = d.s1_new;
    A_ = d.A_new;
    for (int t = 0; t < nterms_; ++t) {
      cols_(i, t) = col_of(t, i, row_at_[std::size_t(i)]);
      cols_(j, t) = col_of(t, j, row_at_[std::size_t(j)]);
    }
  }

  ModelSpec spec_;
  int n_ = 0, p_ = 0, s_ = 0, nterms_ = 0;
  std::vector<PTerm> pterms_;
  std::vector<std::string> treat_factors_;
  std::vector<int> row_at_;
  std::vector<int> unit_class_;
  Eigen::MatrixXi cols_;
  Eigen::VectorXd rinv_;
  Eigen::MatrixXd W2_, G1_, F_;
  std::vector<int> obj_cols_;
  bool expect_singular_ = false;
  bool aug_ = false;
  double caug_ = 0.0;

  Eigen::MatrixXd M_, B_, N_, Q_;
  double tr_ = 0, s1_ = 0, A_ = 0;
  long commits_ = 0;
  int since_rebuild_ = 0;

  // scratch (single-threaded engine)
  Eigen::VectorXd fi_, fj_, gi_, gj_;
  Eigen::MatrixXd MU_;
  Delta d_;
};

}  // namespace odsel
