#pragma once

// Displacement metrics and reverberation-strength curves.
//
// A CurveSet holds r(t | t_p) as a T_h x T_f matrix: row t_p is the past
// step, column t the future step. Every non-degenerate column sums to one.
// Social kernels are stored partition-major (row = n * T_h + t_p), so the
// curves of partition n read the row block [n * T_h, (n + 1) * T_h).

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "rev/errors.hpp"
#include "rev/transforms.hpp"

namespace rev {

struct AdeFde {
  double ade = 0.0;
  double fde = 0.0;
};

struct AdeFdeStats {
  double mean_ade = 0.0;
  double std_ade = 0.0;
  double mean_fde = 0.0;
  double std_fde = 0.0;
};

namespace detail {

inline void check_predictions(const std::vector<Matrix>& preds, const Matrix& gt) {
  if (preds.empty()) throw ShapeError("metrics: need at least one prediction");
  if (gt.rows() == 0) throw ShapeError("metrics: empty ground truth");
  for (const Matrix& p : preds)
    if (p.rows() != gt.rows() || p.cols() != gt.cols()) throw ShapeError("metrics: prediction and ground-truth shapes differ");
}

inline AdeFde row_errors(const Matrix& pred, const Matrix& gt) {
  const Eigen::VectorXd dist = (pred - gt).rowwise().norm();
  return {dist.mean(), dist(dist.size() - 1)};
}

}  // namespace detail

// ADE and FDE minima taken independently over the K predictions.
inline AdeFde min_ade_fde(const std::vector<Matrix>& preds, const Matrix& gt) {
  detail::check_predictions(preds, gt);
  AdeFde best = detail::row_errors(preds.front(), gt);
  for (std::size_t k = 1; k < preds.size(); ++k) {
    const AdeFde e = detail::row_errors(preds[k], gt);
    best.ade = std::min(best.ade, e.ade);
    best.fde = std::min(best.fde, e.fde);
  }
  return best;
}

// Mean and population standard deviation of the per-prediction ADE/FDE.
inline AdeFdeStats stat_ade_fde(const std::vector<Matrix>& preds, const Matrix& gt) {
  detail::check_predictions(preds, gt);
  const auto K = static_cast<double>(preds.size());
  Eigen::VectorXd ade(static_cast<Eigen::Index>(preds.size())), fde(ade.size());
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const AdeFde e = detail::row_errors(preds[k], gt);
    ade(static_cast<Eigen::Index>(k)) = e.ade;
    fde(static_cast<Eigen::Index>(k)) = e.fde;
  }
  AdeFdeStats s;
  s.mean_ade = ade.mean();
  s.mean_fde = fde.mean();
  s.std_ade = std::sqrt((ade.array() - s.mean_ade).square().sum() / K);
  s.std_fde = std::sqrt((fde.array() - s.mean_fde).square().sum() / K);
  return s;
}

enum class CurveKind { non, non_altered, soc, soc_altered };

inline std::string_view to_string(CurveKind k) {
  switch (k) {
    case CurveKind::non: return "non";
    case CurveKind::non_altered: return "non_altered";
    case CurveKind::soc: return "soc";
    case CurveKind::soc_altered: return "soc_altered";
  }
  return "?";
}

struct CurveSet {
  CurveKind kind = CurveKind::non;
  int partition = -1;   // 0-based, -1 when not applicable
  int generation = -1;  // 0-based, -1 when not applicable
  Matrix values;        // T_h x T_f
  std::vector<bool> degenerate;  // per future step

  int past_steps() const { return static_cast<int>(values.rows()); }
  int future_steps() const { return static_cast<int>(values.cols()); }
};

// r(t | t_p) = w[t_p, t] / sum_x w[x, t] for a non-negative weight matrix.
inline CurveSet normalize_columns(const Matrix& w, CurveKind kind, int partition, int generation) {
  CurveSet c;
  c.kind = kind;
  c.partition = partition;
  c.generation = generation;
  c.values.resize(w.rows(), w.cols());
  c.degenerate.assign(static_cast<std::size_t>(w.cols()), false);
  for (Eigen::Index t = 0; t < w.cols(); ++t) {
    const double den = w.col(t).sum();
    if (!(den > 0.0) || !std::isfinite(den)) {
      c.values.col(t).setConstant(1.0 / static_cast<double>(w.rows()));
      c.degenerate[static_cast<std::size_t>(t)] = true;
    } else {
      c.values.col(t) = w.col(t) / den;
    }
  }
  return c;
}

inline CurveSet curve_non(const Matrix& R) {
  if (R.size() == 0) throw ShapeError("curve_non: empty kernel");
  return normalize_columns(R.array().square().matrix(), CurveKind::non, -1, -1);
}

// Numerator (R[t_p, t] G[t_p, k])^2, denominator sum_x (R[x, t] G[x, k])^2.
inline CurveSet curve_non_altered(const Matrix& R, const Matrix& G, int k) {
  if (G.rows() != R.rows()) throw ShapeError("curve_non_altered: R and G row counts differ");
  if (k < 0 || k >= G.cols()) throw DomainError("curve_non_altered: generation index out of range");
  const Matrix w = (R.array().colwise() * G.col(k).array()).square().matrix();
  return normalize_columns(w, CurveKind::non_altered, -1, k);
}

namespace detail {

inline void check_partition(const Matrix& K, int n, int T_h, const char* who) {
  if (T_h < 1 || K.rows() % T_h != 0) throw ShapeError(std::string(who) + ": kernel rows are not a multiple of T_h");
  if (n < 0 || n >= K.rows() / T_h) throw DomainError(std::string(who) + ": partition index out of range");
}

}  // namespace detail

inline CurveSet curve_soc(const Matrix& R_soc, int n, int T_h) {
  detail::check_partition(R_soc, n, T_h, "curve_soc");
  CurveSet c = curve_non(R_soc.middleRows(static_cast<Eigen::Index>(n) * T_h, T_h));
  c.kind = CurveKind::soc;
  c.partition = n;
  return c;
}

inline CurveSet curve_soc_altered(const Matrix& R_soc, const Matrix& G_soc, int n, int k, int T_h) {
  detail::check_partition(R_soc, n, T_h, "curve_soc_altered");
  if (G_soc.rows() != R_soc.rows()) throw ShapeError("curve_soc_altered: R and G row counts differ");
  const Eigen::Index off = static_cast<Eigen::Index>(n) * T_h;
  CurveSet c = curve_non_altered(R_soc.middleRows(off, T_h), G_soc.middleRows(off, T_h), k);
  c.kind = CurveKind::soc_altered;
  c.partition = n;
  return c;
}

// Every curve family of one agent's kernels.
inline std::vector<CurveSet> all_curves(const Matrix* R_non, const Matrix* G_non, const Matrix* R_soc, const Matrix* G_soc,
                                        int T_h) {
  std::vector<CurveSet> out;
  if (R_non != nullptr) {
    out.push_back(curve_non(*R_non));
    if (G_non != nullptr)
      for (int k = 0; k < G_non->cols(); ++k) out.push_back(curve_non_altered(*R_non, *G_non, k));
  }
  if (R_soc != nullptr) {
    const int parts = static_cast<int>(R_soc->rows() / T_h);
    for (int n = 0; n < parts; ++n) out.push_back(curve_soc(*R_soc, n, T_h));
    if (G_soc != nullptr)
      for (int n = 0; n < parts; ++n)
        for (int k = 0; k < G_soc->cols(); ++k) out.push_back(curve_soc_altered(*R_soc, *G_soc, n, k, T_h));
  }
  return out;
}

// Element-wise mean of curves sharing (kind, partition, generation), in
// first-appearance order. A step is degenerate in the mean if it was
// degenerate in any input.
inline std::vector<CurveSet> average_curves(const std::vector<std::vector<CurveSet>>& per_agent) {
  if (per_agent.empty()) throw InsufficientDataError("average_curves: empty selection");
  using Key = std::tuple<int, int, int>;
  std::map<Key, std::size_t> slot;
  std::vector<CurveSet> sums;
  std::vector<int> counts;
  for (const auto& agent : per_agent) {
    for (const CurveSet& c : agent) {
      const Key key{static_cast<int>(c.kind), c.partition, c.generation};
      auto it = slot.find(key);
      if (it == slot.end()) {
        slot.emplace(key, sums.size());
        sums.push_back(c);
        counts.push_back(1);
        continue;
      }
      CurveSet& s = sums[it->second];
      if (s.values.rows() != c.values.rows() || s.values.cols() != c.values.cols())
        throw ShapeError("average_curves: curve shapes differ");
      s.values += c.values;
      for (std::size_t t = 0; t < c.degenerate.size(); ++t) s.degenerate[t] = s.degenerate[t] || c.degenerate[t];
      ++counts[it->second];
    }
  }
  for (std::size_t i = 0; i < sums.size(); ++i) sums[i].values /= static_cast<double>(counts[i]);
  return sums;
}

// CSV rows, 1-based steps: t_p in 1..T_h, t in T_h+1..T_h+T_f; partition and
// generation are 1-based, 0 when not applicable. A `baseline` row per future
// step carries the uniform strength 1/T_h.
inline void write_curves_csv(std::ostream& out, const std::vector<CurveSet>& curves, const std::string& agent,
                             bool header = true) {
  if (header) out << "kind,agent,partition,generation,t_p,t,value,degenerate\n";
  out.precision(17);
  int T_h = 0, T_f = 0;
  for (const CurveSet& c : curves) {
    T_h = c.past_steps();
    T_f = c.future_steps();
    for (int tp = 0; tp < T_h; ++tp) {
      for (int t = 0; t < T_f; ++t) {
        out << to_string(c.kind) << ',' << agent << ',' << (c.partition + 1) << ',' << (c.generation + 1) << ','
            << (tp + 1) << ',' << (T_h + t + 1) << ',' << c.values(tp, t) << ','
            << (c.degenerate[static_cast<std::size_t>(t)] ? 1 : 0) << '\n';
      }
    }
  }
  for (int t = 0; t < T_f && T_h > 0; ++t)
    out << "baseline," << agent << ",0,0,0," << (T_h + t + 1) << ',' << 1.0 / T_h << ",0\n";
}

}  // namespace rev
