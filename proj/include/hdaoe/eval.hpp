#pragma once

// Calibrated CZSL evaluation: exact bias sweep over unseen-pair scores, best
// seen / unseen / harmonic mean, AUC, primitive accuracies and retrieval.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hdaoe/compspace.hpp"
#include "hdaoe/tensor.hpp"

namespace hdaoe::eval {

/// n_images x n_pairs feasibility scores with ground truth.
struct ScoreMatrix {
  tensor::Matrix<double> scores;
  std::vector<std::size_t> truth;  // pair index per image
  std::vector<bool> seen_mask;     // per pair
  std::vector<Pair> pairs;         // per pair

  std::size_t num_images() const { return scores.rows(); }
  std::size_t num_pairs() const { return scores.cols(); }

  void validate() const {
    if (truth.size() != scores.rows()) throw ShapeError("score matrix: truth count mismatch");
    if (seen_mask.size() != scores.cols() || pairs.size() != scores.cols())
      throw ShapeError("score matrix: pair metadata mismatch");
    for (auto t : truth)
      if (t >= scores.cols()) throw std::out_of_range("score matrix: truth outside label space");
    if (!scores.all_finite()) throw NumericalError("score matrix contains non-finite values");
  }
};

struct CurvePoint {
  double bias = 0.0;
  double seen_acc = 0.0;
  double unseen_acc = 0.0;
};

struct EvalCurve {
  std::vector<CurvePoint> points;  // sorted by seen_acc, deduplicated
  double best_seen = 0.0;
  double best_unseen = 0.0;
  double best_hm = 0.0;
  double auc = 0.0;
  /// No unseen-labelled images: only the seen accuracy is meaningful.
  bool degenerate = false;
};

struct EvalReport {
  EvalCurve curve;
  double attr_acc = 0.0;
  double obj_acc = 0.0;
  WorldMode mode = WorldMode::kClosed;
};

inline double harmonic_mean(double s, double u) {
  return s + u > 0.0 ? 2.0 * s * u / (s + u) : 0.0;
}

/// Trapezoidal area of unseen_acc over seen_acc; points must be sorted by
/// seen_acc.
inline double curve_area(std::span<const CurvePoint> pts) {
  double area = 0.0;
  for (std::size_t k = 1; k < pts.size(); ++k)
    area += (pts[k].seen_acc - pts[k - 1].seen_acc) * (pts[k].unseen_acc + pts[k - 1].unseen_acc) /
            2.0;
  return area;
}

/// Orders points along the curve (seen ascending, and for equal seen the
/// larger unseen first, which is the order of decreasing bias) and drops
/// repeats; then fills the summary fields.
inline EvalCurve summarize_curve(std::vector<CurvePoint> pts) {
  std::stable_sort(pts.begin(), pts.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.seen_acc != b.seen_acc ? a.seen_acc < b.seen_acc : a.unseen_acc > b.unseen_acc;
  });
  EvalCurve curve;
  for (const auto& p : pts) {
    if (!curve.points.empty() && curve.points.back().seen_acc == p.seen_acc &&
        curve.points.back().unseen_acc == p.unseen_acc)
      continue;
    curve.points.push_back(p);
  }
  for (const auto& p : curve.points) {
    curve.best_seen = std::max(curve.best_seen, p.seen_acc);
    curve.best_unseen = std::max(curve.best_unseen, p.unseen_acc);
    curve.best_hm = std::max(curve.best_hm, harmonic_mean(p.seen_acc, p.unseen_acc));
  }
  curve.auc = curve_area(curve.points);
  return curve;
}

namespace detail {

struct ImageSummary {
  double gap = 0.0;  // best seen score - best unseen score
  bool seen_hit = false;
  bool unseen_hit = false;
  bool truth_seen = false;
};

inline std::size_t argmax_row(const ScoreMatrix& sm, std::size_t i) {
  const auto r = sm.scores.row(i);
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

}  // namespace detail

/// Exact sweep of the unseen-pair bias.
///
/// At bias b, an image predicts its best unseen pair when b > (best seen score
/// - best unseen score) and its best seen pair otherwise; argmax ties go to the
/// lower pair index. Candidate biases are the per-image gaps plus -inf / +inf,
/// which visits every distinct operating point of the curve.
inline EvalCurve bias_sweep(const ScoreMatrix& sm) {
  sm.validate();
  const std::size_t n = sm.num_images(), P = sm.num_pairs();
  const bool any_seen_pair = std::find(sm.seen_mask.begin(), sm.seen_mask.end(), true) !=
                             sm.seen_mask.end();

  std::vector<detail::ImageSummary> img(n);
  std::size_t n_seen = 0, n_unseen = 0;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    double best_s = -kInf, best_u = -kInf;
    std::size_t arg_s = P, arg_u = P;
    for (std::size_t k = 0; k < P; ++k) {
      const double v = sm.scores(i, k);
      if (sm.seen_mask[k]) {
        if (arg_s == P || v > best_s) best_s = v, arg_s = k;
      } else {
        if (arg_u == P || v > best_u) best_u = v, arg_u = k;
      }
    }
    auto& s = img[i];
    s.truth_seen = sm.seen_mask[sm.truth[i]];
    s.seen_hit = arg_s == sm.truth[i];
    s.unseen_hit = arg_u == sm.truth[i];
    s.gap = best_s - best_u;
    (s.truth_seen ? n_seen : n_unseen)++;
  }

  const auto acc = [](std::size_t hits, std::size_t total) {
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
  };

  if (n_unseen == 0) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += detail::argmax_row(sm, i) == sm.truth[i];
    EvalCurve curve;
    curve.points.push_back({0.0, acc(hits, n_seen), 0.0});
    curve.best_seen = acc(hits, n_seen);
    curve.degenerate = true;
    return curve;
  }

  std::size_t seen_hits = 0, unseen_hits = 0;
  const auto count = [&](std::size_t i, bool predict_unseen, int sign) {
    const auto& s = img[i];
    if (predict_unseen ? s.unseen_hit : s.seen_hit) {
      auto& c = s.truth_seen ? seen_hits : unseen_hits;
      c = sign > 0 ? c + 1 : c - 1;
    }
  };
  std::vector<CurvePoint> points;
  if (!any_seen_pair) {
    for (std::size_t i = 0; i < n; ++i) count(i, true, +1);
    points.push_back({kInf, acc(seen_hits, n_seen), acc(unseen_hits, n_unseen)});
    return summarize_curve(std::move(points));
  }

  // At bias b every image with gap < b predicts its unseen pair.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return img[a].gap < img[b].gap; });
  for (std::size_t i = 0; i < n; ++i) count(i, false, +1);
  points.push_back({-kInf, acc(seen_hits, n_seen), acc(unseen_hits, n_unseen)});
  std::size_t next = 0;
  const auto flip_below = [&](double b) {
    while (next < n && (b == kInf || img[order[next]].gap < b)) {
      count(order[next], false, -1);
      count(order[next], true, +1);
      ++next;
    }
  };
  for (std::size_t j = 0; j < n; ++j) {
    const double b = img[order[j]].gap;
    if (j > 0 && b == img[order[j - 1]].gap) continue;
    flip_below(b);
    points.push_back({b, acc(seen_hits, n_seen), acc(unseen_hits, n_unseen)});
  }
  flip_below(kInf);
  points.push_back({kInf, acc(seen_hits, n_seen), acc(unseen_hits, n_unseen)});
  return summarize_curve(std::move(points));
}

enum class Primitive { kAttribute, kObject };

/// Accuracy of one primitive read off the argmax pair after adding `bias` to
/// unseen-pair scores (0 by default).
inline double primitive_accuracy(const ScoreMatrix& sm, Primitive which, double bias = 0.0) {
  sm.validate();
  if (sm.num_images() == 0) throw std::invalid_argument("primitive_accuracy: empty matrix");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sm.num_images(); ++i) {
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < sm.num_pairs(); ++k) {
      const double v = sm.scores(i, k) + (sm.seen_mask[k] ? 0.0 : bias);
      if (k == 0 || v > best_v) best_v = v, best = k;
    }
    const Pair pred = sm.pairs[best], truth = sm.pairs[sm.truth[i]];
    hits += which == Primitive::kAttribute ? pred.attr == truth.attr : pred.obj == truth.obj;
  }
  return static_cast<double>(hits) / static_cast<double>(sm.num_images());
}

inline EvalReport evaluate(const ScoreMatrix& sm, WorldMode mode) {
  EvalReport r;
  r.curve = bias_sweep(sm);
  r.attr_acc = primitive_accuracy(sm, Primitive::kAttribute);
  r.obj_acc = primitive_accuracy(sm, Primitive::kObject);
  r.mode = mode;
  return r;
}

// ---------------------------------------------------------------------------
// Retrieval

enum class Direction { kImageToText, kTextToImage };

struct RankedHit {
  std::size_t candidate = 0;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<std::vector<RankedHit>> lists;  // one per query
  /// k exceeded the number of candidates; every candidate was returned.
  bool truncated = false;
};

/// Top-k candidates per query, score descending, ties to the lower index.
inline RetrievalResult topk_retrieval(const tensor::Matrix<double>& scores, Direction dir,
                                      std::size_t k) {
  if (k == 0) throw std::invalid_argument("topk_retrieval: k must be at least 1");
  const bool i2t = dir == Direction::kImageToText;
  const std::size_t queries = i2t ? scores.rows() : scores.cols();
  const std::size_t cands = i2t ? scores.cols() : scores.rows();
  RetrievalResult res;
  res.truncated = k > cands;
  const std::size_t take = std::min(k, cands);
  std::vector<std::size_t> idx(cands);
  for (std::size_t q = 0; q < queries; ++q) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto score = [&](std::size_t c) { return i2t ? scores(q, c) : scores(c, q); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = score(a), sb = score(b);
                        return sa != sb ? sa > sb : a < b;
                      });
    std::vector<RankedHit> hits;
    for (std::size_t r = 0; r < take; ++r) hits.push_back({idx[r], score(idx[r])});
    res.lists.push_back(std::move(hits));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Report output

inline const char* kReportCsvHeader = "mode,AUC,HM,S,U,A,O";

inline std::string report_csv_row(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f",
                std::string(to_string(r.mode)).c_str(), r.curve.auc, r.curve.best_hm,
                r.curve.best_seen, r.curve.best_unseen, r.attr_acc, r.obj_acc);
  return buf;
}

/// bias,seen,unseen per curve point; sentinels print as -inf / inf.
inline std::string curve_csv(const EvalCurve& c) {
  std::string out = "bias,seen,unseen\n";
  char buf[128];
  for (const auto& p : c.points) {
    if (std::isfinite(p.bias))
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.bias, p.seen_acc, p.unseen_acc);
    else
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g\n", p.bias > 0 ? "inf" : "-inf", p.seen_acc,
                    p.unseen_acc);
    out += buf;
  }
  return out;
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.curve.points) {
    curve.push_back({{"bias", std::isfinite(p.bias) ? nlohmann::json(p.bias)
                                                     : nlohmann::json(p.bias > 0 ? "inf" : "-inf")},
                     {"seen", p.seen_acc},
                     {"unseen", p.unseen_acc}});
  }
  return {{"mode", to_string(r.mode)}, {"AUC", r.curve.auc},       {"HM", r.curve.best_hm},
          {"S", r.curve.best_seen},    {"U", r.curve.best_unseen}, {"A", r.attr_acc},
          {"O", r.obj_acc},            {"degenerate", r.curve.degenerate}, {"curve", curve}};
}

}  // namespace hdaoe::eval
