#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance gate.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "hdaoe/eval.hpp"
#include "hdaoe/rng.hpp"

namespace hdaoe::testkit {

/// Inverse-frequency weights via exact integers: with L = lcm(counts),
/// w_i = (L / c_i) / sum_j (L / c_j), a single correctly rounded division.
inline std::map<int, double> lcm_weights(const std::map<int, std::size_t>& hist) {
  std::uint64_t l = 1;
  for (const auto& [id, c] : hist) l = std::lcm(l, static_cast<std::uint64_t>(c));
  std::uint64_t total = 0;
  for (const auto& [id, c] : hist) total += l / c;
  std::map<int, double> out;
  for (const auto& [id, c] : hist)
    out[id] = static_cast<double>(l / c) / static_cast<double>(total);
  return out;
}

/// Straight-line MLP forward in double: per layer x*W + b, then layer norm and
/// ReLU on hidden layers (norm only when `ln`), linear output layer.
template <class Params>
std::vector<double> mlp_ref(const Params& ps, const std::string& name, std::size_t layers, bool ln,
                            std::vector<double> h) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string prefix = name + "." + std::to_string(l);
    const auto& w = ps.at(prefix + ".weight").value;
    const auto& b = ps.at(prefix + ".bias").value;
    std::vector<double> out(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (std::size_t i = 0; i < w.rows(); ++i) s += h[i] * static_cast<double>(w(i, j));
      out[j] = s;
    }
    if (l + 1 < layers) {
      if (ln) {
        const auto& g = ps.at(prefix + ".ln_gamma").value;
        const auto& be = ps.at(prefix + ".ln_beta").value;
        double mean = 0, var = 0;
        for (double v : out) mean += v;
        mean /= static_cast<double>(out.size());
        for (double v : out) var += (v - mean) * (v - mean);
        var /= static_cast<double>(out.size());
        for (std::size_t j = 0; j < out.size(); ++j)
          out[j] = g(0, j) * (out[j] - mean) / std::sqrt(var + 1e-5) + be(0, j);
      }
      for (double& v : out) v = std::max(0.0, v);
    }
    h = std::move(out);
  }
  return h;
}

inline std::vector<double> unit(std::vector<double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  if (s > 0)
    for (double& x : v) x /= std::sqrt(s);
  return v;
}

inline std::vector<double> cat(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline double cos_ref(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return aa > 0 && bb > 0 ? d / std::sqrt(aa * bb) : 0.0;
}

/// -log softmax(s / tau)[t] by direct log-sum-exp.
inline double xent_ref(const std::vector<double>& s, std::size_t t, double tau) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : s) mx = std::max(mx, v / tau);
  double z = 0;
  for (double v : s) z += std::exp(v / tau - mx);
  return mx + std::log(z) - s[t] / tau;
}

template <class Params>
std::vector<double> row_of(const Params& ps, const std::string& name, std::size_t r) {
  const auto& m = ps.at(name).value;
  std::vector<double> out(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) out[j] = m(r, j);
  return out;
}

/// Every embedding of one image, recomputed from the parameter blocks with the
/// default (shared) refinement networks.
struct ModelRef {
  std::vector<double> f_a, f_o, f_c, v_a, v_o, v_c, fa_ref, fo_ref, fc_ref;
};

template <class Params>
ModelRef model_ref(const Params& ps, std::size_t layers, bool ln, const std::vector<double>& x) {
  ModelRef r;
  r.f_o = unit(mlp_ref(ps, "E_o", layers, ln, x));
  r.f_a = unit(mlp_ref(ps, "E_a", layers, ln, x));
  r.f_c = unit(mlp_ref(ps, "E_c", layers, ln, cat(r.f_o, r.f_a)));
  r.v_o = unit(mlp_ref(ps, "V_o", layers, ln, r.f_o));
  r.v_a = unit(mlp_ref(ps, "V_a", layers, ln, r.f_a));
  r.v_c = unit(mlp_ref(ps, "V_c", layers, ln, cat(r.f_a, r.f_o)));
  double mx = *std::max_element(r.f_c.begin(), r.f_c.end()), z = 0;
  std::vector<double> sm(r.f_c.size());
  for (std::size_t j = 0; j < sm.size(); ++j) z += (sm[j] = std::exp(r.f_c[j] - mx));
  for (double& v : sm) v /= z;
  r.fo_ref = r.v_o;
  r.fa_ref = r.v_a;
  for (std::size_t j = 0; j < sm.size(); ++j) {
    r.fo_ref[j] += r.v_o[j] * sm[j];
    r.fa_ref[j] += r.v_a[j] * sm[j];
  }
  const auto joint = mlp_ref(ps, "E_c", layers, ln, cat(r.fo_ref, r.fa_ref));
  r.fc_ref = mlp_ref(ps, "g", layers, ln, cat(joint, r.v_c));
  return r;
}

/// w_c = g([w_o, w_a]) for one pair.
template <class Params>
std::vector<double> pair_embedding_ref(const Params& ps, std::size_t layers, bool ln, int attr,
                                       int obj) {
  return mlp_ref(ps, "g", layers, ln,
                 cat(row_of(ps, "word.obj", static_cast<std::size_t>(obj)),
                     row_of(ps, "word.attr", static_cast<std::size_t>(attr))));
}

/// Operating points of the unseen-bias sweep by exhaustive enumeration: the
/// literal biased argmax (ties to the lower pair index) evaluated below every
/// gap, between each pair of adjacent distinct gaps, and above every gap.
struct SweepRef {
  std::vector<std::pair<double, double>> points;  // (seen, unseen) along the curve, unique
  double best_seen = 0, best_unseen = 0, best_hm = 0, auc = 0;
};

template <class Scores>
SweepRef brute_force_sweep(const Scores& scores, const std::vector<std::size_t>& truth,
                           const std::vector<bool>& seen_mask) {
  const std::size_t n = scores.rows(), P = scores.cols();
  std::vector<double> gaps;
  for (std::size_t i = 0; i < n; ++i) {
    double bs = -std::numeric_limits<double>::infinity(), bu = bs;
    for (std::size_t k = 0; k < P; ++k) {
      double& best = seen_mask[k] ? bs : bu;
      best = std::max(best, scores(i, k));
    }
    gaps.push_back(bs - bu);
  }
  std::sort(gaps.begin(), gaps.end());
  gaps.erase(std::unique(gaps.begin(), gaps.end()), gaps.end());
  std::vector<double> probes{gaps.front() - 1};
  for (std::size_t j = 0; j + 1 < gaps.size(); ++j) probes.push_back((gaps[j] + gaps[j + 1]) / 2);
  probes.push_back(gaps.back() + 1);

  SweepRef ref;
  for (double b : probes) {
    std::size_t sh = 0, st = 0, uh = 0, ut = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < P; ++k) {
        const double v = scores(i, k) + (seen_mask[k] ? 0.0 : b);
        const double w = scores(i, best) + (seen_mask[best] ? 0.0 : b);
        if (v > w) best = k;
      }
      if (seen_mask[truth[i]]) {
        ++st;
        sh += best == truth[i];
      } else {
        ++ut;
        uh += best == truth[i];
      }
    }
    const double s = st ? double(sh) / double(st) : 0.0, u = ut ? double(uh) / double(ut) : 0.0;
    ref.points.emplace_back(s, u);
  }
  std::sort(ref.points.begin(), ref.points.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second > b.second;
  });
  ref.points.erase(std::unique(ref.points.begin(), ref.points.end()), ref.points.end());
  for (std::size_t k = 0; k < ref.points.size(); ++k) {
    const auto [s, u] = ref.points[k];
    ref.best_seen = std::max(ref.best_seen, s);
    ref.best_unseen = std::max(ref.best_unseen, u);
    ref.best_hm = std::max(ref.best_hm, s + u > 0 ? 2 * s * u / (s + u) : 0.0);
    if (k > 0)
      ref.auc += (s - ref.points[k - 1].first) * (u + ref.points[k - 1].second) / 2.0;
  }
  return ref;
}

/// Random score matrix with at least one seen and one unseen pair and, when
/// n >= 2, images of both kinds. `grid` draws multiples of 1/16 so gaps tie.
inline eval::ScoreMatrix random_score_matrix(Rng& rng, std::size_t n, std::size_t P, bool grid) {
  eval::ScoreMatrix sm;
  sm.scores = tensor::Matrix<double>(n, P);
  for (auto& v : sm.scores.values())
    v = grid ? static_cast<double>(rng.below(33)) / 16.0 - 1.0 : rng.uniform(-3.0, 3.0);
  sm.seen_mask.assign(P, false);
  for (std::size_t k = 0; k < P; ++k) sm.seen_mask[k] = rng.bernoulli(0.5);
  sm.seen_mask[0] = true;
  sm.seen_mask[P - 1] = false;
  for (std::size_t k = 0; k < P; ++k) sm.pairs.push_back({static_cast<int>(k % 3), static_cast<int>(k)});
  std::vector<std::size_t> seen, unseen;
  for (std::size_t k = 0; k < P; ++k) (sm.seen_mask[k] ? seen : unseen).push_back(k);
  for (std::size_t i = 0; i < n; ++i) {
    const bool pick_seen = i == 0 ? true : i == 1 ? false : rng.bernoulli(0.5);
    const auto& pool = pick_seen ? seen : unseen;
    sm.truth.push_back(pool[rng.below(pool.size())]);
  }
  return sm;
}

}  // namespace hdaoe::testkit
