#pragma once

// Finite-difference check of the full training objective on a toy problem:
// two original rows plus two rows fused by E_d, every network and both word
// tables, with dropout masks replayed from a fixed seed.

#include "hdaoe/model.hpp"
#include "hdaoe/tensor.hpp"

namespace hdaoe {

struct ToyProblem {
  std::size_t feature_dim = 16;
  std::size_t embed_dim = 8;
  std::size_t hidden_dim = 8;
  std::size_t attrs = 3;
  std::size_t objs = 2;
  std::size_t batch = 4;
  std::uint64_t seed = 11;
};

inline CompositionSpace toy_space(const ToyProblem& p) {
  CompositionSpace s;
  for (std::size_t a = 0; a < p.attrs; ++a) s.attributes.push_back("a" + std::to_string(a));
  for (std::size_t o = 0; o < p.objs; ++o) s.objects.push_back("o" + std::to_string(o));
  // every pair seen except the last, which stays unseen for testing
  for (std::size_t a = 0; a < p.attrs; ++a)
    for (std::size_t o = 0; o < p.objs; ++o) s.seen_pairs.insert({int(a), int(o)});
  if (s.seen_pairs.size() > 1) {
    const Pair last = *s.seen_pairs.rbegin();
    s.seen_pairs.erase(last);
    s.unseen_test_pairs.insert(last);
  }
  return s;
}

/// Toy model, batch and objective at precision T.
template <std::floating_point T>
struct ToyObjective {
  ToyProblem problem;
  LossOptions loss;
  HdaoeModel<T> model;
  tensor::Matrix<T> x, xa, xb;
  BatchLabels labels;

  ToyObjective(const ToyProblem& p, const LossOptions& l)
      : problem(p), loss(l), model(config_for(p), toy_space(p), WordTable(p.embed_dim), p.seed) {
    Rng data(derive_seed(p.seed, 0, 0, Stream::kData));
    const std::size_t n_orig = p.batch - p.batch / 2, n_syn = p.batch / 2;
    const auto random_rows = [&](std::size_t n) {
      tensor::Matrix<T> m(n, p.feature_dim);
      for (auto& v : m.values()) v = static_cast<T>(data.normal());
      return m;
    };
    x = random_rows(n_orig);
    xa = random_rows(n_syn);
    xb = random_rows(n_syn);
    const auto seen = model.space().seen_list();
    for (std::size_t i = 0; i < p.batch; ++i) labels.push(seen[data.below(seen.size())]);
  }

  static ModelConfig config_for(const ToyProblem& p) {
    ModelConfig mc;
    mc.feature_dim = p.feature_dim;
    mc.embed_dim = p.embed_dim;
    mc.hidden_dim = p.hidden_dim;
    return mc;
  }

  tensor::Var<T> operator()(tensor::Tape<T>& tape) {
    Rng drop(derive_seed(problem.seed, 0, 0, Stream::kDropout));
    auto fused = model.fuse(tape.constant(xa), tape.constant(xb), true, &drop);
    auto f = tensor::concat_rows(tape.constant(x), fused);
    return model.compute_losses(f, labels, loss, true, &drop).L_total;
  }
};

/// f64 is checked against its own central differences. Lower precisions are
/// checked against central differences of an f64 copy holding the same
/// values, since f32 differences are dominated by rounding at any step small
/// enough to stay off the ReLU kinks.
template <std::floating_point T>
tensor::GradCheckReport check_model_gradients(const ToyProblem& p, double tolerance,
                                              const LossOptions& loss = {}) {
  ToyObjective<T> obj(p, loss);
  const auto closure = [&](tensor::Tape<T>& t) { return obj(t); };
  if constexpr (std::is_same_v<T, double>) {
    return tensor::grad_check<T>(closure, obj.model.params(), tolerance);
  } else {
    ToyObjective<double> ref(p, loss);
    ref.x = obj.x.template cast<double>();
    ref.xa = obj.xa.template cast<double>();
    ref.xb = obj.xb.template cast<double>();
    const auto ref_closure = [&](tensor::Tape<double>& t) { return ref(t); };
    return tensor::grad_check_against(closure, obj.model.params(), ref_closure, ref.model.params(),
                                      tolerance);
  }
}

}  // namespace hdaoe
