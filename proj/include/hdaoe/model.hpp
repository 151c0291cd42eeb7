#pragma once

// The HDA-OE network: disentangled attribute / object / composition
// encoders, the label embedding network, subclass-driven virtual encodings
// with their refinement, the two loss families, and feasibility scoring.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hdaoe/adds.hpp"
#include "hdaoe/compspace.hpp"
#include "hdaoe/rng.hpp"
#include "hdaoe/tensor.hpp"

namespace hdaoe {

// ---------------------------------------------------------------------------
// Word embeddings

/// Token -> vector provider. Tokens absent from a loaded file (or every token,
/// without a file) get a deterministic unit Gaussian seeded by the token hash.
class WordTable {
 public:
  explicit WordTable(std::size_t dim = 300) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("word table dim must be positive");
  }

  /// Reads "token v1 ... v_dim" lines. Tokens compare case-insensitively with
  /// spaces replaced by dots.
  static WordTable from_file(const std::filesystem::path& path, std::size_t dim) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open word embedding file: " + path.string());
    WordTable table(dim);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::istringstream fields(line);
      std::string token;
      if (!(fields >> token)) continue;
      std::vector<double> v;
      v.reserve(dim);
      double x;
      while (fields >> x) v.push_back(x);
      if (v.size() != dim)
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " values for '" + token + "'");
      table.vectors_[normalize(token)] = std::move(v);
    }
    return table;
  }

  std::size_t dim() const { return dim_; }
  std::size_t loaded() const { return vectors_.size(); }

  bool contains(std::string_view token) const { return vectors_.contains(normalize(token)); }

  std::vector<double> lookup(std::string_view token) const {
    if (const auto it = vectors_.find(normalize(token)); it != vectors_.end()) return it->second;
    return pseudo_embedding(token, dim_);
  }

  static std::string normalize(std::string_view token) {
    std::string out(token);
    for (char& c : out) {
      if (c == ' ') c = '.';
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
  }

  static std::vector<double> pseudo_embedding(std::string_view token, std::size_t dim) {
    Rng rng(splitmix64(fnv1a64(normalize(token))));
    std::vector<double> v(dim);
    double sq = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& x : v) x *= inv;
    return v;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

// ---------------------------------------------------------------------------
// Configuration and loss bookkeeping

struct ModelConfig {
  std::size_t feature_dim = 768;
  std::size_t embed_dim = 300;
  std::size_t hidden_dim = 300;
  std::size_t layers = 3;
  bool layer_norm = true;
  double dropout = 0.3;
  /// Use E_c and g for the refined composition path as well.
  bool share_refine = true;
  bool train_word_table = true;

  void validate() const {
    if (feature_dim == 0 || embed_dim == 0 || hidden_dim == 0)
      throw std::invalid_argument("model dims must be positive");
    if (layers == 0) throw std::invalid_argument("model.layers must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw std::invalid_argument("model.dropout must be in [0,1)");
  }
};

/// Which embedding-loss terms take part in training.
struct EmdMask {
  bool ea = true;
  bool eo = true;
  bool ec = true;

  bool operator==(const EmdMask&) const = default;
};

struct LossBreakdown {
  double L_a = 0, L_o = 0, L_c = 0, L_base = 0;
  double L_ea = 0, L_eo = 0, L_ec = 0, L_emd = 0;
  double L_total = 0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    L_a += o.L_a, L_o += o.L_o, L_c += o.L_c, L_base += o.L_base;
    L_ea += o.L_ea, L_eo += o.L_eo, L_ec += o.L_ec, L_emd += o.L_emd;
    L_total += o.L_total;
    return *this;
  }
  LossBreakdown scaled(double s) const {
    LossBreakdown r = *this;
    r.L_a *= s, r.L_o *= s, r.L_c *= s, r.L_base *= s;
    r.L_ea *= s, r.L_eo *= s, r.L_ec *= s, r.L_emd *= s;
    r.L_total *= s;
    return r;
  }
};

/// alpha * L_base + beta * L_emd
inline double loss_total(const LossBreakdown& base, const LossBreakdown& emd, double alpha,
                         double beta) {
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  return alpha * base.L_base + beta * emd.L_emd;
}

struct LossOptions {
  double tau = 0.05;
  double alpha = 2.0;
  double beta = 1.0;
  EmdMask mask;
};

/// Per-row training labels; pairs must be seen pairs.
struct BatchLabels {
  std::vector<int> attr;
  std::vector<int> obj;

  std::size_t size() const { return attr.size(); }
  void push(Pair p) {
    attr.push_back(p.attr);
    obj.push_back(p.obj);
  }
};

/// Single-sample snapshot of every embedding along the forward pass.
template <class T>
struct ForwardState {
  std::vector<T> f_cls, f_a, f_o, f_c;
  std::vector<T> v_a, v_o, v_c;
  std::vector<T> f_a_ref, f_o_ref, f_c_ref;
};

template <class T>
struct LabelVectors {
  std::vector<T> w_a, w_o, w_c;
};

// ---------------------------------------------------------------------------
// Model

template <std::floating_point T>
class HdaoeModel {
 public:
  using Var = tensor::Var<T>;
  using Tape = tensor::Tape<T>;
  using Matrix = tensor::Matrix<T>;

  struct BaseEmbeddings {
    Var f_a, f_o, f_c;
  };
  struct LabelEmbeddings {
    Var w_a;  // m x D
    Var w_o;  // n x D
    Var w_c;  // |pairs| x D
  };
  struct VirtualEncodings {
    Var v_a, v_o, v_c;
  };
  struct Forward {
    BaseEmbeddings base;
    VirtualEncodings virt;
    Var f_a_ref, f_o_ref, f_c_ref;
  };
  struct LossGraph {
    Var L_a, L_o, L_c, L_base, L_ea, L_eo, L_ec, L_emd, L_total;

    LossBreakdown values() const {
      return {static_cast<double>(L_a.item()),  static_cast<double>(L_o.item()),
              static_cast<double>(L_c.item()),  static_cast<double>(L_base.item()),
              static_cast<double>(L_ea.item()), static_cast<double>(L_eo.item()),
              static_cast<double>(L_ec.item()), static_cast<double>(L_emd.item()),
              static_cast<double>(L_total.item())};
    }
  };

  HdaoeModel(ModelConfig config, CompositionSpace space, const WordTable& words,
             std::uint64_t seed)
      : config_(std::move(config)), space_(std::move(space)) {
    config_.validate();
    space_.validate();
    if (words.dim() != config_.embed_dim)
      throw ShapeError("word table dim " + std::to_string(words.dim()) +
                       " does not match embed_dim " + std::to_string(config_.embed_dim));
    const std::size_t d = config_.feature_dim, D = config_.embed_dim, H = config_.hidden_dim;
    const std::size_t L = config_.layers;
    const bool ln = config_.layer_norm;
    const double p = config_.dropout;
    Rng init(derive_seed(seed, 0, 0, Stream::kInit));
    using tensor::MlpSpec;
    E_a_ = tensor::Mlp<T>("E_a", MlpSpec::standard(d, H, D, L, ln, p), params_, init);
    E_o_ = tensor::Mlp<T>("E_o", MlpSpec::standard(d, H, D, L, ln, p), params_, init);
    E_c_ = tensor::Mlp<T>("E_c", MlpSpec::standard(2 * D, H, D, L, ln, p), params_, init);
    g_ = tensor::Mlp<T>("g", MlpSpec::standard(2 * D, H, D, L, ln, p), params_, init);
    V_a_ = tensor::Mlp<T>("V_a", MlpSpec::standard(D, H, D, L, ln, p), params_, init);
    V_o_ = tensor::Mlp<T>("V_o", MlpSpec::standard(D, H, D, L, ln, p), params_, init);
    V_c_ = tensor::Mlp<T>("V_c", MlpSpec::standard(2 * D, H, D, L, ln, p), params_, init);
    if (!config_.share_refine) {
      E_c_ref_ = tensor::Mlp<T>("E_c_ref", MlpSpec::standard(2 * D, H, D, L, ln, p), params_, init);
      g_ref_ = tensor::Mlp<T>("g_ref", MlpSpec::standard(2 * D, H, D, L, ln, p), params_, init);
    }
    connector_ = adds::Connector<T>(d, MlpSpec::standard(2 * d, d, d, L, ln, p), params_, init);

    Matrix wa(space_.num_attributes(), D), wo(space_.num_objects(), D);
    for (std::size_t a = 0; a < space_.num_attributes(); ++a) {
      const auto v = words.lookup(space_.attributes[a]);
      for (std::size_t j = 0; j < D; ++j) wa(a, j) = static_cast<T>(v[j]);
    }
    for (std::size_t o = 0; o < space_.num_objects(); ++o) {
      const auto v = words.lookup(space_.objects[o]);
      for (std::size_t j = 0; j < D; ++j) wo(o, j) = static_cast<T>(v[j]);
    }
    params_.add("word.attr", std::move(wa));
    params_.add("word.obj", std::move(wo));

    const auto seen = space_.seen_list();
    for (std::size_t i = 0; i < seen.size(); ++i) seen_index_[seen[i]] = i;
    seen_pairs_ = seen;
  }

  const ModelConfig& config() const { return config_; }
  const CompositionSpace& space() const { return space_; }
  tensor::ParameterSet<T>& params() { return params_; }
  const tensor::ParameterSet<T>& params() const { return params_; }
  const adds::Connector<T>& connector() const { return connector_; }
  const std::vector<Pair>& seen_pairs() const { return seen_pairs_; }

  /// Names of the learnable blocks grouped by network.
  static std::vector<std::string> group_of(const tensor::ParameterSet<T>& params) {
    std::vector<std::string> groups;
    for (const auto& p : params) {
      const auto dot = p.name.find('.');
      const std::string g = p.name.substr(0, dot);
      if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
    }
    return groups;
  }

  // -- graph building blocks -------------------------------------------------

  /// f_o = Norm(E_o(f_cls)), f_a = Norm(E_a(f_cls)), f_c = Norm(E_c([f_o, f_a]))
  BaseEmbeddings encode_base(Var f_cls, bool training, Rng* rng) {
    if (f_cls.cols() != config_.feature_dim)
      throw ShapeError("encode_base: feature width " + std::to_string(f_cls.cols()) +
                       ", expected " + std::to_string(config_.feature_dim));
    Var f_o = tensor::l2_normalize_rows(E_o_.forward(params_, f_cls, training, rng));
    Var f_a = tensor::l2_normalize_rows(E_a_.forward(params_, f_cls, training, rng));
    Var f_c = tensor::l2_normalize_rows(
        E_c_.forward(params_, tensor::concat_cols(f_o, f_a), training, rng));
    return {f_a, f_o, f_c};
  }

  Var attribute_table(Tape& t) { return word_leaf(t, "word.attr"); }
  Var object_table(Tape& t) { return word_leaf(t, "word.obj"); }

  /// w_a, w_o tables and w_c = g([w_o, w_a]) for every pair in `pairs`.
  LabelEmbeddings label_embed(Tape& t, std::span<const Pair> pairs, bool training, Rng* rng) {
    Var wa = attribute_table(t);
    Var wo = object_table(t);
    std::vector<std::size_t> ai, oi;
    ai.reserve(pairs.size());
    oi.reserve(pairs.size());
    for (Pair p : pairs) {
      check_pair(p);
      ai.push_back(static_cast<std::size_t>(p.attr));
      oi.push_back(static_cast<std::size_t>(p.obj));
    }
    Var wc = g_.forward(params_,
                        tensor::concat_cols(tensor::gather_rows(wo, std::move(oi)),
                                            tensor::gather_rows(wa, std::move(ai))),
                        training, rng);
    return {wa, wo, wc};
  }

  /// v_o = Norm(V_o(f_o)), v_a = Norm(V_a(f_a)), v_c = Norm(V_c([f_a, f_o])).
  /// Dropout inside V_* is the stochastic part and only runs when training.
  VirtualEncodings sdde_virtual(Var f_a, Var f_o, bool training, Rng* rng) {
    if (f_a.cols() != config_.embed_dim || f_o.cols() != config_.embed_dim)
      throw ShapeError("sdde_virtual: embedding width mismatch");
    Var v_o = tensor::l2_normalize_rows(V_o_.forward(params_, f_o, training, rng));
    Var v_a = tensor::l2_normalize_rows(V_a_.forward(params_, f_a, training, rng));
    Var v_c = tensor::l2_normalize_rows(
        V_c_.forward(params_, tensor::concat_cols(f_a, f_o), training, rng));
    return {v_a, v_o, v_c};
  }

  /// f' = v + v (.) softmax(f_c), softmax over the embedding coordinates.
  static Var sdde_refine(Var v, Var f_c) {
    if (v.rows() != f_c.rows() || v.cols() != f_c.cols())
      throw ShapeError("sdde_refine: shape mismatch");
    return tensor::add(v, tensor::hadamard(v, tensor::softmax_rows(f_c)));
  }

  /// f_c' = g(E_c([f_o', f_a']), v_c)
  Var compose_refined(Var f_a_ref, Var f_o_ref, Var v_c, bool training, Rng* rng) {
    const std::size_t D = config_.embed_dim;
    if (f_a_ref.cols() != D || f_o_ref.cols() != D || v_c.cols() != D)
      throw ShapeError("compose_refined: embedding width mismatch");
    auto& ec = config_.share_refine ? E_c_ : E_c_ref_;
    auto& g = config_.share_refine ? g_ : g_ref_;
    Var joint = ec.forward(params_, tensor::concat_cols(f_o_ref, f_a_ref), training, rng);
    return g.forward(params_, tensor::concat_cols(joint, v_c), training, rng);
  }

  Forward forward(Var f_cls, bool training, Rng* rng) {
    Forward fw;
    fw.base = encode_base(f_cls, training, rng);
    fw.virt = sdde_virtual(fw.base.f_a, fw.base.f_o, training, rng);
    fw.f_o_ref = sdde_refine(fw.virt.v_o, fw.base.f_c);
    fw.f_a_ref = sdde_refine(fw.virt.v_a, fw.base.f_c);
    fw.f_c_ref = compose_refined(fw.f_a_ref, fw.f_o_ref, fw.virt.v_c, training, rng);
    return fw;
  }

  Var fuse(Var feat_a, Var feat_b, bool training, Rng* rng) {
    return connector_.fuse(params_, feat_a, feat_b, training, rng);
  }

  /// Base and embedding losses on one batch. Candidate sets: all attributes,
  /// all objects, and the seen pairs. Masked embedding terms contribute 0.
  LossGraph compute_losses(Var f_cls, const BatchLabels& labels, const LossOptions& opt,
                           bool training, Rng* rng) {
    if (labels.size() == 0 || f_cls.rows() != labels.size())
      throw std::invalid_argument("compute_losses: empty batch or label count mismatch");
    if (!(opt.tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (opt.alpha < 0.0 || opt.beta < 0.0)
      throw std::invalid_argument("loss weights must be non-negative");
    Tape& t = *f_cls.tape;
    std::vector<std::size_t> ta, to, tc;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const Pair p{labels.attr[i], labels.obj[i]};
      const auto it = seen_index_.find(p);
      if (it == seen_index_.end())
        throw std::invalid_argument("training label '" + space_.pair_name(p) + "' is not seen");
      ta.push_back(static_cast<std::size_t>(p.attr));
      to.push_back(static_cast<std::size_t>(p.obj));
      tc.push_back(it->second);
    }
    const T inv_tau = static_cast<T>(1.0 / opt.tau);
    Forward fw = forward(f_cls, training, rng);
    LabelEmbeddings w = label_embed(t, seen_pairs_, training, rng);
    const auto xent = [&](Var f, Var table, const std::vector<std::size_t>& target) {
      return tensor::cross_entropy(tensor::scale(tensor::cosine_matrix(f, table), inv_tau), target);
    };
    LossGraph lg;
    lg.L_a = xent(fw.base.f_a, w.w_a, ta);
    lg.L_o = xent(fw.base.f_o, w.w_o, to);
    lg.L_c = xent(fw.base.f_c, w.w_c, tc);
    lg.L_base = tensor::add(tensor::add(lg.L_a, lg.L_o), lg.L_c);
    const auto zero = [&] { return t.constant(Matrix(1, 1), "masked_term"); };
    lg.L_ea = opt.mask.ea ? xent(fw.f_a_ref, w.w_a, ta) : zero();
    lg.L_eo = opt.mask.eo ? xent(fw.f_o_ref, w.w_o, to) : zero();
    lg.L_ec = opt.mask.ec ? xent(fw.f_c_ref, w.w_c, tc) : zero();
    lg.L_emd = tensor::add(tensor::add(lg.L_ea, lg.L_eo), lg.L_ec);
    lg.L_total = tensor::add(tensor::scale(lg.L_base, static_cast<T>(opt.alpha)),
                             tensor::scale(lg.L_emd, static_cast<T>(opt.beta)));
    return lg;
  }

  // -- eager, single-sample API ----------------------------------------------

  ForwardState<T> forward_state(std::span<const T> f_cls) {
    Tape t(false);
    Forward fw = forward(t.constant(Matrix::row_vector(f_cls)), false, nullptr);
    const auto vec = [](Var v) {
      const auto s = v.value().values();
      return std::vector<T>(s.begin(), s.end());
    };
    return {std::vector<T>(f_cls.begin(), f_cls.end()),
            vec(fw.base.f_a), vec(fw.base.f_o), vec(fw.base.f_c),
            vec(fw.virt.v_a), vec(fw.virt.v_o), vec(fw.virt.v_c),
            vec(fw.f_a_ref), vec(fw.f_o_ref), vec(fw.f_c_ref)};
  }

  LabelVectors<T> label_embed(int attr_id, int obj_id) {
    Tape t(false);
    const Pair p{attr_id, obj_id};
    LabelEmbeddings w = label_embed(t, std::span<const Pair>(&p, 1), false, nullptr);
    const auto row = [](const Matrix& m, std::size_t r) {
      const auto s = m.row(r);
      return std::vector<T>(s.begin(), s.end());
    };
    return {row(w.w_a.value(), static_cast<std::size_t>(attr_id)),
            row(w.w_o.value(), static_cast<std::size_t>(obj_id)), row(w.w_c.value(), 0)};
  }

  /// Batch loss in inference mode (dropout off).
  LossBreakdown evaluate_losses(const Matrix& f_cls, const BatchLabels& labels,
                                const LossOptions& opt) {
    Tape t(false);
    return compute_losses(t.constant(f_cls), labels, opt, false, nullptr).values();
  }

  /// C(a,o) = cos(f_a', w_a) + cos(f_o', w_o) + cos(f_c', w_c) for every
  /// image row and every pair of `labels`. With refined=false the base
  /// embeddings f_a, f_o, f_c are scored instead.
  tensor::Matrix<double> feasibility_scores(const Matrix& features, const LabelSpace& labels,
                                            bool refined = true, std::size_t chunk = 256) {
    if (labels.pairs.empty()) throw std::invalid_argument("feasibility_scores: empty label space");
    if (features.cols() != config_.feature_dim)
      throw ShapeError("feasibility_scores: feature width mismatch");
    tensor::Matrix<double> out(features.rows(), labels.size());
    Tape lt(false);
    LabelEmbeddings w = label_embed(lt, labels.pairs, false, nullptr);
    for (std::size_t start = 0; start < features.rows(); start += chunk) {
      const std::size_t n = std::min(chunk, features.rows() - start);
      const T* base = features.data() + start * features.cols();
      Tape t(false);
      Var x = t.constant(Matrix(n, features.cols(),
                                std::vector<T>(base, base + n * features.cols())));
      Forward fw = forward(x, false, nullptr);
      Var fa = refined ? fw.f_a_ref : fw.base.f_a;
      Var fo = refined ? fw.f_o_ref : fw.base.f_o;
      Var fc = refined ? fw.f_c_ref : fw.base.f_c;
      const auto& ca = tensor::cosine_matrix(fa, t.constant(w.w_a.value())).value();
      const auto& co = tensor::cosine_matrix(fo, t.constant(w.w_o.value())).value();
      const auto& cc = tensor::cosine_matrix(fc, t.constant(w.w_c.value())).value();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < labels.size(); ++k) {
          const Pair p = labels.pairs[k];
          out(start + i, k) = static_cast<double>(ca(i, static_cast<std::size_t>(p.attr))) +
                              static_cast<double>(co(i, static_cast<std::size_t>(p.obj))) +
                              static_cast<double>(cc(i, k));
        }
    }
    return out;
  }

 private:
  Var word_leaf(Tape& t, std::string_view name) {
    auto& p = params_.at(name);
    if (!config_.train_word_table && t.grad_enabled()) return t.constant(p.value, "word_table");
    return t.parameter(p);
  }

  void check_pair(Pair p) const {
    if (p.attr < 0 || static_cast<std::size_t>(p.attr) >= space_.num_attributes() || p.obj < 0 ||
        static_cast<std::size_t>(p.obj) >= space_.num_objects())
      throw VocabularyError("unknown pair (" + std::to_string(p.attr) + ", " +
                            std::to_string(p.obj) + ")");
  }

  ModelConfig config_;
  CompositionSpace space_;
  tensor::ParameterSet<T> params_;
  tensor::Mlp<T> E_a_, E_o_, E_c_, g_, V_a_, V_o_, V_c_, E_c_ref_, g_ref_;
  adds::Connector<T> connector_;
  std::map<Pair, std::size_t> seen_index_;
  std::vector<Pair> seen_pairs_;
};

}  // namespace hdaoe
