#pragma once

// Attribute-driven data synthesis: inverse-frequency attribute weights,
// partner selection with rejection resampling, and the E_d connector that
// fuses a sample with its partner into a synthetic training feature.

#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hdaoe/compspace.hpp"
#include "hdaoe/rng.hpp"
#include "hdaoe/tensor.hpp"

namespace hdaoe::adds {

enum class Strategy { kNone, kObj, kAtt, kAttObj };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kObj: return "obj";
    case Strategy::kAtt: return "att";
    case Strategy::kAttObj: return "att_obj";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "none") return Strategy::kNone;
  if (s == "obj") return Strategy::kObj;
  if (s == "att") return Strategy::kAtt;
  if (s == "att_obj") return Strategy::kAttObj;
  throw std::invalid_argument("unknown synthesis strategy '" + std::string(s) + "'");
}

struct AddsConfig {
  double mix_probability = 0.5;
  std::size_t max_reselect = 100;
  Strategy strategy = Strategy::kObj;

  void validate() const {
    if (!(mix_probability >= 0.0 && mix_probability <= 1.0))
      throw std::invalid_argument("adds.mix_probability must be in [0,1]");
    if (max_reselect == 0) throw std::invalid_argument("adds.max_reselect must be positive");
  }
};

/// Normalized inverse-frequency weights over the attributes of one object
/// (or, for the attribute-joining ablation, over the objects of one attribute).
struct AttributeWeights {
  int obj_id = -1;
  std::map<int, double> entries;
};

/// weight_i = (1/count_i) / sum_j (1/count_j)
inline AttributeWeights attribute_weights(const std::map<int, std::size_t>& hist,
                                          int obj_id = -1) {
  if (hist.empty()) throw std::invalid_argument("attribute_weights: empty histogram");
  double total = 0.0;
  for (const auto& [id, count] : hist) {
    if (count == 0) throw std::invalid_argument("attribute_weights: zero count");
    total += 1.0 / static_cast<double>(count);
  }
  AttributeWeights w;
  w.obj_id = obj_id;
  for (const auto& [id, count] : hist) w.entries[id] = (1.0 / static_cast<double>(count)) / total;
  return w;
}

/// Train records grouped by pair, with per-object and per-attribute
/// histograms and the weight tables derived from them.
class TrainIndex {
 public:
  TrainIndex() = default;

  explicit TrainIndex(std::span<const SampleRecord> records) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.split != Split::kTrain) continue;
      records_.push_back(r);
      by_pair_[r.pair()].push_back(records_.size() - 1);
      ++attrs_of_obj_[r.obj_id][r.attr_id];
      ++objs_of_attr_[r.attr_id][r.obj_id];
    }
    for (const auto& [obj, hist] : attrs_of_obj_) weights_by_obj_[obj] = attribute_weights(hist, obj);
    for (const auto& [attr, hist] : objs_of_attr_) {
      auto w = attribute_weights(hist, -1);
      weights_by_attr_[attr] = std::move(w);
    }
  }

  const std::vector<SampleRecord>& records() const { return records_; }

  const std::vector<std::size_t>& candidates(Pair p) const {
    static const std::vector<std::size_t> kEmpty;
    const auto it = by_pair_.find(p);
    return it == by_pair_.end() ? kEmpty : it->second;
  }

  bool has_object(int obj) const { return attrs_of_obj_.contains(obj); }
  bool has_attribute(int attr) const { return objs_of_attr_.contains(attr); }

  const std::map<int, std::size_t>& attributes_of(int obj) const {
    const auto it = attrs_of_obj_.find(obj);
    if (it == attrs_of_obj_.end())
      throw std::out_of_range("object " + std::to_string(obj) + " has no train records");
    return it->second;
  }
  const std::map<int, std::size_t>& objects_of(int attr) const {
    const auto it = objs_of_attr_.find(attr);
    if (it == objs_of_attr_.end())
      throw std::out_of_range("attribute " + std::to_string(attr) + " has no train records");
    return it->second;
  }

  const AttributeWeights& weights_for_object(int obj) const {
    const auto it = weights_by_obj_.find(obj);
    if (it == weights_by_obj_.end())
      throw std::out_of_range("object " + std::to_string(obj) + " has no train records");
    return it->second;
  }
  const AttributeWeights& weights_for_attribute(int attr) const {
    const auto it = weights_by_attr_.find(attr);
    if (it == weights_by_attr_.end())
      throw std::out_of_range("attribute " + std::to_string(attr) + " has no train records");
    return it->second;
  }

 private:
  std::vector<SampleRecord> records_;
  std::map<Pair, std::vector<std::size_t>> by_pair_;
  std::map<int, std::map<int, std::size_t>> attrs_of_obj_;
  std::map<int, std::map<int, std::size_t>> objs_of_attr_;
  std::map<int, AttributeWeights> weights_by_obj_;
  std::map<int, AttributeWeights> weights_by_attr_;
};

/// Which primitive is held fixed while its partner varies the other.
enum class JoinRole { kSameObject, kSameAttribute };

namespace detail {

inline const SampleRecord* uniform_pick(const TrainIndex& index, Pair p, Rng& rng) {
  const auto& c = index.candidates(p);
  if (c.empty()) return nullptr;
  return &index.records()[c[rng.below(c.size())]];
}

}  // namespace detail

/// Picks the partner for `source`.
///
/// With a single train variant of the shared primitive the partner comes from
/// the source's own pair. Otherwise a different variant is drawn from the
/// weights renormalized without the source's variant, followed by a uniform
/// record of that pair; invalid draws are redrawn up to max_reselect times,
/// then any valid different-variant record is used, then a same-pair record.
inline SampleRecord sample_partner(const SampleRecord& source, const AttributeWeights& weights,
                                   const TrainIndex& index, const AddsConfig& config, Rng& rng,
                                   JoinRole role = JoinRole::kSameObject) {
  const bool same_obj = role == JoinRole::kSameObject;
  const int shared = same_obj ? source.obj_id : source.attr_id;
  const int own = same_obj ? source.attr_id : source.obj_id;
  if (same_obj ? !index.has_object(shared) : !index.has_attribute(shared))
    throw std::out_of_range(std::string(same_obj ? "object " : "attribute ") +
                            std::to_string(shared) + " is absent from the train index");
  const auto& variants = same_obj ? index.attributes_of(shared) : index.objects_of(shared);
  const auto pair_of = [&](int variant) {
    return same_obj ? Pair{variant, shared} : Pair{shared, variant};
  };
  const auto valid = [&](const SampleRecord* r) {
    return r != nullptr && r->split == Split::kTrain &&
           (same_obj ? r->obj_id == shared && r->attr_id != own
                     : r->attr_id == shared && r->obj_id != own);
  };

  if (variants.size() >= 2) {
    std::vector<int> ids;
    std::vector<double> w;
    for (const auto& [id, weight] : weights.entries) {
      if (id == own || weight <= 0.0) continue;
      ids.push_back(id);
      w.push_back(weight);
    }
    if (!ids.empty()) {
      for (std::size_t attempt = 0; attempt < config.max_reselect; ++attempt) {
        const std::size_t k = rng.discrete(w);
        const SampleRecord* cand = detail::uniform_pick(index, pair_of(ids[k]), rng);
        if (valid(cand)) return *cand;
      }
    }
    for (const auto& [variant, count] : variants) {
      if (variant == own) continue;
      const SampleRecord* cand = detail::uniform_pick(index, pair_of(variant), rng);
      if (valid(cand)) return *cand;
    }
  }
  const SampleRecord* same = detail::uniform_pick(index, source.pair(), rng);
  if (same == nullptr) throw std::out_of_range("source pair has no train records");
  return *same;
}

struct SyntheticSample {
  std::size_t source_index = 0;   // feature index of x_a
  std::size_t partner_index = 0;  // feature index of x_b
  int attr_id = 0;
  int obj_id = 0;
};

/// One element of the per-epoch D_C stream.
struct EpochItem {
  bool synthetic = false;
  std::size_t feature_index = 0;  // original: the sample; synthetic: x_a
  std::size_t partner_index = 0;  // synthetic only
  int attr_id = 0;
  int obj_id = 0;
  std::string source_id;
  std::string partner_id;

  Pair pair() const { return {attr_id, obj_id}; }
};

/// Every train record once, in shuffled order; after each, with probability
/// mix_probability, a synthetic item labelled with its partner's pair.
inline std::vector<EpochItem> build_epoch_batches(const TrainIndex& index,
                                                  const AddsConfig& config, Rng& rng) {
  config.validate();
  const auto& recs = index.records();
  std::vector<std::size_t> order(recs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());

  std::vector<EpochItem> out;
  out.reserve(recs.size() * 2);
  const auto emit_synthetic = [&](const SampleRecord& src, JoinRole role) {
    const auto& weights = role == JoinRole::kSameObject ? index.weights_for_object(src.obj_id)
                                                        : index.weights_for_attribute(src.attr_id);
    const SampleRecord partner = sample_partner(src, weights, index, config, rng, role);
    out.push_back({true, src.feature_index, partner.feature_index, partner.attr_id,
                   partner.obj_id, src.sample_id, partner.sample_id});
  };
  for (std::size_t i : order) {
    const auto& r = recs[i];
    out.push_back({false, r.feature_index, r.feature_index, r.attr_id, r.obj_id, r.sample_id, {}});
    switch (config.strategy) {
      case Strategy::kNone: break;
      case Strategy::kObj:
        if (rng.bernoulli(config.mix_probability)) emit_synthetic(r, JoinRole::kSameObject);
        break;
      case Strategy::kAtt:
        if (rng.bernoulli(config.mix_probability)) emit_synthetic(r, JoinRole::kSameAttribute);
        break;
      case Strategy::kAttObj:
        if (rng.bernoulli(config.mix_probability)) emit_synthetic(r, JoinRole::kSameObject);
        if (rng.bernoulli(config.mix_probability)) emit_synthetic(r, JoinRole::kSameAttribute);
        break;
    }
  }
  return out;
}

inline std::vector<SyntheticSample> synthetic_samples(std::span<const EpochItem> items) {
  std::vector<SyntheticSample> out;
  for (const auto& it : items)
    if (it.synthetic) out.push_back({it.feature_index, it.partner_index, it.attr_id, it.obj_id});
  return out;
}

/// JSON-lines audit record per synthetic item.
inline void write_audit_log(std::ostream& out, std::span<const EpochItem> items, std::size_t epoch,
                            const CompositionSpace& space) {
  for (const auto& it : items) {
    if (!it.synthetic) continue;
    nlohmann::json j = {{"source_id", it.source_id},
                        {"partner_id", it.partner_id},
                        {"attr", space.attributes.at(static_cast<std::size_t>(it.attr_id))},
                        {"obj", space.objects.at(static_cast<std::size_t>(it.obj_id))},
                        {"epoch", epoch}};
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Connector E_d: MLP over [x_a, x_b] (2d -> d).

template <std::floating_point T>
class Connector {
 public:
  Connector() = default;
  Connector(std::size_t feature_dim, tensor::MlpSpec spec, tensor::ParameterSet<T>& params,
            Rng& init)
      : feature_dim_(feature_dim), mlp_("E_d", std::move(spec), params, init) {
    if (mlp_.spec().input_dim() != 2 * feature_dim || mlp_.spec().output_dim() != feature_dim)
      throw ShapeError("E_d must map 2d -> d");
  }

  std::size_t feature_dim() const { return feature_dim_; }
  const tensor::Mlp<T>& mlp() const { return mlp_; }

  tensor::Var<T> fuse(tensor::ParameterSet<T>& params, tensor::Var<T> feat_a,
                      tensor::Var<T> feat_b, bool training, Rng* rng) const {
    if (feat_a.cols() != feature_dim_ || feat_b.cols() != feature_dim_)
      throw ShapeError("fuse: feature width mismatch");
    return mlp_.forward(params, tensor::concat_cols(feat_a, feat_b), training, rng);
  }

  /// Inference-mode fusion of one pair of feature rows.
  std::vector<T> fuse(tensor::ParameterSet<T>& params, std::span<const T> feat_a,
                      std::span<const T> feat_b) const {
    if (feat_a.size() != feat_b.size()) throw ShapeError("fuse: feature width mismatch");
    tensor::Tape<T> tape(false);
    auto out = fuse(params, tape.constant(tensor::Matrix<T>::row_vector(feat_a)),
                    tape.constant(tensor::Matrix<T>::row_vector(feat_b)), false, nullptr);
    const auto v = out.value().values();
    return {v.begin(), v.end()};
  }

 private:
  std::size_t feature_dim_ = 0;
  tensor::Mlp<T> mlp_;
};

}  // namespace hdaoe::adds
