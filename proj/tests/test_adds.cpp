#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hdaoe/adds.hpp"
#include "oracles.hpp"

using namespace hdaoe;
using namespace hdaoe::adds;

namespace {

// Records with counts[(a, o)] copies of each pair; feature index = record index.
std::vector<SampleRecord> make_records(const std::map<Pair, std::size_t>& counts) {
  std::vector<SampleRecord> out;
  for (const auto& [p, n] : counts)
    for (std::size_t i = 0; i < n; ++i) {
      SampleRecord r;
      r.sample_id = "s" + std::to_string(out.size());
      r.feature_index = out.size();
      r.attr_id = p.attr;
      r.obj_id = p.obj;
      out.push_back(r);
    }
  return out;
}

double weight_sum(const AttributeWeights& w) {
  double s = 0;
  for (const auto& [id, v] : w.entries) s += v;
  return s;
}

}  // namespace

TEST(AttributeWeights, Examples) {
  auto w = attribute_weights({{0, 1}, {1, 3}});
  EXPECT_DOUBLE_EQ(w.entries[0], 0.75);
  EXPECT_DOUBLE_EQ(w.entries[1], 0.25);
  w = attribute_weights({{0, 2}, {1, 2}});
  EXPECT_DOUBLE_EQ(w.entries[0], 0.5);
  EXPECT_DOUBLE_EQ(w.entries[1], 0.5);
  w = attribute_weights({{0, 1}, {1, 2}, {2, 4}});
  EXPECT_NEAR(w.entries[0], 4.0 / 7, 1e-15);
  EXPECT_NEAR(w.entries[1], 2.0 / 7, 1e-15);
  EXPECT_NEAR(w.entries[2], 1.0 / 7, 1e-15);
}

TEST(AttributeWeights, Errors) {
  EXPECT_THROW(attribute_weights({}), std::invalid_argument);
  EXPECT_THROW(attribute_weights({{0, 1}, {1, 0}}), std::invalid_argument);
}

TEST(AttributeWeights, MatchesExactIntegerOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<int, std::size_t> hist;
    const std::size_t n = 1 + rng.below(8);
    while (hist.size() < n) hist[static_cast<int>(rng.below(50))] = 1 + rng.below(20);
    const auto got = attribute_weights(hist, 3);
    const auto ref = testkit::lcm_weights(hist);
    EXPECT_EQ(got.obj_id, 3);
    ASSERT_EQ(got.entries.size(), ref.size());
    for (const auto& [id, v] : ref) EXPECT_NEAR(got.entries.at(id), v, 1e-12);
  }
}

TEST(AttributeWeights, SumsToOneScaleAndPermutationInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<int, std::size_t> hist, doubled, relabelled;
    const std::size_t n = 1 + rng.below(10);
    for (std::size_t k = 0; k < n; ++k) hist[static_cast<int>(k)] = 1 + rng.below(1000);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    for (const auto& [id, c] : hist) {
      doubled[id] = 2 * c;
      relabelled[perm[id]] = c;
    }
    const auto w = attribute_weights(hist);
    EXPECT_NEAR(weight_sum(w), 1.0, 1e-9);
    const auto wd = attribute_weights(doubled), wp = attribute_weights(relabelled);
    for (const auto& [id, v] : w.entries) {
      EXPECT_GT(v, 0.0);
      EXPECT_NEAR(wd.entries.at(id), v, 1e-15);
      EXPECT_NEAR(wp.entries.at(perm[id]), v, 1e-15);
    }
  }
}

TEST(TrainIndex, IgnoresNonTrainAndCountsPerObject) {
  auto recs = make_records({{{0, 0}, 1}, {{1, 0}, 3}, {{1, 1}, 2}});
  SampleRecord test = recs[0];
  test.split = Split::kTest;
  test.attr_id = 2;
  recs.push_back(test);
  TrainIndex idx(recs);
  EXPECT_EQ(idx.records().size(), 6u);
  EXPECT_EQ(idx.attributes_of(0), (std::map<int, std::size_t>{{0, 1}, {1, 3}}));
  EXPECT_EQ(idx.objects_of(1), (std::map<int, std::size_t>{{0, 3}, {1, 2}}));
  EXPECT_DOUBLE_EQ(idx.weights_for_object(0).entries.at(0), 0.75);
  EXPECT_FALSE(idx.has_attribute(2));
  EXPECT_THROW(idx.weights_for_object(7), std::out_of_range);
}

TEST(SamplePartner, SingleAttributeObjectReturnsSamePair) {
  const auto recs = make_records({{{0, 0}, 1}, {{1, 1}, 2}});
  TrainIndex idx(recs);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto p = sample_partner(idx.records()[0], idx.weights_for_object(0), idx, {}, rng);
    EXPECT_EQ(p.pair(), (Pair{0, 0}));
  }
}

TEST(SamplePartner, OnlyAlternativeIsAlwaysChosen) {
  const auto recs = make_records({{{0, 0}, 1}, {{1, 0}, 3}});
  TrainIndex idx(recs);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto p = sample_partner(idx.records()[0], idx.weights_for_object(0), idx, {}, rng);
    EXPECT_EQ(p.pair(), (Pair{1, 0}));
  }
}

TEST(SamplePartner, AbsentObjectThrows) {
  const auto recs = make_records({{{0, 0}, 1}});
  TrainIndex idx(recs);
  Rng rng(1);
  SampleRecord ghost;
  ghost.obj_id = 5;
  EXPECT_THROW(sample_partner(ghost, idx.weights_for_object(0), idx, {}, rng), std::out_of_range);
}

TEST(SamplePartner, FrequenciesMatchRenormalizedWeights) {
  const auto recs = make_records({{{0, 0}, 1}, {{1, 0}, 2}, {{2, 0}, 4}});
  TrainIndex idx(recs);
  Rng rng(77);
  std::map<int, int> hist;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    ++hist[sample_partner(idx.records()[0], idx.weights_for_object(0), idx, {}, rng).attr_id];
  EXPECT_EQ(hist[0], 0);
  const double tv = 0.5 * (std::abs(hist[1] / double(draws) - 2.0 / 3) +
                           std::abs(hist[2] / double(draws) - 1.0 / 3));
  EXPECT_LT(tv, 0.02);
}

TEST(SamplePartner, FallsBackWhenWeightsPointNowhere) {
  // weights over an attribute with no records: every draw is invalid
  const auto recs = make_records({{{0, 0}, 1}, {{1, 0}, 1}});
  TrainIndex idx(recs);
  AttributeWeights bogus;
  bogus.obj_id = 0;
  bogus.entries = {{0, 0.5}, {9, 0.5}};
  AddsConfig cfg;
  cfg.max_reselect = 3;
  Rng rng(3);
  EXPECT_EQ(sample_partner(idx.records()[0], bogus, idx, cfg, rng).pair(), (Pair{1, 0}));
}

TEST(SamplePartner, NeverChangesObjectOrKeepsAttribute) {
  Rng gen(12);
  for (int trial = 0; trial < 30; ++trial) {
    std::map<Pair, std::size_t> counts;
    for (int a = 0; a < 5; ++a)
      for (int o = 0; o < 4; ++o)
        if (gen.bernoulli(0.5)) counts[{a, o}] = 1 + gen.below(4);
    if (counts.empty()) continue;
    const auto recs = make_records(counts);
    TrainIndex idx(recs);
    Rng rng(trial);
    for (const auto& src : idx.records()) {
      const auto p = sample_partner(src, idx.weights_for_object(src.obj_id), idx, {}, rng);
      EXPECT_EQ(p.obj_id, src.obj_id);
      if (idx.attributes_of(src.obj_id).size() >= 2) {
        EXPECT_NE(p.attr_id, src.attr_id);
      }
      const auto q = sample_partner(src, idx.weights_for_attribute(src.attr_id), idx, {}, rng,
                                    JoinRole::kSameAttribute);
      EXPECT_EQ(q.attr_id, src.attr_id);
      if (idx.objects_of(src.attr_id).size() >= 2) {
        EXPECT_NE(q.obj_id, src.obj_id);
      }
    }
  }
}

TEST(Fuse, LeftProjectionReturnsFirstInput) {
  tensor::ParameterSet<double> ps;
  Rng init(0);
  Connector<double> ed(2, tensor::MlpSpec::standard(4, 4, 2, 1, false, 0.0), ps, init);
  auto& w = ps.at("E_d.0.weight").value;
  w.fill(0);
  w(0, 0) = w(1, 1) = 1;
  ps.at("E_d.0.bias").value.fill(0);
  const std::vector<double> a{0.3, -0.7}, b{5, 6};
  EXPECT_EQ(ed.fuse(ps, std::span<const double>(a), std::span<const double>(b)), a);
}

TEST(Fuse, ZeroWeightsGiveBias) {
  tensor::ParameterSet<double> ps;
  Rng init(0);
  Connector<double> ed(2, tensor::MlpSpec::standard(4, 4, 2, 1, false, 0.0), ps, init);
  ps.at("E_d.0.weight").value.fill(0);
  ps.at("E_d.0.bias").value.fill(3);
  const std::vector<double> a{1, 2}, b{3, 4};
  EXPECT_EQ(ed.fuse(ps, std::span<const double>(a), std::span<const double>(b)),
            (std::vector<double>{3, 3}));
}

TEST(Fuse, RandomConnectorMatchesIndependentForward) {
  const std::size_t d = 5;
  tensor::ParameterSet<double> ps;
  Rng init(31);
  Connector<double> ed(d, tensor::MlpSpec::standard(2 * d, 7, d, 3, false, 0.0), ps, init);
  Rng rng(4);
  std::vector<double> a(d), b(d);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  std::vector<double> h(a);
  h.insert(h.end(), b.begin(), b.end());
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& w = ps.at("E_d." + std::to_string(l) + ".weight").value;
    const auto& bias = ps.at("E_d." + std::to_string(l) + ".bias").value;
    std::vector<double> next(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = bias(0, j);
      for (std::size_t i = 0; i < w.rows(); ++i) s += h[i] * w(i, j);
      next[j] = l < 2 ? std::max(0.0, s) : s;
    }
    h = next;
  }
  const auto got = ed.fuse(ps, std::span<const double>(a), std::span<const double>(b));
  ASSERT_EQ(got.size(), d);
  for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(got[k], h[k], 1e-6);
}

TEST(Fuse, WidthErrors) {
  tensor::ParameterSet<double> ps;
  Rng init(0);
  EXPECT_THROW(Connector<double>(2, tensor::MlpSpec::standard(4, 4, 3, 1, false, 0.0), ps, init),
               ShapeError);
  tensor::ParameterSet<double> ps2;
  Connector<double> ed(2, tensor::MlpSpec::standard(4, 4, 2, 1, false, 0.0), ps2, init);
  const std::vector<double> a{1, 2}, b{3};
  EXPECT_THROW(ed.fuse(ps2, std::span<const double>(a), std::span<const double>(b)), ShapeError);
}

TEST(EpochBatches, NoMixingEmitsOriginalsOnce) {
  const auto recs = make_records({{{0, 0}, 3}, {{1, 0}, 2}, {{1, 1}, 4}});
  TrainIndex idx(recs);
  AddsConfig cfg;
  cfg.mix_probability = 0.0;
  Rng rng(1);
  const auto items = build_epoch_batches(idx, cfg, rng);
  ASSERT_EQ(items.size(), recs.size());
  std::vector<std::size_t> seen;
  for (const auto& it : items) {
    EXPECT_FALSE(it.synthetic);
    seen.push_back(it.feature_index);
    EXPECT_EQ(it.pair(), recs[it.feature_index].pair());
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t k = 0; k < seen.size(); ++k) EXPECT_EQ(seen[k], k);
}

TEST(EpochBatches, ForcedMixingDoublesTheStream) {
  const auto recs = make_records({{{0, 0}, 3}, {{1, 0}, 3}, {{2, 1}, 4}});
  TrainIndex idx(recs);
  AddsConfig cfg;
  cfg.mix_probability = 1.0;
  Rng rng(1);
  const auto items = build_epoch_batches(idx, cfg, rng);
  ASSERT_EQ(items.size(), 20u);
  EXPECT_EQ(synthetic_samples(items).size(), 10u);
  for (std::size_t k = 0; k < items.size(); k += 2) {
    EXPECT_FALSE(items[k].synthetic);
    ASSERT_TRUE(items[k + 1].synthetic);
    EXPECT_EQ(items[k + 1].feature_index, items[k].feature_index);
    EXPECT_EQ(items[k + 1].obj_id, items[k].obj_id);
    EXPECT_EQ(items[k + 1].pair(), recs[items[k + 1].partner_index].pair());
  }
}

TEST(EpochBatches, SyntheticCountWithinBinomialBound) {
  std::map<Pair, std::size_t> counts;
  for (int a = 0; a < 10; ++a)
    for (int o = 0; o < 10; ++o) counts[{a, o}] = 100;
  const auto recs = make_records(counts);
  TrainIndex idx(recs);
  Rng rng(42);
  const auto items = build_epoch_batches(idx, {}, rng);
  const auto syn = synthetic_samples(items).size();
  EXPECT_GE(syn, 4871u);
  EXPECT_LE(syn, 5129u);
  EXPECT_EQ(items.size() - syn, 10000u);
}

TEST(EpochBatches, ReproducibleAndLabelsAreSeenPairs) {
  const auto recs = make_records({{{0, 0}, 3}, {{1, 0}, 2}, {{1, 1}, 4}, {{2, 1}, 1}});
  TrainIndex idx(recs);
  std::set<Pair> seen;
  for (const auto& r : recs) seen.insert(r.pair());
  for (auto strat : {Strategy::kObj, Strategy::kAtt, Strategy::kAttObj}) {
    AddsConfig cfg;
    cfg.strategy = strat;
    Rng r1(9), r2(9);
    const auto a = build_epoch_batches(idx, cfg, r1), b = build_epoch_batches(idx, cfg, r2);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_EQ(a[k].synthetic, b[k].synthetic);
      EXPECT_EQ(a[k].feature_index, b[k].feature_index);
      EXPECT_EQ(a[k].partner_index, b[k].partner_index);
      EXPECT_TRUE(seen.contains(a[k].pair()));
    }
  }
}

TEST(EpochBatches, StrategiesControlWhichPrimitiveIsShared) {
  const auto recs = make_records({{{0, 0}, 2}, {{1, 0}, 2}, {{0, 1}, 2}, {{1, 1}, 2}});
  TrainIndex idx(recs);
  AddsConfig cfg;
  cfg.mix_probability = 1.0;
  cfg.strategy = Strategy::kNone;
  Rng rng(5);
  EXPECT_EQ(build_epoch_batches(idx, cfg, rng).size(), recs.size());
  cfg.strategy = Strategy::kAtt;
  auto items = build_epoch_batches(idx, cfg, rng);
  for (std::size_t k = 0; k < items.size(); k += 2) {
    EXPECT_EQ(items[k + 1].attr_id, items[k].attr_id);
    EXPECT_NE(items[k + 1].obj_id, items[k].obj_id);
  }
  cfg.strategy = Strategy::kAttObj;
  items = build_epoch_batches(idx, cfg, rng);
  EXPECT_EQ(items.size(), 3 * recs.size());
  EXPECT_THROW(parse_strategy("both"), std::invalid_argument);
  for (auto s : {Strategy::kNone, Strategy::kObj, Strategy::kAtt, Strategy::kAttObj})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
}

TEST(EpochBatches, InvalidConfigRejected) {
  const auto recs = make_records({{{0, 0}, 1}});
  TrainIndex idx(recs);
  AddsConfig cfg;
  cfg.mix_probability = 1.5;
  Rng rng(1);
  EXPECT_THROW(build_epoch_batches(idx, cfg, rng), std::invalid_argument);
  cfg.mix_probability = 0.5;
  cfg.max_reselect = 0;
  EXPECT_THROW(build_epoch_batches(idx, cfg, rng), std::invalid_argument);
}

TEST(AuditLog, OneJsonObjectPerSyntheticItem) {
  CompositionSpace space;
  space.attributes = {"red", "black"};
  space.objects = {"ball"};
  const auto recs = make_records({{{0, 0}, 1}, {{1, 0}, 1}});
  TrainIndex idx(recs);
  AddsConfig cfg;
  cfg.mix_probability = 1.0;
  Rng rng(2);
  const auto items = build_epoch_batches(idx, cfg, rng);
  std::ostringstream out;
  write_audit_log(out, items, 4, space);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"], 4);
    EXPECT_EQ(j["obj"], "ball");
    EXPECT_NE(j["source_id"], j["partner_id"]);
    EXPECT_TRUE(j["attr"] == "red" || j["attr"] == "black");
    ++n;
  }
  EXPECT_EQ(n, 2);
}
