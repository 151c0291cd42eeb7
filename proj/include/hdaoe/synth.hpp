#pragma once

// Deterministic linear-compositional fixture: every attribute and object is a
// fixed random direction and a sample's feature is
// normalize(a_vec + o_vec) + noise.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hdaoe/compspace.hpp"
#include "hdaoe/rng.hpp"

namespace hdaoe::synth {

struct SynthOptions {
  std::size_t attrs = 4;
  std::size_t objs = 3;
  std::size_t unseen_test = 2;
  std::size_t unseen_val = 0;
  std::size_t dim = 32;
  std::size_t samples = 600;
  double noise = 0.05;
  std::uint64_t seed = 7;
};

inline std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02zu", prefix, i);
  return buf;
}

inline std::vector<double> unit_direction(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  for (auto& x : v) x /= std::sqrt(sq);
  return v;
}

/// Seen pairs per primitive stay at >= 2 where the lattice allows it, so every
/// attribute and object keeps training data and partner candidates.
inline Dataset make_dataset(const SynthOptions& opt) {
  const std::size_t total_pairs = opt.attrs * opt.objs;
  if (opt.attrs == 0 || opt.objs == 0 || opt.dim == 0)
    throw std::invalid_argument("synth: attrs, objs and dim must be positive");
  if (opt.unseen_test + opt.unseen_val >= total_pairs)
    throw std::invalid_argument("synth: too many unseen pairs for the lattice");
  if (opt.samples < total_pairs) throw std::invalid_argument("synth: fewer samples than pairs");

  Dataset ds;
  for (std::size_t a = 0; a < opt.attrs; ++a) ds.space.attributes.push_back(padded("attr", a));
  for (std::size_t o = 0; o < opt.objs; ++o) ds.space.objects.push_back(padded("obj", o));

  Rng pair_rng(derive_seed(opt.seed, 0, 0, Stream::kShuffle));
  std::vector<Pair> lattice;
  for (std::size_t a = 0; a < opt.attrs; ++a)
    for (std::size_t o = 0; o < opt.objs; ++o)
      lattice.push_back({static_cast<int>(a), static_cast<int>(o)});
  std::vector<Pair> shuffled = lattice;
  pair_rng.shuffle(shuffled.begin(), shuffled.end());

  std::map<int, std::size_t> attr_seen, obj_seen;
  for (Pair p : lattice) ++attr_seen[p.attr], ++obj_seen[p.obj];
  const std::size_t need_a = std::min<std::size_t>(2, opt.objs);
  const std::size_t need_o = std::min<std::size_t>(2, opt.attrs);
  std::set<Pair> unseen_test, unseen_val;
  const std::size_t want = opt.unseen_test + opt.unseen_val;
  for (std::size_t relax = 0; relax < 2 && unseen_test.size() + unseen_val.size() < want; ++relax) {
    for (Pair p : shuffled) {
      if (unseen_test.size() + unseen_val.size() == want) break;
      if (unseen_test.contains(p) || unseen_val.contains(p)) continue;
      const std::size_t ma = relax ? 1 : need_a, mo = relax ? 1 : need_o;
      if (attr_seen[p.attr] <= ma || obj_seen[p.obj] <= mo) continue;
      --attr_seen[p.attr], --obj_seen[p.obj];
      (unseen_test.size() < opt.unseen_test ? unseen_test : unseen_val).insert(p);
    }
  }
  if (unseen_test.size() + unseen_val.size() < want)
    throw std::invalid_argument("synth: cannot hold out that many pairs");
  ds.space.unseen_test_pairs = unseen_test;
  ds.space.unseen_val_pairs = unseen_val;
  for (Pair p : lattice)
    if (!unseen_test.contains(p) && !unseen_val.contains(p)) ds.space.seen_pairs.insert(p);

  Rng dir_rng(derive_seed(opt.seed, 0, 0, Stream::kInit));
  std::vector<std::vector<double>> a_vec, o_vec;
  for (std::size_t a = 0; a < opt.attrs; ++a) a_vec.push_back(unit_direction(dir_rng, opt.dim));
  for (std::size_t o = 0; o < opt.objs; ++o) o_vec.push_back(unit_direction(dir_rng, opt.dim));

  Rng noise_rng(derive_seed(opt.seed, 0, 0, Stream::kData));
  ds.features.dim = opt.dim;
  const std::size_t base = opt.samples / total_pairs, extra = opt.samples % total_pairs;
  for (std::size_t k = 0; k < lattice.size(); ++k) {
    const Pair p = lattice[k];
    const std::size_t count = base + (k < extra ? 1 : 0);
    const bool seen = ds.space.is_seen(p);
    const std::size_t n_val = seen ? count / 10 : 0;
    const std::size_t n_test = seen ? count / 10 : 0;
    for (std::size_t i = 0; i < count; ++i) {
      SampleRecord r;
      r.sample_id = "s" + std::to_string(ds.records.size());
      r.feature_index = ds.records.size();
      r.attr_id = p.attr;
      r.obj_id = p.obj;
      if (!seen)
        r.split = unseen_test.contains(p) ? Split::kTest : Split::kVal;
      else
        r.split = i < n_val ? Split::kVal : (i < n_val + n_test ? Split::kTest : Split::kTrain);
      std::vector<double> x(opt.dim);
      double sq = 0.0;
      for (std::size_t j = 0; j < opt.dim; ++j) {
        x[j] = a_vec[static_cast<std::size_t>(p.attr)][j] + o_vec[static_cast<std::size_t>(p.obj)][j];
        sq += x[j] * x[j];
      }
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t j = 0; j < opt.dim; ++j)
        ds.features.data.push_back(static_cast<float>(x[j] * inv + opt.noise * noise_rng.normal()));
      ds.records.push_back(std::move(r));
    }
  }
  ds.features.rows = ds.records.size();
  ds.validate();
  return ds;
}

/// Writes the split files, manifest and feature store under `dir`.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto write_pairs = [&](const char* file, const std::set<Pair>& pairs) {
    std::ofstream out(dir / file, std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / file).string());
    for (Pair p : pairs) out << ds.space.pair_name(p) << '\n';
  };
  write_pairs(kTrainPairsFile, ds.space.seen_pairs);
  write_pairs(kValPairsFile, ds.space.unseen_val_pairs);
  write_pairs(kTestPairsFile, ds.space.unseen_test_pairs);
  std::ofstream manifest(dir / kManifestFile, std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / kManifestFile).string());
  manifest << "sample_id,attribute,object,split\n";
  for (const auto& r : ds.records) {
    manifest << r.sample_id << ',' << ds.space.attributes[static_cast<std::size_t>(r.attr_id)]
             << ',' << ds.space.objects[static_cast<std::size_t>(r.obj_id)] << ','
             << to_string(r.split) << '\n';
  }
  manifest.close();
  write_feature_store(ds.features, dir / kFeatureFile);
}

}  // namespace hdaoe::synth
