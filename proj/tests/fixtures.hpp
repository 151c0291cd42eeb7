#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hdaoe/compspace.hpp"
#include "hdaoe/rng.hpp"

namespace hdaoe::testkit {

/// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hdaoe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct SplitSpec {
  std::size_t attrs = 4;
  std::size_t objs = 3;
  std::size_t seen = 8;
  std::size_t unseen_val = 1;
  std::size_t unseen_test = 2;
  std::size_t per_pair = 2;
  std::size_t dim = 4;
  std::uint64_t seed = 1;
};

/// Writes a CZSL-layout directory whose pairs are drawn from an attrs x objs
/// grid. Seen pairs are chosen first so each attribute and object appears in
/// some pair file; samples: per_pair per seen pair (train), per unseen pair
/// (val or test).
inline CompositionSpace write_split(const std::filesystem::path& dir, const SplitSpec& s,
                                    bool write_features = true) {
  CompositionSpace space;
  char buf[32];
  for (std::size_t a = 0; a < s.attrs; ++a) {
    std::snprintf(buf, sizeof buf, "a%04zu", a);
    space.attributes.push_back(buf);
  }
  for (std::size_t o = 0; o < s.objs; ++o) {
    std::snprintf(buf, sizeof buf, "o%04zu", o);
    space.objects.push_back(buf);
  }
  std::vector<Pair> grid;
  for (std::size_t a = 0; a < s.attrs; ++a)
    for (std::size_t o = 0; o < s.objs; ++o) grid.push_back({int(a), int(o)});
  Rng rng(s.seed);
  // Cover every attribute and object first, then fill at random.
  std::vector<Pair> pick;
  std::set<Pair> used;
  const std::size_t cover = std::max(s.attrs, s.objs);
  for (std::size_t k = 0; k < cover; ++k) {
    Pair p{int(k % s.attrs), int(k % s.objs)};
    if (used.insert(p).second) pick.push_back(p);
  }
  rng.shuffle(grid.begin(), grid.end());
  for (Pair p : grid)
    if (used.insert(p).second) pick.push_back(p);
  const std::size_t total = s.seen + s.unseen_val + s.unseen_test;
  if (total > pick.size() || pick.size() < cover) throw std::invalid_argument("fixture too dense");
  // keep the covering pairs among the seen ones
  for (std::size_t k = 0; k < s.seen; ++k) space.seen_pairs.insert(pick[k]);
  for (std::size_t k = s.seen; k < s.seen + s.unseen_val; ++k) space.unseen_val_pairs.insert(pick[k]);
  for (std::size_t k = s.seen + s.unseen_val; k < total; ++k) space.unseen_test_pairs.insert(pick[k]);

  std::filesystem::create_directories(dir);
  const auto pairs_text = [&](const std::set<Pair>& set) {
    std::string t;
    for (Pair p : set) t += space.attributes[p.attr] + " " + space.objects[p.obj] + "\n";
    return t;
  };
  write_file(dir / kTrainPairsFile, pairs_text(space.seen_pairs));
  write_file(dir / kValPairsFile, pairs_text(space.unseen_val_pairs));
  write_file(dir / kTestPairsFile, pairs_text(space.unseen_test_pairs));
  std::string manifest = "sample_id,attribute,object,split\n";
  std::size_t rows = 0;
  const auto emit = [&](const std::set<Pair>& set, const char* split) {
    for (Pair p : set)
      for (std::size_t i = 0; i < s.per_pair; ++i) {
        manifest += "img" + std::to_string(rows++) + "," + space.attributes[p.attr] + "," +
                    space.objects[p.obj] + "," + split + "\n";
      }
  };
  emit(space.seen_pairs, "train");
  emit(space.unseen_val_pairs, "val");
  emit(space.unseen_test_pairs, "test");
  write_file(dir / kManifestFile, manifest);
  if (write_features) {
    FeatureStore fs;
    fs.dim = s.dim;
    fs.rows = rows;
    for (std::size_t k = 0; k < rows * s.dim; ++k) fs.data.push_back(static_cast<float>(rng.normal()));
    write_feature_store(fs, dir / kFeatureFile);
  }
  return space;
}

}  // namespace hdaoe::testkit
