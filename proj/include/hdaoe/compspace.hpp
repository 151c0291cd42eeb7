#pragma once

// Composition vocabulary, dataset splits, sample records and the binary
// feature store.

#include <algorithm>
#include <bit>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hdaoe/errors.hpp"

namespace hdaoe {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

struct Pair {
  int attr = 0;
  int obj = 0;
  auto operator<=>(const Pair&) const = default;
};

enum class Split { kTrain, kVal, kTest };
enum class WorldMode { kClosed, kOpen };
enum class Phase { kVal, kTest };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline std::string_view to_string(WorldMode m) {
  return m == WorldMode::kClosed ? "closed_world" : "open_world";
}

inline std::string_view to_string(Phase p) { return p == Phase::kVal ? "val" : "test"; }

inline WorldMode parse_world_mode(std::string_view s) {
  if (s == "closed_world") return WorldMode::kClosed;
  if (s == "open_world") return WorldMode::kOpen;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

inline Phase parse_phase(std::string_view s) {
  if (s == "val") return Phase::kVal;
  if (s == "test") return Phase::kTest;
  throw std::invalid_argument("unknown phase '" + std::string(s) + "'");
}

/// Attribute and object vocabularies plus the seen / unseen pair partitions.
struct CompositionSpace {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;
  std::set<Pair> seen_pairs;
  std::set<Pair> unseen_val_pairs;
  std::set<Pair> unseen_test_pairs;

  std::size_t num_attributes() const { return attributes.size(); }
  std::size_t num_objects() const { return objects.size(); }

  bool is_seen(Pair p) const { return seen_pairs.contains(p); }

  const std::set<Pair>& unseen_pairs(Phase phase) const {
    return phase == Phase::kVal ? unseen_val_pairs : unseen_test_pairs;
  }

  int attribute_id(std::string_view name) const { return lookup(attributes, name, "attribute"); }
  int object_id(std::string_view name) const { return lookup(objects, name, "object"); }

  std::string pair_name(Pair p) const {
    return attributes.at(static_cast<std::size_t>(p.attr)) + " " +
           objects.at(static_cast<std::size_t>(p.obj));
  }

  /// Seen pairs in (attr, obj) order; this is the training candidate set.
  std::vector<Pair> seen_list() const { return {seen_pairs.begin(), seen_pairs.end()}; }

  /// Throws DataError when an invariant is violated.
  void validate() const {
    check_unique(attributes, "attribute");
    check_unique(objects, "object");
    const auto in_range = [&](Pair p) {
      return p.attr >= 0 && p.obj >= 0 && static_cast<std::size_t>(p.attr) < attributes.size() &&
             static_cast<std::size_t>(p.obj) < objects.size();
    };
    for (const auto* set : {&seen_pairs, &unseen_val_pairs, &unseen_test_pairs}) {
      for (Pair p : *set) {
        if (!in_range(p)) throw VocabularyError("pair id out of vocabulary range");
      }
    }
    for (Pair p : unseen_val_pairs) {
      if (seen_pairs.contains(p))
        throw ConsistencyError("pair '" + pair_name(p) + "' is both seen and unseen (val)");
    }
    for (Pair p : unseen_test_pairs) {
      if (seen_pairs.contains(p))
        throw ConsistencyError("pair '" + pair_name(p) + "' is both seen and unseen (test)");
      if (unseen_val_pairs.contains(p))
        throw ConsistencyError("pair '" + pair_name(p) + "' is unseen in both val and test");
    }
  }

 private:
  static int lookup(const std::vector<std::string>& names, std::string_view name,
                    const char* kind) {
    const auto it = std::lower_bound(names.begin(), names.end(), name);
    if (it == names.end() || *it != name)
      throw VocabularyError(std::string("unknown ") + kind + " '" + std::string(name) + "'");
    return static_cast<int>(it - names.begin());
  }

  static void check_unique(const std::vector<std::string>& names, const char* kind) {
    std::set<std::string_view> seen;
    for (const auto& n : names) {
      if (!seen.insert(n).second)
        throw VocabularyError(std::string("duplicate ") + kind + " name '" + n + "'");
    }
  }
};

struct SampleRecord {
  std::string sample_id;
  std::size_t feature_index = 0;
  int attr_id = 0;
  int obj_id = 0;
  Split split = Split::kTrain;

  Pair pair() const { return {attr_id, obj_id}; }
};

/// Row-major float32 matrix of backbone features, one row per sample.
struct FeatureStore {
  std::uint64_t dim = 768;
  std::uint64_t rows = 0;
  std::vector<float> data;

  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * dim, static_cast<std::size_t>(dim)};
  }

  void validate() const {
    if (dim == 0) throw FormatError("feature store dim must be positive");
    if (data.size() != rows * dim) throw FormatError("feature store payload size mismatch");
    for (float v : data) {
      if (!std::isfinite(v)) throw DataError("feature store contains a non-finite value");
    }
  }
};

/// Candidate pairs for one evaluation run.
struct LabelSpace {
  WorldMode mode = WorldMode::kClosed;
  std::vector<Pair> pairs;
  std::vector<bool> seen_mask;

  std::size_t size() const { return pairs.size(); }
};

// ---------------------------------------------------------------------------
// Split ingestion

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::pair<std::string, std::string>> read_pair_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open pair file: " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    std::istringstream fields(t);
    std::string attr, obj, extra;
    fields >> attr >> obj;
    if (obj.empty() || (fields >> extra))
      throw IngestError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'attribute object'");
    out.emplace_back(std::move(attr), std::move(obj));
  }
  return out;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(s) + "'");
}

}  // namespace detail

inline constexpr const char* kTrainPairsFile = "train_pairs.txt";
inline constexpr const char* kValPairsFile = "val_pairs.txt";
inline constexpr const char* kTestPairsFile = "test_pairs.txt";
inline constexpr const char* kManifestFile = "manifest.csv";
inline constexpr const char* kFeatureFile = "features.hdaf";

struct SplitData {
  CompositionSpace space;
  std::vector<SampleRecord> records;
};

/// Reads train/val/test pair lists and the sample manifest from `root`.
///
/// train_pairs.txt lists the seen pairs; val_pairs.txt and test_pairs.txt list
/// the unseen pairs of each phase. Ids follow lexicographic name order, and
/// feature_index is the manifest row index.
inline SplitData load_split(const std::filesystem::path& root) {
  const auto train = detail::read_pair_file(root / kTrainPairsFile);
  const auto val = detail::read_pair_file(root / kValPairsFile);
  const auto test = detail::read_pair_file(root / kTestPairsFile);

  const auto manifest_path = root / kManifestFile;
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IngestError("cannot open manifest: " + manifest_path.string());

  SplitData out;
  std::set<std::string> attrs, objs;
  for (const auto* list : {&train, &val, &test}) {
    for (const auto& [a, o] : *list) {
      attrs.insert(a);
      objs.insert(o);
    }
  }
  out.space.attributes.assign(attrs.begin(), attrs.end());
  out.space.objects.assign(objs.begin(), objs.end());

  const auto to_pair = [&](const std::pair<std::string, std::string>& p) {
    return Pair{out.space.attribute_id(p.first), out.space.object_id(p.second)};
  };
  for (const auto& p : train) out.space.seen_pairs.insert(to_pair(p));
  for (const auto& p : val) {
    const Pair id = to_pair(p);
    if (out.space.seen_pairs.contains(id))
      throw ConsistencyError("val pair '" + p.first + " " + p.second +
                             "' is also listed in " + kTrainPairsFile);
    out.space.unseen_val_pairs.insert(id);
  }
  for (const auto& p : test) {
    const Pair id = to_pair(p);
    if (out.space.seen_pairs.contains(id))
      throw ConsistencyError("test pair '" + p.first + " " + p.second +
                             "' is also listed in " + kTrainPairsFile);
    out.space.unseen_test_pairs.insert(id);
  }
  out.space.validate();

  std::string line;
  if (!std::getline(manifest, line) ||
      detail::split_csv_line(line) !=
          std::vector<std::string>{"sample_id", "attribute", "object", "split"}) {
    throw IngestError(manifest_path.string() +
                      ": header must be 'sample_id,attribute,object,split'");
  }
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 4)
      throw IngestError(manifest_path.string() + ":" + std::to_string(line_no) +
                        ": expected 4 fields");
    SampleRecord rec;
    rec.sample_id = fields[0];
    rec.feature_index = out.records.size();
    rec.attr_id = out.space.attribute_id(fields[1]);
    rec.obj_id = out.space.object_id(fields[2]);
    rec.split = detail::parse_split(fields[3]);
    const Pair p = rec.pair();
    const bool ok = out.space.is_seen(p) ||
                    (rec.split == Split::kVal && out.space.unseen_val_pairs.contains(p)) ||
                    (rec.split == Split::kTest && out.space.unseen_test_pairs.contains(p));
    if (!ok)
      throw ConsistencyError(manifest_path.string() + ":" + std::to_string(line_no) + ": pair '" +
                             fields[1] + " " + fields[2] + "' is not listed for split " +
                             fields[3]);
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline LabelSpace build_label_space(const CompositionSpace& space, WorldMode mode, Phase phase) {
  space.validate();
  LabelSpace ls;
  ls.mode = mode;
  if (mode == WorldMode::kOpen) {
    for (std::size_t a = 0; a < space.num_attributes(); ++a)
      for (std::size_t o = 0; o < space.num_objects(); ++o)
        ls.pairs.push_back({static_cast<int>(a), static_cast<int>(o)});
  } else {
    std::set<Pair> all = space.seen_pairs;
    const auto& unseen = space.unseen_pairs(phase);
    all.insert(unseen.begin(), unseen.end());
    ls.pairs.assign(all.begin(), all.end());
  }
  ls.seen_mask.reserve(ls.pairs.size());
  for (Pair p : ls.pairs) ls.seen_mask.push_back(space.is_seen(p));
  return ls;
}

/// Train-split attribute counts for one object; absent attributes omitted.
inline std::map<int, std::size_t> attribute_histogram(const CompositionSpace& space,
                                                      std::span<const SampleRecord> records,
                                                      int obj_id) {
  if (obj_id < 0 || static_cast<std::size_t>(obj_id) >= space.num_objects())
    throw VocabularyError("unknown object id " + std::to_string(obj_id));
  std::map<int, std::size_t> hist;
  for (const auto& r : records) {
    if (r.split == Split::kTrain && r.obj_id == obj_id) ++hist[r.attr_id];
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Feature store binary format:
//   "HDAF" | u32 version=1 | u64 rows | u64 dim | rows*dim float32 (row-major)

inline constexpr char kFeatureMagic[4] = {'H', 'D', 'A', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
static_assert(std::endian::native == std::endian::little, "binary formats are little-endian");

inline void write_feature_store(const FeatureStore& store, const std::filesystem::path& path) {
  store.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature store: " + path.string());
  out.write(kFeatureMagic, 4);
  out.write(reinterpret_cast<const char*>(&kFeatureVersion), sizeof kFeatureVersion);
  out.write(reinterpret_cast<const char*>(&store.rows), sizeof store.rows);
  out.write(reinterpret_cast<const char*>(&store.dim), sizeof store.dim);
  out.write(reinterpret_cast<const char*>(store.data.data()),
            static_cast<std::streamsize>(store.data.size() * sizeof(float)));
  if (!out) throw IoError("short write on feature store: " + path.string());
}

inline FeatureStore read_feature_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open feature store: " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  FeatureStore store;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&store.rows), sizeof store.rows);
  in.read(reinterpret_cast<char*>(&store.dim), sizeof store.dim);
  if (!in) throw FormatError(path.string() + ": truncated header");
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw FormatError(path.string() + ": bad magic");
  if (version != kFeatureVersion)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  if (store.dim == 0) throw FormatError(path.string() + ": dim must be positive");

  const auto header_end = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload = static_cast<std::uint64_t>(in.tellg() - header_end);
  in.seekg(header_end);
  if (store.rows > payload / sizeof(float) / store.dim ||
      payload != store.rows * store.dim * sizeof(float))
    throw FormatError(path.string() + ": payload size does not match header");
  store.data.resize(store.rows * store.dim);
  in.read(reinterpret_cast<char*>(store.data.data()),
          static_cast<std::streamsize>(store.data.size() * sizeof(float)));
  if (!in) throw FormatError(path.string() + ": truncated payload");
  store.validate();
  return store;
}

/// Split data bound to its feature store.
struct Dataset {
  CompositionSpace space;
  std::vector<SampleRecord> records;
  FeatureStore features;

  void validate() const {
    space.validate();
    features.validate();
    if (features.rows != records.size())
      throw ConsistencyError("feature store has " + std::to_string(features.rows) +
                             " rows but the manifest lists " + std::to_string(records.size()) +
                             " samples");
    for (const auto& r : records) {
      if (r.feature_index >= features.rows)
        throw ConsistencyError("sample '" + r.sample_id + "' feature index out of range");
      if (r.split == Split::kTrain && !space.is_seen(r.pair()))
        throw ConsistencyError("train sample '" + r.sample_id + "' has an unseen pair");
    }
  }

  std::vector<SampleRecord> records_in(Split split) const {
    std::vector<SampleRecord> out;
    for (const auto& r : records)
      if (r.split == split) out.push_back(r);
    return out;
  }
};

inline Dataset load_dataset(const std::filesystem::path& root) {
  auto split = load_split(root);
  Dataset ds{std::move(split.space), std::move(split.records),
             read_feature_store(root / kFeatureFile)};
  ds.validate();
  return ds;
}

}  // namespace hdaoe
