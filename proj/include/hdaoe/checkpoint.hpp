#pragma once

// Checkpoint format (little-endian):
//   "HDAC" | u32 version | u32 n_param_blocks | param blocks
//          | u32 n_optimizer_blocks | optimizer blocks
//   block: u32 name_len | name (UTF-8) | u32 rank | u64 extents[rank] | payload
// Version 1 stores float32 payloads; version 2 stores float64 payloads and is
// written for double-precision models so that resumed runs stay exact.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hdaoe/errors.hpp"
#include "hdaoe/tensor.hpp"

namespace hdaoe::tensor {

inline constexpr char kCheckpointMagic[4] = {'H', 'D', 'A', 'C'};
inline constexpr std::uint32_t kCheckpointF32 = 1;
inline constexpr std::uint32_t kCheckpointF64 = 2;

struct Block {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointF32;
  std::vector<Block> params;
  std::vector<Block> optimizer;

  const Block* find_optimizer(std::string_view name) const {
    for (const auto& b : optimizer)
      if (b.name == name) return &b;
    return nullptr;
  }
};

namespace detail {

template <class V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V get(std::istream& in, const std::string& what) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError("checkpoint truncated while reading " + what);
  return v;
}

inline void write_block(std::ostream& out, const Block& b, std::uint32_t version) {
  put(out, static_cast<std::uint32_t>(b.name.size()));
  out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
  put(out, static_cast<std::uint32_t>(b.shape.size()));
  for (auto e : b.shape) put(out, e);
  for (double v : b.values) {
    if (version == kCheckpointF32)
      put(out, static_cast<float>(v));
    else
      put(out, v);
  }
}

inline Block read_block(std::istream& in, std::uint32_t version) {
  Block b;
  const auto len = get<std::uint32_t>(in, "block name length");
  if (len > (1u << 20)) throw FormatError("checkpoint block name too long");
  b.name.resize(len);
  in.read(b.name.data(), len);
  if (!in) throw FormatError("checkpoint truncated while reading block name");
  const auto rank = get<std::uint32_t>(in, "rank of '" + b.name + "'");
  if (rank > 8) throw FormatError("checkpoint block '" + b.name + "' has rank > 8");
  std::uint64_t count = 1;
  for (std::uint32_t r = 0; r < rank; ++r) {
    b.shape.push_back(get<std::uint64_t>(in, "extent of '" + b.name + "'"));
    count *= b.shape.back();
  }
  if (count > (1ull << 34)) throw FormatError("checkpoint block '" + b.name + "' too large");
  b.values.resize(count);
  for (auto& v : b.values)
    v = version == kCheckpointF32 ? static_cast<double>(get<float>(in, b.name))
                                  : get<double>(in, b.name);
  return b;
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (ck.version != kCheckpointF32 && ck.version != kCheckpointF64)
    throw std::invalid_argument("unsupported checkpoint version");
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp);
    out.write(kCheckpointMagic, 4);
    detail::put(out, ck.version);
    detail::put(out, static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& b : ck.params) detail::write_block(out, b, ck.version);
    detail::put(out, static_cast<std::uint32_t>(ck.optimizer.size()));
    for (const auto& b : ck.optimizer) detail::write_block(out, b, ck.version);
    if (!out) throw IoError("short write on checkpoint: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError(path.string() + ": bad checkpoint magic");
  Checkpoint ck;
  ck.version = detail::get<std::uint32_t>(in, "version");
  if (ck.version != kCheckpointF32 && ck.version != kCheckpointF64)
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(ck.version));
  const auto np = detail::get<std::uint32_t>(in, "parameter block count");
  for (std::uint32_t i = 0; i < np; ++i) ck.params.push_back(detail::read_block(in, ck.version));
  const auto no = detail::get<std::uint32_t>(in, "optimizer block count");
  for (std::uint32_t i = 0; i < no; ++i) ck.optimizer.push_back(detail::read_block(in, ck.version));
  return ck;
}

template <class T>
Block to_block(std::string name, const Matrix<T>& m) {
  return {std::move(name), {m.rows(), m.cols()}, std::vector<double>(m.values().begin(), m.values().end())};
}

/// Parameters, Adam moments, the Adam step and `next_epoch`.
template <class T>
Checkpoint make_checkpoint(const ParameterSet<T>& params, const AdamState<T>* adam,
                           std::uint64_t next_epoch) {
  Checkpoint ck;
  ck.version = std::is_same_v<T, double> ? kCheckpointF64 : kCheckpointF32;
  for (const auto& p : params) ck.params.push_back(to_block(p.name, p.value));
  ck.optimizer.push_back({"train.next_epoch", {1}, {static_cast<double>(next_epoch)}});
  if (adam != nullptr) {
    ck.optimizer.push_back({"adam.step", {1}, {static_cast<double>(adam->step)}});
    for (std::size_t i = 0; i < adam->first_moment.size(); ++i) {
      ck.optimizer.push_back(to_block("adam.m/" + params[i].name, adam->first_moment[i]));
      ck.optimizer.push_back(to_block("adam.v/" + params[i].name, adam->second_moment[i]));
    }
  }
  return ck;
}

namespace detail {

template <class T>
void assign(Matrix<T>& dst, const Block& b) {
  if (b.shape.size() != 2 || b.shape[0] != dst.rows() || b.shape[1] != dst.cols())
    throw ShapeError("checkpoint block '" + b.name + "' does not match the model shape " +
                     shape_str(dst.rows(), dst.cols()));
  for (std::size_t k = 0; k < b.values.size(); ++k) dst.values()[k] = static_cast<T>(b.values[k]);
}

}  // namespace detail

/// Loads parameter values (and optimizer state into `adam` when given).
/// Every model parameter must be present with a matching shape. Returns the
/// stored next epoch.
template <class T>
std::uint64_t apply_checkpoint(const Checkpoint& ck, ParameterSet<T>& params, AdamState<T>* adam) {
  std::unordered_map<std::string_view, const Block*> by_name;
  for (const auto& b : ck.params) by_name[b.name] = &b;
  if (by_name.size() != params.size())
    throw FormatError("checkpoint has " + std::to_string(by_name.size()) +
                      " parameter blocks, model has " + std::to_string(params.size()));
  for (auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
    detail::assign(p.value, *it->second);
  }
  std::uint64_t next_epoch = 0;
  if (const Block* e = ck.find_optimizer("train.next_epoch"); e && !e->values.empty())
    next_epoch = static_cast<std::uint64_t>(e->values[0]);
  if (adam != nullptr) {
    adam->init_for(params);
    adam->step = 0;
    if (const Block* s = ck.find_optimizer("adam.step"); s && !s->values.empty()) {
      adam->step = static_cast<std::uint64_t>(s->values[0]);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const Block* m = ck.find_optimizer("adam.m/" + params[i].name);
        const Block* v = ck.find_optimizer("adam.v/" + params[i].name);
        if (!m || !v) throw FormatError("checkpoint lacks Adam moments for '" + params[i].name + "'");
        detail::assign(adam->first_moment[i], *m);
        detail::assign(adam->second_moment[i], *v);
      }
    }
  }
  return next_epoch;
}

}  // namespace hdaoe::tensor
