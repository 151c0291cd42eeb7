#pragma once

// Training orchestration: flat key=value configuration, the step schedule,
// the epoch loop over ADDS items, checkpointing, model evaluation on a split
// and the ablation sweep.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "hdaoe/adds.hpp"
#include "hdaoe/checkpoint.hpp"
#include "hdaoe/compspace.hpp"
#include "hdaoe/eval.hpp"
#include "hdaoe/model.hpp"

namespace hdaoe::train {

enum class Precision { kF32, kF64 };

inline std::string_view to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

inline Precision parse_precision(std::string_view s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw std::invalid_argument("unknown precision '" + std::string(s) + "' (f32|f64)");
}

inline std::string format_mask(const EmdMask& m) {
  std::string out;
  const auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(m.ea, "ea");
  add(m.eo, "eo");
  add(m.ec, "ec");
  return out.empty() ? "none" : out;
}

/// "ea+eo+ec", any subset joined by '+' (',' also accepted), or "none".
inline EmdMask parse_mask(std::string_view s) {
  EmdMask m{false, false, false};
  if (s == "none" || s.empty()) return m;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find_first_of("+,", start), s.size());
    const std::string_view term = s.substr(start, end - start);
    if (term == "ea") m.ea = true;
    else if (term == "eo") m.eo = true;
    else if (term == "ec") m.ec = true;
    else throw std::invalid_argument("unknown loss_mask term '" + std::string(term) + "'");
    start = end + 1;
  }
  return m;
}

struct TrainConfig {
  double tau = 0.05;
  double alpha = 2.0;
  double beta = 1.0;
  double lr = 5e-5;
  double lr_decay = 0.1;
  std::size_t decay_every = 10;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  /// Embedding-loss terms taking part in training.
  EmdMask loss_mask;
  adds::AddsConfig adds;
  Precision precision = Precision::kF32;
  ModelConfig model;
  std::string word_file;
  bool eval_refined = true;

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must be in (0,1]");
    if (decay_every == 0) throw std::invalid_argument("decay_every must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("alpha and beta must be >= 0");
    adds.validate();
    model.validate();
  }

  LossOptions loss_options() const { return {tau, alpha, beta, loss_mask}; }
};

/// When 1/lr_decay is an integer the step divides by its power, so a decay of
/// 0.1 gives 5e-6 and 5e-7 exactly rather than one ulp off.
inline double lr_at(const TrainConfig& config, std::size_t epoch) {
  const double k = static_cast<double>(epoch / config.decay_every);
  const double inv = std::round(1.0 / config.lr_decay);
  if (inv >= 1.0 && std::abs(1.0 / config.lr_decay - inv) <= 1e-9 * inv)
    return config.lr / std::pow(inv, k);
  return config.lr * std::pow(config.lr_decay, k);
}

// ---------------------------------------------------------------------------
// Config text

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view key, std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw std::invalid_argument("config key '" + std::string(key) + "': bad number '" +
                                std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_uint(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::invalid_argument("config key '" + std::string(key) + "': bad integer '" +
                                std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("config key '" + std::string(key) + "': bad boolean '" +
                              std::string(s) + "'");
}

}  // namespace detail

/// Sets one config field by its flat key. Unknown keys are errors.
inline void set_config_value(TrainConfig& c, std::string_view key, std::string_view value) {
  using namespace detail;
  const auto sz = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
  if (key == "tau") c.tau = parse_double(key, value);
  else if (key == "alpha") c.alpha = parse_double(key, value);
  else if (key == "beta") c.beta = parse_double(key, value);
  else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "lr_decay") c.lr_decay = parse_double(key, value);
  else if (key == "decay_every") c.decay_every = sz();
  else if (key == "epochs") c.epochs = sz();
  else if (key == "batch_size") c.batch_size = sz();
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "loss_mask") c.loss_mask = parse_mask(value);
  else if (key == "precision") c.precision = parse_precision(value);
  else if (key == "adds.mix_probability") c.adds.mix_probability = parse_double(key, value);
  else if (key == "adds.max_reselect") c.adds.max_reselect = sz();
  else if (key == "adds.strategy") c.adds.strategy = adds::parse_strategy(value);
  else if (key == "model.embed_dim") c.model.embed_dim = sz();
  else if (key == "model.hidden_dim") c.model.hidden_dim = sz();
  else if (key == "model.layers") c.model.layers = sz();
  else if (key == "model.layer_norm") c.model.layer_norm = parse_bool(key, value);
  else if (key == "model.dropout") c.model.dropout = parse_double(key, value);
  else if (key == "model.share_refine") c.model.share_refine = parse_bool(key, value);
  else if (key == "model.train_word_table") c.model.train_word_table = parse_bool(key, value);
  else if (key == "model.word_file") c.word_file = std::string(value);
  else if (key == "eval.refined") c.eval_refined = parse_bool(key, value);
  else throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

/// key=value lines; '#' starts a comment.
inline TrainConfig parse_config(std::string_view text, TrainConfig base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = hdaoe::detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    set_config_value(base, hdaoe::detail::trim(std::string_view(t).substr(0, eq)),
                     hdaoe::detail::trim(std::string_view(t).substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

inline std::string to_config_text(const TrainConfig& c) {
  using detail::format_double;
  std::ostringstream out;
  const auto b = [](bool v) { return v ? "true" : "false"; };
  out << "tau=" << format_double(c.tau) << '\n'
      << "alpha=" << format_double(c.alpha) << '\n'
      << "beta=" << format_double(c.beta) << '\n'
      << "lr=" << format_double(c.lr) << '\n'
      << "lr_decay=" << format_double(c.lr_decay) << '\n'
      << "decay_every=" << c.decay_every << '\n'
      << "epochs=" << c.epochs << '\n'
      << "batch_size=" << c.batch_size << '\n'
      << "seed=" << c.seed << '\n'
      << "loss_mask=" << format_mask(c.loss_mask) << '\n'
      << "precision=" << to_string(c.precision) << '\n'
      << "adds.mix_probability=" << format_double(c.adds.mix_probability) << '\n'
      << "adds.max_reselect=" << c.adds.max_reselect << '\n'
      << "adds.strategy=" << adds::to_string(c.adds.strategy) << '\n'
      << "model.embed_dim=" << c.model.embed_dim << '\n'
      << "model.hidden_dim=" << c.model.hidden_dim << '\n'
      << "model.layers=" << c.model.layers << '\n'
      << "model.layer_norm=" << b(c.model.layer_norm) << '\n'
      << "model.dropout=" << format_double(c.model.dropout) << '\n'
      << "model.share_refine=" << b(c.model.share_refine) << '\n'
      << "model.train_word_table=" << b(c.model.train_word_table) << '\n';
  if (!c.word_file.empty()) out << "model.word_file=" << c.word_file << '\n';
  out << "eval.refined=" << b(c.eval_refined) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Log

struct TrainLogRow {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;  // mean over the epoch's items
  double wall_seconds = 0.0;
  std::size_t samples = 0;
  std::size_t synthetic = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  void append(const TrainLogRow& r) {
    if (!rows.empty() && r.epoch <= rows.back().epoch)
      throw std::logic_error("train log epochs must increase");
    rows.push_back(r);
  }

  static constexpr const char* kHeader =
      "epoch,lr,L_a,L_o,L_c,L_base,L_ea,L_eo,L_ec,L_emd,L_total,samples,synthetic";

  /// Wall time is kept out so identical runs give identical files.
  std::string csv() const {
    using detail::format_double;
    std::ostringstream out;
    out << kHeader << '\n';
    for (const auto& r : rows) {
      const auto& l = r.loss;
      out << r.epoch << ',' << format_double(r.lr);
      for (double v : {l.L_a, l.L_o, l.L_c, l.L_base, l.L_ea, l.L_eo, l.L_ec, l.L_emd, l.L_total})
        out << ',' << format_double(v);
      out << ',' << r.samples << ',' << r.synthetic << '\n';
    }
    return out.str();
  }

  std::string timing_csv() const {
    std::ostringstream out;
    out << "epoch,wall_seconds\n";
    for (const auto& r : rows) out << r.epoch << ',' << detail::format_double(r.wall_seconds) << '\n';
    return out.str();
  }
};

// ---------------------------------------------------------------------------
// Training

inline constexpr const char* kCheckpointFile = "checkpoint.hdac";
inline constexpr const char* kTrainLogFile = "trainlog.csv";
inline constexpr const char* kTimingFile = "timing.csv";
inline constexpr const char* kAuditFile = "adds_audit.jsonl";
inline constexpr const char* kConfigFile = "config.txt";

inline WordTable make_word_table(const TrainConfig& c) {
  return c.word_file.empty() ? WordTable(c.model.embed_dim)
                             : WordTable::from_file(c.word_file, c.model.embed_dim);
}

inline ModelConfig model_config_for(const TrainConfig& c, const Dataset& ds) {
  ModelConfig m = c.model;
  m.feature_dim = static_cast<std::size_t>(ds.features.dim);
  return m;
}

/// Model, optimizer state and the next epoch to run.
template <std::floating_point T>
struct TrainState {
  HdaoeModel<T> model;
  tensor::AdamState<T> adam;
  std::size_t next_epoch = 0;

  TrainState(const TrainConfig& c, const Dataset& ds)
      : model(model_config_for(c, ds), ds.space, make_word_table(c), c.seed) {}

  /// Warm start or resume from a checkpoint written by train().
  void load(const std::filesystem::path& path, bool with_optimizer = true) {
    const auto ck = tensor::read_checkpoint(path);
    const auto epoch = tensor::apply_checkpoint(ck, model.params(), with_optimizer ? &adam : nullptr);
    next_epoch = with_optimizer ? static_cast<std::size_t>(epoch) : 0;
  }

  void save(const std::filesystem::path& path) const {
    tensor::write_checkpoint(tensor::make_checkpoint(model.params(), &adam, next_epoch), path);
  }
};

struct TrainOptions {
  /// Checkpoint, log and audit directory; empty writes nothing.
  std::filesystem::path out_dir;
  bool audit = false;
  /// Stop before this epoch (resume tests, staged runs).
  std::optional<std::size_t> stop_before;
  std::function<void(const TrainLogRow&)> on_epoch;
};

template <std::floating_point T>
tensor::Matrix<T> feature_matrix(const FeatureStore& store) {
  tensor::Matrix<T> m(static_cast<std::size_t>(store.rows), static_cast<std::size_t>(store.dim));
  for (std::size_t k = 0; k < store.data.size(); ++k) m.values()[k] = static_cast<T>(store.data[k]);
  return m;
}

template <std::floating_point T>
tensor::Matrix<T> gather(const tensor::Matrix<T>& src, std::span<const std::size_t> rows) {
  tensor::Matrix<T> out(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(src.row(rows[i]).data(), src.cols(), out.row(i).data());
  return out;
}

/// Runs epochs state.next_epoch .. config.epochs-1. Each epoch draws its own
/// item stream and dropout masks from seeds derived from (seed, epoch), so a
/// resumed run replays the same randomness as an uninterrupted one.
template <std::floating_point T>
TrainLog train(const TrainConfig& config, const Dataset& ds, TrainState<T>& state,
               const TrainOptions& options = {}) {
  config.validate();
  const auto train_records = ds.records_in(Split::kTrain);
  if (train_records.empty()) throw DataError("no training samples");
  const adds::TrainIndex index(train_records);
  const auto features = feature_matrix<T>(ds.features);
  const auto loss_opt = config.loss_options();
  auto& model = state.model;

  std::ofstream audit;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    std::ofstream(options.out_dir / kConfigFile, std::ios::trunc) << to_config_text(config);
    if (options.audit) audit.open(options.out_dir / kAuditFile, std::ios::app);
  }

  TrainLog log;
  const std::size_t last = std::min(config.epochs, options.stop_before.value_or(config.epochs));
  for (std::size_t epoch = state.next_epoch; epoch < last; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng item_rng(derive_seed(config.seed, 0, epoch, Stream::kPartner));
    Rng drop_rng(derive_seed(config.seed, 0, epoch, Stream::kDropout));
    const auto items = adds::build_epoch_batches(index, config.adds, item_rng);
    if (audit.is_open()) adds::write_audit_log(audit, items, epoch, ds.space);
    const double lr = lr_at(config, epoch);

    LossBreakdown sum;
    std::size_t n_synth = 0;
    for (std::size_t start = 0, batch = 0; start < items.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(items.size(), start + config.batch_size);
      std::vector<std::size_t> orig, syn_a, syn_b;
      BatchLabels labels, syn_labels;
      for (std::size_t k = start; k < end; ++k) {
        const auto& it = items[k];
        if (it.synthetic) {
          syn_a.push_back(it.feature_index);
          syn_b.push_back(it.partner_index);
          syn_labels.push(it.pair());
        } else {
          orig.push_back(it.feature_index);
          labels.push(it.pair());
        }
      }
      for (std::size_t i = 0; i < syn_labels.size(); ++i)
        labels.push({syn_labels.attr[i], syn_labels.obj[i]});
      n_synth += syn_a.size();

      tensor::Tape<T> tape(true);
      std::optional<tensor::Var<T>> f;
      if (!orig.empty()) f = tape.constant(gather(features, orig), "f_cls");
      if (!syn_a.empty()) {
        auto fused = model.fuse(tape.constant(gather(features, syn_a), "x_a"),
                                tape.constant(gather(features, syn_b), "x_b"), true, &drop_rng);
        f = f ? tensor::concat_rows(*f, fused) : fused;
      }
      auto lg = model.compute_losses(*f, labels, loss_opt, true, &drop_rng);
      const LossBreakdown values = lg.values();
      if (!std::isfinite(values.L_total)) {
        const auto where = tape.first_non_finite();
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + "; first non-finite tensor: " +
                             where.value_or("unknown"));
      }
      model.params().zero_grad();
      tape.backward(lg.L_total);
      for (const auto& p : model.params())
        if (!p.grad.all_finite())
          throw NumericalError("non-finite gradient in '" + p.name + "' at epoch " +
                               std::to_string(epoch));
      tensor::adam_step(model.params(), state.adam, lr);
      sum += values.scaled(static_cast<double>(end - start));
    }

    TrainLogRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss = sum.scaled(1.0 / static_cast<double>(items.size()));
    row.samples = items.size();
    row.synthetic = n_synth;
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.append(row);
    state.next_epoch = epoch + 1;
    if (!options.out_dir.empty()) state.save(options.out_dir / kCheckpointFile);
    if (options.on_epoch) options.on_epoch(row);
  }
  if (!options.out_dir.empty()) {
    std::ofstream(options.out_dir / kTrainLogFile, std::ios::trunc) << log.csv();
    std::ofstream(options.out_dir / kTimingFile, std::ios::trunc) << log.timing_csv();
  }
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation on a split

/// Scores every record of `phase` against the label space of (mode, phase).
template <std::floating_point T>
eval::ScoreMatrix score_split(HdaoeModel<T>& model, const Dataset& ds, WorldMode mode, Phase phase,
                              bool refined = true) {
  const LabelSpace labels = build_label_space(ds.space, mode, phase);
  const auto records = ds.records_in(phase == Phase::kVal ? Split::kVal : Split::kTest);
  if (records.empty())
    throw DataError("no " + std::string(to_string(phase)) + " samples to evaluate");
  std::map<Pair, std::size_t> pos;
  for (std::size_t k = 0; k < labels.pairs.size(); ++k) pos[labels.pairs[k]] = k;
  const auto all = feature_matrix<T>(ds.features);
  std::vector<std::size_t> rows;
  eval::ScoreMatrix sm;
  for (const auto& r : records) {
    const auto it = pos.find(r.pair());
    if (it == pos.end())
      throw ConsistencyError("sample '" + r.sample_id + "' label is outside the label space");
    rows.push_back(r.feature_index);
    sm.truth.push_back(it->second);
  }
  sm.scores = model.feasibility_scores(gather(all, rows), labels, refined);
  sm.seen_mask = labels.seen_mask;
  sm.pairs = labels.pairs;
  sm.validate();
  return sm;
}

template <std::floating_point T>
eval::EvalReport evaluate_model(HdaoeModel<T>& model, const Dataset& ds, WorldMode mode,
                                Phase phase, bool refined = true) {
  return eval::evaluate(score_split(model, ds, mode, phase, refined), mode);
}

/// Top-1 accuracy of train samples over the seen pairs.
template <std::floating_point T>
double train_accuracy(HdaoeModel<T>& model, const Dataset& ds, bool refined = true) {
  LabelSpace labels;
  labels.pairs = ds.space.seen_list();
  labels.seen_mask.assign(labels.pairs.size(), true);
  const auto records = ds.records_in(Split::kTrain);
  if (records.empty()) throw DataError("no training samples");
  std::vector<std::size_t> rows;
  for (const auto& r : records) rows.push_back(r.feature_index);
  const auto scores =
      model.feasibility_scores(gather(feature_matrix<T>(ds.features), rows), labels, refined);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < labels.size(); ++k)
      if (scores(i, k) > scores(i, best)) best = k;
    hits += labels.pairs[best] == records[i].pair();
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// Ablation sweep

enum class Axis { kTau, kAlphaBeta, kStrategy, kLossMask };

inline std::string_view to_string(Axis a) {
  switch (a) {
    case Axis::kTau: return "tau";
    case Axis::kAlphaBeta: return "alpha_beta";
    case Axis::kStrategy: return "strategy";
    case Axis::kLossMask: return "loss_mask";
  }
  return "?";
}

inline Axis parse_axis(std::string_view s) {
  if (s == "tau") return Axis::kTau;
  if (s == "alpha_beta") return Axis::kAlphaBeta;
  if (s == "strategy") return Axis::kStrategy;
  if (s == "loss_mask") return Axis::kLossMask;
  throw std::invalid_argument("unknown sweep axis '" + std::string(s) +
                              "' (tau|alpha_beta|strategy|loss_mask)");
}

/// Config for one sweep value. alpha_beta values look like "2:1".
inline TrainConfig apply_axis(TrainConfig c, Axis axis, std::string_view value) {
  switch (axis) {
    case Axis::kTau: c.tau = detail::parse_double("tau", value); break;
    case Axis::kAlphaBeta: {
      const auto colon = value.find(':');
      if (colon == std::string_view::npos)
        throw std::invalid_argument("alpha_beta value must be alpha:beta, got '" +
                                    std::string(value) + "'");
      c.alpha = detail::parse_double("alpha", value.substr(0, colon));
      c.beta = detail::parse_double("beta", value.substr(colon + 1));
      break;
    }
    case Axis::kStrategy: c.adds.strategy = adds::parse_strategy(value); break;
    case Axis::kLossMask: c.loss_mask = parse_mask(value); break;
  }
  c.validate();
  return c;
}

struct SweepOptions {
  WorldMode mode = WorldMode::kClosed;
  Phase phase = Phase::kTest;
  std::size_t threads = 1;
};

struct SweepRow {
  std::string value;
  std::uint64_t seed = 0;
  std::optional<eval::EvalReport> report;
  std::string error;
};

/// Train per precision, then evaluate.
inline eval::EvalReport train_and_evaluate(const TrainConfig& c, const Dataset& ds, WorldMode mode,
                                           Phase phase) {
  const auto run = [&]<std::floating_point T>() {
    TrainState<T> state(c, ds);
    train(c, ds, state);
    return evaluate_model(state.model, ds, mode, phase, c.eval_refined);
  };
  return c.precision == Precision::kF64 ? run.template operator()<double>()
                                        : run.template operator()<float>();
}

/// HDAOE_THREADS caps the worker count; unset means hardware concurrency.
inline std::size_t worker_cap() {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HDAOE_THREADS")) {
    std::size_t v = 0;
    const std::string_view s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec == std::errc{} && v > 0) cap = v;
  }
  return cap;
}

/// One train+eval run per value with the base seed, so values sharing a seed
/// see the same initialization. Failed runs keep their message; siblings go on.
inline std::vector<SweepRow> ablation_sweep(const TrainConfig& base, const Dataset& ds, Axis axis,
                                            const std::vector<std::string>& values,
                                            const SweepOptions& opt = {}) {
  if (values.empty()) throw std::invalid_argument("sweep needs at least one value");
  std::vector<SweepRow> rows(values.size());
  std::size_t next = 0;
  std::mutex mu;
  const auto worker = [&] {
    while (true) {
      std::size_t k;
      {
        std::lock_guard lock(mu);
        if (next == values.size()) return;
        k = next++;
      }
      SweepRow& row = rows[k];
      row.value = values[k];
      row.seed = base.seed;
      try {
        row.report = train_and_evaluate(apply_axis(base, axis, values[k]), ds, opt.mode, opt.phase);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
  };
  const std::size_t n = std::min({opt.threads, values.size(), worker_cap()});
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  return rows;
}

inline std::string sweep_csv(Axis axis, std::span<const SweepRow> rows) {
  using detail::format_double;
  std::ostringstream out;
  out << "axis,value,seed,status,AUC,HM,S,U,A,O,error\n";
  for (const auto& r : rows) {
    out << to_string(axis) << ',' << r.value << ',' << r.seed << ',';
    if (r.report) {
      const auto& c = r.report->curve;
      out << "ok," << format_double(c.auc) << ',' << format_double(c.best_hm) << ','
          << format_double(c.best_seen) << ',' << format_double(c.best_unseen) << ','
          << format_double(r.report->attr_acc) << ',' << format_double(r.report->obj_acc) << ",\n";
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << "error,,,,,,," << msg << '\n';
    }
  }
  return out.str();
}

}  // namespace hdaoe::train
