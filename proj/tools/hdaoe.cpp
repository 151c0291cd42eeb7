// hdaoe: ingest, train, eval, sweep, retrieve, gradcheck and synth-dataset.
//
// Exit codes: 0 ok, 1 unexpected, 2 usage, 3 data, 4 numerical, 5 I/O.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hdaoe/checkpoint.hpp"
#include "hdaoe/compspace.hpp"
#include "hdaoe/eval.hpp"
#include "hdaoe/gradcheck.hpp"
#include "hdaoe/synth.hpp"
#include "hdaoe/train.hpp"

namespace fs = std::filesystem;
using namespace hdaoe;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kUsage = 2, kData = 3, kNumerical = 4, kIo = 5 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string data, out, config, checkpoint, axis, values;
  std::optional<std::uint64_t> seed;
  std::string mode = "closed_world";
  std::string phase = "test";
  std::size_t topk = 5;
  // synth-dataset
  synth::SynthOptions synth;
  // gradcheck
  std::string precision = "both";
  bool audit = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

fs::path require_out(const Flags& f) {
  if (f.out.empty()) throw UsageError("--out is required");
  fs::create_directories(f.out);
  return f.out;
}

Dataset require_data(const Flags& f) {
  if (f.data.empty()) throw UsageError("--data is required");
  return load_dataset(f.data);
}

train::TrainConfig read_config(const Flags& f, const fs::path& fallback_dir = {}) {
  train::TrainConfig c;
  if (!f.config.empty()) {
    c = train::load_config(f.config);
  } else if (!fallback_dir.empty() && fs::exists(fallback_dir / train::kConfigFile)) {
    c = train::load_config(fallback_dir / train::kConfigFile);
  }
  if (f.seed) c.seed = *f.seed;
  c.validate();
  return c;
}

/// Runs `fn` with a TrainState of the precision a checkpoint was written in.
template <class Fn>
int with_checkpoint_model(const Flags& f, const Dataset& ds, Fn&& fn) {
  if (f.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const fs::path ck_path(f.checkpoint);
  auto cfg = read_config(f, ck_path.parent_path());
  const auto ck = tensor::read_checkpoint(ck_path);
  cfg.precision = ck.version == tensor::kCheckpointF64 ? train::Precision::kF64
                                                       : train::Precision::kF32;
  const auto run = [&]<std::floating_point T>() {
    train::TrainState<T> state(cfg, ds);
    tensor::apply_checkpoint<T>(ck, state.model.params(), nullptr);
    return fn(cfg, state.model);
  };
  return cfg.precision == train::Precision::kF64 ? run.template operator()<double>()
                                                 : run.template operator()<float>();
}

int cmd_ingest(const Flags& f) {
  const auto ds = require_data(f);
  nlohmann::json j = {{"attributes", ds.space.num_attributes()},
                      {"objects", ds.space.num_objects()},
                      {"seen_pairs", ds.space.seen_pairs.size()},
                      {"unseen_val_pairs", ds.space.unseen_val_pairs.size()},
                      {"unseen_test_pairs", ds.space.unseen_test_pairs.size()},
                      {"samples", ds.records.size()},
                      {"train", ds.records_in(Split::kTrain).size()},
                      {"val", ds.records_in(Split::kVal).size()},
                      {"test", ds.records_in(Split::kTest).size()},
                      {"feature_dim", ds.features.dim}};
  std::cout << j.dump(2) << '\n';
  if (!f.out.empty()) write_text(require_out(f) / "ingest.json", j.dump(2) + "\n");
  return kOk;
}

int cmd_train(const Flags& f) {
  const auto ds = require_data(f);
  const auto out = require_out(f);
  const auto cfg = read_config(f);
  train::TrainOptions opt;
  opt.out_dir = out;
  opt.audit = f.audit;
  opt.on_epoch = [](const train::TrainLogRow& r) {
    std::cerr << "epoch " << r.epoch << " lr " << r.lr << " L_total " << r.loss.L_total << '\n';
  };
  const auto run = [&]<std::floating_point T>() {
    train::TrainState<T> state(cfg, ds);
    if (!f.checkpoint.empty()) state.load(f.checkpoint);
    train::train(cfg, ds, state, opt);
    if (state.next_epoch == 0) state.save(out / train::kCheckpointFile);
  };
  if (cfg.precision == train::Precision::kF64)
    run.template operator()<double>();
  else
    run.template operator()<float>();
  return kOk;
}

int cmd_eval(const Flags& f) {
  const auto ds = require_data(f);
  const auto out = require_out(f);
  const auto mode = parse_world_mode(f.mode);
  const auto phase = parse_phase(f.phase);
  return with_checkpoint_model(f, ds, [&](const train::TrainConfig& cfg, auto& model) {
    const auto report = train::evaluate_model(model, ds, mode, phase, cfg.eval_refined);
    write_text(out / "report.csv",
               std::string(eval::kReportCsvHeader) + "\n" + eval::report_csv_row(report) + "\n");
    write_text(out / "report.json", eval::report_json(report).dump(2) + "\n");
    write_text(out / "curve.csv", eval::curve_csv(report.curve));
    std::cout << eval::kReportCsvHeader << '\n' << eval::report_csv_row(report) << '\n';
    return kOk;
  });
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = hdaoe::detail::trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

int cmd_sweep(const Flags& f) {
  const auto ds = require_data(f);
  const auto out = require_out(f);
  if (f.axis.empty()) throw UsageError("--axis is required");
  const auto axis = train::parse_axis(f.axis);
  const auto values = split_values(f.values);
  if (values.empty()) throw UsageError("--values needs at least one value");
  const auto cfg = read_config(f);
  train::SweepOptions opt;
  opt.mode = parse_world_mode(f.mode);
  opt.phase = parse_phase(f.phase);
  opt.threads = train::worker_cap();
  const auto rows = train::ablation_sweep(cfg, ds, axis, values, opt);
  const auto csv = train::sweep_csv(axis, rows);
  write_text(out / "sweep.csv", csv);
  std::cout << csv;
  for (const auto& r : rows)
    if (!r.error.empty()) std::cerr << "run " << r.value << " failed: " << r.error << '\n';
  return kOk;
}

int cmd_retrieve(const Flags& f) {
  const auto ds = require_data(f);
  const auto out = require_out(f);
  const auto mode = parse_world_mode(f.mode);
  const auto phase = parse_phase(f.phase);
  if (f.topk == 0) throw UsageError("--topk must be at least 1");
  return with_checkpoint_model(f, ds, [&](const train::TrainConfig& cfg, auto& model) {
    const auto sm = train::score_split(model, ds, mode, phase, cfg.eval_refined);
    const auto records = ds.records_in(phase == Phase::kVal ? Split::kVal : Split::kTest);
    const auto write = [&](eval::Direction dir, const fs::path& path) {
      const auto res = eval::topk_retrieval(sm.scores, dir, f.topk);
      std::ostringstream csv;
      csv << "query,rank,candidate,score\n";
      csv.precision(17);
      const bool i2t = dir == eval::Direction::kImageToText;
      for (std::size_t q = 0; q < res.lists.size(); ++q) {
        const std::string query = i2t ? records[q].sample_id : ds.space.pair_name(sm.pairs[q]);
        for (std::size_t r = 0; r < res.lists[q].size(); ++r) {
          const auto& hit = res.lists[q][r];
          const std::string cand =
              i2t ? ds.space.pair_name(sm.pairs[hit.candidate]) : records[hit.candidate].sample_id;
          csv << query << ',' << r + 1 << ',' << cand << ',' << hit.score << '\n';
        }
      }
      write_text(path, csv.str());
      if (res.truncated)
        std::cerr << "note: --topk exceeds the candidate count for " << path.filename().string()
                  << "; all candidates listed\n";
    };
    write(eval::Direction::kImageToText, out / "retrieval_image_to_text.csv");
    write(eval::Direction::kTextToImage, out / "retrieval_text_to_image.csv");
    return kOk;
  });
}

int cmd_gradcheck(const Flags& f) {
  ToyProblem p;
  if (f.seed) p.seed = *f.seed;
  bool ok = true;
  const auto report = [&](const char* name, const tensor::GradCheckReport& r) {
    std::cout << name << " max_relative_error=" << r.max_relative_error()
              << " tolerance=" << r.tolerance << (r.passed() ? " PASS" : " FAIL") << '\n';
    ok = ok && r.passed();
  };
  if (f.precision != "both" && f.precision != "f64" && f.precision != "f32")
    throw UsageError("--precision must be f32, f64 or both");
  if (f.precision != "f32") report("f64", check_model_gradients<double>(p, 1e-6));
  if (f.precision != "f64") report("f32", check_model_gradients<float>(p, 1e-3));
  return ok ? kOk : kNumerical;
}

int cmd_synth(const Flags& f) {
  auto opt = f.synth;
  if (f.seed) opt.seed = *f.seed;
  const auto ds = synth::make_dataset(opt);
  synth::write_dataset(ds, require_out(f));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HDA-OE compositional zero-shot learning"};
  app.require_subcommand(1, 1);
  Flags f;

  const auto add_data = [&](CLI::App* c) { c->add_option("--data", f.data, "Split directory"); };
  const auto add_out = [&](CLI::App* c) { c->add_option("--out", f.out, "Output directory"); };
  const auto add_config = [&](CLI::App* c) {
    c->add_option("--config", f.config, "key=value config file");
  };
  const auto add_seed = [&](CLI::App* c) { c->add_option("--seed", f.seed, "Global seed"); };
  const auto add_eval_flags = [&](CLI::App* c) {
    c->add_option("--mode", f.mode, "closed_world | open_world")
        ->check(CLI::IsMember({"closed_world", "open_world"}));
    c->add_option("--phase", f.phase, "val | test")->check(CLI::IsMember({"val", "test"}));
  };

  auto* ingest = app.add_subcommand("ingest", "Validate a split directory and print its summary");
  add_data(ingest);
  add_out(ingest);

  auto* train_cmd = app.add_subcommand("train", "Train and checkpoint every epoch");
  add_data(train_cmd);
  add_out(train_cmd);
  add_config(train_cmd);
  add_seed(train_cmd);
  train_cmd->add_option("--checkpoint", f.checkpoint, "Resume from this checkpoint");
  train_cmd->add_flag("--audit", f.audit, "Write the synthetic-sample audit log");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_data(eval_cmd);
  add_out(eval_cmd);
  add_config(eval_cmd);
  add_seed(eval_cmd);
  add_eval_flags(eval_cmd);
  eval_cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate");

  auto* sweep = app.add_subcommand("sweep", "One train+eval run per axis value");
  add_data(sweep);
  add_out(sweep);
  add_config(sweep);
  add_seed(sweep);
  add_eval_flags(sweep);
  sweep->add_option("--axis", f.axis, "tau | alpha_beta | strategy | loss_mask");
  sweep->add_option("--values", f.values, "Comma-separated values, e.g. 1.0,0.5 or 2:1,1:1");

  auto* retrieve = app.add_subcommand("retrieve", "Top-k image->text and text->image lists");
  add_data(retrieve);
  add_out(retrieve);
  add_config(retrieve);
  add_seed(retrieve);
  add_eval_flags(retrieve);
  retrieve->add_option("--checkpoint", f.checkpoint, "Checkpoint to score with");
  retrieve->add_option("--topk", f.topk, "Hits per query");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the objective");
  add_seed(gradcheck);
  gradcheck->add_option("--precision", f.precision, "f32 | f64 | both");

  auto* synth_cmd = app.add_subcommand("synth-dataset", "Write the linear synthetic fixture");
  add_out(synth_cmd);
  add_seed(synth_cmd);
  synth_cmd->add_option("--attrs", f.synth.attrs, "Attribute count");
  synth_cmd->add_option("--objs", f.synth.objs, "Object count");
  synth_cmd->add_option("--unseen", f.synth.unseen_test, "Unseen test pairs");
  synth_cmd->add_option("--unseen-val", f.synth.unseen_val, "Unseen validation pairs");
  synth_cmd->add_option("--dim", f.synth.dim, "Feature dimension");
  synth_cmd->add_option("--samples", f.synth.samples, "Total samples");
  synth_cmd->add_option("--noise", f.synth.noise, "Per-coordinate Gaussian noise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(f);
    if (train_cmd->parsed()) return cmd_train(f);
    if (eval_cmd->parsed()) return cmd_eval(f);
    if (sweep->parsed()) return cmd_sweep(f);
    if (retrieve->parsed()) return cmd_retrieve(f);
    if (gradcheck->parsed()) return cmd_gradcheck(f);
    if (synth_cmd->parsed()) return cmd_synth(f);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUsage;
}
