// Copyright 2026 The qatlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Pipeline commands: pretrain -> profile -> allocate -> train -> eval, plus
// export-hist. Every command writes resolved_config.json into its output
// directory next to its own artifacts.

#pragma once

#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "qatlab/checkpoint.hpp"
#include "qatlab/config.hpp"
#include "qatlab/dataset.hpp"
#include "qatlab/harness.hpp"
#include "qatlab/histogram.hpp"

namespace qatlab {

namespace fs = std::filesystem;

struct CommandArgs {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  std::string out_dir = "out";
  // export-hist only
  std::string layer;
  std::string what = "weights";
};

inline constexpr const char* kMetricsHeader = "epoch,step,lr,task_loss,commit_loss,train_acc,val_acc";

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.4f,%.4f\n", r.epoch, r.step, r.lr, r.task_loss,
                  r.commit_loss, r.train_acc, r.val_acc);
    out += buf;
  }
  return out;
}

struct Splits {
  Dataset train, val;
};

inline Splits load_splits(const DatasetConfig& d) {
  if (d.format == "synthetic") {
    SyntheticOptions opt;
    opt.seed = d.seed;
    opt.classes = d.num_classes;
    opt.image_size = d.image_size;
    opt.samples = d.train_size;
    Splits s;
    s.train = synthetic_blobs(opt, 0);
    opt.samples = d.val_size;
    s.val = synthetic_blobs(opt, 1);
    return s;
  }
  const Dataset all = d.format == "idx" ? load_idx(d.path, d.labels) : load_csv(d.path);
  if (d.val_size >= all.size()) {
    throw ConfigError("dataset.val_size (" + std::to_string(d.val_size) + ") leaves no training samples out of " +
                      std::to_string(all.size()));
  }
  const std::size_t n_train = std::min(d.train_size, all.size() - d.val_size);
  return {all.slice(0, n_train), all.slice(all.size() - d.val_size, d.val_size)};
}

inline ModelSpec model_spec_for(const ExperimentConfig& cfg, const Splits& s) {
  const int classes = std::max({cfg.dataset.num_classes, s.train.num_classes(), s.val.num_classes()});
  return make_model_spec(cfg.arch, s.train.channels, s.train.height, s.train.width, classes);
}

inline void check_compatible(const ModelSpec& spec, const Dataset& d) {
  if (d.sample_shape() != Shape{spec.channels, spec.height, spec.width}) {
    throw ValidationError("dataset samples are " + shape_str(d.sample_shape()) + ", checkpoint expects " +
                          shape_str({spec.channels, spec.height, spec.width}));
  }
  if (d.num_classes() > spec.classes) throw ValidationError("dataset has more classes than the checkpoint model");
}

namespace detail {

inline fs::path artifact_base(const std::string& key, const std::string& value) {
  if (value.empty()) throw ConfigError("this command needs " + key + "=<path>");
  fs::path p(value);
  if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
  return p;
}

inline fs::path require_file(const std::string& key, const std::string& value) {
  if (value.empty()) throw ConfigError("this command needs " + key + "=<path>");
  if (!fs::exists(value)) throw MissingArtifactError(key + " not found: " + value);
  return value;
}

class Run {
 public:
  Run(const CommandArgs& args, std::ostream& log)
      : cfg(resolve_config(args.preset, args.config_path, args.sets)), out(args.out_dir), log_(log) {
    fs::create_directories(out);
    write_json_atomic(out / "resolved_config.json", to_json(cfg));
    if (deterministic_mode()) log_ << "deterministic mode\n";
  }

  std::ostream& log() { return log_; }

  EpochCallback progress(const char* stage) {
    return [this, stage](const EpochMetrics& r) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "%s epoch %zu step %zu lr %.5f loss %.4f commit %.5f train %.2f%% val %.2f%%\n",
                    stage, r.epoch, r.step, r.lr, r.task_loss, r.commit_loss, r.train_acc, r.val_acc);
      log_ << buf << std::flush;
    };
  }

  ExperimentConfig cfg;
  fs::path out;

 private:
  std::ostream& log_;
};

inline Json summary(const char* stage, const TrainState& s, const EvalResult& val) {
  return Json{{"stage", stage},
              {"epochs", s.epoch},
              {"steps", s.step},
              {"val_acc", val.top1_accuracy},
              {"val_loss", val.mean_loss}};
}

}  // namespace detail

inline void cmd_pretrain(const CommandArgs& args, std::ostream& log) {
  detail::Run run(args, log);
  const auto data = load_splits(run.cfg.dataset);
  const auto spec = model_spec_for(run.cfg, data);
  std::vector<EpochMetrics> rows;
  auto state = pretrain(spec, data.train, data.val, run.cfg, &rows, run.progress("pretrain"));
  write_file_atomic(run.out / "metrics.csv", metrics_csv(rows));
  auto metrics = detail::summary("pretrain", state, evaluate(state, data.val));
  save_checkpoint(run.out / "checkpoint", {std::move(state), to_json(run.cfg), std::move(metrics)});
}

inline void cmd_profile(const CommandArgs& args, std::ostream& log) {
  detail::Run run(args, log);
  const auto ck = load_checkpoint(detail::artifact_base("checkpoint", run.cfg.checkpoint));
  const auto data = load_splits(run.cfg.dataset);
  check_compatible(ck.state.spec(), data.train);
  const auto profile = profile_sensitivity(ck.state, data.train, run.cfg);
  write_json_atomic(run.out / "sensitivity.json", to_json(profile));
  for (std::size_t l = 0; l < profile.scores.size(); ++l) log << profile.layers[l] << " " << profile.scores[l] << "\n";
}

inline void cmd_allocate(const CommandArgs& args, std::ostream& log) {
  detail::Run run(args, log);
  if (run.cfg.precision != "mixed") throw ConfigError("allocate needs precision=mixed");
  const auto profile = sensitivity_from_json(read_json_file(detail::require_file("sensitivity", run.cfg.sensitivity)));
  const auto a = allocate_bits(profile, run.cfg);
  write_json_atomic(run.out / "assignment.json", to_json(a, profile.layers));
  for (std::size_t l = 0; l < a.bits.size(); ++l) {
    log << (profile.layers.empty() ? "layer" + std::to_string(l) : profile.layers[l]) << " b'=" << a.b_prime[l]
        << " bits=" << a.bits[l] << "\n";
  }
}

inline void cmd_train(const CommandArgs& args, std::ostream& log) {
  detail::Run run(args, log);
  const auto ck = load_checkpoint(detail::artifact_base("checkpoint", run.cfg.checkpoint));
  if (ck.state.quantized) throw ValidationError("train expects a full-precision checkpoint");
  const auto data = load_splits(run.cfg.dataset);
  check_compatible(ck.state.spec(), data.train);
  std::optional<BitAssignment> given;
  if (run.cfg.precision == "mixed" && !run.cfg.assignment.empty()) {
    given = assignment_from_json(read_json_file(detail::require_file("assignment", run.cfg.assignment)));
  }
  auto state = qat_prepare(ck.state, run.cfg, data.train, given);
  const auto names = state.spec().quantized_names();
  std::string bits;
  for (std::size_t q = 0; q < names.size(); ++q) bits += (q ? " " : "") + names[q] + "=" + std::to_string(state.assignment.bits[q]);
  log << "bits: " << bits << "\n";

  const auto rows = run_training(state, data.train, data.val, run.cfg.epochs, run.progress("qat"));
  write_file_atomic(run.out / "metrics.csv", metrics_csv(rows));
  write_json_atomic(run.out / "assignment.json", to_json(state.assignment, names));
  if (state.sensitivity) write_json_atomic(run.out / "sensitivity.json", to_json(*state.sensitivity));
  auto metrics = detail::summary("train", state, evaluate(state, data.val));
  if (ck.metrics.contains("val_acc")) metrics["fp_val_acc"] = ck.metrics["val_acc"];
  metrics["average_bits"] = state.assignment.average_bits();
  save_checkpoint(run.out / "checkpoint", {std::move(state), to_json(run.cfg), std::move(metrics)});
}

inline void cmd_eval(const CommandArgs& args, std::ostream& log) {
  detail::Run run(args, log);
  const auto ck = load_checkpoint(detail::artifact_base("checkpoint", run.cfg.checkpoint));
  const auto data = load_splits(run.cfg.dataset);
  check_compatible(ck.state.spec(), data.val);
  const auto r = evaluate(ck.state, data.val);
  write_json_atomic(run.out / "eval.json", Json{{"top1_accuracy", r.top1_accuracy},
                                                {"mean_loss", r.mean_loss},
                                                {"samples", data.val.size()},
                                                {"quantized", ck.state.quantized}});
  log << "top1 " << r.top1_accuracy << "% loss " << r.mean_loss << "\n";
}

inline void cmd_export_hist(const CommandArgs& args, std::ostream& log) {
  detail::Run run(args, log);
  const auto ck = load_checkpoint(detail::artifact_base("checkpoint", run.cfg.checkpoint));
  if (args.what != "weights" && args.what != "codebook") throw ConfigError("--what must be weights or codebook");
  const auto& s = ck.state;
  const auto& layers = s.model.layers();
  const auto it = std::find_if(layers.begin(), layers.end(), [&](const auto& l) { return l.spec.name == args.layer; });
  if (it == layers.end()) throw MissingArtifactError("unknown layer '" + args.layer + "'");
  const auto li = static_cast<std::size_t>(it - layers.begin());

  const LayerQuant<float>* lq = nullptr;
  const auto qlayers = s.spec().quantized_layers();
  if (s.quantized) {
    for (std::size_t q = 0; q < qlayers.size(); ++q)
      if (qlayers[q] == li) lq = &s.quant[q];
  }
  std::vector<float> values;
  if (args.what == "weights") {
    values = it->weight.values();
  } else {
    if (!lq) throw MissingArtifactError("layer '" + args.layer + "' has no codebook in this checkpoint");
    NoGradGuard ng;
    values = quantize_weight(it->weight, lq->scale, lq->codebook, 0.0, false).reconstructed.values();
  }
  const auto h = symmetric_histogram<float>(values);
  const std::vector<double> no_levels;
  const auto path = run.out / ("hist_" + args.layer + "_" + args.what + ".csv");
  write_file_atomic(path, histogram_csv(h, lq ? std::span<const double>(lq->codebook.levels) : std::span<const double>(no_levels)));
  log << "wrote " << path.string() << "\n";
}

// Exit codes: 2 bad config or validation, 3 missing or corrupt artifact,
// 4 non-finite value during training, 1 anything else.
inline int exit_code_for(std::exception_ptr e, std::ostream& err) {
  try {
    std::rethrow_exception(e);
  } catch (const NumericError& x) {
    err << "error: numeric failure in " << x.op() << ": " << x.what() << "\n";
    return 4;
  } catch (const MissingArtifactError& x) {
    err << "error: " << x.what() << "\n";
    return 3;
  } catch (const FormatError& x) {
    err << "error: " << x.what() << "\n";
    return 3;
  } catch (const ConfigError& x) {
    err << "error: " << x.what() << "\n";
    return 2;
  } catch (const ValidationError& x) {
    err << "error: " << x.what() << "\n";
    return 2;
  } catch (const DimensionError& x) {
    err << "error: " << x.what() << "\n";
    return 2;
  } catch (const std::exception& x) {
    err << "error: " << x.what() << "\n";
    return 1;
  }
  return 1;
}

inline const std::map<std::string, std::function<void(const CommandArgs&, std::ostream&)>>& commands() {
  static const std::map<std::string, std::function<void(const CommandArgs&, std::ostream&)>> table = {
      {"pretrain", cmd_pretrain}, {"profile", cmd_profile}, {"allocate", cmd_allocate},
      {"train", cmd_train},       {"eval", cmd_eval},       {"export-hist", cmd_export_hist}};
  return table;
}

inline int run_command(const std::string& name, const CommandArgs& args, std::ostream& log) {
  const auto it = commands().find(name);
  if (it == commands().end()) {
    log << "error: unknown command '" << name << "'\n";
    return 2;
  }
  try {
    it->second(args, log);
    return 0;
  } catch (...) {
    return exit_code_for(std::current_exception(), log);
  }
}

}  // namespace qatlab
