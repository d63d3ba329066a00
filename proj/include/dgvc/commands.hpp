#pragma once

#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgvc/analyzer.hpp"
#include "dgvc/checkpoint.hpp"
#include "dgvc/config.hpp"
#include "dgvc/corpus.hpp"
#include "dgvc/diag.hpp"
#include "dgvc/evalkit.hpp"
#include "dgvc/feature_io.hpp"
#include "dgvc/trainer.hpp"

namespace dgvc::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kOtherError = 1,
  kConfigError = 2,
  kCheckpointError = 3,
  kFormatError = 4,
  kNumericError = 5,
  kDiagFailed = 6,
};

inline constexpr const char* kFeatureExt = ".dgvc";

// ------------------------------------------------------------------ logging

enum class LogLevel { quiet, info, debug };

/// Verbosity from DGVC_LOG (quiet, info, debug); info when unset.
inline LogLevel log_level() {
  const char* v = std::getenv("DGVC_LOG");
  if (!v) return LogLevel::info;
  const std::string s(v);
  if (s == "quiet") return LogLevel::quiet;
  if (s == "debug") return LogLevel::debug;
  return LogLevel::info;
}

inline void log(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) <= static_cast<int>(log_level())) std::cerr << msg << '\n';
}

// ------------------------------------------------------------------ config plumbing

/// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<long> iterations;
  std::optional<int> n_samples;
  std::optional<std::string> out;
};

inline ExperimentConfig effective_config(const std::optional<fs::path>& config_path, const Overrides& o) {
  ExperimentConfig c = config_path ? load_config(*config_path) : ExperimentConfig{};
  if (o.seed) c.seed = *o.seed;
  if (o.iterations) c.train.iterations = *o.iterations;
  if (o.n_samples) c.convert.n_samples = *o.n_samples;
  if (o.out) c.paths.out_dir = *o.out;
  c.validate();
  return c;
}

/// Snapshot of the merged configuration next to the command's outputs.
inline void echo_config(const ExperimentConfig& c, const fs::path& out_dir) {
  write_config(c, out_dir / "effective_config.json");
}

inline std::vector<fs::path> list_features(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == kFeatureExt) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<FeatureSequence> read_all(const fs::path& dir) {
  std::vector<FeatureSequence> out;
  for (const auto& p : list_features(dir)) out.push_back(read_features(p));
  if (out.empty()) throw IoError("no feature files in " + dir.string());
  return out;
}

inline std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

inline std::string utt_name(int i) {
  std::ostringstream os;
  os << "utt_" << std::setw(3) << std::setfill('0') << i << kFeatureExt;
  return os.str();
}

// ------------------------------------------------------------------ make-corpus

/// Writes train/{X,Y} and the parallel heldout/{X,Y} split plus manifest.json
/// listing every file with its CRC-32 and the held-out oracle pairs.
inline nlohmann::json cmd_make_corpus(const ExperimentConfig& cfg, const fs::path& out) {
  Rng rng = Rng::stream(cfg.seed, "corpus");
  const SyntheticCorpus corpus = make_synthetic_corpus(cfg.corpus, rng);
  nlohmann::json files = nlohmann::json::array();
  auto emit = [&](const std::vector<FeatureSequence>& set, const std::string& split, const std::string& speaker) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      const std::string rel = split + "/" + speaker + "/" + utt_name(static_cast<int>(i));
      const auto bytes = encode_features(set[i]);
      bin::write_file(out / rel, bytes);
      files.push_back({{"path", rel}, {"split", split}, {"speaker", speaker}, {"frames", set[i].frames()},
                       {"crc32", hex32(crc32_of(bytes))}});
    }
  };
  fs::create_directories(out);
  emit(corpus.train_x, "train", "X");
  emit(corpus.train_y, "train", "Y");
  emit(corpus.heldout_x, "heldout", "X");
  emit(corpus.heldout_y, "heldout", "Y");
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.heldout_x.size(); ++i) {
    const std::string n = utt_name(static_cast<int>(i));
    pairs.push_back({{"x", "heldout/X/" + n}, {"y", "heldout/Y/" + n}});
  }
  nlohmann::json manifest = {{"seed", cfg.seed}, {"corpus", cfg.corpus}, {"files", files}, {"oracle_pairs", pairs}};
  std::ofstream(out / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
  echo_config(cfg, out);
  log(LogLevel::info, "wrote " + std::to_string(files.size()) + " feature files to " + out.string());
  return manifest;
}

// ------------------------------------------------------------------ train

inline nlohmann::json loss_json(const LossReport& r) {
  return {{"d_loss_real", r.d_loss_real}, {"d_loss_fake", r.d_loss_fake}, {"g_adv", r.g_adv},
          {"g_cyc", r.g_cyc},             {"g_id", r.g_id},               {"total_g", r.total_g},
          {"total_d", r.total_d},         {"t", r.t_sampled}};
}

inline std::string step_name(long step) {
  std::ostringstream os;
  os << "step_" << std::setw(7) << std::setfill('0') << step << ".dgck";
  return os.str();
}

// Keeps only metrics records up to `step` so a resumed run appends cleanly.
inline void truncate_metrics(const fs::path& path, long step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    try {
      if (nlohmann::json::parse(line).at("step").get<long>() <= step) keep.push_back(line);
    } catch (const nlohmann::json::exception&) {
      break;  // torn tail from an interrupted write
    }
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

/// Trains on corpus_dir/train/{X,Y}. Resumes from `resume` when given, else
/// from out/checkpoint.dgck when it exists. Writes periodic checkpoints under
/// out/checkpoints, the latest one as out/checkpoint.dgck, and one metrics
/// record per step to out/metrics.ndjson.
inline TrainState cmd_train(const ExperimentConfig& cfg, const fs::path& out,
                            const std::optional<fs::path>& resume = std::nullopt) {
  const fs::path corpus_dir = cfg.paths.corpus_dir;
  const auto cx = read_all(corpus_dir / "train" / "X");
  const auto cy = read_all(corpus_dir / "train" / "Y");
  const DiffusionSchedule sched = cfg.schedule.build();
  const TrainConfig tc = cfg.train_config();
  fs::create_directories(out / "checkpoints");
  echo_config(cfg, out);

  const fs::path latest = out / "checkpoint.dgck";
  TrainState state;
  if (resume || fs::exists(latest)) {
    state = load_checkpoint(resume ? *resume : latest);
    if (!(state.gen_spec == cfg.nets.generator) || !(state.disc_spec == cfg.nets.discriminator) ||
        state.betas != sched.betas())
      throw CheckpointError("checkpoint does not match the configured networks or schedule");
    if (state.step > tc.iterations)
      throw CheckpointError("checkpoint is at step " + std::to_string(state.step) + ", past the configured " +
                            std::to_string(tc.iterations) + " iterations");
    log(LogLevel::info, "resuming from step " + std::to_string(state.step));
  } else {
    state = init_train_state(cfg.nets.generator, cfg.nets.discriminator, sched, tc, compute_speaker_stats(cx),
                             compute_speaker_stats(cy));
  }

  const fs::path metrics_path = out / "metrics.ndjson";
  truncate_metrics(metrics_path, state.step);
  std::ofstream metrics(metrics_path, std::ios::app);
  const auto t0 = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.on_step = [&](const TrainState& s, const std::array<LossReport, 2>& r) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics << nlohmann::json{{"step", s.step}, {"wall_s", wall}, {"x2y", loss_json(r[0])}, {"y2x", loss_json(r[1])}}.dump()
            << '\n';
    if (s.step % 100 == 0)
      log(LogLevel::info, "step " + std::to_string(s.step) + " total_g " + std::to_string(r[0].total_g) + "/" +
                              std::to_string(r[1].total_g) + " total_d " + std::to_string(r[0].total_d) + "/" +
                              std::to_string(r[1].total_d));
  };
  hooks.on_checkpoint = [&](const TrainState& s) {
    metrics.flush();
    save_checkpoint(s, out / "checkpoints" / step_name(s.step));
    save_checkpoint(s, latest);
    log(LogLevel::debug, "checkpoint at step " + std::to_string(s.step));
  };
  return train_loop(tc, std::move(state), cx, cy, sched, hooks);
}

// ------------------------------------------------------------------ convert

inline std::string sample_name(const std::string& stem, int k, int n) {
  return n == 1 ? stem + kFeatureExt : stem + ".s" + std::to_string(k) + kFeatureExt;
}

/// Converts one feature file or every feature file in a directory. Each input
/// gets its own random stream keyed by file name, so outputs do not depend on
/// which other files are converted alongside.
inline std::vector<fs::path> cmd_convert(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& input,
                                         Direction dir, const fs::path& out) {
  const TrainState model = load_checkpoint(checkpoint);
  const DiffusionSchedule sched = cfg.schedule.build();
  const std::vector<fs::path> inputs = fs::is_directory(input) ? list_features(input) : std::vector<fs::path>{input};
  if (inputs.empty()) throw IoError("no feature files in " + input.string());
  fs::create_directories(out);
  echo_config(cfg, out);
  ConvertOptions opt{cfg.convert.n_samples, cfg.convert.start_step};
  std::vector<fs::path> written;
  for (const auto& in : inputs) {
    const FeatureSequence src = read_features(in);
    const std::string stem = in.stem().string();
    Rng rng = Rng::stream(cfg.seed, "convert/" + std::string(direction_name(dir)) + "/" + stem);
    const auto outs = convert(src, dir, model, sched, rng, opt);
    for (int k = 0; k < static_cast<int>(outs.size()); ++k) {
      written.push_back(out / sample_name(stem, k, opt.n_samples));
      write_features(outs[k], written.back());
    }
  }
  log(LogLevel::info, "wrote " + std::to_string(written.size()) + " converted files to " + out.string());
  return written;
}

// ------------------------------------------------------------------ evaluate

/// MCD of converted files against same-named references. Several samples of
/// one source ("<stem>.s<k>") are each scored and also feed the diversity
/// statistic. With `source_dir`, the unconverted sources are scored as a
/// baseline row.
inline std::vector<EvalReport> cmd_evaluate(const ExperimentConfig& cfg, const fs::path& converted_dir,
                                            const fs::path& reference_dir, Direction dir, const fs::path& out,
                                            const std::optional<fs::path>& source_dir = std::nullopt) {
  const auto refs_paths = list_features(reference_dir);
  if (refs_paths.empty()) throw IoError("no reference files in " + reference_dir.string());
  std::vector<FeatureSequence> refs, convs, srcs;
  double diversity_sum = 0.0;
  int diversity_n = 0;
  for (const auto& rp : refs_paths) {
    const std::string stem = rp.stem().string();
    const FeatureSequence ref = read_features(rp);
    std::vector<FeatureSequence> samples;
    if (fs::exists(converted_dir / (stem + kFeatureExt))) {
      samples.push_back(read_features(converted_dir / (stem + kFeatureExt)));
    } else {
      for (int k = 0; fs::exists(converted_dir / sample_name(stem, k, 2)); ++k)
        samples.push_back(read_features(converted_dir / sample_name(stem, k, 2)));
    }
    if (samples.empty()) throw IoError("no converted file for reference " + rp.filename().string());
    if (samples.size() >= 2) {
      diversity_sum += diversity(samples);
      ++diversity_n;
    }
    for (auto& s : samples) {
      refs.push_back(ref);
      convs.push_back(std::move(s));
    }
    if (source_dir) srcs.push_back(read_features(*source_dir / rp.filename()));
  }
  std::vector<EvalReport> reports;
  if (source_dir) {
    std::vector<FeatureSequence> src_refs;
    for (const auto& rp : refs_paths) src_refs.push_back(read_features(rp));
    reports.push_back(evaluate_pairs(src_refs, srcs, direction_name(dir), "source"));
  }
  EvalReport r = evaluate_pairs(refs, convs, direction_name(dir), "dgvc");
  r.diversity = diversity_n ? diversity_sum / diversity_n : 0.0;
  reports.push_back(std::move(r));

  fs::create_directories(out);
  echo_config(cfg, out);
  std::ofstream(out / "eval.json", std::ios::trunc) << nlohmann::json(reports).dump(2) << '\n';
  std::ofstream csv(out / "eval.csv", std::ios::trunc);
  write_eval_csv(csv, reports);
  for (const auto& rep : reports)
    log(LogLevel::info, rep.method + " " + rep.direction + " MCD " + std::to_string(rep.mcd_mean) + " dB");
  return reports;
}

// ------------------------------------------------------------------ diffusion-diag

inline DiagReport cmd_diffusion_diag(const ExperimentConfig& cfg, const fs::path& out) {
  const DiagReport r = run_diffusion_diag(cfg.schedule.build(), cfg.seed);
  fs::create_directories(out);
  echo_config(cfg, out);
  std::ofstream(out / "diag.json", std::ios::trunc) << nlohmann::json(r).dump(2) << '\n';
  for (const auto& c : r.checks)
    log(c.pass ? LogLevel::debug : LogLevel::quiet,
        std::string(c.pass ? "ok   " : "FAIL ") + c.name + " (error " + std::to_string(c.error) + ", tolerance " +
            std::to_string(c.tolerance) + ")");
  log(LogLevel::info, r.pass() ? "diffusion diagnostics passed" : "diffusion diagnostics FAILED");
  return r;
}

// ------------------------------------------------------------------ analyze

/// Runs the configured external analyzer over one audio file or a directory.
inline std::vector<fs::path> cmd_analyze(const ExperimentConfig& cfg, const fs::path& analyzer, const fs::path& input,
                                         const fs::path& out) {
  std::vector<fs::path> audio;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file()) audio.push_back(e.path());
    std::sort(audio.begin(), audio.end());
  } else {
    audio.push_back(input);
  }
  fs::create_directories(out);
  echo_config(cfg, out);
  std::vector<fs::path> written;
  for (const auto& a : audio) {
    written.push_back(out / (a.stem().string() + kFeatureExt));
    const FeatureSequence f = run_analyzer(analyzer, a, written.back());
    require<FormatError>(f.dim() == cfg.corpus.feature_dim,
                         "analyzer output for " + a.string() + " has " + std::to_string(f.dim()) + " coefficients");
  }
  return written;
}

// ------------------------------------------------------------------ error mapping

inline int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const CheckpointError*>(&e)) return kCheckpointError;
  if (dynamic_cast<const FormatError*>(&e)) return kFormatError;
  if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
  return kOtherError;
}

/// Runs a command body; failures print one line "error: <Class>: <detail>".
inline int run_guarded(const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << '\n';
    return kOtherError;
  } catch (const std::exception& e) {
    err << "error: InternalError: " << e.what() << '\n';
    return kOtherError;
  }
}

}  // namespace dgvc::cli
