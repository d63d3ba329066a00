#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "dgvc/corpus.hpp"
#include "dgvc/error.hpp"
#include "dgvc/nets.hpp"
#include "dgvc/schedule.hpp"
#include "dgvc/trainer.hpp"

namespace dgvc {

struct ScheduleConfig {
  int T_diff = 4;
  double beta_min = 0.1;
  double beta_max = 0.95;

  DiffusionSchedule build() const { return DiffusionSchedule::linear(T_diff, beta_min, beta_max); }
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ScheduleConfig, T_diff, beta_min, beta_max)

struct NetsConfig {
  std::string preset = "tiny";  // "tiny", "small", "paper" or "custom"
  GeneratorSpec generator = net_preset("tiny").generator;
  DiscriminatorSpec discriminator = net_preset("tiny").discriminator;
};

inline void to_json(nlohmann::json& j, const NetsConfig& n) {
  j = {{"preset", n.preset}, {"generator", n.generator}, {"discriminator", n.discriminator}};
}

// A named preset fixes both specs; explicit specs are only read with "custom",
// where missing fields keep their current values. Under a named preset the
// specs may be present (as written back by to_json) but must match it.
inline void from_json(const nlohmann::json& j, NetsConfig& n) {
  n.preset = j.value("preset", n.preset);
  if (n.preset != "custom") {
    const NetPreset p = net_preset(n.preset);
    if ((j.contains("generator") && j.at("generator") != nlohmann::json(p.generator)) ||
        (j.contains("discriminator") && j.at("discriminator") != nlohmann::json(p.discriminator)))
      throw ConfigError("nets: explicit generator/discriminator specs require preset \"custom\"");
    n.generator = p.generator;
    n.discriminator = p.discriminator;
    return;
  }
  auto merged = [&](const char* key, auto current) {
    nlohmann::json base = current;
    if (j.contains(key)) base.update(j.at(key));
    return base.get<decltype(current)>();
  };
  n.generator = merged("generator", n.generator);
  n.discriminator = merged("discriminator", n.discriminator);
}

struct ConvertConfig {
  int n_samples = 1;
  int start_step = 0;  // 0: deepest level with alpha_bar >= 1/2; T_diff: full depth
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ConvertConfig, n_samples, start_step)

struct PathsConfig {
  std::string corpus_dir = "corpus";
  std::string out_dir = "out";
  std::string analyzer;  // external feature analyzer executable, optional
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PathsConfig, corpus_dir, out_dir, analyzer)

/// Everything one experiment needs. `seed` drives every random stream.
struct ExperimentConfig {
  std::uint64_t seed = 1234;
  ScheduleConfig schedule;
  NetsConfig nets;
  TrainConfig train;
  CorpusConfig corpus;
  ConvertConfig convert;
  PathsConfig paths;

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  /// Full validation; every problem surfaces as ConfigError.
  void validate() const {
    try {
      schedule.build();
      nets.generator.validate();
      nets.discriminator.validate();
      require<InvalidArgument>(nets.generator.feature_dim == corpus.feature_dim &&
                                   nets.discriminator.feature_dim == corpus.feature_dim,
                               "network feature_dim must equal corpus feature_dim");
      train.validate();
      require<InvalidArgument>(train.crop_frames % nets.generator.downsample_factor == 0,
                               "train.crop_frames must be divisible by the generator downsample_factor");
      require<InvalidArgument>(train.crop_frames <= corpus.min_frames, "train.crop_frames exceeds corpus.min_frames");
      corpus.validate();
      require<InvalidArgument>(convert.n_samples >= 1, "convert.n_samples must be at least 1");
      require<InvalidArgument>(convert.start_step >= 0 && convert.start_step <= schedule.T_diff,
                               "convert.start_step must be in [0, T_diff]");
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"seed", c.seed},       {"schedule", c.schedule}, {"nets", c.nets},   {"train", c.train},
       {"corpus", c.corpus},   {"convert", c.convert},   {"paths", c.paths}};
}

namespace detail {

// Every key in `given` must exist in `known` (recursively through objects).
inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) return;
  if (!known.is_object()) throw ConfigError(where + " must not be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    reject_unknown_keys(value, known.at(key), path);
  }
}

}  // namespace detail

/// Parses a config; missing keys keep their defaults, unknown keys are errors.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const ExperimentConfig defaults;
  detail::reject_unknown_keys(j, nlohmann::json(defaults), "");
  try {
    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("schedule")) {
      nlohmann::json merged = c.schedule;
      merged.update(j.at("schedule"));
      c.schedule = merged.get<ScheduleConfig>();
    }
    if (j.contains("nets")) c.nets = j.at("nets").get<NetsConfig>();
    if (j.contains("train")) {
      nlohmann::json merged = c.train;
      merged.update(j.at("train"));
      c.train = merged.get<TrainConfig>();
    }
    if (j.contains("corpus")) {
      nlohmann::json merged = c.corpus;
      const auto& given = j.at("corpus");
      for (const char* sp : {"speaker_x", "speaker_y"})
        if (given.contains(sp)) merged[sp].update(given.at(sp));
      for (const auto& [k, v] : given.items())
        if (k != "speaker_x" && k != "speaker_y") merged[k] = v;
      c.corpus = merged.get<CorpusConfig>();
    }
    if (j.contains("convert")) {
      nlohmann::json merged = c.convert;
      merged.update(j.at("convert"));
      c.convert = merged.get<ConvertConfig>();
    }
    if (j.contains("paths")) {
      nlohmann::json merged = c.paths;
      merged.update(j.at("paths"));
      c.paths = merged.get<PathsConfig>();
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

inline void write_config(const ExperimentConfig& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json(c).dump(2) << '\n';
}

}  // namespace dgvc
