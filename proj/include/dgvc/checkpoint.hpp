#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgvc/error.hpp"
#include "dgvc/feature_io.hpp"
#include "dgvc/trainer.hpp"

namespace dgvc {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SpeakerStats, logf0_mean, logf0_std, mcep_mean, mcep_std)

// Checkpoint layout, little-endian:
//   "DGCK"  u32 version  u64 manifest_len  manifest (UTF-8 JSON)
//   f32 arrays back to back, in the order listed under manifest["arrays"]
inline constexpr char kCheckpointMagic[4] = {'D', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::vector<std::pair<std::string, const ParamStore<float>*>> stores_of(const TrainState& s) {
  return {{"g_xy", &s.g_xy},
          {"g_yx", &s.g_yx},
          {"d_x", &s.d_x},
          {"d_y", &s.d_y},
          {"opt.g_xy.m1", &s.opt_g_xy.first},
          {"opt.g_xy.m2", &s.opt_g_xy.second},
          {"opt.g_yx.m1", &s.opt_g_yx.first},
          {"opt.g_yx.m2", &s.opt_g_yx.second},
          {"opt.d_x.m1", &s.opt_d_x.first},
          {"opt.d_x.m2", &s.opt_d_x.second},
          {"opt.d_y.m1", &s.opt_d_y.first},
          {"opt.d_y.m2", &s.opt_d_y.second}};
}

inline std::vector<std::pair<std::string, ParamStore<float>*>> stores_of(TrainState& s) {
  std::vector<std::pair<std::string, ParamStore<float>*>> out;
  for (auto& [n, p] : stores_of(static_cast<const TrainState&>(s)))
    out.emplace_back(n, const_cast<ParamStore<float>*>(p));
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const TrainState& s) {
  nlohmann::json m;
  m["format_version"] = kCheckpointVersion;
  m["precision"] = "f32";
  m["generator"] = s.gen_spec;
  m["discriminator"] = s.disc_spec;
  m["betas"] = s.betas;
  m["step"] = s.step;
  m["rng"] = {{"data", s.rng_data.state()}, {"diffusion", s.rng_diffusion.state()}, {"latent", s.rng_latent.state()}};
  m["stats_x"] = s.stats_x;
  m["stats_y"] = s.stats_y;
  m["optimizer_steps"] = {{"g_xy", s.opt_g_xy.step}, {"g_yx", s.opt_g_yx.step}, {"d_x", s.opt_d_x.step},
                          {"d_y", s.opt_d_y.step}};
  nlohmann::json arrays = nlohmann::json::array();
  const auto stores = detail::stores_of(s);
  for (const auto& [prefix, store] : stores)
    for (std::size_t i = 0; i < store->count(); ++i)
      arrays.push_back({{"name", prefix + "/" + store->name(i)}, {"shape", (*store)[i].shape()}});
  m["arrays"] = std::move(arrays);
  const std::string manifest = m.dump();

  bin::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(manifest.size());
  w.bytes(manifest.data(), manifest.size());
  for (const auto& [prefix, store] : stores)
    for (std::size_t i = 0; i < store->count(); ++i)
      for (float v : (*store)[i].values()) w.le<float>(v);
  return w.buffer();
}

inline TrainState decode_checkpoint(const std::vector<std::uint8_t>& buf) {
  try {
    bin::Reader r(buf);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
    const auto version = r.le<std::uint32_t>();
    if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto len = r.le<std::uint64_t>();
    if (len > r.remaining()) throw CheckpointError("checkpoint manifest truncated");
    std::string text(len, '\0');
    r.bytes(text.data(), len);
    const nlohmann::json m = nlohmann::json::parse(text);
    if (m.at("precision").get<std::string>() != "f32") throw CheckpointError("checkpoint precision must be f32");

    TrainState s;
    s.gen_spec = m.at("generator").get<GeneratorSpec>();
    s.disc_spec = m.at("discriminator").get<DiscriminatorSpec>();
    s.betas = m.at("betas").get<std::vector<double>>();
    DiffusionSchedule::from_betas(s.betas);
    s.step = m.at("step").get<long>();
    s.rng_data.set_state(m.at("rng").at("data").get<std::string>());
    s.rng_diffusion.set_state(m.at("rng").at("diffusion").get<std::string>());
    s.rng_latent.set_state(m.at("rng").at("latent").get<std::string>());
    s.stats_x = m.at("stats_x").get<SpeakerStats>();
    s.stats_y = m.at("stats_y").get<SpeakerStats>();
    const auto& os = m.at("optimizer_steps");
    s.opt_g_xy.step = os.at("g_xy").get<long>();
    s.opt_g_yx.step = os.at("g_yx").get<long>();
    s.opt_d_x.step = os.at("d_x").get<long>();
    s.opt_d_y.step = os.at("d_y").get<long>();

    auto stores = detail::stores_of(s);
    for (const auto& a : m.at("arrays")) {
      const std::string full = a.at("name").get<std::string>();
      const auto slash = full.find('/');
      if (slash == std::string::npos) throw CheckpointError("malformed array name " + full);
      const std::string prefix = full.substr(0, slash);
      ParamStore<float>* target = nullptr;
      for (auto& [p, st] : stores)
        if (p == prefix) target = st;
      if (!target) throw CheckpointError("unknown array group " + prefix);
      Tensor<float> t(a.at("shape").get<Shape>());
      for (auto& v : t.values()) v = r.le<float>();
      target->add(full.substr(slash + 1), std::move(t));
    }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint arrays");

    // The stored arrays must be exactly what the specs describe.
    Rng probe(0);
    const ParamStore<float> g_ref = ConvGenerator<float>(s.gen_spec).init(probe);
    const ParamStore<float> d_ref = PatchDiscriminator<float>(s.disc_spec).init(probe);
    auto same_layout = [](const ParamStore<float>& a, const ParamStore<float>& b) {
      if (a.count() != b.count()) return false;
      for (std::size_t i = 0; i < a.count(); ++i)
        if (a.name(i) != b.name(i) || a[i].shape() != b[i].shape()) return false;
      return true;
    };
    for (const auto& [prefix, st] : stores) {
      const bool is_gen = prefix.find("g_") != std::string::npos;
      if (!same_layout(*st, is_gen ? g_ref : d_ref))
        throw CheckpointError("array group " + prefix + " does not match the stored network spec");
    }
    return s;
  } catch (const FeatureFileError& e) {
    throw CheckpointError(std::string("checkpoint truncated: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CheckpointError(std::string("bad checkpoint contents: ") + e.what());
  } catch (const FormatError& e) {
    throw CheckpointError(std::string("bad checkpoint contents: ") + e.what());
  }
}

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  // Write-then-rename so an interrupted save never leaves a torn file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  bin::write_file(tmp, encode_checkpoint(s));
  std::filesystem::rename(tmp, path);
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  try {
    return decode_checkpoint(bin::read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

/// The diffusion schedule a checkpoint was trained with.
inline DiffusionSchedule schedule_of(const TrainState& s) { return DiffusionSchedule::from_betas(s.betas); }

}  // namespace dgvc
