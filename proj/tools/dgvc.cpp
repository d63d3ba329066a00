#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dgvc/commands.hpp"

namespace {

using namespace dgvc;
using namespace dgvc::cli;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "seed for every random stream (overrides config)");
    app->add_option("--out", out, "output directory (overrides paths.out_dir)");
  }

  ExperimentConfig resolve(Overrides o) const {
    o.seed = seed;
    o.out = out;
    return effective_config(config.empty() ? std::nullopt : std::optional<std::filesystem::path>(config), o);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-GAN voice conversion on vocoder features"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "print help for every subcommand and flag");
  app.footer("Exit codes: 0 ok, 1 other error, 2 config, 3 checkpoint, 4 file format, 5 numeric, 6 diagnostics failed.\n"
             "DGVC_LOG=quiet|info|debug sets log verbosity.");

  Common c_corpus, c_train, c_convert, c_eval, c_diag, c_analyze;
  std::optional<long> iterations;
  std::string checkpoint, input, converted, reference, source, direction = "x2y", analyzer;
  std::optional<int> n_samples;

  auto* mk = app.add_subcommand("make-corpus", "write the synthetic two-speaker corpus and its manifest");
  c_corpus.attach(mk);

  auto* tr = app.add_subcommand("train", "train both conversion directions");
  c_train.attach(tr);
  tr->add_option("--iterations", iterations, "training steps (overrides train.iterations)");
  tr->add_option("--checkpoint", checkpoint, "resume from this checkpoint");

  auto* cv = app.add_subcommand("convert", "convert feature files with a trained checkpoint");
  c_convert.attach(cv);
  cv->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  cv->add_option("--input", input, "feature file or directory of feature files")->required();
  cv->add_option("--direction", direction, "x2y or y2x")->check(CLI::IsMember({"x2y", "y2x"}));
  cv->add_option("--n-samples", n_samples, "conversions per input (overrides convert.n_samples)");

  auto* ev = app.add_subcommand("evaluate", "MCD of converted files against references");
  c_eval.attach(ev);
  ev->add_option("--converted", converted, "directory of converted feature files")->required();
  ev->add_option("--reference", reference, "directory of reference feature files")->required();
  ev->add_option("--source", source, "optional directory of unconverted sources, scored as a baseline");
  ev->add_option("--direction", direction, "x2y or y2x (label only)")->check(CLI::IsMember({"x2y", "y2x"}));

  auto* dg = app.add_subcommand("diffusion-diag", "check schedule invariants and the marginal/posterior oracles");
  c_diag.attach(dg);

  auto* an = app.add_subcommand("analyze", "run the external feature analyzer over audio files");
  c_analyze.attach(an);
  an->add_option("--analyzer", analyzer, "analyzer executable (overrides paths.analyzer)");
  an->add_option("--input", input, "audio file or directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors count as configuration errors; --help exits 0.
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  return run_guarded([&]() -> int {
    if (mk->parsed()) {
      const auto cfg = c_corpus.resolve({});
      cmd_make_corpus(cfg, c_corpus.out ? *c_corpus.out : cfg.paths.corpus_dir);
      return kOk;
    }
    if (tr->parsed()) {
      Overrides o;
      o.iterations = iterations;
      const auto cfg = c_train.resolve(o);
      cmd_train(cfg, cfg.paths.out_dir, checkpoint.empty() ? std::nullopt : std::optional<std::filesystem::path>(checkpoint));
      return kOk;
    }
    if (cv->parsed()) {
      Overrides o;
      o.n_samples = n_samples;
      const auto cfg = c_convert.resolve(o);
      cmd_convert(cfg, checkpoint, input, parse_direction(direction), cfg.paths.out_dir);
      return kOk;
    }
    if (ev->parsed()) {
      const auto cfg = c_eval.resolve({});
      cmd_evaluate(cfg, converted, reference, parse_direction(direction), cfg.paths.out_dir,
                   source.empty() ? std::nullopt : std::optional<std::filesystem::path>(source));
      return kOk;
    }
    if (dg->parsed()) {
      const auto cfg = c_diag.resolve({});
      return cmd_diffusion_diag(cfg, cfg.paths.out_dir).pass() ? kOk : kDiagFailed;
    }
    const auto cfg = c_analyze.resolve({});
    const std::string prog = analyzer.empty() ? cfg.paths.analyzer : analyzer;
    if (prog.empty()) throw ConfigError("no analyzer given (--analyzer or paths.analyzer)");
    cmd_analyze(cfg, prog, input, cfg.paths.out_dir);
    return kOk;
  });
}
