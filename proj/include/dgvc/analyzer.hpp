#pragma once

#include <spawn.h>
#include <sys/wait.h>

#include <filesystem>
#include <string>
#include <vector>

#include "dgvc/error.hpp"
#include "dgvc/feature_io.hpp"

extern char** environ;

namespace dgvc {

// External analyzer contract: the executable is invoked as
//   <analyzer> <audio_path> <feature_path>
// and must exit 0 after writing a feature file (the format in feature_io.hpp)
// to <feature_path>. Anything else is an analyzer failure.

inline FeatureSequence run_analyzer(const std::filesystem::path& analyzer, const std::filesystem::path& audio,
                                    const std::filesystem::path& out) {
  if (!std::filesystem::exists(audio)) throw IoError("audio file not found: " + audio.string());
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::filesystem::remove(out);
  std::vector<std::string> args{analyzer.string(), audio.string(), out.string()};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawnp(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0)
    throw IoError("cannot start analyzer " + analyzer.string());
  int status = 0;
  if (waitpid(pid, &status, 0) < 0) throw IoError("lost analyzer process " + analyzer.string());
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw IoError("analyzer " + analyzer.string() + " failed on " + audio.string() + " (status " +
                  std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1) + ")");
  if (!std::filesystem::exists(out)) throw IoError("analyzer produced no output for " + audio.string());
  return read_features(out);
}

}  // namespace dgvc
