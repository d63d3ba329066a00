// Stand-in for an external vocoder analyzer, used by tests. Reads any file and
// writes a feature file whose contents are a deterministic function of the
// input bytes. Usage: fake_analyzer <audio> <features>
#include <cstdint>
#include <iostream>

#include "dgvc/feature_io.hpp"
#include "dgvc/rng.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: fake_analyzer <audio> <features>\n";
    return 2;
  }
  try {
    const auto bytes = dgvc::bin::read_file(argv[1]);
    std::uint64_t h = 1469598103934665603ull;
    for (auto b : bytes) h = (h ^ b) * 1099511628211ull;
    dgvc::Rng rng(h);
    const int frames = 20 + static_cast<int>(bytes.size() % 40);
    dgvc::FeatureSequence s;
    s.mcep = rng.normal_tensor<float>({35, frames});
    s.logf0.resize(frames);
    s.voiced.resize(frames);
    for (int t = 0; t < frames; ++t) {
      s.voiced[t] = rng.uniform() < 0.7 ? 1 : 0;
      s.logf0[t] = s.voiced[t] ? static_cast<float>(5.0 + 0.1 * rng.normal()) : dgvc::kUnvoicedLogF0;
    }
    s.ap.assign(static_cast<std::size_t>(frames) * 5, 0);
    dgvc::write_features(s, argv[2]);
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
