#pragma once

// Paired corpus synthesis: sharp images (from a directory or generated) are
// degraded with motion-blur kernels whose size steps through a range.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deblur_lab/blur.hpp"

namespace deblur {

// start:stop:step, inclusive of stop when reachable, e.g. 13:31:2.
struct SizeRange {
  int start = 13;
  int stop = 31;
  int step = 2;

  std::vector<int> sizes() const;
  static SizeRange parse(const std::string& text);
  std::string str() const;
};

enum class SharpSource { kDirectory, kScene, kText };
const char* to_string(SharpSource s);
SharpSource sharp_source_from_string(const std::string& name);

struct CorpusConfig {
  int count = 100;
  SizeRange sizes;
  std::string generator = "trajectory";  // trajectory | linear | mixed
  double jitter = 1.0;                   // trajectory angular noise
  double noise_sigma = 0.0;
  Boundary boundary = Boundary::kCircular;
  std::array<int, 2> img_size{256, 256};
  SharpSource source = SharpSource::kScene;
  std::filesystem::path sharp_dir;  // kDirectory
  std::uint64_t seed = 42;

  void validate() const;
};

struct CorpusEntry {
  std::string id;
  int kernel_size = 0;
  std::string generator;
  double angle_degrees = 0.0;
  double length_px = 0.0;
  std::uint64_t seed = 0;
  std::string source;  // sharp file name or "synthetic"
};

// Kernel size for sample i: sizes step up every ceil(count / num_sizes) samples.
int kernel_size_for(const CorpusConfig& config, int index);

// The kernel used for sample i (seed = config.seed ^ i).
BlurKernel corpus_kernel(const CorpusConfig& config, int index);

// Writes blurred/, sharp/, kernels/ and manifest.json under out_dir.
std::vector<CorpusEntry> build_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace deblur
