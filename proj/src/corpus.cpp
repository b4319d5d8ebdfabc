#include "deblur_lab/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "deblur_lab/config.hpp"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/parallel.hpp"
#include "deblur_lab/rng.hpp"
#include "deblur_lab/synth.hpp"

namespace deblur {

namespace fs = std::filesystem;

std::vector<int> SizeRange::sizes() const {
  if (step <= 0) throw ParameterError("size range step must be positive");
  if (stop < start) throw ParameterError("size range stop must be >= start");
  std::vector<int> out;
  for (int s = start; s <= stop; s += step) out.push_back(s);
  return out;
}

SizeRange SizeRange::parse(const std::string& text) {
  SizeRange r;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> r.start >> c1 >> r.stop >> c2 >> r.step) || c1 != ':' || c2 != ':' || !(in >> std::ws).eof())
    throw ParameterError("size range must look like start:stop:step, got '" + text + "'");
  for (int s : r.sizes())
    if (s % 2 == 0 || s < BlurKernel::kMinSize || s > BlurKernel::kMaxSize)
      throw ParameterError("size range '" + text + "' yields invalid kernel size " + std::to_string(s));
  return r;
}

std::string SizeRange::str() const {
  return std::to_string(start) + ":" + std::to_string(stop) + ":" + std::to_string(step);
}

const char* to_string(SharpSource s) {
  switch (s) {
    case SharpSource::kDirectory: return "directory";
    case SharpSource::kScene: return "scene";
    case SharpSource::kText: return "text";
  }
  return "scene";
}

SharpSource sharp_source_from_string(const std::string& name) {
  if (name == "directory" || name == "dir") return SharpSource::kDirectory;
  if (name == "scene") return SharpSource::kScene;
  if (name == "text") return SharpSource::kText;
  throw ParameterError("unknown sharp source '" + name + "' (directory, scene, text)");
}

void CorpusConfig::validate() const {
  if (count <= 0) throw ConfigError("corpus count must be positive");
  for (int s : sizes.sizes())
    if (s % 2 == 0 || s < BlurKernel::kMinSize || s > BlurKernel::kMaxSize)
      throw ConfigError("corpus kernel size " + std::to_string(s) + " is invalid");
  if (generator != "trajectory" && generator != "linear" && generator != "mixed")
    throw ConfigError("corpus generator must be trajectory, linear or mixed");
  if (!(jitter >= 0.0)) throw ConfigError("jitter must be >= 0");
  if (!(noise_sigma >= 0.0 && noise_sigma < 1.0)) throw ConfigError("noise_sigma must be in [0, 1)");
  if (img_size[0] <= 0 || img_size[1] <= 0) throw ConfigError("img_size must be positive");
  if (sizes.stop > std::min(img_size[0], img_size[1])) throw ConfigError("kernels larger than the images");
  if (source == SharpSource::kDirectory && sharp_dir.empty()) throw ConfigError("sharp_dir is required");
}

int kernel_size_for(const CorpusConfig& config, int index) {
  const auto sizes = config.sizes.sizes();
  const int n = static_cast<int>(sizes.size());
  const int per = (config.count + n - 1) / n;
  return sizes[static_cast<std::size_t>(std::min(index / per, n - 1))];
}

BlurKernel corpus_kernel(const CorpusConfig& config, int index) {
  const int size = kernel_size_for(config, index);
  const std::uint64_t seed = config.seed ^ static_cast<std::uint64_t>(index);
  bool linear = config.generator == "linear";
  if (config.generator == "mixed") linear = index % 2 == 1;
  if (!linear) return generate_trajectory_kernel(size, seed, config.jitter);
  Rng rng(seed);
  const double angle = rng.uniform(0.0, 180.0);
  const double length = rng.uniform(0.5, 1.0) * size;
  return generate_linear_kernel(size, angle, std::max(1.0, length), seed);
}

std::vector<CorpusEntry> build_corpus(const CorpusConfig& config, const fs::path& out_dir, int jobs) {
  config.validate();
  std::vector<fs::path> sources;
  if (config.source == SharpSource::kDirectory) {
    std::error_code ec;
    if (!fs::is_directory(config.sharp_dir, ec)) throw IoError("not a directory: " + config.sharp_dir.string());
    for (const auto& e : fs::directory_iterator(config.sharp_dir)) {
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (e.is_regular_file() && ext == ".png") sources.push_back(e.path());
    }
    std::sort(sources.begin(), sources.end());
    if (sources.empty()) throw EmptyDatasetError("no PNG files in " + config.sharp_dir.string());
  }
  for (const char* sub : {"blurred", "sharp", "kernels"}) {
    std::error_code ec;
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  const auto h = static_cast<std::size_t>(config.img_size[0]), w = static_cast<std::size_t>(config.img_size[1]);
  std::vector<CorpusEntry> entries(static_cast<std::size_t>(config.count));
  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    const int index = static_cast<int>(i);
    const std::uint64_t seed = config.seed ^ static_cast<std::uint64_t>(index);
    char id[32];
    std::snprintf(id, sizeof id, "%05d", index);

    Image sharp;
    std::string source = "synthetic";
    switch (config.source) {
      case SharpSource::kDirectory: {
        const fs::path& src = sources[i % sources.size()];
        sharp = load_png(src);
        if (sharp.height != h || sharp.width != w) sharp = clamp_unit(resize_bilinear(sharp, h, w));
        source = src.filename().string();
        break;
      }
      case SharpSource::kScene: sharp = render_scene_image(h, w, seed); break;
      case SharpSource::kText: sharp = render_text_image(h, w, seed); break;
    }
    // Quantize first so the stored sharp PNG is exactly the image that was blurred.
    for (auto& v : sharp.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;

    DegradationConfig deg;
    deg.kernel = corpus_kernel(config, index);
    deg.noise_sigma = config.noise_sigma;
    deg.boundary = config.boundary;
    deg.rng_seed = seed;
    const Image blurred = apply_blur(sharp, deg);

    save_png(sharp, out_dir / "sharp" / (std::string(id) + ".png"));
    save_png(blurred, out_dir / "blurred" / (std::string(id) + ".png"));
    save_kernel(deg.kernel, out_dir / "kernels" / (std::string(id) + ".psf"));
    entries[i] = {id, deg.kernel.size, to_string(deg.kernel.generator), deg.kernel.angle_degrees,
                  deg.kernel.length_px, seed, source};
  });

  Json manifest{{"config", to_json(config)}, {"pairs", Json::array()}};
  for (const auto& e : entries)
    manifest["pairs"].push_back({{"id", e.id},
                                 {"kernel_size", e.kernel_size},
                                 {"generator", e.generator},
                                 {"angle_degrees", e.angle_degrees},
                                 {"length_px", e.length_px},
                                 {"seed", e.seed},
                                 {"source", e.source}});
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return entries;
}

}  // namespace deblur
