#pragma once

// Paired blurred/sharp datasets: ingestion, splitting and severity statistics.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deblur_lab/image.hpp"

namespace deblur {

enum class Split { kUnassigned, kTrain, kVal, kTest };
const char* to_string(Split s);
Split split_from_string(const std::string& name);

struct ImagePair {
  std::string id;  // shared filename stem
  std::filesystem::path blurred_path;
  std::filesystem::path sharp_path;
  Image blurred;  // resized to the dataset size, [0,1]
  Image sharp;
  Split split = Split::kUnassigned;
};

struct IngestWarning {
  std::filesystem::path path;
  std::string message;
};

// Pairs are held in memory, sorted by id.
struct PairedDataset {
  std::vector<ImagePair> pairs;
  std::array<int, 2> img_size{256, 256};
  std::vector<IngestWarning> warnings;

  std::vector<const ImagePair*> subset(Split s) const;
  std::size_t count(Split s) const;
};

// Pairs PNGs by identical stem, resizes bilinearly to img_size (H, W).
// Orphans become warnings. Throws IoError for a missing directory or an
// undecodable file (naming it), EmptyDatasetError when nothing pairs up.
PairedDataset ingest(const std::filesystem::path& blurred_dir, const std::filesystem::path& sharp_dir,
                     std::array<int, 2> img_size, int jobs = 1);

// Either fractions (summing to 1) or counts (summing to at most the dataset
// size; any remainder stays unassigned). Order is train, val, test.
struct SplitSpec {
  bool use_counts = false;
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
  std::array<std::size_t, 3> counts{0, 0, 0};

  static SplitSpec from_fractions(double train, double val, double test);
  static SplitSpec from_counts(std::size_t train, std::size_t val, std::size_t test);
};

// Seeded Fisher-Yates shuffle of the id-sorted pairs, then consecutive blocks.
// Fractions are turned into counts by largest remainder.
void split(PairedDataset& dataset, const SplitSpec& spec, std::uint64_t seed);

struct StatSummary {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

struct SeverityStats {
  std::size_t count = 0;
  StatSummary psnr;
  StatSummary ssim;
};

// Blurred-vs-sharp PSNR/SSIM over every pair (or one split).
SeverityStats severity_stats(const PairedDataset& dataset, int jobs = 1);
SeverityStats severity_stats(const PairedDataset& dataset, Split only, int jobs = 1);

}  // namespace deblur
