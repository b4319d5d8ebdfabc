#include "deblur_lab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "deblur_lab/errors.hpp"
#include "deblur_lab/metrics.hpp"
#include "deblur_lab/parallel.hpp"
#include "deblur_lab/rng.hpp"

namespace deblur {

namespace fs = std::filesystem;

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: break;
  }
  return "all";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "all") return Split::kUnassigned;
  throw ParameterError("unknown split '" + name + "' (expected train, val, test or all)");
}

std::vector<const ImagePair*> PairedDataset::subset(Split s) const {
  std::vector<const ImagePair*> out;
  for (const auto& p : pairs)
    if (s == Split::kUnassigned || p.split == s) out.push_back(&p);
  return out;
}

std::size_t PairedDataset::count(Split s) const { return subset(s).size(); }

namespace {

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::map<std::string, fs::path> list_pngs(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_png(entry.path())) files.emplace(entry.path().stem().string(), entry.path());
  return files;
}

Image load_resized(const fs::path& path, std::array<int, 2> size) {
  Image img = load_png(path);
  const auto h = static_cast<std::size_t>(size[0]), w = static_cast<std::size_t>(size[1]);
  if (img.height != h || img.width != w) img = clamp_unit(resize_bilinear(img, h, w));
  return img;
}

}  // namespace

PairedDataset ingest(const fs::path& blurred_dir, const fs::path& sharp_dir, std::array<int, 2> img_size, int jobs) {
  if (img_size[0] <= 0 || img_size[1] <= 0) throw ParameterError("img_size must be positive");
  const auto blurred = list_pngs(blurred_dir);
  const auto sharp = list_pngs(sharp_dir);

  PairedDataset ds;
  ds.img_size = img_size;
  for (const auto& [stem, path] : blurred) {
    const auto it = sharp.find(stem);
    if (it == sharp.end()) {
      ds.warnings.push_back({path, "blurred image has no sharp counterpart"});
      continue;
    }
    ImagePair pair;
    pair.id = stem;
    pair.blurred_path = path;
    pair.sharp_path = it->second;
    ds.pairs.push_back(std::move(pair));
  }
  for (const auto& [stem, path] : sharp)
    if (!blurred.count(stem)) ds.warnings.push_back({path, "sharp image has no blurred counterpart"});
  if (ds.pairs.empty())
    throw EmptyDatasetError("no image pairs found between " + blurred_dir.string() + " and " + sharp_dir.string());

  parallel_for(ds.pairs.size(), jobs, [&](std::size_t i) {
    ImagePair& p = ds.pairs[i];
    p.blurred = load_resized(p.blurred_path, img_size);
    p.sharp = load_resized(p.sharp_path, img_size);
  });
  return ds;
}

SplitSpec SplitSpec::from_fractions(double train, double val, double test) {
  SplitSpec s;
  s.fractions = {train, val, test};
  return s;
}

SplitSpec SplitSpec::from_counts(std::size_t train, std::size_t val, std::size_t test) {
  SplitSpec s;
  s.use_counts = true;
  s.counts = {train, val, test};
  return s;
}

void split(PairedDataset& dataset, const SplitSpec& spec, std::uint64_t seed) {
  const std::size_t n = dataset.pairs.size();
  if (n == 0) throw EmptyDatasetError("cannot split an empty dataset");
  std::array<std::size_t, 3> counts{};
  if (spec.use_counts) {
    counts = spec.counts;
    const std::size_t total = counts[0] + counts[1] + counts[2];
    if (total > n)
      throw ParameterError("split counts sum to " + std::to_string(total) + " but the dataset has " +
                           std::to_string(n) + " pairs");
  } else {
    double sum = 0.0;
    for (double f : spec.fractions) {
      if (!(f >= 0.0)) throw ParameterError("split fractions must be nonnegative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ParameterError("split fractions must sum to 1, got " + std::to_string(sum));
    // Largest remainder; ties go to the earlier split.
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double exact = spec.fractions[k] * static_cast<double>(n);
      counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[k] = exact - static_cast<double>(counts[k]);
      assigned += counts[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (int k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++counts[order[k]];
  }

  std::sort(dataset.pairs.begin(), dataset.pairs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

  for (auto& p : dataset.pairs) p.split = Split::kUnassigned;
  const Split labels[3] = {Split::kTrain, Split::kVal, Split::kTest};
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k)
    for (std::size_t c = 0; c < counts[k]; ++c) dataset.pairs[perm[pos++]].split = labels[k];
}

SeverityStats severity_stats(const PairedDataset& dataset, int jobs) {
  return severity_stats(dataset, Split::kUnassigned, jobs);
}

SeverityStats severity_stats(const PairedDataset& dataset, Split only, int jobs) {
  const auto pairs = dataset.subset(only);
  if (pairs.empty()) throw EmptyDatasetError("severity statistics need at least one pair");
  std::vector<double> p(pairs.size()), s(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    p[i] = psnr(pairs[i]->blurred, pairs[i]->sharp);
    s[i] = ssim(pairs[i]->blurred, pairs[i]->sharp);
  });
  auto summarize = [](const std::vector<double>& v) {
    StatSummary out{std::numeric_limits<double>::infinity(), 0.0, -std::numeric_limits<double>::infinity()};
    for (double x : v) {
      out.min = std::min(out.min, x);
      out.max = std::max(out.max, x);
      out.mean += x;
    }
    out.mean = std::clamp(out.mean / static_cast<double>(v.size()), out.min, out.max);
    return out;
  };
  return {pairs.size(), summarize(p), summarize(s)};
}

}  // namespace deblur
