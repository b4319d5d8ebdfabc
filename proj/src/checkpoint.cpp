#include "deblur_lab/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "deblur_lab/config.hpp"
#include "deblur_lab/errors.hpp"

namespace deblur {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'C', 'K'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in[pos + i]) << (8 * i));
  return v;
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const double> values) {
  for (double d : values) put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(d)));
}

// Non-finite values have no JSON form.
Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

struct ArrayRef {
  std::string name;
  Shape shape;
  std::size_t offset;  // in floats from the start of the data block
};

}  // namespace

void quantize_to_storage(ModelParams& params) {
  for (auto& [name, t] : params.entries()) {
    Tensor handle = t;
    for (auto& v : handle.mutable_values()) v = static_cast<double>(static_cast<float>(v));
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& entries = ckpt.params.entries();
  const bool with_optimizer = !ckpt.optimizer.m.empty();
  if (with_optimizer && (ckpt.optimizer.m.size() != entries.size() || ckpt.optimizer.v.size() != entries.size()))
    throw DimensionError("optimizer state does not match the parameter list");

  Json arrays = Json::array();
  std::size_t offset = 0;
  auto add_array = [&](const std::string& name, const Shape& shape) {
    arrays.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
    offset += shape_numel(shape);
  };
  for (const auto& [name, t] : entries) add_array(name, t.shape());
  if (with_optimizer)
    for (const char* slot : {"adam.m/", "adam.v/"})
      for (const auto& [name, t] : entries) add_array(slot + name, t.shape());

  const Json header{{"format", "deblur_lab.checkpoint"},
                    {"model_config", to_json(ckpt.config)},
                    {"epoch", ckpt.epoch},
                    {"best_val_psnr", finite_or_null(ckpt.best_val_psnr)},
                    {"optimizer", with_optimizer ? Json{{"type", "adam"}, {"step", ckpt.optimizer.step}} : Json(nullptr)},
                    {"arrays", arrays},
                    {"float_count", offset}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + 4 * offset);
  for (const auto& [name, t] : entries) put_floats(out, t.values());
  if (with_optimizer)
    for (const auto* slot : {&ckpt.optimizer.m, &ckpt.optimizer.v})
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if ((*slot)[i].size() != entries[i].second.numel())
          throw DimensionError("optimizer buffer size mismatch for " + entries[i].first);
        put_floats(out, (*slot)[i]);
      }
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a checkpoint (bad magic)");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_le<std::uint32_t>(bytes, 6);
  const std::size_t data_start = 10 + static_cast<std::size_t>(header_len);
  if (data_start > bytes.size()) throw IoError("truncated checkpoint header");

  Json header;
  try {
    header = Json::parse(bytes.begin() + 10, bytes.begin() + static_cast<std::ptrdiff_t>(data_start));
  } catch (const Json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(header.at("model_config"));
    ckpt.epoch = header.at("epoch").get<int>();
    const auto& best = header.at("best_val_psnr");
    ckpt.best_val_psnr = best.is_null() ? -INFINITY : best.get<double>();
    const std::size_t float_count = header.at("float_count").get<std::size_t>();
    if (bytes.size() - data_start != 4 * float_count) throw IoError("checkpoint data size does not match header");

    std::map<std::string, ArrayRef> arrays;
    for (const auto& a : header.at("arrays"))
      arrays.emplace(a.at("name").get<std::string>(),
                     ArrayRef{a.at("name").get<std::string>(), a.at("shape").get<Shape>(), a.at("offset").get<std::size_t>()});

    auto read = [&](const std::string& name, const Shape& expected) {
      const auto it = arrays.find(name);
      if (it == arrays.end()) throw IoError("checkpoint is missing array '" + name + "'");
      if (it->second.shape != expected)
        throw DimensionError("checkpoint array '" + name + "' has shape " + shape_str(it->second.shape) +
                             ", model expects " + shape_str(expected));
      const std::size_t n = shape_numel(expected);
      if (it->second.offset + n > float_count) throw IoError("checkpoint array '" + name + "' out of bounds");
      std::vector<double> values(n);
      const std::size_t base = data_start + 4 * it->second.offset;
      for (std::size_t i = 0; i < n; ++i)
        values[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, base + 4 * i)));
      return values;
    };

    // The config determines exactly which parameters must be present.
    const ModelParams expected = build_model(ckpt.config);
    for (const auto& [name, t] : expected.entries())
      ckpt.params.add(name, Tensor::from_values(t.shape(), read(name, t.shape()), true));
    std::size_t known = expected.size();

    const auto& opt = header.at("optimizer");
    if (!opt.is_null()) {
      ckpt.optimizer.step = opt.at("step").get<std::int64_t>();
      for (const auto& [name, t] : expected.entries()) {
        ckpt.optimizer.m.push_back(read("adam.m/" + name, t.shape()));
        ckpt.optimizer.v.push_back(read("adam.v/" + name, t.shape()));
      }
      known *= 3;
    }
    if (arrays.size() != known) throw IoError("checkpoint holds arrays the model does not define");
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  // Write then rename so a failed write never leaves a truncated checkpoint behind.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write checkpoint " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace deblur
