#include "dycon/fields.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "dycon/error.hpp"

namespace dycon {

namespace {

constexpr const char* kOrder = "row-major-D-fastest";

template <typename T>
void append_le(std::vector<char>& out, T value) {
  static_assert(sizeof(T) == 4);
  auto bits = std::bit_cast<std::uint32_t>(value);
  if constexpr (std::endian::native == std::endian::big) {
    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
  }
  char bytes[4];
  std::memcpy(bytes, &bits, 4);
  out.insert(out.end(), bytes, bytes + 4);
}

template <typename T>
T read_le(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) {
    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
  }
  return std::bit_cast<T>(bits);
}

std::filesystem::path stem_of(const std::filesystem::path& path) {
  auto ext = path.extension();
  if (ext == ".json" || ext == ".bin") {
    auto p = path;
    return p.replace_extension();
  }
  return path;
}

void write_pair(const std::filesystem::path& path, const nlohmann::json& header,
                const std::vector<char>& payload) {
  const auto stem = stem_of(path);
  if (stem.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(stem.parent_path(), ec);
  }
  {
    std::ofstream js(sidecar_path(stem), std::ios::binary | std::ios::trunc);
    if (!js) throw IoError("cannot open " + sidecar_path(stem).string() + " for writing");
    js << header.dump(2) << '\n';
  }
  std::ofstream bin(payload_path(stem), std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot open " + payload_path(stem).string() + " for writing");
  bin.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!bin) throw IoError("short write to " + payload_path(stem).string());
}

struct RawVolume {
  nlohmann::json header;
  std::vector<std::size_t> shape;
  std::string dtype;
  std::vector<char> payload;
};

RawVolume read_pair(const std::filesystem::path& path) {
  const auto stem = stem_of(path);
  RawVolume raw;
  std::ifstream js(sidecar_path(stem));
  if (!js) throw FormatError("missing sidecar header " + sidecar_path(stem).string());
  try {
    js >> raw.header;
    raw.shape = raw.header.at("shape").get<std::vector<std::size_t>>();
    raw.dtype = raw.header.at("dtype").get<std::string>();
    if (raw.header.at("order").get<std::string>() != kOrder)
      throw FormatError("unsupported element order in " + sidecar_path(stem).string());
    if (raw.header.at("endian").get<std::string>() != "little")
      throw FormatError("unsupported endianness in " + sidecar_path(stem).string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed sidecar " + sidecar_path(stem).string() + ": " + e.what());
  }
  std::ifstream bin(payload_path(stem), std::ios::binary);
  if (!bin) throw CorruptFileError("missing payload " + payload_path(stem).string());
  raw.payload.assign(std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>());

  std::size_t expected = 4;
  for (auto s : raw.shape) expected *= s;
  if (raw.payload.size() != expected) {
    std::ostringstream msg;
    msg << "payload " << payload_path(stem).string() << " holds " << raw.payload.size()
        << " bytes, header implies " << expected;
    throw CorruptFileError(msg.str());
  }
  return raw;
}

VolumeBatch decode_float(const RawVolume& raw) {
  if (raw.shape.size() != 5) throw CorruptFileError("float32 volume must have rank 5");
  Shape shape{raw.shape[0], raw.shape[1], {raw.shape[2], raw.shape[3], raw.shape[4]}};
  std::vector<float> data(shape.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = read_le<float>(raw.payload.data() + 4 * i);
  try {
    return VolumeBatch(shape, std::move(data));
  } catch (const ContractError& e) {
    throw CorruptFileError(e.what());
  }
}

LabelField decode_int(const RawVolume& raw) {
  if (raw.shape.size() != 4) throw CorruptFileError("int32 label volume must have rank 4");
  const int classes = raw.header.value("num_classes", 2);
  Dims3 dims{raw.shape[1], raw.shape[2], raw.shape[3]};
  std::vector<std::int32_t> data(raw.shape[0] * dims.count());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = read_le<std::int32_t>(raw.payload.data() + 4 * i);
  try {
    return LabelField(raw.shape[0], dims, std::move(data), classes);
  } catch (const ContractError& e) {
    throw CorruptFileError(e.what());
  }
}

}  // namespace

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(' << s.batch << ',' << s.channels << ',' << s.spatial.h << ',' << s.spatial.w << ','
     << s.spatial.d << ')';
  return os.str();
}

VolumeBatch::VolumeBatch(Shape shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size())
    throw ContractError("VolumeBatch: data length " + std::to_string(data_.size()) +
                        " does not match shape " + to_string(shape_));
  for (float v : data_)
    if (!std::isfinite(v)) throw ContractError("VolumeBatch: non-finite value");
}

VolumeBatch VolumeBatch::zeros(Shape shape) {
  return VolumeBatch(shape, std::vector<float>(shape.size(), 0.0f));
}

ProbabilityField::ProbabilityField(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size())
    throw ContractError("ProbabilityField: data length does not match shape " + to_string(shape_));
  if (shape_.channels == 0) throw ContractError("ProbabilityField: zero classes");
  const std::size_t n = shape_.voxels_per_item();
  for (std::size_t b = 0; b < shape_.batch; ++b) {
    for (std::size_t v = 0; v < n; ++v) {
      double sum = 0.0;
      for (std::size_t c = 0; c < shape_.channels; ++c) {
        const double p = data_[(b * shape_.channels + c) * n + v];
        if (!(p >= 0.0 && p <= 1.0))
          throw ContractError("ProbabilityField: value outside [0, 1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > kSumTolerance)
        throw ContractError("ProbabilityField: channel sum deviates from 1 by more than 1e-5");
    }
  }
}

ProbabilityField ProbabilityField::uniform(Shape shape) {
  return ProbabilityField(shape,
                          std::vector<double>(shape.size(), 1.0 / static_cast<double>(shape.channels)));
}

LabelField::LabelField(std::size_t batch, Dims3 spatial, std::vector<std::int32_t> data,
                       int num_classes)
    : batch_(batch), spatial_(spatial), num_classes_(num_classes), data_(std::move(data)) {
  if (num_classes_ < 1) throw ContractError("LabelField: class count must be positive");
  if (data_.size() != batch_ * spatial_.count())
    throw ContractError("LabelField: data length does not match shape");
  for (auto v : data_)
    if (v < 0 || v >= num_classes_) throw ContractError("LabelField: label outside class range");
}

void PatchEmbeddings::validate() const {
  if (k <= 0) throw ContractError("PatchEmbeddings: k must be positive");
  const std::size_t expected = static_cast<std::size_t>(k) * k * k;
  if (dim == 0 || vectors.size() != expected * dim)
    throw ContractError("PatchEmbeddings: expected k^3 vectors of dimension E");
  if (patch_class.size() != expected)
    throw ContractError("PatchEmbeddings: patch_class length must equal k^3");
  if (normalized) {
    for (std::size_t p = 0; p < expected; ++p) {
      double sq = 0.0;
      for (double x : row(p)) sq += x * x;
      if (std::abs(std::sqrt(sq) - 1.0) > kNormTolerance)
        throw ContractError("PatchEmbeddings: vector is not unit length");
    }
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = stem_of(path);
  p += ".json";
  return p;
}

std::filesystem::path payload_path(const std::filesystem::path& path) {
  auto p = stem_of(path);
  p += ".bin";
  return p;
}

void write_volume(const VolumeBatch& v, const std::filesystem::path& path) {
  const auto& s = v.shape();
  nlohmann::json header = {
      {"shape", {s.batch, s.channels, s.spatial.h, s.spatial.w, s.spatial.d}},
      {"dtype", "float32"},
      {"order", kOrder},
      {"endian", "little"},
  };
  std::vector<char> payload;
  payload.reserve(v.data().size() * 4);
  for (float x : v.data()) append_le(payload, x);
  write_pair(path, header, payload);
}

void write_volume(const LabelField& v, const std::filesystem::path& path) {
  const auto& s = v.spatial();
  nlohmann::json header = {
      {"shape", {v.batch(), s.h, s.w, s.d}},
      {"dtype", "int32"},
      {"num_classes", v.num_classes()},
      {"order", kOrder},
      {"endian", "little"},
  };
  std::vector<char> payload;
  payload.reserve(v.data().size() * 4);
  for (auto x : v.data()) append_le(payload, x);
  write_pair(path, header, payload);
}

std::variant<VolumeBatch, LabelField> read_volume(const std::filesystem::path& path) {
  auto raw = read_pair(path);
  if (raw.dtype == "float32") return decode_float(raw);
  if (raw.dtype == "int32") return decode_int(raw);
  throw FormatError("unsupported dtype '" + raw.dtype + "'");
}

VolumeBatch read_volume_batch(const std::filesystem::path& path) {
  auto v = read_volume(path);
  if (auto* vb = std::get_if<VolumeBatch>(&v)) return std::move(*vb);
  throw FormatError(path.string() + " holds labels, expected float32 volume");
}

LabelField read_label_field(const std::filesystem::path& path) {
  auto v = read_volume(path);
  if (auto* lf = std::get_if<LabelField>(&v)) return std::move(*lf);
  throw FormatError(path.string() + " holds float32 data, expected int32 labels");
}

}  // namespace dycon
