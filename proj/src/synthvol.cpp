#include "dycon/synthvol.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "dycon/error.hpp"

namespace dycon {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Box blur of radius 1 along one axis with edge clamping.
void blur_axis(std::vector<double>& v, const Dims3& g, int axis) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < g.h; ++i)
    for (std::size_t j = 0; j < g.w; ++j)
      for (std::size_t k = 0; k < g.d; ++k) {
        std::size_t idx[3] = {i, j, k};
        const std::size_t extent[3] = {g.h, g.w, g.d};
        double s = 0.0;
        for (int o = -1; o <= 1; ++o) {
          std::size_t q[3] = {idx[0], idx[1], idx[2]};
          const long pos = static_cast<long>(idx[axis]) + o;
          q[axis] = static_cast<std::size_t>(std::clamp(pos, 0L, static_cast<long>(extent[axis]) - 1));
          s += v[g.index(q[0], q[1], q[2])];
        }
        out[g.index(i, j, k)] = s / 3.0;
      }
  v.swap(out);
}

struct Ellipsoid {
  double c[3];
  double r[3];
};

double center_distance(const Ellipsoid& a, const Ellipsoid& b) {
  double s = 0.0;
  for (int t = 0; t < 3; ++t) s += (a.c[t] - b.c[t]) * (a.c[t] - b.c[t]);
  return std::sqrt(s);
}

double max_radius(const Ellipsoid& e) { return std::max({e.r[0], e.r[1], e.r[2]}); }

}  // namespace

std::string to_string(LesionSize s) {
  switch (s) {
    case LesionSize::small: return "small";
    case LesionSize::medium: return "medium";
    case LesionSize::large: return "large";
  }
  return "?";
}

std::string to_string(Scatter s) {
  return s == Scatter::scattered ? "scattered" : "non-scattered";
}

LesionSize parse_lesion_size(std::string_view name) {
  if (name == "small") return LesionSize::small;
  if (name == "medium") return LesionSize::medium;
  if (name == "large") return LesionSize::large;
  throw ParameterError("unknown lesion size category '" + std::string(name) + "'");
}

Scatter parse_scatter(std::string_view name) {
  if (name == "scattered") return Scatter::scattered;
  if (name == "non-scattered" || name == "non_scattered") return Scatter::non_scattered;
  throw ParameterError("unknown scatter category '" + std::string(name) + "'");
}

void LesionSpec::validate() const {
  if (count < 0) throw ParameterError("lesion count must be >= 0");
  if (!(radius_min >= 1.0) || !(radius_max >= radius_min))
    throw ParameterError("lesion radii must satisfy 1 <= radius_min <= radius_max");
  if (!std::isfinite(contrast)) throw ParameterError("lesion contrast must be finite");
}

LesionSpec preset_spec(LesionSize category, Scatter scatter, std::uint64_t seed, double contrast,
                       Dims3 size) {
  std::mt19937_64 rng(splitmix(seed ^ 0x5bd1e995ULL));
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  LesionSpec s;
  s.category = category;
  s.scatter = scatter;
  s.contrast = contrast;
  const bool spread = scatter == Scatter::scattered;
  switch (category) {
    case LesionSize::small:
      s.radius_min = 1.5;
      s.radius_max = 2.5;
      s.count = spread ? pick(3, 5) : pick(1, 2);
      break;
    case LesionSize::medium:
      s.radius_min = 3.0;
      s.radius_max = 5.0;
      s.count = spread ? pick(2, 4) : pick(1, 2);
      break;
    case LesionSize::large:
      s.radius_min = spread ? 6.5 : 8.0;
      s.radius_max = spread ? 8.0 : 10.0;
      s.count = spread ? 2 : 1;
      break;
  }
  const double scale =
      static_cast<double>(std::min({size.h, size.w, size.d})) / 32.0;
  s.radius_min = std::max(1.0, s.radius_min * scale);
  s.radius_max = std::max(s.radius_min, s.radius_max * scale);
  return s;
}

SyntheticVolume gen_volume(std::uint64_t seed, Dims3 size, const LesionSpec& spec) {
  spec.validate();
  if (size.h < 16 || size.w < 16 || size.d < 16)
    throw ParameterError("synthetic volumes must be at least 16^3");
  const double extent[3] = {static_cast<double>(size.h), static_cast<double>(size.w),
                            static_cast<double>(size.d)};
  for (double e : extent)
    if (2.0 * spec.radius_max + 1.0 > e) throw GenerationError("lesion radius does not fit the volume");

  std::mt19937_64 rng(splitmix(seed));
  const std::size_t n = size.count();

  // Background: smoothed white noise, standardised.
  std::vector<double> bg(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : bg) v = normal(rng);
  for (int pass = 0; pass < 2; ++pass)
    for (int axis = 0; axis < 3; ++axis) blur_axis(bg, size, axis);
  double mean = 0.0;
  for (double v : bg) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : bg) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / static_cast<double>(n));
  for (double& v : bg) v = (v - mean) / sigma;

  // Lesion placement.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Whole configurations are redrawn on failure, so an early lesion cannot
  // block the rest.
  std::vector<Ellipsoid> lesions;
  constexpr int kRetries = 1000;
  // scattered lesions keep a clear gap, 2 voxels at 32^3
  const double gap = std::max(1.0, 2.0 * std::min({extent[0], extent[1], extent[2]}) / 32.0);
  bool placed = spec.count == 0;
  for (int attempt = 0; attempt < kRetries && !placed; ++attempt) {
    lesions.clear();
    placed = true;
    for (int l = 0; l < spec.count && placed; ++l) {
      Ellipsoid e{};
      for (int t = 0; t < 3; ++t)
        e.r[t] = spec.radius_min + (spec.radius_max - spec.radius_min) * unit(rng);
      for (int t = 0; t < 3; ++t) {
        const double lo = std::ceil(e.r[t]);
        const double hi = extent[t] - 1.0 - std::ceil(e.r[t]);
        e.c[t] = lo + (hi - lo) * unit(rng);
      }
      for (const auto& o : lesions) {
        const double dist = center_distance(e, o);
        if (spec.scatter == Scatter::scattered) {
          if (dist < max_radius(e) + max_radius(o) + gap) placed = false;
        } else if (dist > 1.5 * (max_radius(e) + max_radius(o))) {
          placed = false;  // keep clusters together
        }
      }
      lesions.push_back(e);
    }
  }
  if (!placed)
    throw GenerationError("could not place " + std::to_string(spec.count) + " lesions after " +
                          std::to_string(kRetries) + " attempts");

  std::vector<float> image(n);
  std::vector<std::int32_t> mask(n, 0);
  constexpr double kEdgeWidth = 0.75;  // voxels
  for (std::size_t i = 0; i < size.h; ++i)
    for (std::size_t j = 0; j < size.w; ++j)
      for (std::size_t k = 0; k < size.d; ++k) {
        const std::size_t idx = size.index(i, j, k);
        const double p[3] = {static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
        double lesion = 0.0;
        for (const auto& e : lesions) {
          double rho2 = 0.0;
          for (int t = 0; t < 3; ++t) rho2 += ((p[t] - e.c[t]) / e.r[t]) * ((p[t] - e.c[t]) / e.r[t]);
          const double rho = std::sqrt(rho2);
          if (rho <= 1.0) mask[idx] = 1;
          const double mean_r = (e.r[0] + e.r[1] + e.r[2]) / 3.0;
          const double soft = 1.0 / (1.0 + std::exp(-(1.0 - rho) * mean_r / kEdgeWidth));
          lesion = std::max(lesion, soft);
        }
        image[idx] = static_cast<float>(bg[idx] + spec.contrast * lesion);
      }

  return {VolumeBatch(Shape{1, 1, size}, std::move(image)), LabelField(1, size, std::move(mask), 2)};
}

AugmentParams identity_augment(Dims3 volume) {
  AugmentParams a;
  a.source = volume;
  a.crop = volume;
  return a;
}

AugmentParams sample_augment(std::uint64_t seed, Dims3 volume, Dims3 crop) {
  if (crop.h > volume.h || crop.w > volume.w || crop.d > volume.d || crop.count() == 0)
    throw ParameterError("crop size must fit inside the volume");
  std::mt19937_64 rng(splitmix(seed ^ 0xa5a5a5a5ULL));
  AugmentParams a;
  a.source = volume;
  a.crop = crop;
  std::bernoulli_distribution coin(0.5);
  for (bool& f : a.flip) f = coin(rng);
  a.quarter_turns = volume.h == volume.w ? std::uniform_int_distribution<int>(0, 3)(rng) : 0;
  // After a quarter turn H and W swap extents; square planes keep them.
  const std::size_t ext[3] = {volume.h, volume.w, volume.d};
  const std::size_t cext[3] = {crop.h, crop.w, crop.d};
  for (int t = 0; t < 3; ++t)
    a.offset[t] = std::uniform_int_distribution<std::size_t>(0, ext[t] - cext[t])(rng);
  return a;
}

namespace {

// Source voxel read by output voxel (i, j, k).
std::size_t source_index(const AugmentParams& a, std::size_t i, std::size_t j, std::size_t k) {
  const Dims3& g = a.source;
  // Undo crop.
  std::size_t p[3] = {i + a.offset[0], j + a.offset[1], k + a.offset[2]};
  // Undo rotation: rotated[x][y] = flipped[y][H-1-x] for one quarter turn.
  for (int t = 0; t < a.quarter_turns % 4; ++t) {
    const std::size_t x = p[0], y = p[1];
    p[0] = y;
    p[1] = g.h - 1 - x;
  }
  const std::size_t ext[3] = {g.h, g.w, g.d};
  for (int t = 0; t < 3; ++t)
    if (a.flip[t]) p[t] = ext[t] - 1 - p[t];
  return g.index(p[0], p[1], p[2]);
}

void check_params(const AugmentParams& a, const Dims3& input) {
  if (!(a.source == input)) throw ContractError("augment: parameters sampled for another shape");
  if (a.quarter_turns % 4 != 0 && a.source.h != a.source.w)
    throw ContractError("augment: rotation needs a square H-W plane");
  if (a.offset[0] + a.crop.h > input.h || a.offset[1] + a.crop.w > input.w ||
      a.offset[2] + a.crop.d > input.d)
    throw ContractError("augment: crop window exceeds the volume");
}

}  // namespace

VolumeBatch apply_augment(const AugmentParams& a, const VolumeBatch& x) {
  const Shape& s = x.shape();
  check_params(a, s.spatial);
  Shape out_shape{s.batch, s.channels, a.crop};
  std::vector<float> out(out_shape.size());
  const std::size_t in_n = s.spatial.count(), out_n = a.crop.count();
  const auto src = x.data();
  for (std::size_t bc = 0; bc < s.batch * s.channels; ++bc)
    for (std::size_t i = 0; i < a.crop.h; ++i)
      for (std::size_t j = 0; j < a.crop.w; ++j)
        for (std::size_t k = 0; k < a.crop.d; ++k)
          out[bc * out_n + a.crop.index(i, j, k)] = src[bc * in_n + source_index(a, i, j, k)];
  return VolumeBatch(out_shape, std::move(out));
}

LabelField apply_augment(const AugmentParams& a, const LabelField& y) {
  check_params(a, y.spatial());
  const std::size_t in_n = y.spatial().count(), out_n = a.crop.count();
  std::vector<std::int32_t> out(y.batch() * out_n);
  const auto src = y.data();
  for (std::size_t b = 0; b < y.batch(); ++b)
    for (std::size_t i = 0; i < a.crop.h; ++i)
      for (std::size_t j = 0; j < a.crop.w; ++j)
        for (std::size_t k = 0; k < a.crop.d; ++k)
          out[b * out_n + a.crop.index(i, j, k)] = src[b * in_n + source_index(a, i, j, k)];
  return LabelField(y.batch(), a.crop, std::move(out), y.num_classes());
}

std::pair<VolumeBatch, LabelField> augment(const VolumeBatch& x, const LabelField& y,
                                           std::uint64_t seed, Dims3 crop) {
  const auto params = sample_augment(seed, x.shape().spatial, crop);
  return {apply_augment(params, x), apply_augment(params, y)};
}

// --- manifest -------------------------------------------------------------------

void DatasetManifest::validate() const {
  if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0))
    throw ConfigError("labeled ratio must lie in (0, 1]");
  if (!(val_ratio >= 0.0 && val_ratio < 1.0)) throw ConfigError("val ratio must lie in [0, 1)");
  std::vector<std::string> paths;
  for (const auto& v : volumes) {
    paths.push_back(v.image);
    paths.push_back(v.mask);
    if (v.split != "train" && v.split != "val") throw ConfigError("unknown split '" + v.split + "'");
  }
  std::sort(paths.begin(), paths.end());
  if (std::adjacent_find(paths.begin(), paths.end()) != paths.end())
    throw ConfigError("manifest lists the same file twice");
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  nlohmann::json vols = nlohmann::json::array();
  std::size_t n_train = 0, n_val = 0, n_labeled = 0;
  for (const auto& v : volumes) {
    vols.push_back({{"id", v.id},
                    {"image", v.image},
                    {"mask", v.mask},
                    {"labeled", v.labeled},
                    {"split", v.split},
                    {"seed", v.seed},
                    {"category", to_string(v.category)},
                    {"scatter", to_string(v.scatter)},
                    {"foreground_fraction", v.foreground_fraction}});
    (v.split == "val" ? n_val : n_train)++;
    if (v.labeled) ++n_labeled;
  }
  nlohmann::json j = {
      {"volumes", vols},
      {"split",
       {{"labeled_ratio", labeled_ratio},
        {"val_ratio", val_ratio},
        {"seed", seed},
        {"train", n_train},
        {"val", n_val},
        {"labeled", n_labeled}}},
      {"size", {size.h, size.w, size.d}},
      {"generator_version", generator_version},
  };
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest " + path.string());
  DatasetManifest m;
  try {
    nlohmann::json j;
    is >> j;
    for (const auto& v : j.at("volumes")) {
      VolumeEntry e;
      e.id = v.at("id").get<std::string>();
      e.image = v.at("image").get<std::string>();
      e.mask = v.at("mask").get<std::string>();
      e.labeled = v.at("labeled").get<bool>();
      e.split = v.value("split", std::string("train"));
      e.seed = v.at("seed").get<std::uint64_t>();
      e.category = parse_lesion_size(v.at("category").get<std::string>());
      e.scatter = parse_scatter(v.at("scatter").get<std::string>());
      e.foreground_fraction = v.value("foreground_fraction", 0.0);
      m.volumes.push_back(std::move(e));
    }
    const auto& split = j.at("split");
    m.labeled_ratio = split.at("labeled_ratio").get<double>();
    m.val_ratio = split.at("val_ratio").get<double>();
    m.seed = split.at("seed").get<std::uint64_t>();
    const auto sz = j.at("size").get<std::vector<std::size_t>>();
    if (sz.size() != 3) throw ConfigError("manifest size must have three entries");
    m.size = {sz[0], sz[1], sz[2]};
    m.generator_version = j.at("generator_version").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  } catch (const ParameterError& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  m.root = path.parent_path();
  m.validate();
  return m;
}

std::size_t labeled_count(std::size_t train_volumes, double labeled_ratio) {
  if (train_volumes == 0) return 0;
  const auto n = static_cast<std::size_t>(std::llround(labeled_ratio * static_cast<double>(train_volumes)));
  return std::clamp<std::size_t>(n, 1, train_volumes);
}

DatasetManifest build_dataset(const DatasetConfig& config) {
  if (config.volumes < 1) throw ConfigError("dataset needs at least one volume");
  if (config.output_dir.empty()) throw ConfigError("dataset output directory missing");
  const auto manifest_path = config.output_dir / "manifest.json";
  if (std::filesystem::exists(manifest_path) && !config.overwrite)
    throw IoError(manifest_path.string() + " exists; pass overwrite to replace it");
  std::error_code ec;
  std::filesystem::create_directories(config.output_dir, ec);
  if (ec) throw IoError("cannot create " + config.output_dir.string());

  std::vector<std::pair<LesionSize, Scatter>> grid;
  for (auto c : {LesionSize::small, LesionSize::medium, LesionSize::large})
    for (auto s : {Scatter::scattered, Scatter::non_scattered}) {
      if (config.category && *config.category != c) continue;
      if (config.scatter && *config.scatter != s) continue;
      grid.emplace_back(c, s);
    }

  DatasetManifest m;
  m.labeled_ratio = config.labeled_ratio;
  m.val_ratio = config.val_ratio;
  m.seed = config.seed;
  m.size = config.size;
  m.root = config.output_dir;

  const auto total = static_cast<std::size_t>(config.volumes);
  for (std::size_t i = 0; i < total; ++i) {
    const auto [category, scatter] = grid[i % grid.size()];
    VolumeEntry e;
    char id[32];
    std::snprintf(id, sizeof id, "vol_%03zu", i);
    e.id = id;
    e.image = e.id + "_image";
    e.mask = e.id + "_mask";
    e.seed = splitmix(config.seed * 0x100000001b3ULL + i);
    e.category = category;
    e.scatter = scatter;
    const auto spec = preset_spec(category, scatter, e.seed, config.contrast, config.size);
    const auto vol = gen_volume(e.seed, config.size, spec);
    std::size_t fg = 0;
    for (auto v : vol.mask.data()) fg += v == 1;
    e.foreground_fraction = static_cast<double>(fg) / static_cast<double>(config.size.count());
    write_volume(vol.image, config.output_dir / e.image);
    write_volume(vol.mask, config.output_dir / e.mask);
    m.volumes.push_back(std::move(e));
  }

  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  std::mt19937_64 rng(splitmix(config.seed ^ 0x1234abcdULL));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::floor(config.val_ratio * static_cast<double>(total) + 0.5));
  const std::size_t n_train = total - std::min(n_val, total - 1);
  const std::size_t n_labeled = labeled_count(n_train, config.labeled_ratio);
  for (std::size_t r = 0; r < total; ++r) {
    auto& e = m.volumes[order[r]];
    e.split = r < n_train ? "train" : "val";
    e.labeled = r < n_labeled;
  }
  m.validate();
  m.save(manifest_path);
  return m;
}

}  // namespace dycon
