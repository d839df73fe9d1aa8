#include "dycon/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>

#include "dycon/error.hpp"

namespace dycon {

double voxel_entropy(const double* p, std::size_t classes, std::size_t stride) {
  double h = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double q = clamp_prob(p[c * stride]);
    h -= q * std::log(q);
  }
  return h;
}

EntropyMap entropy(const ProbabilityField& p) {
  const auto& s = p.shape();
  const std::size_t n = s.voxels_per_item();
  EntropyMap out{s.batch, s.spatial, std::vector<double>(s.voxel_count())};
  const auto data = p.data();
  for (std::size_t b = 0; b < s.batch; ++b) {
    const double* base = data.data() + b * s.channels * n;
    for (std::size_t v = 0; v < n; ++v) out.values[b * n + v] = voxel_entropy(base + v, s.channels, n);
  }
  return out;
}

ProbabilityField gambling_softmax(const ProbabilityField& p, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ParameterError("gambling_softmax: temperature must be positive");
  const auto& s = p.shape();
  const std::size_t n = s.voxels_per_item();
  const std::size_t classes = s.channels;
  const auto in = p.data();
  std::vector<double> out(in.size());
  std::vector<double> logits(classes);
  for (std::size_t b = 0; b < s.batch; ++b) {
    const std::size_t base = b * classes * n;
    for (std::size_t v = 0; v < n; ++v) {
      double confidence = 0.0;
      for (std::size_t c = 0; c < classes; ++c) confidence = std::max(confidence, in[base + c * n + v]);
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < classes; ++c) {
        logits[c] = std::log(in[base + c * n + v]) / temperature + (1.0 - confidence);
        top = std::max(top, logits[c]);
      }
      double z = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        logits[c] = std::exp(logits[c] - top);
        z += logits[c];
      }
      for (std::size_t c = 0; c < classes; ++c) out[base + c * n + v] = logits[c] / z;
    }
  }
  return ProbabilityField(s, std::move(out));
}

Axis parse_axis(std::string_view name) {
  if (name == "H" || name == "h" || name == "0") return Axis::H;
  if (name == "W" || name == "w" || name == "1") return Axis::W;
  if (name == "D" || name == "d" || name == "2") return Axis::D;
  throw ParameterError("axis must be one of H, W, D; got '" + std::string(name) + "'");
}

char axis_name(Axis axis) {
  switch (axis) {
    case Axis::H: return 'H';
    case Axis::W: return 'W';
    case Axis::D: return 'D';
  }
  return '?';
}

std::vector<std::filesystem::path> export_entropy_slices(const EntropyMap& h, int axis,
                                                         const std::filesystem::path& dir) {
  if (axis < 0 || axis > 2) throw ParameterError("export_entropy_slices: axis must be 0, 1 or 2");
  const auto ax = static_cast<Axis>(axis);
  const Dims3& g = h.spatial;
  const std::size_t extent[3] = {g.h, g.w, g.d};
  // Remaining axes in order; rows follow the first one.
  std::size_t rest[2];
  for (int a = 0, r = 0; a < 3; ++a)
    if (a != axis) rest[r++] = static_cast<std::size_t>(a);

  std::vector<std::filesystem::path> written;
  for (std::size_t b = 0; b < h.batch; ++b) {
    const auto out_dir = h.batch > 1 ? dir / ("b" + std::to_string(b)) : dir;
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    for (std::size_t s = 0; s < extent[axis]; ++s) {
      const auto path =
          out_dir / (std::string("slice_") + axis_name(ax) + "_" + std::to_string(s) + ".csv");
      std::ofstream os(path, std::ios::trunc);
      if (!os) throw IoError("cannot write " + path.string());
      char buf[32];
      for (std::size_t r = 0; r < extent[rest[0]]; ++r) {
        for (std::size_t c = 0; c < extent[rest[1]]; ++c) {
          std::size_t idx[3];
          idx[axis] = s;
          idx[rest[0]] = r;
          idx[rest[1]] = c;
          std::snprintf(buf, sizeof buf, "%.17g", h.at(b, idx[0], idx[1], idx[2]));
          if (c) os << ',';
          os << buf;
        }
        os << '\n';
      }
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace dycon
