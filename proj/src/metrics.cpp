#include "dycon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "dycon/error.hpp"

namespace dycon {

namespace {

constexpr std::int64_t kFar = std::numeric_limits<std::int64_t>::max() / 4;

// Lower envelope of parabolas over one line (exact in integers).
void edt_line(std::vector<std::int64_t>& f, std::vector<std::int64_t>& out,
              std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] >= kFar) continue;
    const auto fq = static_cast<double>(f[q]);
    const auto dq = static_cast<double>(q);
    if (!any) {
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      k = 0;
      any = true;
      continue;
    }
    double s;
    while (true) {
      const double dv = static_cast<double>(v[k]);
      s = ((fq + dq * dq) - (static_cast<double>(f[v[k]]) + dv * dv)) / (2.0 * dq - 2.0 * dv);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates the only one on the envelope.
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (!any) {
    std::fill(out.begin(), out.end(), kFar);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const auto d = static_cast<std::int64_t>(q) - static_cast<std::int64_t>(v[k]);
    out[q] = f[v[k]] + d * d;
  }
}

std::vector<double> directed_distances(const std::vector<std::size_t>& from,
                                       const std::vector<std::int64_t>& sq_to) {
  std::vector<double> d;
  d.reserve(from.size());
  for (auto idx : from) d.push_back(std::sqrt(static_cast<double>(sq_to[idx])));
  return d;
}

void check_pair(std::span<const std::int32_t> a, std::span<const std::int32_t> b) {
  if (a.size() != b.size()) throw ContractError("metrics: masks differ in size");
}

}  // namespace

OverlapScores dice_iou(std::span<const std::int32_t> a, std::span<const std::int32_t> b) {
  check_pair(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return {1.0, 1.0};
  const auto inter = static_cast<double>(both);
  return {2.0 * inter / static_cast<double>(na + nb),
          inter / static_cast<double>(na + nb - both)};
}

std::vector<std::size_t> surface_voxels(std::span<const std::int32_t> mask, Dims3 g) {
  if (mask.size() != g.count()) throw ContractError("surface_voxels: mask size mismatch");
  std::vector<std::size_t> out;
  auto fg = [&](long i, long j, long k) {
    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(g.h) || j >= static_cast<long>(g.w) ||
        k >= static_cast<long>(g.d))
      return false;
    return mask[g.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                        static_cast<std::size_t>(k))] != 0;
  };
  for (long i = 0; i < static_cast<long>(g.h); ++i)
    for (long j = 0; j < static_cast<long>(g.w); ++j)
      for (long k = 0; k < static_cast<long>(g.d); ++k) {
        if (!fg(i, j, k)) continue;
        if (!fg(i - 1, j, k) || !fg(i + 1, j, k) || !fg(i, j - 1, k) || !fg(i, j + 1, k) ||
            !fg(i, j, k - 1) || !fg(i, j, k + 1))
          out.push_back(g.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                static_cast<std::size_t>(k)));
      }
  return out;
}

std::vector<std::int64_t> squared_distance_transform(std::span<const std::uint8_t> marked,
                                                     Dims3 g) {
  if (marked.size() != g.count()) throw ContractError("distance transform: size mismatch");
  std::vector<std::int64_t> dist(g.count());
  bool any = false;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    dist[i] = marked[i] ? 0 : kFar;
    any = any || marked[i];
  }
  if (!any) return std::vector<std::int64_t>(g.count(), -1);

  const std::size_t ext[3] = {g.h, g.w, g.d};
  const std::size_t stride[3] = {g.w * g.d, g.d, 1};
  for (int axis = 2; axis >= 0; --axis) {
    const std::size_t n = ext[axis];
    std::vector<std::int64_t> f(n), out(n);
    std::vector<std::size_t> v(n);
    std::vector<double> z(n + 1);
    // Iterate over every line parallel to `axis`.
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (std::size_t x = 0; x < ext[a1]; ++x)
      for (std::size_t y = 0; y < ext[a2]; ++y) {
        const std::size_t base = x * stride[a1] + y * stride[a2];
        for (std::size_t q = 0; q < n; ++q) f[q] = dist[base + q * stride[axis]];
        edt_line(f, out, v, z);
        for (std::size_t q = 0; q < n; ++q) dist[base + q * stride[axis]] = out[q];
      }
  }
  return dist;
}

double sorted_percentile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ContractError("percentile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

SurfaceScores surface_distances(std::span<const std::int32_t> a, std::span<const std::int32_t> b,
                                Dims3 g) {
  check_pair(a, b);
  if (a.size() != g.count()) throw ContractError("surface_distances: mask size mismatch");
  const auto sa = surface_voxels(a, g);
  const auto sb = surface_voxels(b, g);
  if (sa.empty() || sb.empty()) {
    const double diag = std::sqrt(static_cast<double>(g.h * g.h + g.w * g.w + g.d * g.d));
    return {diag, diag, true};
  }
  std::vector<std::uint8_t> mark_a(g.count(), 0), mark_b(g.count(), 0);
  for (auto i : sa) mark_a[i] = 1;
  for (auto i : sb) mark_b[i] = 1;
  const auto to_b = squared_distance_transform(mark_b, g);
  const auto to_a = squared_distance_transform(mark_a, g);

  auto pooled = directed_distances(sa, to_b);
  const auto back = directed_distances(sb, to_a);
  pooled.insert(pooled.end(), back.begin(), back.end());
  std::sort(pooled.begin(), pooled.end());
  double sum = 0.0;
  for (double d : pooled) sum += d;
  return {sorted_percentile(pooled, 0.95), sum / static_cast<double>(pooled.size()), false};
}

VolumeMetrics evaluate_masks(std::span<const std::int32_t> prediction,
                             std::span<const std::int32_t> truth, Dims3 spatial) {
  VolumeMetrics m;
  const auto ov = dice_iou(prediction, truth);
  const auto sd = surface_distances(prediction, truth, spatial);
  m.dice = ov.dice;
  m.iou = ov.iou;
  m.hd95 = sd.hd95;
  m.asd = sd.asd;
  m.collapsed = sd.collapsed;
  return m;
}

MetricReport MetricReport::from(std::vector<VolumeMetrics> volumes) {
  MetricReport r;
  r.volumes = std::move(volumes);
  r.mean.volume_id = "mean";
  if (r.volumes.empty()) return r;
  for (const auto& v : r.volumes) {
    r.mean.dice += v.dice;
    r.mean.iou += v.iou;
    r.mean.hd95 += v.hd95;
    r.mean.asd += v.asd;
    r.mean.collapsed = r.mean.collapsed || v.collapsed;
  }
  const auto n = static_cast<double>(r.volumes.size());
  r.mean.dice /= n;
  r.mean.iou /= n;
  r.mean.hd95 /= n;
  r.mean.asd /= n;
  return r;
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "volume_id,category,scatter,dice,iou,hd95,asd\n";
  char buf[256];
  auto row = [&](const VolumeMetrics& v) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.6f,%.6f,%.6f,%.6f\n", v.volume_id.c_str(),
                  v.category.c_str(), v.scatter.c_str(), v.dice, v.iou, v.hd95, v.asd);
    os << buf;
  };
  for (const auto& v : report.volumes) row(v);
  if (!report.volumes.empty()) row(report.mean);
}

}  // namespace dycon
