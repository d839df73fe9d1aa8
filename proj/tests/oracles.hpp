#pragma once

// Brute-force reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "dycon/fecl.hpp"
#include "dycon/fields.hpp"
#include "dycon/metrics.hpp"

namespace oracle {

using namespace dycon;

// --- contrastive loss -----------------------------------------------------------

inline std::vector<double> unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(rows * dim);
  for (auto& x : v) x = g(rng);
  return normalize_rows(v, dim);
}

inline PatchEmbeddings embeddings(std::vector<double> v, std::size_t dim, std::vector<int> cls,
                           EmbeddingSource src = EmbeddingSource::student) {
  return {1, dim, std::move(v), std::move(cls), src, true};
}

inline double cosine(const std::vector<double>& a, std::size_t i, const std::vector<double>& b,
              std::size_t j, std::size_t dim) {
  double s = 0.0;
  for (std::size_t e = 0; e < dim; ++e) s += a[i * dim + e] * b[j * dim + e];
  return s;
}

// Direct scalar evaluation of the contrastive loss, one anchor at a time.
inline double brute_force_fecl(const std::vector<double>& zs, const std::vector<int>& cs,
                        const std::vector<double>& zt, const std::vector<int>& ct, std::size_t dim,
                        double tau, double gamma, std::size_t top_k, const std::vector<double>& h) {
  const std::size_t p = cs.size();
  double total = 0.0;
  int anchors = 0;
  bool any_negative = false;
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t j = 0; j < p; ++j) {
      if (j == i) continue;
      (cs[j] == cs[i] ? pos : neg).push_back(j);
    }
    if (pos.empty()) continue;
    ++anchors;
    any_negative = any_negative || !neg.empty();

    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t l = 0; l < ct.size(); ++l)
      if (ct[l] != cs[i]) cand.push_back({-cosine(zs, i, zt, l, dim), l});
    std::sort(cand.begin(), cand.end());
    cand.resize(std::min(cand.size(), top_k));
    double hard_mean = 0.0;
    for (const auto& c : cand) hard_mean += std::exp(-c.first / tau);
    if (!cand.empty()) hard_mean /= static_cast<double>(cand.size());

    double neg_sum = 0.0;
    for (auto q : neg) {
      const double c = cosine(zs, i, zs, q, dim);
      const double fneg = std::pow(std::clamp(c, 0.0, 1.0), gamma);
      neg_sum += fneg * (std::exp(c / tau) + hard_mean);
    }
    double term = 0.0;
    for (auto k : pos) {
      const double c = cosine(zs, i, zs, k, dim);
      const double fpos = std::pow(1.0 - std::clamp(c, 0.0, 1.0), gamma) * std::exp(h[i]);
      const double d = std::exp(c / tau) + neg_sum;
      term += fpos * -std::log(std::exp(c / tau) / d);
    }
    total += term / static_cast<double>(pos.size());
  }
  if (anchors == 0 || !any_negative) return 0.0;
  return total / anchors;
}

// --- surface metrics ----------------------------------------------------------------

using Mask = std::vector<std::int32_t>;

// Exhaustive reference: 6-connected surfaces, nearest-surface search by
// scanning every surface voxel.
inline std::vector<std::size_t> brute_surface(const Mask& m, Dims3 s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.h; ++i)
    for (std::size_t j = 0; j < s.w; ++j)
      for (std::size_t k = 0; k < s.d; ++k) {
        if (!m[s.index(i, j, k)]) continue;
        const long p[3] = {static_cast<long>(i), static_cast<long>(j), static_cast<long>(k)};
        const long dim[3] = {static_cast<long>(s.h), static_cast<long>(s.w),
                             static_cast<long>(s.d)};
        bool edge = false;
        for (int a = 0; a < 3 && !edge; ++a)
          for (long step : {-1L, 1L}) {
            long q[3] = {p[0], p[1], p[2]};
            q[a] += step;
            if (q[a] < 0 || q[a] >= dim[a] ||
                !m[s.index(static_cast<std::size_t>(q[0]), static_cast<std::size_t>(q[1]),
                           static_cast<std::size_t>(q[2]))]) {
              edge = true;
              break;
            }
          }
        if (edge) out.push_back(s.index(i, j, k));
      }
  return out;
}

inline void coords(std::size_t idx, Dims3 s, double c[3]) {
  c[2] = static_cast<double>(idx % s.d);
  c[1] = static_cast<double>((idx / s.d) % s.w);
  c[0] = static_cast<double>(idx / (s.d * s.w));
}

inline std::vector<double> directed(const std::vector<std::size_t>& from,
                             const std::vector<std::size_t>& to, Dims3 s) {
  std::vector<double> d;
  for (auto a : from) {
    double ca[3];
    coords(a, s, ca);
    double best = INFINITY;
    for (auto b : to) {
      double cb[3];
      coords(b, s, cb);
      double r = 0;
      for (int t = 0; t < 3; ++t) r += (ca[t] - cb[t]) * (ca[t] - cb[t]);
      best = std::min(best, r);
    }
    d.push_back(std::sqrt(best));
  }
  return d;
}

inline SurfaceScores brute_scores(const Mask& a, const Mask& b, Dims3 s) {
  const auto sa = brute_surface(a, s);
  const auto sb = brute_surface(b, s);
  auto d = directed(sa, sb, s);
  const auto e = directed(sb, sa, s);
  d.insert(d.end(), e.begin(), e.end());
  std::sort(d.begin(), d.end());
  SurfaceScores r;
  r.hd95 = sorted_percentile(d, 0.95);
  double sum = 0;
  for (double x : d) sum += x;
  r.asd = sum / static_cast<double>(d.size());
  return r;
}

// Random blob: a few filled boxes.
inline Mask random_mask(std::mt19937_64& rng, Dims3 s) {
  Mask m(s.count(), 0);
  const int boxes = 1 + static_cast<int>(rng() % 3);
  for (int b = 0; b < boxes; ++b) {
    std::size_t lo[3], hi[3];
    const std::size_t dim[3] = {s.h, s.w, s.d};
    for (int t = 0; t < 3; ++t) {
      lo[t] = rng() % dim[t];
      hi[t] = std::min(dim[t], lo[t] + 1 + rng() % 5);
    }
    for (auto i = lo[0]; i < hi[0]; ++i)
      for (auto j = lo[1]; j < hi[1]; ++j)
        for (auto k = lo[2]; k < hi[2]; ++k) m[s.index(i, j, k)] = 1;
  }
  // speckle
  for (int n = 0; n < 4; ++n) m[rng() % s.count()] = 1;
  return m;
}

}  // namespace oracle
