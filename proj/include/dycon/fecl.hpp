#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dycon/fields.hpp"

namespace dycon {

// --- patching ----------------------------------------------------------------
//
// A grid of extent n along an axis is edge-padded to ceil(n / k) * k and split
// into k cells of equal size. Patches are numbered (a * k + b) * k + c.

struct PatchGrid {
  Dims3 spatial;
  int k = 0;
  std::size_t cell_h = 0, cell_w = 0, cell_d = 0;

  PatchGrid(Dims3 spatial, int k);

  [[nodiscard]] std::size_t patch_count() const {
    return static_cast<std::size_t>(k) * static_cast<std::size_t>(k) * static_cast<std::size_t>(k);
  }
  [[nodiscard]] std::size_t cell_volume() const { return cell_h * cell_w * cell_d; }
  // Calls fn(voxel_flat_index) for every padded cell entry of patch p, in a
  // fixed order; replicated edge voxels are visited more than once.
  template <typename Fn>
  void for_each_voxel(std::size_t p, Fn&& fn) const {
    const std::size_t kk = static_cast<std::size_t>(k);
    const std::size_t a = p / (kk * kk), b = (p / kk) % kk, c = p % kk;
    for (std::size_t i = a * cell_h; i < (a + 1) * cell_h; ++i) {
      const std::size_t ci = i < spatial.h ? i : spatial.h - 1;
      for (std::size_t j = b * cell_w; j < (b + 1) * cell_w; ++j) {
        const std::size_t cj = j < spatial.w ? j : spatial.w - 1;
        for (std::size_t l = c * cell_d; l < (c + 1) * cell_d; ++l) {
          const std::size_t cl = l < spatial.d ? l : spatial.d - 1;
          fn(spatial.index(ci, cj, cl));
        }
      }
    }
  }
};

// Per-patch channel means of a feature volume laid out (E, H, W, D); P x E.
std::vector<double> patch_means(std::span<const double> grid, std::size_t channels, Dims3 spatial,
                                int k);

// Mean-pools each patch and L2-normalises the result. patch_class is zeroed.
PatchEmbeddings partition_average(std::span<const double> grid, std::size_t channels, Dims3 spatial,
                                  int k);

// Rows divided by max(‖row‖, 1e-12).
std::vector<double> normalize_rows(std::span<const double> rows, std::size_t dim);

// Reverse of partition_average: gradient on the normalised P x E vectors to
// gradient on the (E, H, W, D) grid.
std::vector<double> partition_average_backward(std::span<const double> grad_normalized,
                                               std::span<const double> means, std::size_t channels,
                                               Dims3 spatial, int k);

// Binary masks: class 1 iff the patch's foreground fraction exceeds
// `threshold`. More than two classes: majority vote, ties to the lower class.
std::vector<int> patch_labels(std::span<const std::int32_t> mask, Dims3 spatial, int k,
                              int num_classes = 2, double threshold = 0.5);

// Mean per-patch entropy of one volume's entropy map, optionally divided by
// ln(num_classes).
std::vector<double> patch_entropy(std::span<const double> entropy, Dims3 spatial, int k,
                                  int num_classes, bool normalize = true);

// --- similarities and weights -------------------------------------------------

// Rows index anchors, columns candidates. scores = cosine / τ.
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double tau = 1.0;
  std::vector<double> cosine;
  std::vector<double> scores;

  [[nodiscard]] double S(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }
  [[nodiscard]] double cos(std::size_t i, std::size_t j) const { return cosine[i * cols + j]; }
};

SimilarityMatrix similarity(const PatchEmbeddings& z, double tau);
SimilarityMatrix cross_similarity(const PatchEmbeddings& anchors, const PatchEmbeddings& candidates,
                                  double tau);

// Focal weights use the raw cosine clamped to [0, 1].
double focal_positive(double cosine, double gamma, double anchor_entropy);
double focal_negative(double cosine, double gamma);

// Dense P x P weights; entries for the diagonal are zero.
struct FocalWeights {
  double gamma = 0.0;
  std::size_t count = 0;
  std::vector<double> f_pos;
  std::vector<double> f_neg;
};

FocalWeights focal_weights(const SimilarityMatrix& sim, double gamma,
                           std::span<const double> anchor_entropy);

struct HardNegative {
  std::size_t index = 0;
  double cosine = 0.0;
};

// Per anchor, at most K different-class teacher patches, cosine descending
// (ties to the lower index).
struct HardNegativeSet {
  std::vector<std::vector<HardNegative>> per_anchor;
};

HardNegativeSet topk_hard_negatives(const PatchEmbeddings& student, const PatchEmbeddings& teacher,
                                    int top_k);

// --- loss ------------------------------------------------------------------------

struct FeclOptions {
  double tau = 0.6;
  double gamma = 0.5;
  int top_k = 16;

  void validate() const;
};

// Everything held constant across one step: pair sets, focal weights, the
// hard-negative selection, and the anchor entropies they were built from.
struct FeclPlan {
  std::size_t patches = 0;
  std::size_t dim = 0;
  double tau = 1.0;
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;
  // P x P: f_pos on same-class pairs, f_neg on different-class pairs.
  std::vector<double> pair_weight;
  HardNegativeSet hard;
  std::size_t contributing_anchors = 0;
  bool degenerate = false;
};

FeclPlan fecl_plan(const PatchEmbeddings& student, const PatchEmbeddings& teacher,
                   const FeclOptions& options, std::span<const double> anchor_entropy);

struct FeclResult {
  double loss = 0.0;
  bool degenerate = false;
  std::size_t contributing_anchors = 0;
  std::vector<double> grad_student;  // P x E, empty unless requested
};

// Loss (and gradient w.r.t. the student vectors) with every plan quantity frozen.
FeclResult fecl_evaluate(const FeclPlan& plan, std::span<const double> student,
                         std::span<const double> teacher, bool with_grad);

FeclResult fecl_forward(const PatchEmbeddings& student, const PatchEmbeddings& teacher,
                        const FeclOptions& options, std::span<const double> anchor_entropy);
FeclResult fecl_grad(const PatchEmbeddings& student, const PatchEmbeddings& teacher,
                     const FeclOptions& options, std::span<const double> anchor_entropy);

}  // namespace dycon
