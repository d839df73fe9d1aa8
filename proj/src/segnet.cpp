#include "dycon/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "dycon/error.hpp"

namespace dycon {

namespace {

constexpr int kTaps = 27;

struct Range {
  std::size_t lo, hi;
};

// Output indices o in [lo, hi) whose input o + shift is inside [0, extent).
Range valid_range(std::size_t extent, long shift) {
  const long n = static_cast<long>(extent);
  const long lo = std::max(0L, -shift);
  const long hi = std::min(n, n - shift);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct Tap {
  long di, dj, dk;
};

std::array<Tap, kTaps> taps(int dilation) {
  std::array<Tap, kTaps> t{};
  int idx = 0;
  for (long a = -1; a <= 1; ++a)
    for (long b = -1; b <= 1; ++b)
      for (long c = -1; c <= 1; ++c) t[idx++] = {a * dilation, b * dilation, c * dilation};
  return t;
}

// Calls row(out_row_offset, in_row_offset, k_lo, k_hi) for every (i, j) row
// where the tap lands inside the grid.
template <typename Fn>
void for_each_tap_row(const Dims3& g, const Tap& tap, Fn&& row) {
  const Range ri = valid_range(g.h, tap.di);
  const Range rj = valid_range(g.w, tap.dj);
  const Range rk = valid_range(g.d, tap.dk);
  if (rk.hi <= rk.lo) return;
  for (std::size_t i = ri.lo; i < ri.hi; ++i) {
    for (std::size_t j = rj.lo; j < rj.hi; ++j) {
      const std::size_t out_off = g.index(i, j, 0);
      const std::size_t in_off = g.index(static_cast<std::size_t>(static_cast<long>(i) + tap.di),
                                         static_cast<std::size_t>(static_cast<long>(j) + tap.dj), 0);
      row(out_off, in_off, rk.lo, rk.hi, tap.dk);
    }
  }
}

// out[o] += Σ_i Σ_tap w[o, i, tap] · in[i](shifted)
void conv3_forward(const double* in, int cin, const Dims3& g, const double* w, int cout,
                   int dilation, double* out) {
  const std::size_t n = g.count();
  const auto tp = taps(dilation);
  for (int o = 0; o < cout; ++o) {
    double* dst = out + static_cast<std::size_t>(o) * n;
    for (int i = 0; i < cin; ++i) {
      const double* src = in + static_cast<std::size_t>(i) * n;
      for (int t = 0; t < kTaps; ++t) {
        const double wv = w[(static_cast<std::size_t>(o) * cin + i) * kTaps + t];
        for_each_tap_row(g, tp[t], [&](std::size_t oo, std::size_t io, std::size_t lo,
                                       std::size_t hi, long dk) {
          double* d = dst + oo;
          const double* s = src + io + dk;
          for (std::size_t k = lo; k < hi; ++k) d[k] += wv * s[k];
        });
      }
    }
  }
}

// Accumulates weight gradients and (optionally) input gradients.
void conv3_backward(const double* in, int cin, const Dims3& g, const double* w, int cout,
                    int dilation, const double* gout, double* gw, double* gin) {
  const std::size_t n = g.count();
  const auto tp = taps(dilation);
  for (int o = 0; o < cout; ++o) {
    const double* go = gout + static_cast<std::size_t>(o) * n;
    for (int i = 0; i < cin; ++i) {
      const double* src = in + static_cast<std::size_t>(i) * n;
      double* gsrc = gin ? gin + static_cast<std::size_t>(i) * n : nullptr;
      for (int t = 0; t < kTaps; ++t) {
        const std::size_t widx = (static_cast<std::size_t>(o) * cin + i) * kTaps + t;
        const double wv = w[widx];
        double acc = 0.0;
        for_each_tap_row(g, tp[t], [&](std::size_t oo, std::size_t io, std::size_t lo,
                                       std::size_t hi, long dk) {
          const double* gg = go + oo;
          const double* s = src + io + dk;
          for (std::size_t k = lo; k < hi; ++k) acc += gg[k] * s[k];
          if (gsrc) {
            double* gs = gsrc + io + dk;
            for (std::size_t k = lo; k < hi; ++k) gs[k] += wv * gg[k];
          }
        });
        gw[widx] += acc;
      }
    }
  }
}

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw DivergedError(std::string("non-finite value in ") + what);
}

}  // namespace

void NetConfig::validate() const {
  if (features < 1 || embed_dim < 1 || classes < 2)
    throw ParameterError("network config needs features >= 1, embed_dim >= 1, classes >= 2");
}

ParamSet ParamSet::zeros(const NetConfig& config) {
  config.validate();
  const auto f = static_cast<std::size_t>(config.features);
  const auto e = static_cast<std::size_t>(config.embed_dim);
  const auto c = static_cast<std::size_t>(config.classes);
  ParamSet p;
  p.config = config;
  p.conv1_w.assign(f * kTaps, 0.0);
  p.conv1_b.assign(f, 0.0);
  p.conv2_w.assign(c * f, 0.0);
  p.conv2_b.assign(c, 0.0);
  p.proj1_w.assign(e * f * kTaps, 0.0);
  p.proj2_w.assign(e * f * kTaps, 0.0);
  p.proj_b.assign(e, 0.0);
  return p;
}

ParamSet ParamSet::initialize(const NetConfig& config, std::uint64_t seed) {
  ParamSet p = zeros(config);
  std::mt19937_64 rng(seed);
  auto fill = [&](std::vector<double>& w, double fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double& x : w) x = dist(rng);
  };
  fill(p.conv1_w, kTaps);
  fill(p.conv2_w, config.features);
  fill(p.proj1_w, 2.0 * kTaps * config.features);
  fill(p.proj2_w, 2.0 * kTaps * config.features);
  return p;
}

std::array<std::vector<double>*, ParamSet::kTensorCount> ParamSet::tensors() {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &proj1_w, &proj2_w, &proj_b};
}

std::array<const std::vector<double>*, ParamSet::kTensorCount> ParamSet::tensors() const {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &proj1_w, &proj2_w, &proj_b};
}

const std::array<const char*, ParamSet::kTensorCount>& ParamSet::tensor_names() {
  static const std::array<const char*, kTensorCount> names = {
      "conv1_w", "conv1_b", "conv2_w", "conv2_b", "proj1_w", "proj2_w", "proj_b"};
  return names;
}

std::array<Shape, ParamSet::kTensorCount> ParamSet::tensor_shapes() const {
  const auto f = static_cast<std::size_t>(config.features);
  const auto e = static_cast<std::size_t>(config.embed_dim);
  const auto c = static_cast<std::size_t>(config.classes);
  return {Shape{f, 1, {3, 3, 3}}, Shape{f, 1, {1, 1, 1}}, Shape{c, f, {1, 1, 1}},
          Shape{c, 1, {1, 1, 1}}, Shape{e, f, {3, 3, 3}}, Shape{e, f, {3, 3, 3}},
          Shape{e, 1, {1, 1, 1}}};
}

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

ProbabilityField ForwardCache::probabilities() const { return ProbabilityField(prob_shape(), probs); }

ForwardCache forward(const ParamSet& params, std::span<const double> input, std::size_t batch,
                     Dims3 spatial, bool with_projection) {
  const NetConfig& cfg = params.config;
  if (spatial.h < 3 || spatial.w < 3 || spatial.d < 3)
    throw ContractError("forward: every spatial dim must be >= 3");
  if (input.size() != batch * spatial.count())
    throw ContractError("forward: expected a single-channel input of matching size");

  const std::size_t n = spatial.count();
  const auto F = static_cast<std::size_t>(cfg.features);
  const auto C = static_cast<std::size_t>(cfg.classes);
  const auto E = static_cast<std::size_t>(cfg.embed_dim);

  ForwardCache cache;
  cache.batch = batch;
  cache.spatial = spatial;
  cache.classes = cfg.classes;
  cache.features = cfg.features;
  cache.embed_dim = cfg.embed_dim;
  cache.input.assign(input.begin(), input.end());
  cache.hidden.assign(batch * F * n, 0.0);
  cache.logits.assign(batch * C * n, 0.0);
  cache.probs.assign(batch * C * n, 0.0);
  if (with_projection) cache.z_grid.assign(batch * E * n, 0.0);

  for (std::size_t b = 0; b < batch; ++b) {
    double* h = cache.hidden.data() + b * F * n;
    for (std::size_t f = 0; f < F; ++f) std::fill(h + f * n, h + (f + 1) * n, params.conv1_b[f]);
    conv3_forward(cache.input.data() + b * n, 1, spatial, params.conv1_w.data(), cfg.features, 1, h);
    for (std::size_t i = 0; i < F * n; ++i) h[i] = h[i] > 0.0 ? h[i] : 0.0;

    double* lg = cache.logits.data() + b * C * n;
    for (std::size_t c = 0; c < C; ++c) {
      double* out = lg + c * n;
      std::fill(out, out + n, params.conv2_b[c]);
      for (std::size_t f = 0; f < F; ++f) {
        const double w = params.conv2_w[c * F + f];
        const double* src = h + f * n;
        for (std::size_t v = 0; v < n; ++v) out[v] += w * src[v];
      }
    }

    double* pr = cache.probs.data() + b * C * n;
    for (std::size_t v = 0; v < n; ++v) {
      double top = lg[v];
      for (std::size_t c = 1; c < C; ++c) top = std::max(top, lg[c * n + v]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        pr[c * n + v] = std::exp(lg[c * n + v] - top);
        z += pr[c * n + v];
      }
      for (std::size_t c = 0; c < C; ++c) pr[c * n + v] /= z;
    }

    if (with_projection) {
      double* zg = cache.z_grid.data() + b * E * n;
      for (std::size_t e = 0; e < E; ++e) std::fill(zg + e * n, zg + (e + 1) * n, params.proj_b[e]);
      conv3_forward(h, cfg.features, spatial, params.proj1_w.data(), cfg.embed_dim, 1, zg);
      conv3_forward(h, cfg.features, spatial, params.proj2_w.data(), cfg.embed_dim, 2, zg);
    }
  }
  return cache;
}

ForwardCache forward(const ParamSet& params, const VolumeBatch& x, bool with_projection) {
  if (x.shape().channels != 1) throw ContractError("forward: input must be single-channel");
  std::vector<double> in(x.data().begin(), x.data().end());
  return forward(params, in, x.shape().batch, x.shape().spatial, with_projection);
}

ParamSet backward(const ParamSet& params, const ForwardCache& cache,
                  std::span<const double> grad_probs, std::span<const double> grad_z) {
  if (cache.empty()) throw ContractError("backward: forward cache missing");
  const NetConfig& cfg = params.config;
  if (cache.classes != cfg.classes || cache.features != cfg.features ||
      cache.embed_dim != cfg.embed_dim)
    throw ContractError("backward: cache was produced by a different architecture");
  const std::size_t n = cache.spatial.count();
  const auto F = static_cast<std::size_t>(cfg.features);
  const auto C = static_cast<std::size_t>(cfg.classes);
  const auto E = static_cast<std::size_t>(cfg.embed_dim);
  if (!grad_probs.empty() && grad_probs.size() != cache.probs.size())
    throw ContractError("backward: probability gradient size mismatch");
  if (!grad_z.empty() && (cache.z_grid.empty() || grad_z.size() != cache.z_grid.size()))
    throw ContractError("backward: embedding gradient needs a projection cache of matching size");

  ParamSet g = ParamSet::zeros(cfg);
  std::vector<double> dh(F * n);
  std::vector<double> dlogit(C * n);

  for (std::size_t b = 0; b < cache.batch; ++b) {
    const double* h = cache.hidden.data() + b * F * n;
    std::fill(dh.begin(), dh.end(), 0.0);

    if (!grad_probs.empty()) {
      const double* p = cache.probs.data() + b * C * n;
      const double* gp = grad_probs.data() + b * C * n;
      for (std::size_t v = 0; v < n; ++v) {
        double dotp = 0.0;
        for (std::size_t c = 0; c < C; ++c) dotp += p[c * n + v] * gp[c * n + v];
        for (std::size_t c = 0; c < C; ++c)
          dlogit[c * n + v] = p[c * n + v] * (gp[c * n + v] - dotp);
      }
      for (std::size_t c = 0; c < C; ++c) {
        const double* dl = dlogit.data() + c * n;
        double bias = 0.0;
        for (std::size_t v = 0; v < n; ++v) bias += dl[v];
        g.conv2_b[c] += bias;
        for (std::size_t f = 0; f < F; ++f) {
          const double* src = h + f * n;
          double acc = 0.0;
          for (std::size_t v = 0; v < n; ++v) acc += dl[v] * src[v];
          g.conv2_w[c * F + f] += acc;
          const double w = params.conv2_w[c * F + f];
          double* d = dh.data() + f * n;
          for (std::size_t v = 0; v < n; ++v) d[v] += w * dl[v];
        }
      }
    }

    if (!grad_z.empty()) {
      const double* gz = grad_z.data() + b * E * n;
      for (std::size_t e = 0; e < E; ++e) {
        double bias = 0.0;
        for (std::size_t v = 0; v < n; ++v) bias += gz[e * n + v];
        g.proj_b[e] += bias;
      }
      conv3_backward(h, cfg.features, cache.spatial, params.proj1_w.data(), cfg.embed_dim, 1, gz,
                     g.proj1_w.data(), dh.data());
      conv3_backward(h, cfg.features, cache.spatial, params.proj2_w.data(), cfg.embed_dim, 2, gz,
                     g.proj2_w.data(), dh.data());
    }

    for (std::size_t i = 0; i < F * n; ++i)
      if (!(h[i] > 0.0)) dh[i] = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
      double bias = 0.0;
      for (std::size_t v = 0; v < n; ++v) bias += dh[f * n + v];
      g.conv1_b[f] += bias;
    }
    conv3_backward(cache.input.data() + b * n, 1, cache.spatial, params.conv1_w.data(),
                   cfg.features, 1, dh.data(), g.conv1_w.data(), nullptr);
  }
  return g;
}

LabelField predict_labels(const ForwardCache& cache) {
  if (cache.empty()) throw ContractError("predict_labels: forward cache missing");
  const std::size_t n = cache.spatial.count();
  const auto C = static_cast<std::size_t>(cache.classes);
  std::vector<std::int32_t> out(cache.batch * n);
  for (std::size_t b = 0; b < cache.batch; ++b) {
    const double* p = cache.probs.data() + b * C * n;
    for (std::size_t v = 0; v < n; ++v) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (p[c * n + v] > p[best * n + v]) best = c;
      out[b * n + v] = static_cast<std::int32_t>(best);
    }
  }
  return LabelField(cache.batch, cache.spatial, std::move(out), cache.classes);
}

OptimState OptimState::for_params(const ParamSet& params, double lr, double momentum,
                                  double weight_decay) {
  if (!(lr > 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0))
    throw ParameterError("SGD needs lr > 0, momentum in [0, 1), weight_decay >= 0");
  OptimState s;
  s.lr = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.velocity = ParamSet::zeros(params.config);
  return s;
}

void sgd_step(ParamSet& params, const ParamSet& grads, OptimState& opt) {
  if (!(grads.config == params.config) || !(opt.velocity.config == params.config))
    throw ContractError("sgd_step: parameter, gradient and momentum shapes differ");
  for (const auto* t : grads.tensors()) check_finite(*t, "gradient");
  // Work on copies so a step that overflows leaves the state untouched.
  ParamSet next = params;
  ParamSet next_v = opt.velocity;
  auto theta = next.tensors();
  auto grad = grads.tensors();
  auto vel = next_v.tensors();
  for (std::size_t t = 0; t < ParamSet::kTensorCount; ++t) {
    auto& th = *theta[t];
    const auto& gr = *grad[t];
    auto& v = *vel[t];
    for (std::size_t i = 0; i < th.size(); ++i) {
      v[i] = opt.momentum * v[i] + gr[i] + opt.weight_decay * th[i];
      th[i] -= opt.lr * v[i];
    }
    check_finite(th, "updated parameters");
  }
  params = std::move(next);
  opt.velocity = std::move(next_v);
}

void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("EMA decay must lie in [0, 1]");
  if (!(teacher.config == student.config)) throw ContractError("ema_update: architectures differ");
  auto dst = teacher.tensors();
  auto src = student.tensors();
  for (std::size_t t = 0; t < ParamSet::kTensorCount; ++t) {
    auto& th = *dst[t];
    const auto& s = *src[t];
    for (std::size_t i = 0; i < th.size(); ++i) th[i] = alpha * th[i] + (1.0 - alpha) * s[i];
  }
}

void save_checkpoint(const std::filesystem::path& dir, const ParamSet& params,
                     const CheckpointMeta& meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string());
  const auto shapes = params.tensor_shapes();
  const auto tensors = params.tensors();
  nlohmann::json files = nlohmann::json::object();
  for (std::size_t t = 0; t < ParamSet::kTensorCount; ++t) {
    std::vector<float> data(tensors[t]->begin(), tensors[t]->end());
    write_volume(VolumeBatch(shapes[t], std::move(data)), dir / ParamSet::tensor_names()[t]);
    files[ParamSet::tensor_names()[t]] = std::string(ParamSet::tensor_names()[t]) + ".json";
  }
  nlohmann::json manifest = {
      {"arch", meta.arch},
      {"F", params.config.features},
      {"E", params.config.embed_dim},
      {"C", params.config.classes},
      {"epoch", meta.epoch},
      {"rng_seed", meta.rng_seed},
      {"tensors", files},
  };
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
}

ParamSet load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  NetConfig cfg;
  CheckpointMeta m;
  try {
    is >> manifest;
    cfg.features = manifest.at("F").get<int>();
    cfg.embed_dim = manifest.at("E").get<int>();
    cfg.classes = manifest.at("C").get<int>();
    m.arch = manifest.at("arch").get<std::string>();
    m.epoch = manifest.at("epoch").get<int>();
    m.rng_seed = manifest.at("rng_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  ParamSet p = ParamSet::zeros(cfg);
  const auto shapes = p.tensor_shapes();
  auto tensors = p.tensors();
  for (std::size_t t = 0; t < ParamSet::kTensorCount; ++t) {
    const auto v = read_volume_batch(dir / ParamSet::tensor_names()[t]);
    if (!(v.shape() == shapes[t]))
      throw CorruptFileError(std::string("checkpoint tensor ") + ParamSet::tensor_names()[t] +
                             " has shape " + to_string(v.shape()));
    tensors[t]->assign(v.data().begin(), v.data().end());
  }
  if (meta) *meta = m;
  return p;
}

}  // namespace dycon
