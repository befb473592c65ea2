// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/nn.hpp"

#include "cmst/error.hpp"
#include "cmst/random.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cmst::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// ---------------------------------------------------------------------------
// Tensor

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  for (auto d : shape)
    if (d == 0)
      throw ShapeError("tensor dimensions must be positive");
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (product(shape_) != values_.size())
    throw ShapeError("tensor shape " + shape_string() + " does not match " +
                     std::to_string(values_.size()) + " values");
}

void Tensor::reshape(std::vector<std::size_t> shape) {
  check_shape(shape);
  if (product(shape) != values_.size())
    throw ShapeError("cannot reshape " + shape_string() + " to a different element count");
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i)
    os << (i ? ", " : "") << shape_[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Layer specs and architecture

const char* to_string(LayerKind kind) {
  switch (kind) {
  case LayerKind::conv1d: return "conv1d";
  case LayerKind::batchnorm: return "batchnorm";
  case LayerKind::relu: return "relu";
  case LayerKind::tanh: return "tanh";
  case LayerKind::maxpool1d: return "maxpool1d";
  case LayerKind::dropout: return "dropout";
  case LayerKind::dense: return "dense";
  case LayerKind::softmax: return "softmax";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::conv1d, LayerKind::batchnorm, LayerKind::relu, LayerKind::tanh,
                 LayerKind::maxpool1d, LayerKind::dropout, LayerKind::dense, LayerKind::softmax})
    if (name == to_string(k))
      return k;
  throw InvalidArgument("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv1d(std::size_t filters, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::conv1d;
  s.filters = filters;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::batchnorm() {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::relu;
  return s;
}

LayerSpec LayerSpec::tanh() {
  LayerSpec s;
  s.kind = LayerKind::tanh;
  return s;
}

LayerSpec LayerSpec::maxpool1d(std::size_t width) {
  LayerSpec s;
  s.kind = LayerKind::maxpool1d;
  s.pool = width;
  return s;
}

LayerSpec LayerSpec::dropout_layer(double p) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.dropout = p;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t units, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  return s;
}

void LayerSpec::validate() const {
  switch (kind) {
  case LayerKind::conv1d:
    if (filters < 1)
      throw InvalidArgument("conv1d filter count must be >= 1");
    if (kernel < 1)
      throw InvalidArgument("conv1d kernel length must be >= 1");
    if (stride < 1)
      throw InvalidArgument("conv1d stride must be >= 1");
    break;
  case LayerKind::maxpool1d:
    if (pool < 1)
      throw InvalidArgument("maxpool1d width must be >= 1");
    break;
  case LayerKind::dropout:
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw InvalidArgument("dropout probability must lie in [0, 1)");
    break;
  case LayerKind::dense:
    if (units < 1)
      throw InvalidArgument("dense neuron count must be >= 1");
    break;
  default:
    break;
  }
}

std::vector<ActShape> Architecture::shapes() const {
  if (input.channels == 0 || input.length == 0)
    throw ShapeError("architecture input shape must be positive");
  std::vector<ActShape> out;
  out.reserve(layers.size());
  ActShape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    l.validate();
    auto fail = [&](const std::string& why) {
      return ShapeError("layer " + std::to_string(i) + " (" + to_string(l.kind) + "): " + why);
    };
    switch (l.kind) {
    case LayerKind::conv1d: {
      const std::size_t padded = cur.length + 2 * l.padding;
      if (padded < l.kernel)
        throw fail("input length " + std::to_string(cur.length) + " shorter than kernel " +
                   std::to_string(l.kernel));
      cur = {l.filters, (padded - l.kernel) / l.stride + 1};
      break;
    }
    case LayerKind::maxpool1d:
      if (cur.length / l.pool < 1)
        throw fail("input length " + std::to_string(cur.length) + " shorter than pool width " +
                   std::to_string(l.pool));
      cur.length /= l.pool;
      break;
    case LayerKind::dense:
      cur = {l.units, 1};
      break;
    case LayerKind::softmax:
      if (cur.length != 1)
        throw fail("softmax expects a flat [units] input");
      break;
    default:
      break;
    }
    out.push_back(cur);
  }
  return out;
}

ActShape Architecture::output() const {
  auto s = shapes();
  return s.empty() ? input : s.back();
}

bool Architecture::dense_only() const {
  return std::all_of(layers.begin(), layers.end(), [](const LayerSpec& l) {
    return l.kind == LayerKind::dense || l.kind == LayerKind::tanh || l.kind == LayerKind::relu;
  });
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& t : l.trainable)
      n += t.size();
  return n;
}

std::vector<double> Network::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers)
    for (const auto& t : l.trainable)
      flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

void Network::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count())
    throw ShapeError("expected " + std::to_string(parameter_count()) + " parameters, got " +
                     std::to_string(flat.size()));
  std::size_t off = 0;
  for (auto& l : layers)
    for (auto& t : l.trainable) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data());
      off += t.size();
    }
}

std::vector<double> flatten(const Gradients& grads) {
  std::vector<double> flat;
  for (const auto& l : grads)
    for (const auto& t : l)
      flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

Gradients zeros_like(const Network& net) {
  Gradients g(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    for (const auto& t : net.layers[i].trainable)
      g[i].emplace_back(t.shape(), 0.0);
  return g;
}

Network init_network(const Architecture& arch, std::uint64_t seed, Init init) {
  const auto shapes = arch.shapes();
  Network net;
  net.arch = arch;
  net.layers.resize(arch.layers.size());
  Rng rng(seed);

  auto fill = [&](Tensor& w, std::size_t fan_in, std::size_t fan_out) {
    const double limit = init == Init::glorot_uniform
                             ? std::sqrt(6.0 / static_cast<double>(fan_in + fan_out))
                             : 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : w.values())
      v = dist(rng);
  };

  ActShape in = arch.input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& spec = arch.layers[i];
    auto& p = net.layers[i];
    switch (spec.kind) {
    case LayerKind::conv1d: {
      Tensor w({spec.filters, in.channels, spec.kernel});
      fill(w, in.channels * spec.kernel, spec.filters * spec.kernel);
      p.trainable = {std::move(w), Tensor({spec.filters}, 0.0)};
      break;
    }
    case LayerKind::dense: {
      Tensor w({spec.units, in.size()});
      fill(w, in.size(), spec.units);
      p.trainable.push_back(std::move(w));
      if (spec.bias)
        p.trainable.emplace_back(std::vector<std::size_t>{spec.units}, 0.0);
      break;
    }
    case LayerKind::batchnorm:
      p.trainable = {Tensor({in.channels}, 1.0), Tensor({in.channels}, 0.0)};
      p.running = {Tensor({in.channels}, 0.0), Tensor({in.channels}, 1.0)};
      break;
    default:
      break;
    }
    in = shapes[i];
  }
  return net;
}

// ---------------------------------------------------------------------------
// Layer kernels. Every activation is [batch, channels, length].

namespace {

struct Dims {
  std::size_t batch, channels, length;
};

Dims dims_of(const Tensor& t) { return {t.dim(0), t.dim(1), t.dim(2)}; }

void conv_forward(const LayerSpec& s, const LayerParams& p, const Tensor& in, Tensor& out) {
  const auto [B, C, L] = dims_of(in);
  const std::size_t F = s.filters, K = s.kernel, S = s.stride, P = s.padding;
  const std::size_t T = (L + 2 * P - K) / S + 1;
  out = Tensor({B, F, T});
  const double* w = p.trainable[0].data();
  const double* bias = p.trainable[1].data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      double* o = out.data() + (b * F + f) * T;
      std::fill_n(o, T, bias[f]);
      for (std::size_t c = 0; c < C; ++c) {
        const double* x = in.data() + (b * C + c) * L;
        for (std::size_t k = 0; k < K; ++k) {
          const double wv = w[(f * C + c) * K + k];
          // output t reads input t*S + k - P; keep it inside [0, L)
          const std::size_t t0 = k >= P ? 0 : (P - k + S - 1) / S;
          if (L + P <= k)
            continue;
          const std::size_t t1 = std::min(T, (L - 1 + P - k) / S + 1);
          if (t0 >= t1)
            continue;
          if (S == 1) {
            const double* xs = x + (t0 + k - P);
            double* os = o + t0;
            for (std::size_t j = 0; j < t1 - t0; ++j)
              os[j] += wv * xs[j];
          } else {
            for (std::size_t t = t0; t < t1; ++t)
              o[t] += wv * x[t * S + k - P];
          }
        }
      }
    }
  }
}

void conv_backward(const LayerSpec& s, const LayerParams& p, const Tensor& in, const Tensor& g,
                   std::vector<Tensor>& grads, Tensor* gin) {
  const auto [B, C, L] = dims_of(in);
  const std::size_t F = s.filters, K = s.kernel, S = s.stride, P = s.padding;
  const std::size_t T = g.dim(2);
  const double* w = p.trainable[0].data();
  double* gw = grads[0].data();
  double* gb = grads[1].data();
  if (gin)
    *gin = Tensor(in.shape(), 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      const double* go = g.data() + (b * F + f) * T;
      double sum = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        sum += go[t];
      gb[f] += sum;
      for (std::size_t c = 0; c < C; ++c) {
        const double* x = in.data() + (b * C + c) * L;
        double* gx = gin ? gin->data() + (b * C + c) * L : nullptr;
        for (std::size_t k = 0; k < K; ++k) {
          if (L + P <= k)
            continue;
          const std::size_t t0 = k >= P ? 0 : (P - k + S - 1) / S;
          const std::size_t t1 = std::min(T, (L - 1 + P - k) / S + 1);
          const std::size_t wi = (f * C + c) * K + k;
          double acc = 0.0;
          if (t0 >= t1)
            continue;
          if (S == 1) {
            const std::size_t n = t1 - t0;
            const double* xs = x + (t0 + k - P);
            const double* gs = go + t0;
            for (std::size_t j = 0; j < n; ++j)
              acc += gs[j] * xs[j];
            if (gx) {
              double* gxs = gx + (t0 + k - P);
              const double wv = w[wi];
              for (std::size_t j = 0; j < n; ++j)
                gxs[j] += wv * gs[j];
            }
          } else {
            for (std::size_t t = t0; t < t1; ++t)
              acc += go[t] * x[t * S + k - P];
            if (gx)
              for (std::size_t t = t0; t < t1; ++t)
                gx[t * S + k - P] += w[wi] * go[t];
          }
          gw[wi] += acc;
        }
      }
    }
  }
}

void batchnorm_forward(LayerParams& p, const Tensor& in, Tensor& out, LayerCache& cache, Mode mode) {
  const auto [B, C, L] = dims_of(in);
  const double* gamma = p.trainable[0].data();
  const double* beta = p.trainable[1].data();
  out = Tensor(in.shape());
  cache.normalized.assign(in.size(), 0.0);
  cache.inv_std.assign(C, 0.0);
  const double n = static_cast<double>(B * L);
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t)
          sum += in[(b * C + c) * L + t];
      mean = sum / n;
      double sq = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) {
          const double d = in[(b * C + c) * L + t] - mean;
          sq += d * d;
        }
      var = sq / n;
      auto& rm = p.running[0][c];
      auto& rv = p.running[1][c];
      rm = kBatchNormMomentum * rm + (1.0 - kBatchNormMomentum) * mean;
      rv = kBatchNormMomentum * rv + (1.0 - kBatchNormMomentum) * var;
    } else {
      mean = p.running[0][c];
      var = p.running[1][c];
    }
    const double inv = 1.0 / std::sqrt(var + kBatchNormEpsilon);
    cache.inv_std[c] = inv;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (b * C + c) * L + t;
        const double xh = (in[i] - mean) * inv;
        cache.normalized[i] = xh;
        out[i] = gamma[c] * xh + beta[c];
      }
  }
}

void batchnorm_backward(const LayerParams& p, const LayerCache& cache, const Tensor& g, Mode mode,
                        std::vector<Tensor>& grads, Tensor* gin) {
  const auto [B, C, L] = dims_of(g);
  const double* gamma = p.trainable[0].data();
  const double n = static_cast<double>(B * L);
  if (gin)
    *gin = Tensor(g.shape(), 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (b * C + c) * L + t;
        sum_g += g[i];
        sum_gx += g[i] * cache.normalized[i];
      }
    grads[0][c] += sum_gx;
    grads[1][c] += sum_g;
    if (!gin)
      continue;
    const double inv = cache.inv_std[c];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (b * C + c) * L + t;
        if (mode == Mode::train)
          (*gin)[i] = gamma[c] * inv / n * (n * g[i] - sum_g - cache.normalized[i] * sum_gx);
        else
          (*gin)[i] = gamma[c] * inv * g[i];
      }
  }
}

void maxpool_forward(const LayerSpec& s, const Tensor& in, Tensor& out, LayerCache& cache) {
  const auto [B, C, L] = dims_of(in);
  const std::size_t W = s.pool, T = L / W;
  out = Tensor({B, C, T});
  cache.argmax.resize(out.size());
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* x = in.data() + bc * L;
    for (std::size_t t = 0; t < T; ++t) {
      std::size_t best = t * W;
      for (std::size_t j = t * W + 1; j < (t + 1) * W; ++j)
        if (x[j] > x[best])
          best = j;
      out[bc * T + t] = x[best];
      cache.argmax[bc * T + t] = static_cast<std::uint32_t>(bc * L + best);
    }
  }
}

void dense_forward(const LayerSpec& s, const LayerParams& p, const Tensor& in, Tensor& out) {
  const std::size_t B = in.dim(0);
  const std::size_t I = in.size() / B;
  const std::size_t U = s.units;
  out = Tensor({B, U, 1});
  ConstMatMap x(in.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(I));
  ConstMatMap w(p.trainable[0].data(), static_cast<Eigen::Index>(U), static_cast<Eigen::Index>(I));
  MatMap y(out.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(U));
  y.noalias() = x * w.transpose();
  if (s.bias)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t u = 0; u < U; ++u)
        out[b * U + u] += p.trainable[1][u];
}

void dense_backward(const LayerSpec& s, const LayerParams& p, const Tensor& in, const Tensor& g,
                    std::vector<Tensor>& grads, Tensor* gin) {
  const std::size_t B = in.dim(0);
  const std::size_t I = in.size() / B;
  const std::size_t U = s.units;
  ConstMatMap x(in.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(I));
  ConstMatMap gy(g.data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(U));
  MatMap gw(grads[0].data(), static_cast<Eigen::Index>(U), static_cast<Eigen::Index>(I));
  gw.noalias() += gy.transpose() * x;
  if (s.bias)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t u = 0; u < U; ++u)
        grads[1][u] += g[b * U + u];
  if (gin) {
    *gin = Tensor(in.shape(), 0.0);
    ConstMatMap w(p.trainable[0].data(), static_cast<Eigen::Index>(U), static_cast<Eigen::Index>(I));
    MatMap gx(gin->data(), static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(I));
    gx.noalias() = gy * w;
  }
}

void softmax_forward(const Tensor& in, Tensor& out) {
  const std::size_t B = in.dim(0), U = in.dim(1);
  out = Tensor(in.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const double* x = in.data() + b * U;
    double* y = out.data() + b * U;
    const double mx = *std::max_element(x, x + U);
    double sum = 0.0;
    for (std::size_t u = 0; u < U; ++u) {
      y[u] = std::exp(x[u] - mx);
      sum += y[u];
    }
    for (std::size_t u = 0; u < U; ++u)
      y[u] /= sum;
  }
}

Tensor to_internal(const Architecture& arch, const Tensor& input) {
  Tensor x = input;
  if (x.rank() == 2 && arch.input.channels == 1)
    x.reshape({x.dim(0), 1, x.dim(1)});
  if (x.rank() != 3 || x.dim(1) != arch.input.channels || x.dim(2) != arch.input.length)
    throw ShapeError("input shape " + input.shape_string() + " does not match network input [batch, " +
                     std::to_string(arch.input.channels) + ", " + std::to_string(arch.input.length) + "]");
  if (!x.all_finite())
    throw InvalidArgument("network input contains non-finite values");
  return x;
}

bool squeeze_output(const Architecture& arch) {
  return std::any_of(arch.layers.begin(), arch.layers.end(),
                     [](const LayerSpec& l) { return l.kind == LayerKind::dense; }) &&
         arch.output().length == 1;
}

Tensor to_external(const Architecture& arch, Tensor out) {
  if (squeeze_output(arch))
    out.reshape({out.dim(0), out.dim(1)});
  return out;
}

Tensor run_forward(Network& net, Tensor x, Mode mode, std::uint64_t dropout_seed, ForwardCache* cache) {
  const auto& arch = net.arch;
  if (cache) {
    cache->mode = mode;
    cache->layers.assign(arch.layers.size(), {});
  }
  LayerCache scratch;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& spec = arch.layers[i];
    auto& p = net.layers[i];
    LayerCache& lc = cache ? cache->layers[i] : scratch;
    Tensor y;
    switch (spec.kind) {
    case LayerKind::conv1d:
      conv_forward(spec, p, x, y);
      break;
    case LayerKind::batchnorm:
      batchnorm_forward(p, x, y, lc, mode);
      break;
    case LayerKind::relu:
      y = x;
      for (auto& v : y.values())
        v = v > 0.0 ? v : 0.0;
      break;
    case LayerKind::tanh:
      y = x;
      for (auto& v : y.values())
        v = std::tanh(v);
      break;
    case LayerKind::maxpool1d:
      maxpool_forward(spec, x, y, lc);
      break;
    case LayerKind::dropout:
      y = x;
      if (mode == Mode::train && spec.dropout > 0.0) {
        Rng rng(derive_seed(dropout_seed, {i}));
        std::bernoulli_distribution keep(1.0 - spec.dropout);
        const double scale = 1.0 / (1.0 - spec.dropout);
        lc.mask.resize(y.size());
        for (std::size_t j = 0; j < y.size(); ++j) {
          lc.mask[j] = keep(rng) ? scale : 0.0;
          y[j] *= lc.mask[j];
        }
      } else {
        lc.mask.clear();
      }
      break;
    case LayerKind::dense:
      dense_forward(spec, p, x, y);
      break;
    case LayerKind::softmax:
      softmax_forward(x, y);
      break;
    }
    if (cache) {
      lc.input = std::move(x);
      lc.output = y;
    }
    x = std::move(y);
  }
  return x;
}

} // namespace

ForwardResult forward(Network& net, const Tensor& input, Mode mode, std::uint64_t dropout_seed) {
  ForwardResult r;
  r.output = to_external(net.arch, run_forward(net, to_internal(net.arch, input), mode, dropout_seed, &r.cache));
  return r;
}

Tensor predict(const Network& net, const Tensor& input) {
  // Infer mode never writes to the network.
  auto& mutable_net = const_cast<Network&>(net);
  return to_external(net.arch, run_forward(mutable_net, to_internal(net.arch, input), Mode::infer, 0, nullptr));
}

Gradients backward(const Network& net, ForwardCache& cache, const Tensor& output_grad) {
  if (cache.consumed_)
    throw InvalidArgument("forward cache already consumed by a previous backward pass");
  if (cache.layers.size() != net.arch.layers.size())
    throw InvalidArgument("forward cache does not belong to this network");
  cache.consumed_ = true;

  Gradients grads = zeros_like(net);
  if (cache.layers.empty())
    return grads;
  Tensor g = output_grad;
  const Tensor& last = cache.layers.back().output;
  if (g.size() != last.size())
    throw ShapeError("loss gradient shape " + output_grad.shape_string() + " does not match network output");
  g.reshape(last.shape());

  for (std::size_t ii = net.arch.layers.size(); ii-- > 0;) {
    const auto& spec = net.arch.layers[ii];
    const auto& p = net.layers[ii];
    auto& lc = cache.layers[ii];
    const bool need_input_grad = ii > 0;
    Tensor gin;
    Tensor* gin_ptr = need_input_grad ? &gin : nullptr;
    switch (spec.kind) {
    case LayerKind::conv1d:
      conv_backward(spec, p, lc.input, g, grads[ii], gin_ptr);
      break;
    case LayerKind::batchnorm:
      batchnorm_backward(p, lc, g, cache.mode, grads[ii], gin_ptr);
      break;
    case LayerKind::relu:
      gin = std::move(g);
      for (std::size_t j = 0; j < gin.size(); ++j)
        if (!(lc.input[j] > 0.0))
          gin[j] = 0.0;
      break;
    case LayerKind::tanh:
      gin = std::move(g);
      for (std::size_t j = 0; j < gin.size(); ++j)
        gin[j] *= 1.0 - lc.output[j] * lc.output[j];
      break;
    case LayerKind::maxpool1d:
      gin = Tensor(lc.input.shape(), 0.0);
      for (std::size_t j = 0; j < g.size(); ++j)
        gin[lc.argmax[j]] += g[j];
      break;
    case LayerKind::dropout:
      gin = std::move(g);
      if (!lc.mask.empty())
        for (std::size_t j = 0; j < gin.size(); ++j)
          gin[j] *= lc.mask[j];
      break;
    case LayerKind::dense:
      dense_backward(spec, p, lc.input, g, grads[ii], gin_ptr);
      break;
    case LayerKind::softmax: {
      gin = Tensor(g.shape(), 0.0);
      const std::size_t B = g.dim(0), U = g.dim(1);
      for (std::size_t b = 0; b < B; ++b) {
        const double* y = lc.output.data() + b * U;
        const double* gy = g.data() + b * U;
        double dot = 0.0;
        for (std::size_t u = 0; u < U; ++u)
          dot += gy[u] * y[u];
        for (std::size_t u = 0; u < U; ++u)
          gin[b * U + u] = y[u] * (gy[u] - dot);
      }
      break;
    }
    }
    if (!need_input_grad)
      break;
    g = std::move(gin);
    // release activations as we go
    lc = LayerCache{};
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_loss_shapes(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape())
    throw ShapeError("loss: prediction shape " + prediction.shape_string() + " != target shape " +
                     target.shape_string());
}

std::size_t batch_of(const Tensor& t) { return t.rank() >= 2 ? t.dim(0) : 1; }

void check_cross_entropy(const Tensor& prediction, const Tensor& target) {
  const std::size_t B = batch_of(target);
  const std::size_t U = target.size() / B;
  for (std::size_t b = 0; b < B; ++b) {
    int hot = 0;
    for (std::size_t u = 0; u < U; ++u) {
      const double t = target[b * U + u];
      if (t != 0.0 && t != 1.0)
        throw InvalidArgument("cross-entropy targets must be one-hot");
      hot += t == 1.0;
      const double p = prediction[b * U + u];
      if (!(p >= 0.0 && p <= 1.0 + 1e-12))
        throw InvalidArgument("cross-entropy predictions must be probabilities");
    }
    if (hot != 1)
      throw InvalidArgument("cross-entropy targets must be one-hot");
  }
}

} // namespace

double loss(LossKind kind, const Tensor& prediction, const Tensor& target) {
  check_loss_shapes(prediction, target);
  if (kind == LossKind::mse) {
    double s = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
      const double d = prediction[i] - target[i];
      s += d * d;
    }
    return s / static_cast<double>(prediction.size());
  }
  check_cross_entropy(prediction, target);
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i)
    if (target[i] != 0.0)
      s -= target[i] * std::log(std::clamp(prediction[i], kProbabilityFloor, 1.0));
  return s / static_cast<double>(batch_of(prediction));
}

Tensor loss_gradient(LossKind kind, const Tensor& prediction, const Tensor& target) {
  check_loss_shapes(prediction, target);
  Tensor g(prediction.shape(), 0.0);
  if (kind == LossKind::mse) {
    const double scale = 2.0 / static_cast<double>(prediction.size());
    for (std::size_t i = 0; i < prediction.size(); ++i)
      g[i] = scale * (prediction[i] - target[i]);
    return g;
  }
  check_cross_entropy(prediction, target);
  const double inv_batch = 1.0 / static_cast<double>(batch_of(prediction));
  for (std::size_t i = 0; i < prediction.size(); ++i)
    if (target[i] != 0.0 && prediction[i] > kProbabilityFloor)
      g[i] = -target[i] / prediction[i] * inv_batch;
  return g;
}

Gradients finite_diff_gradient(const Network& net, const Tensor& input, const Tensor& target,
                               LossKind loss_kind, double h, Mode mode, std::uint64_t dropout_seed) {
  if (!(h >= 1e-7 && h <= 1e-3))
    throw InvalidArgument("finite-difference step must lie in [1e-7, 1e-3]");
  Network work = net;
  Gradients grads = zeros_like(net);
  auto eval = [&] {
    // a fresh copy keeps running statistics identical across evaluations
    Network probe = work;
    return loss(loss_kind, forward(probe, input, mode, dropout_seed).output, target);
  };
  for (std::size_t l = 0; l < work.layers.size(); ++l)
    for (std::size_t t = 0; t < work.layers[l].trainable.size(); ++t) {
      auto& param = work.layers[l].trainable[t];
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double orig = param[i];
        param[i] = orig + h;
        const double up = eval();
        param[i] = orig - h;
        const double down = eval();
        param[i] = orig;
        grads[l][t][i] = (up - down) / (2.0 * h);
      }
    }
  return grads;
}

Tensor make_batch(const ActShape& input, std::span<const double> rows, std::span<const std::size_t> indices) {
  const std::size_t F = input.size();
  if (rows.size() % F != 0)
    throw ShapeError("sample matrix width does not match network input size " + std::to_string(F));
  const std::size_t n = rows.size() / F;
  Tensor t({indices.size(), input.channels, input.length});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= n)
      throw InvalidArgument("batch index out of range");
    std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(indices[b] * F), F, t.data() + b * F);
  }
  return t;
}

} // namespace cmst::nn
