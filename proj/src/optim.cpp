// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/optim.hpp"

#include "cmst/error.hpp"
#include "cmst/json_keys.hpp"
#include "cmst/random.hpp"
#include "cmst/text.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace cmst::optim {

using nn::LayerKind;
using nn::Network;
using nn::Tensor;

SampleSet SampleSet::subset(std::span<const std::size_t> rows) const {
  const std::size_t iw = input_width(), tw = target_width();
  SampleSet out;
  out.count = rows.size();
  out.inputs.reserve(rows.size() * iw);
  out.targets.reserve(rows.size() * tw);
  for (auto r : rows) {
    if (r >= count)
      throw InvalidArgument("sample index out of range");
    out.inputs.insert(out.inputs.end(), inputs.begin() + static_cast<std::ptrdiff_t>(r * iw),
                      inputs.begin() + static_cast<std::ptrdiff_t>((r + 1) * iw));
    out.targets.insert(out.targets.end(), targets.begin() + static_cast<std::ptrdiff_t>(r * tw),
                       targets.begin() + static_cast<std::ptrdiff_t>((r + 1) * tw));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

nlohmann::json to_json(const AdamConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},           {"beta2", c.beta2},
          {"epsilon", c.epsilon},             {"batch_size", c.batch_size}};
}

AdamConfig adam_config_from_json(const nlohmann::json& j, AdamConfig c) {
  try {
    check_keys(j, {"learning_rate", "beta1", "beta2", "epsilon", "batch_size"}, "adam config");
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("adam config: ") + e.what());
  }
  if (!(c.learning_rate > 0.0) || !(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0) ||
      !(c.epsilon > 0.0) || c.batch_size < 1)
    throw ConfigError("adam config: learning_rate, epsilon > 0, betas in [0, 1), batch_size >= 1");
  return c;
}

AdamState::AdamState(std::size_t parameter_count, AdamConfig cfg)
    : config(cfg), m(parameter_count, 0.0), v(parameter_count, 0.0) {}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw InvalidArgument("adam: parameter, gradient and moment sizes differ");
  for (double g : grads)
    if (!std::isfinite(g))
      throw TrainingError("adam: non-finite gradient");
  const auto& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

nlohmann::json to_json(const LmConfig& c) {
  return {{"mu_initial", c.mu_initial}, {"mu_increase", c.mu_increase}, {"mu_decrease", c.mu_decrease},
          {"mu_min", c.mu_min},         {"mu_max", c.mu_max},           {"max_retries", c.max_retries}};
}

LmConfig lm_config_from_json(const nlohmann::json& j, LmConfig c) {
  try {
    check_keys(j, {"mu_initial", "mu_increase", "mu_decrease", "mu_min", "mu_max", "max_retries"}, "lm config");
    c.mu_initial = j.value("mu_initial", c.mu_initial);
    c.mu_increase = j.value("mu_increase", c.mu_increase);
    c.mu_decrease = j.value("mu_decrease", c.mu_decrease);
    c.mu_min = j.value("mu_min", c.mu_min);
    c.mu_max = j.value("mu_max", c.mu_max);
    c.max_retries = j.value("max_retries", c.max_retries);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("lm config: ") + e.what());
  }
  if (!(c.mu_min > 0.0) || !(c.mu_max >= c.mu_min) || !(c.mu_initial >= c.mu_min && c.mu_initial <= c.mu_max) ||
      !(c.mu_increase > 1.0) || !(c.mu_decrease > 0.0 && c.mu_decrease < 1.0))
    throw ConfigError("lm config: need 0 < mu_min <= mu_initial <= mu_max, increase > 1, decrease in (0, 1)");
  return c;
}

namespace {

// Gram matrix shared by every retry of one step; only the diagonal shift changes.
struct DampedSystem {
  const Eigen::MatrixXd& jacobian;
  const Eigen::VectorXd& residuals;
  bool dual;
  Eigen::MatrixXd gram;
  Eigen::VectorXd jtr;

  DampedSystem(const Eigen::MatrixXd& j, const Eigen::VectorXd& r)
      : jacobian(j), residuals(r), dual(j.rows() < j.cols()) {
    if (dual) {
      gram = j * j.transpose();
    } else {
      gram = j.transpose() * j;
      jtr = j.transpose() * r;
    }
  }

  std::optional<Eigen::VectorXd> solve(double mu) const {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += mu;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
      return std::nullopt;
    Eigen::VectorXd delta = dual ? Eigen::VectorXd(-(jacobian.transpose() * llt.solve(residuals)))
                                 : Eigen::VectorXd(-llt.solve(jtr));
    if (!delta.allFinite())
      return std::nullopt;
    return delta;
  }
};

} // namespace

std::optional<Eigen::VectorXd> lm_solve(const Eigen::MatrixXd& jacobian, const Eigen::VectorXd& residuals,
                                        double mu) {
  return DampedSystem(jacobian, residuals).solve(mu);
}

LmStepResult lm_step(Eigen::VectorXd& params, const LeastSquaresProblem& problem, LmState& state) {
  const auto& c = state.config;
  LmStepResult res;
  const Eigen::VectorXd r = problem.residuals(params);
  res.sse_before = res.sse = r.squaredNorm();
  if (!std::isfinite(res.sse_before))
    throw TrainingError("levenberg-marquardt: non-finite residuals");
  if (res.sse_before == 0.0)
    return res;

  const Eigen::MatrixXd j = problem.jacobian(params);
  const DampedSystem system(j, r);
  state.mu = std::clamp(state.mu, c.mu_min, c.mu_max);
  for (std::size_t attempt = 0; attempt <= c.max_retries; ++attempt) {
    res.attempts = attempt + 1;
    auto delta = system.solve(state.mu);
    if (delta) {
      Eigen::VectorXd candidate = params + *delta;
      const double sse = problem.residuals(candidate).squaredNorm();
      if (std::isfinite(sse) && sse < res.sse_before) {
        params = std::move(candidate);
        res.accepted = true;
        res.sse = sse;
        state.mu = std::max(state.mu * c.mu_decrease, c.mu_min);
        return res;
      }
    }
    state.mu = std::min(state.mu * c.mu_increase, c.mu_max);
  }
  return res;
}

namespace {

void require_dense_only(const Network& net) {
  if (!net.arch.dense_only())
    throw InvalidArgument("levenberg-marquardt supports dense/tanh/relu networks only");
}

} // namespace

Eigen::VectorXd compute_residuals(const Network& net, const SampleSet& batch) {
  if (batch.count == 0)
    throw InvalidArgument("empty batch");
  const auto out = predict_all(net, batch.inputs, batch.count, batch.count);
  if (out.size() != batch.targets.size())
    throw ShapeError("target width does not match network output");
  Eigen::VectorXd r(static_cast<Eigen::Index>(out.size()));
  for (std::size_t i = 0; i < out.size(); ++i)
    r[static_cast<Eigen::Index>(i)] = out[i] - batch.targets[i];
  return r;
}

Eigen::MatrixXd compute_jacobian(const Network& net, const SampleSet& batch) {
  require_dense_only(net);
  if (batch.count == 0)
    throw InvalidArgument("empty batch");
  const auto& layers = net.arch.layers;
  const std::size_t P = net.parameter_count();
  const std::size_t O = net.arch.output().size();
  const std::size_t in_width = net.arch.input.size();
  if (batch.input_width() != in_width)
    throw ShapeError("batch input width " + std::to_string(batch.input_width()) + " != network input " +
                     std::to_string(in_width));

  // column offset of each layer's first parameter
  std::vector<std::size_t> offset(layers.size(), 0);
  for (std::size_t l = 0, off = 0; l < layers.size(); ++l) {
    offset[l] = off;
    for (const auto& t : net.layers[l].trainable)
      off += t.size();
  }

  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch.count * O), static_cast<Eigen::Index>(P));
  std::vector<std::vector<double>> acts(layers.size() + 1);
  for (std::size_t s = 0; s < batch.count; ++s) {
    acts[0].assign(batch.inputs.begin() + static_cast<std::ptrdiff_t>(s * in_width),
                   batch.inputs.begin() + static_cast<std::ptrdiff_t>((s + 1) * in_width));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& x = acts[l];
      auto& y = acts[l + 1];
      const auto& spec = layers[l];
      if (spec.kind == LayerKind::dense) {
        const auto& w = net.layers[l].trainable[0];
        const std::size_t I = x.size(), U = spec.units;
        y.assign(U, 0.0);
        for (std::size_t u = 0; u < U; ++u) {
          double a = spec.bias ? net.layers[l].trainable[1][u] : 0.0;
          for (std::size_t i = 0; i < I; ++i)
            a += w[u * I + i] * x[i];
          y[u] = a;
        }
      } else if (spec.kind == LayerKind::tanh) {
        y = x;
        for (auto& v : y)
          v = std::tanh(v);
      } else {
        y = x;
        for (auto& v : y)
          v = v > 0.0 ? v : 0.0;
      }
    }
    for (std::size_t o = 0; o < O; ++o) {
      const Eigen::Index row = static_cast<Eigen::Index>(s * O + o);
      std::vector<double> delta(O, 0.0);
      delta[o] = 1.0;
      for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& spec = layers[l];
        const auto& x = acts[l];
        if (spec.kind == LayerKind::dense) {
          const auto& w = net.layers[l].trainable[0];
          const std::size_t I = x.size(), U = spec.units;
          for (std::size_t u = 0; u < U; ++u) {
            const double d = delta[u];
            if (d == 0.0)
              continue;
            const std::size_t base = offset[l] + u * I;
            for (std::size_t i = 0; i < I; ++i)
              jac(row, static_cast<Eigen::Index>(base + i)) = d * x[i];
          }
          if (spec.bias)
            for (std::size_t u = 0; u < U; ++u)
              jac(row, static_cast<Eigen::Index>(offset[l] + U * I + u)) = delta[u];
          if (l == 0)
            break;
          std::vector<double> back(I, 0.0);
          for (std::size_t u = 0; u < U; ++u) {
            const double d = delta[u];
            if (d == 0.0)
              continue;
            for (std::size_t i = 0; i < I; ++i)
              back[i] += w[u * I + i] * d;
          }
          delta = std::move(back);
        } else if (spec.kind == LayerKind::tanh) {
          const auto& y = acts[l + 1];
          for (std::size_t i = 0; i < delta.size(); ++i)
            delta[i] *= 1.0 - y[i] * y[i];
        } else {
          for (std::size_t i = 0; i < delta.size(); ++i)
            if (!(x[i] > 0.0))
              delta[i] = 0.0;
        }
      }
    }
  }
  return jac;
}

LmStepResult lm_step(Network& net, const SampleSet& batch, LmState& state) {
  require_dense_only(net);
  Network probe = net;
  LeastSquaresProblem problem;
  problem.residuals = [&](const Eigen::VectorXd& p) {
    probe.set_flat_parameters(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
    return compute_residuals(probe, batch);
  };
  problem.jacobian = [&](const Eigen::VectorXd& p) {
    probe.set_flat_parameters(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
    return compute_jacobian(probe, batch);
  };
  const auto flat = net.flat_parameters();
  Eigen::VectorXd params = Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
  auto res = lm_step(params, problem, state);
  if (res.accepted)
    net.set_flat_parameters(std::span<const double>(params.data(), static_cast<std::size_t>(params.size())));
  return res;
}

// ---------------------------------------------------------------------------
// Epoch control

std::vector<double> predict_all(const Network& net, std::span<const double> inputs, std::size_t count,
                                std::size_t batch_size) {
  std::vector<double> out;
  if (count == 0)
    return out;
  const std::size_t width = net.arch.input.size();
  if (inputs.size() != count * width)
    throw ShapeError("sample matrix has " + std::to_string(inputs.size()) + " values, expected " +
                     std::to_string(count) + " x " + std::to_string(width));
  batch_size = std::max<std::size_t>(1, batch_size);
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < count; first += batch_size) {
    const std::size_t n = std::min(batch_size, count - first);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), first);
    const Tensor y = nn::predict(net, nn::make_batch(net.arch.input, inputs, idx));
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

double evaluate_loss(const Network& net, const SampleSet& data, nn::LossKind loss) {
  const auto out = predict_all(net, data.inputs, data.count);
  const std::size_t w = data.target_width();
  Tensor pred({data.count, w}, out);
  Tensor target({data.count, w}, data.targets);
  return nn::loss(loss, pred, target);
}

std::size_t argmin_epoch(std::span<const double> errors) {
  if (errors.empty())
    return 0;
  return static_cast<std::size_t>(std::min_element(errors.begin(), errors.end()) - errors.begin()) + 1;
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,train_error,validation_error,step_parameter\n";
  for (const auto& h : history) {
    os << h.epoch << ',' << to_text(h.train_error) << ',';
    if (std::isfinite(h.validation_error))
      os << to_text(h.validation_error);
    os << ',' << to_text(h.step_parameter) << '\n';
  }
}

namespace {

void add_l2_gradient(const Network& net, nn::Gradients& grads, double l2) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto kind = net.arch.layers[l].kind;
    if (kind != LayerKind::dense && kind != LayerKind::conv1d)
      continue;
    const auto& w = net.layers[l].trainable[0];
    auto& g = grads[l][0];
    for (std::size_t i = 0; i < w.size(); ++i)
      g[i] += 2.0 * l2 * w[i];
  }
}

double run_adam_epoch(Network& net, const SampleSet& data, const TrainOptions& opt, AdamState& adam,
                      std::size_t epoch) {
  const std::size_t n = data.count;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(opt.seed, {epoch}));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t bs = std::min(std::max<std::size_t>(1, opt.adam.batch_size), n);
  const std::size_t tw = data.target_width();
  double weighted_loss = 0.0;
  std::vector<double> params = net.flat_parameters();
  for (std::size_t first = 0, batch = 0; first < n; first += bs, ++batch) {
    const std::size_t m = std::min(bs, n - first);
    std::span<const std::size_t> idx(order.data() + first, m);
    Tensor x = nn::make_batch(net.arch.input, data.inputs, idx);
    Tensor target({m, tw});
    for (std::size_t b = 0; b < m; ++b)
      std::copy_n(data.targets.begin() + static_cast<std::ptrdiff_t>(idx[b] * tw), tw, target.data() + b * tw);
    auto fr = nn::forward(net, x, nn::Mode::train, derive_seed(opt.seed, {epoch, batch, 0xd5}));
    if (fr.output.shape() != target.shape())
      target.reshape(fr.output.shape());
    const double l = nn::loss(opt.loss, fr.output, target);
    if (!std::isfinite(l))
      throw TrainingError("loss diverged to a non-finite value at epoch " + std::to_string(epoch));
    weighted_loss += l * static_cast<double>(m);
    auto grads = nn::backward(net, fr.cache, nn::loss_gradient(opt.loss, fr.output, target));
    if (opt.l2 != 0.0)
      add_l2_gradient(net, grads, opt.l2);
    adam_step(params, nn::flatten(grads), adam);
    net.set_flat_parameters(params);
  }
  return weighted_loss / static_cast<double>(n);
}

} // namespace

TrainResult train(Network net, const SampleSet& data, const TrainOptions& opt) {
  if (data.count == 0)
    throw InvalidArgument("training set is empty");
  if (opt.stop.max_epochs < 1)
    throw InvalidArgument("max epochs must be >= 1");
  if (!(opt.stop.target_error >= 0.0))
    throw InvalidArgument("target error must be >= 0");
  if (opt.l2 < 0.0)
    throw InvalidArgument("l2 coefficient must be >= 0");
  if (data.input_width() != net.arch.input.size())
    throw ShapeError("training input width " + std::to_string(data.input_width()) +
                     " does not match network input " + std::to_string(net.arch.input.size()));
  if (opt.optimizer == OptimizerKind::lm && opt.loss != nn::LossKind::mse)
    throw InvalidArgument("levenberg-marquardt minimizes squared error only");

  TrainResult result;
  AdamState adam(net.parameter_count(), opt.adam);
  LmState lm(opt.lm);
  const bool validating = opt.validation && opt.validation->count > 0;

  std::optional<Network> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= opt.stop.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    if (opt.optimizer == OptimizerKind::adam) {
      rec.train_error = run_adam_epoch(net, data, opt, adam, epoch);
      rec.step_parameter = opt.adam.learning_rate;
    } else {
      const auto step = lm_step(net, data, lm);
      rec.train_error = step.sse / static_cast<double>(data.targets.size());
      rec.step_parameter = lm.mu;
    }
    if (!std::isfinite(rec.train_error))
      throw TrainingError("training error diverged at epoch " + std::to_string(epoch));

    rec.validation_error = std::numeric_limits<double>::quiet_NaN();
    bool stop = false;
    if (validating) {
      rec.validation_error = evaluate_loss(net, *opt.validation, opt.loss);
      if (rec.validation_error < best_val) {
        best_val = rec.validation_error;
        best = net;
        result.selected_epoch = epoch;
        since_best = 0;
      } else if (opt.stop.validation_patience && ++since_best >= *opt.stop.validation_patience) {
        stop = true;
      }
    } else {
      result.selected_epoch = epoch;
    }
    result.history.push_back(rec);
    if (rec.train_error <= opt.stop.target_error) {
      result.reached_target = true;
      stop = true;
    }
    if (stop)
      break;
  }
  result.network = best ? std::move(*best) : std::move(net);
  return result;
}

} // namespace cmst::optim
