// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Small datasets and configurations that train in milliseconds.

#include "cmst/methods.hpp"
#include "cmst/random.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace toy {

struct Data {
  std::vector<double> inputs;
  std::vector<int> labels;
};

// Class c is a noisy sinusoid whose frequency grows with c.
inline Data sinusoids(std::size_t classes, std::size_t per_class, std::size_t length, std::uint64_t seed) {
  cmst::Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Data t;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) {
      for (std::size_t i = 0; i < length; ++i)
        t.inputs.push_back(std::sin(0.05 * double((c + 1) * i)) * (1.0 + 0.5 * double(c)) + noise(rng));
      t.labels.push_back(static_cast<int>(c));
    }
  return t;
}

inline cmst::cnn::CnnArch cnn_arch(std::size_t classes) {
  cmst::cnn::CnnArch a;
  a.input_length = 96;
  a.filters = {2, 3, 3, 4};
  a.kernel = 3;
  a.pool = 2;
  a.dense_units = 6;
  a.dropout = 0.2;
  a.classes = classes;
  return a;
}

/// Every method sized for 96-point inputs.
inline cmst::MethodConfig method(cmst::MethodKind kind, std::size_t classes) {
  cmst::MethodConfig m;
  m.kind = kind;
  m.cmsn.bank.arch = cnn_arch(classes);
  m.cmsn.bank.members = 2;
  m.cmsn.bank.adam.learning_rate = 0.01;
  m.cmsn.bank.adam.batch_size = 8;
  m.cmsn.groups = 2;
  m.cmsn.stages = 3;
  m.cmsn.schedule = {0.05, 0.02};
  m.cnn.arch = cnn_arch(classes);
  m.cnn.max_epochs = 4;
  m.cnn.adam.batch_size = 4;
  m.fcn.input_width = 96;
  m.fcn.hidden = {8, 8};
  m.fcn.classes = classes;
  m.fcn.max_epochs = 5;
  m.fcn.adam.batch_size = 4;
  m.members = 3;
  return m;
}

} // namespace toy
