#include "repolab/objectives/discriminator.hpp"

#include <cmath>

#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::objectives {

bool DiscriminatorParams::identical(const DiscriminatorParams& other) const {
  if (depth != other.depth || width != other.width || tensors.size() != other.tensors.size()) return false;
  if (input_mean != other.input_mean || input_scale != other.input_scale) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].identical(other.tensors[i])) return false;
  }
  return true;
}

DiscriminatorParams init_discriminator(int d_model, int depth, int width, std::uint64_t seed) {
  if (depth != 1 && depth != 2) throw Error(ErrorKind::InvalidConfig, "discriminator depth must be 1 or 2");
  if (d_model < 1 || width < 1) throw Error(ErrorKind::InvalidConfig, "discriminator widths must be positive");
  Rng rng(seed);
  auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    Tensor w({fan_in, fan_out});
    for (double& v : w.data()) v = s * rng.normal();
    return w;
  };
  DiscriminatorParams p;
  p.depth = depth;
  p.width = width;
  const auto d = static_cast<std::size_t>(d_model);
  if (depth == 2) {
    const auto w = static_cast<std::size_t>(width);
    p.tensors.push_back(glorot(d, w));
    p.tensors.push_back(Tensor({w}));
    p.tensors.push_back(glorot(w, 1));
    p.tensors.push_back(Tensor({1}));
  } else {
    p.tensors.push_back(glorot(d, 1));
    p.tensors.push_back(Tensor({1}));
  }
  return p;
}

void calibrate_discriminator(DiscriminatorParams& disc, const std::vector<std::vector<double>>& states) {
  if (states.empty()) throw Error(ErrorKind::EmptyBatch, "no states to calibrate the discriminator");
  const std::size_t d = static_cast<std::size_t>(disc.input_width());
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (const auto& h : states) {
    if (h.size() != d) throw Error(ErrorKind::ShapeMismatch, "calibration state width differs from discriminator input");
    for (std::size_t j = 0; j < d; ++j) mean[j] += h[j];
  }
  const double n = static_cast<double>(states.size());
  for (double& m : mean) m /= n;
  for (const auto& h : states) {
    for (std::size_t j = 0; j < d; ++j) var[j] += (h[j] - mean[j]) * (h[j] - mean[j]);
  }
  disc.input_mean = mean;
  disc.input_scale.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / n);
    if (sd > 1e-8) disc.input_scale[j] = 1.0 / sd;
  }
}

DiscVars bind_discriminator(Graph& graph, const DiscriminatorParams& disc, bool trainable) {
  DiscVars dv;
  for (const Tensor& t : disc.tensors) dv.vars.push_back(trainable ? graph.leaf(t) : graph.constant(t));
  if (!disc.input_mean.empty()) {
    const std::size_t d = disc.input_mean.size();
    Tensor shift({d});
    Tensor diag({d, d}, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      shift[j] = -disc.input_mean[j];
      diag[j * d + j] = disc.input_scale[j];
    }
    dv.shift = graph.constant(std::move(shift));
    dv.scale = graph.constant(std::move(diag));
  }
  return dv;
}

Var discriminator_forward(const DiscVars& disc, Var h, bool through_grl, double grl_lambda) {
  Var x = through_grl ? diff::grl(h, grl_lambda) : h;
  if (disc.shift) x = diff::matmul(diff::add_row(x, *disc.shift), *disc.scale);
  if (disc.vars.size() == 4) {
    x = diff::tanh(diff::add_row(diff::matmul(x, disc.vars[0]), disc.vars[1]));
    x = diff::add_row(diff::matmul(x, disc.vars[2]), disc.vars[3]);
  } else {
    x = diff::add_row(diff::matmul(x, disc.vars[0]), disc.vars[1]);
  }
  return diff::sigmoid(x);
}

double discriminator_probability(const DiscriminatorParams& disc, std::span<const double> h) {
  Graph g;
  DiscVars dv = bind_discriminator(g, disc, false);
  Var x = g.constant(Tensor({1, h.size()}, std::vector<double>(h.begin(), h.end())));
  return discriminator_forward(dv, x, false).value().item();
}

}  // namespace repolab::objectives
