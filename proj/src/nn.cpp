#include "beacon/nn.hpp"

#include <cmath>
#include <cstring>

#include "beacon/rng.hpp"

namespace beacon {

namespace {
constexpr double kLeakySlope = 0.01;
}

Mlp mlp_init(uint64_t seed, const std::vector<int>& sizes, bool zero_last) {
  if (sizes.size() < 2) throw NumericError("mlp_init: need at least two layer sizes");
  for (int s : sizes)
    if (s <= 0) throw NumericError("mlp_init: non-positive layer size");
  Rng rng(seed);
  Mlp net;
  net.layers.resize(sizes.size() - 1);
  for (size_t l = 0; l < net.layers.size(); ++l) {
    Layer& layer = net.layers[l];
    layer.in = sizes[l];
    layer.out = sizes[l + 1];
    layer.w.assign(static_cast<size_t>(layer.in) * layer.out, 0.0);
    layer.b.assign(layer.out, 0.0);
    bool last = (l + 1 == net.layers.size());
    if (last && zero_last) continue;
    double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (double& w : layer.w) w = scale * rng.normal();
  }
  return net;
}

std::vector<double> mlp_forward(const Mlp& net, const double* input, int len, MlpCache* cache) {
  if (net.layers.empty()) throw NumericError("mlp_forward: empty network");
  if (len != net.input_dim()) throw NumericError("mlp_forward: input length mismatch");
  if (cache) {
    cache->act.resize(net.layers.size() + 1);
    cache->act[0].assign(input, input + len);
  }
  std::vector<double> cur(input, input + len);
  std::vector<double> nxt;
  for (size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    nxt.assign(layer.b.begin(), layer.b.end());
    const double* w = layer.w.data();
    for (int o = 0; o < layer.out; ++o) {
      const double* row = w + static_cast<size_t>(o) * layer.in;
      double acc = 0.0;
      for (int i = 0; i < layer.in; ++i) acc += row[i] * cur[i];
      nxt[o] += acc;
    }
    if (l + 1 < net.layers.size())
      for (double& v : nxt) v = v > 0.0 ? v : kLeakySlope * v;
    cur.swap(nxt);
    if (cache) cache->act[l + 1] = cur;
  }
  return cur;
}

std::vector<double> mlp_backward(const Mlp& net, const MlpCache& cache,
                                 const std::vector<double>& d_out, Mlp& grad) {
  if (cache.act.size() != net.layers.size() + 1) throw NumericError("mlp_backward: stale cache");
  if (static_cast<int>(d_out.size()) != net.output_dim())
    throw NumericError("mlp_backward: output gradient length mismatch");
  std::vector<double> delta = d_out;
  std::vector<double> prev;
  for (size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    Layer& glayer = grad.layers[li];
    const std::vector<double>& x = cache.act[li];

    // Activation derivative for hidden layers, inferred from the cached
    // post-activation sign (leaky-ReLU preserves sign).
    if (li + 1 < net.layers.size()) {
      const std::vector<double>& a = cache.act[li + 1];
      for (int o = 0; o < layer.out; ++o)
        if (a[o] <= 0.0) delta[o] *= kLeakySlope;
    }

    prev.assign(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      double d = delta[o];
      glayer.b[o] = d;
      const double* wrow = layer.w.data() + static_cast<size_t>(o) * layer.in;
      double* grow = glayer.w.data() + static_cast<size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) {
        grow[i] = d * x[i];
        prev[i] += d * wrow[i];
      }
    }
    delta.swap(prev);
  }
  return delta;
}

Mlp mlp_zeros_like(const Mlp& net) {
  Mlp g = net;
  for (Layer& l : g.layers) {
    std::fill(l.w.begin(), l.w.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  return g;
}

size_t mlp_param_count(const Mlp& net) {
  size_t n = 0;
  for (const Layer& l : net.layers) n += l.w.size() + l.b.size();
  return n;
}

void mlp_flatten(const Mlp& net, double* dst) {
  for (const Layer& l : net.layers) {
    std::memcpy(dst, l.w.data(), l.w.size() * sizeof(double));
    dst += l.w.size();
    std::memcpy(dst, l.b.data(), l.b.size() * sizeof(double));
    dst += l.b.size();
  }
}

void mlp_unflatten(Mlp& net, const double* src) {
  for (Layer& l : net.layers) {
    std::memcpy(l.w.data(), src, l.w.size() * sizeof(double));
    src += l.w.size();
    std::memcpy(l.b.data(), src, l.b.size() * sizeof(double));
    src += l.b.size();
  }
}

void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads,
               double lr) {
  if (params.size() != grads.size()) throw NumericError("adam_step: shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw NumericError("adam_step: state shape mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    double mhat = state.m[i] / c1;
    double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

double grad_check(const std::function<double(const std::vector<double>&)>& loss,
                  const std::vector<double>& params, const std::vector<double>& analytic_grad,
                  double h) {
  if (h <= 0.0) throw NumericError("grad_check: h must be positive");
  if (params.size() != analytic_grad.size()) throw NumericError("grad_check: shape mismatch");
  std::vector<double> p = params;
  double worst = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    double keep = p[i];
    p[i] = keep + h;
    double up = loss(p);
    p[i] = keep - h;
    double dn = loss(p);
    p[i] = keep;
    double fd = (up - dn) / (2.0 * h);
    double g = analytic_grad[i];
    double err = std::fabs(fd - g) / (std::fabs(fd) + std::fabs(g) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace beacon
