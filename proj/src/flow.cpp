#include "beacon/flow.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "beacon/pool.hpp"
#include "beacon/rng.hpp"

namespace beacon {

namespace {

void check_cond(const Flow& flow, const Conditioning& cond) {
  if (cond.masked_obs.rows != flow.cfg.rows || cond.masked_obs.cols != flow.cfg.cols)
    throw NumericError("conditioning: masked_obs dims mismatch");
  if (!cond.mask.same_shape(cond.masked_obs)) throw NumericError("conditioning: mask dims mismatch");
  if (cond.seismic && !cond.seismic->same_shape(cond.masked_obs))
    throw NumericError("conditioning: seismic dims mismatch");
}

void build_cond_input(const Flow& flow, const Conditioning& cond, std::vector<double>& cin) {
  const int d = flow.dim();
  cin.resize(3 * static_cast<size_t>(d));
  std::memcpy(cin.data(), cond.masked_obs.data.data(), d * sizeof(double));
  std::memcpy(cin.data() + d, cond.mask.data.data(), d * sizeof(double));
  if (cond.seismic)
    std::memcpy(cin.data() + 2 * static_cast<size_t>(d), cond.seismic->data.data(), d * sizeof(double));
  else
    std::fill(cin.begin() + 2 * static_cast<size_t>(d), cin.end(), 0.0);
}

// Accumulate a flow-shaped gradient into a flat accumulator, block order
// matching flow_flatten.
void flow_add_into(const Flow& g, double* acc) {
  auto add_mlp = [&acc](const Mlp& net) {
    for (const Layer& l : net.layers) {
      for (size_t i = 0; i < l.w.size(); ++i) acc[i] += l.w[i];
      acc += l.w.size();
      for (size_t i = 0; i < l.b.size(); ++i) acc[i] += l.b[i];
      acc += l.b.size();
    }
  };
  for (const Mlp& c : g.couplings) add_mlp(c);
  add_mlp(g.conditioner);
  for (size_t i = 0; i < g.log_scale.size(); ++i) acc[i] += g.log_scale[i];
}

}  // namespace

void clip_gradient_norm(std::vector<double>& grads) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm > kGradClipNorm) {
    double scale = kGradClipNorm / norm;
    for (double& g : grads) g *= scale;
  }
}

Flow flow_init(uint64_t seed, const FlowConfig& cfg) {
  if (cfg.rows < 1 || cfg.cols < 1) throw NumericError("flow_init: bad grid dims");
  if (cfg.n_couplings < 2) throw NumericError("flow_init: need at least two couplings");
  if (cfg.hidden < 1 || cfg.embed < 1) throw NumericError("flow_init: bad net sizes");
  Flow f;
  f.cfg = cfg;
  const int d = f.dim();
  if (d < 2) throw NumericError("flow_init: grid too small to split");
  // Left column block vs right column block (single-column grids fall back
  // to a row split so both halves stay nonempty).
  if (cfg.cols >= 2) {
    const int mid = cfg.cols / 2;
    for (int r = 0; r < cfg.rows; ++r)
      for (int c = 0; c < cfg.cols; ++c)
        (c < mid ? f.split_a : f.split_b).push_back(r * cfg.cols + c);
  } else {
    const int mid = cfg.rows / 2;
    for (int i = 0; i < d; ++i) (i / cfg.cols < mid ? f.split_a : f.split_b).push_back(i);
  }
  f.couplings.reserve(cfg.n_couplings);
  for (int i = 0; i < cfg.n_couplings; ++i) {
    int passive = static_cast<int>(i % 2 == 0 ? f.split_a.size() : f.split_b.size());
    int shifted = d - passive;
    f.couplings.push_back(
        mlp_init(seed_mix(seed, 0xC0u, i), {passive + cfg.embed, cfg.hidden, shifted}, true));
  }
  f.conditioner = mlp_init(seed_mix(seed, 0xCEu), {3 * d, cfg.hidden, cfg.embed}, false);
  f.log_scale.assign(d, 0.0);
  return f;
}

size_t flow_param_count(const Flow& flow) {
  size_t n = 0;
  for (const Mlp& c : flow.couplings) n += mlp_param_count(c);
  n += mlp_param_count(flow.conditioner);
  n += flow.log_scale.size();
  return n;
}

void flow_flatten(const Flow& flow, double* dst) {
  for (const Mlp& c : flow.couplings) {
    mlp_flatten(c, dst);
    dst += mlp_param_count(c);
  }
  mlp_flatten(flow.conditioner, dst);
  dst += mlp_param_count(flow.conditioner);
  std::memcpy(dst, flow.log_scale.data(), flow.log_scale.size() * sizeof(double));
}

void flow_unflatten(Flow& flow, const double* src) {
  for (Mlp& c : flow.couplings) {
    mlp_unflatten(c, src);
    src += mlp_param_count(c);
  }
  mlp_unflatten(flow.conditioner, src);
  src += mlp_param_count(flow.conditioner);
  std::memcpy(flow.log_scale.data(), src, flow.log_scale.size() * sizeof(double));
}

std::vector<double> embed_condition(const Flow& flow, const Conditioning& cond) {
  check_cond(flow, cond);
  std::vector<double> cin;
  build_cond_input(flow, cond, cin);
  return mlp_forward(flow.conditioner, cin.data(), static_cast<int>(cin.size()), nullptr);
}

void flow_forward(const Flow& flow, const double* x, const Conditioning& cond, FlowCache& cache,
                  std::vector<double>& z, double& logdet) {
  check_cond(flow, cond);
  const int d = flow.dim();
  const int embed = flow.cfg.embed;
  build_cond_input(flow, cond, cache.cond_in);
  cache.embedding =
      mlp_forward(flow.conditioner, cache.cond_in.data(), static_cast<int>(cache.cond_in.size()),
                  &cache.cond_cache);
  cache.u.assign(x, x + d);
  const int k = static_cast<int>(flow.couplings.size());
  cache.coupling_in.resize(k);
  cache.coupling_caches.resize(k);
  for (int i = 0; i < k; ++i) {
    const auto& passive = (i % 2 == 0) ? flow.split_a : flow.split_b;
    const auto& shifted = (i % 2 == 0) ? flow.split_b : flow.split_a;
    auto& cin = cache.coupling_in[i];
    cin.resize(passive.size() + embed);
    for (size_t j = 0; j < passive.size(); ++j) cin[j] = cache.u[passive[j]];
    std::memcpy(cin.data() + passive.size(), cache.embedding.data(), embed * sizeof(double));
    std::vector<double> shift = mlp_forward(flow.couplings[i], cin.data(),
                                            static_cast<int>(cin.size()), &cache.coupling_caches[i]);
    for (size_t j = 0; j < shifted.size(); ++j) cache.u[shifted[j]] += shift[j];
  }
  z.resize(d);
  logdet = 0.0;
  for (int j = 0; j < d; ++j) {
    z[j] = cache.u[j] * std::exp(flow.log_scale[j]);
    logdet += flow.log_scale[j];
  }
  for (double v : z)
    if (!std::isfinite(v)) throw NumericError("flow_forward: non-finite output");
  cache.z = z;
}

std::pair<std::vector<double>, double> flow_forward(const Flow& flow, const Field2D& x,
                                                    const Conditioning& cond) {
  if (x.rows != flow.cfg.rows || x.cols != flow.cfg.cols)
    throw NumericError("flow_forward: input dims mismatch");
  FlowCache cache;
  std::vector<double> z;
  double logdet = 0.0;
  flow_forward(flow, x.data.data(), cond, cache, z, logdet);
  return {std::move(z), logdet};
}

Field2D flow_inverse(const Flow& flow, const std::vector<double>& z, const Conditioning& cond) {
  check_cond(flow, cond);
  const int d = flow.dim();
  if (static_cast<int>(z.size()) != d) throw NumericError("flow_inverse: latent length mismatch");
  std::vector<double> emb = embed_condition(flow, cond);
  std::vector<double> u(d);
  for (int j = 0; j < d; ++j) u[j] = z[j] * std::exp(-flow.log_scale[j]);
  std::vector<double> cin;
  for (int i = static_cast<int>(flow.couplings.size()) - 1; i >= 0; --i) {
    const auto& passive = (i % 2 == 0) ? flow.split_a : flow.split_b;
    const auto& shifted = (i % 2 == 0) ? flow.split_b : flow.split_a;
    cin.resize(passive.size() + emb.size());
    for (size_t j = 0; j < passive.size(); ++j) cin[j] = u[passive[j]];
    std::memcpy(cin.data() + passive.size(), emb.data(), emb.size() * sizeof(double));
    std::vector<double> shift =
        mlp_forward(flow.couplings[i], cin.data(), static_cast<int>(cin.size()), nullptr);
    for (size_t j = 0; j < shifted.size(); ++j) u[shifted[j]] -= shift[j];
  }
  Field2D out(flow.cfg.rows, flow.cfg.cols);
  out.data = std::move(u);
  if (!all_finite(out)) throw NumericError("flow_inverse: non-finite output");
  return out;
}

double nll_loss(const Flow& flow, const Field2D& x, const Conditioning& cond) {
  auto [z, logdet] = flow_forward(flow, x, cond);
  double sq = 0.0;
  for (double v : z) sq += v * v;
  return 0.5 * sq - logdet;
}

std::vector<double> flow_backward_nll(const Flow& flow, const FlowCache& cache, Flow& grad,
                                      CondGrad& cond_grad) {
  const int d = flow.dim();
  const int embed = flow.cfg.embed;
  std::vector<double> du(d), demb(embed, 0.0);
  for (int j = 0; j < d; ++j) {
    double es = std::exp(flow.log_scale[j]);
    du[j] = cache.z[j] * es;
    grad.log_scale[j] = cache.z[j] * cache.u[j] * es - 1.0;
  }
  std::vector<double> dout;
  for (int i = static_cast<int>(flow.couplings.size()) - 1; i >= 0; --i) {
    const auto& passive = (i % 2 == 0) ? flow.split_a : flow.split_b;
    const auto& shifted = (i % 2 == 0) ? flow.split_b : flow.split_a;
    dout.resize(shifted.size());
    for (size_t j = 0; j < shifted.size(); ++j) dout[j] = du[shifted[j]];
    std::vector<double> din =
        mlp_backward(flow.couplings[i], cache.coupling_caches[i], dout, grad.couplings[i]);
    for (size_t j = 0; j < passive.size(); ++j) du[passive[j]] += din[j];
    for (int e = 0; e < embed; ++e) demb[e] += din[passive.size() + e];
  }
  std::vector<double> dcond = mlp_backward(flow.conditioner, cache.cond_cache, demb, grad.conditioner);
  cond_grad.d_masked_obs = Field2D(flow.cfg.rows, flow.cfg.cols);
  cond_grad.d_mask = Field2D(flow.cfg.rows, flow.cfg.cols);
  std::memcpy(cond_grad.d_masked_obs.data.data(), dcond.data(), d * sizeof(double));
  std::memcpy(cond_grad.d_mask.data.data(), dcond.data() + d, d * sizeof(double));
  return du;
}

void loss_gradients(const Flow& flow, const std::vector<const Field2D*>& xs,
                    const std::vector<const Conditioning*>& conds, FlowBatchResult& out,
                    FlowWorkspace& ws, ThreadPool* pool) {
  const int b = static_cast<int>(xs.size());
  if (b == 0) throw NumericError("loss_gradients: empty batch");
  if (conds.size() != xs.size()) throw NumericError("loss_gradients: batch size mismatch");
  const size_t np = flow_param_count(flow);

  if (static_cast<int>(ws.slot_grads.size()) < b ||
      (!ws.slot_grads.empty() && flow_param_count(ws.slot_grads[0]) != np)) {
    ws.slot_grads.assign(b, flow);
    ws.slot_caches.assign(b, FlowCache{});
  }
  ws.slot_loss.assign(b, 0.0);
  out.cond_grads.resize(b);

  std::vector<std::string> errors(b);
  auto run_one = [&](int i) {
    try {
      std::vector<double> z;
      double logdet = 0.0;
      flow_forward(flow, xs[i]->data.data(), *conds[i], ws.slot_caches[i], z, logdet);
      double sq = 0.0;
      for (double v : z) sq += v * v;
      ws.slot_loss[i] = 0.5 * sq - logdet;
      flow_backward_nll(flow, ws.slot_caches[i], ws.slot_grads[i], out.cond_grads[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  if (pool && pool->size() > 1 && b > 1)
    pool->parallel_for(b, run_one);
  else
    for (int i = 0; i < b; ++i) run_one(i);
  for (int i = 0; i < b; ++i)
    if (!errors[i].empty())
      throw NumericError("loss_gradients sample " + std::to_string(i) + ": " + errors[i]);

  out.param_grads.assign(np, 0.0);
  const int workers = pool ? std::min(pool->size(), b) : 1;
  if (workers <= 1) {
    for (int i = 0; i < b; ++i) flow_add_into(ws.slot_grads[i], out.param_grads.data());
  } else {
    // Strided partial sums, each accumulated in increasing slot order, then
    // combined in worker order: the result is fixed for a given worker count.
    ws.partials.resize(workers);
    auto reduce_one = [&](int w) {
      ws.partials[w].assign(np, 0.0);
      for (int i = w; i < b; i += workers) flow_add_into(ws.slot_grads[i], ws.partials[w].data());
    };
    pool->parallel_for(workers, reduce_one);
    for (int w = 0; w < workers; ++w) {
      const double* src = ws.partials[w].data();
      for (size_t j = 0; j < np; ++j) out.param_grads[j] += src[j];
    }
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  for (double& g : out.param_grads) g *= inv_b;
  for (CondGrad& cg : out.cond_grads) {
    for (double& v : cg.d_masked_obs.data) v *= inv_b;
    for (double& v : cg.d_mask.data) v *= inv_b;
  }
  double total = 0.0;
  for (int i = 0; i < b; ++i) total += ws.slot_loss[i];
  out.mean_loss = total * inv_b;
}

std::vector<Field2D> sample_posterior(const Flow& flow, const Conditioning& cond, int n,
                                      uint64_t seed, bool clamp, ThreadPool* pool) {
  if (n < 1) throw NumericError("sample_posterior: n must be >= 1");
  check_cond(flow, cond);
  const int d = flow.dim();
  std::vector<Field2D> out(n);
  std::vector<std::string> errors(n);
  auto run_one = [&](int j) {
    try {
      Rng rng(seed_mix(seed, 0x5Au, j));
      std::vector<double> z(d);
      for (double& v : z) v = rng.normal();
      out[j] = flow_inverse(flow, z, cond);
      if (clamp) clamp01(out[j]);
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  };
  if (pool && pool->size() > 1 && n > 1)
    pool->parallel_for(n, run_one);
  else
    for (int j = 0; j < n; ++j) run_one(j);
  for (int j = 0; j < n; ++j)
    if (!errors[j].empty())
      throw NumericError("sample_posterior sample " + std::to_string(j) + ": " + errors[j]);
  return out;
}

}  // namespace beacon
