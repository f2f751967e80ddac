#include "misleader/nn.hpp"

#include <cmath>

namespace misleader {

namespace {

constexpr std::size_t kConv0Channels = 8;
constexpr std::size_t kConv1Channels = 16;
constexpr std::size_t kKernel = 3;
constexpr int kPad = 1;

double kaiming_gain(Activation a) {
  return a == Activation::relu ? std::sqrt(2.0) : 5.0 / 3.0;
}

Tensor kaiming_normal(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                      double gain) {
  Tensor t(std::move(shape));
  const double stddev = gain / std::sqrt(double(fan_in));
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

// spatial dims after the fixed conv stack ('same' conv keeps h,w; pool halves)
std::pair<std::size_t, std::size_t> cnn_pooled_dims(const ArchitectureSpec& spec) {
  const std::size_t h = spec.input_shape[1] / 2 / 2;
  const std::size_t w = spec.input_shape[2] / 2 / 2;
  return {h, w};
}

std::size_t cnn_flat_dim(const ArchitectureSpec& spec) {
  auto [h, w] = cnn_pooled_dims(spec);
  return kConv1Channels * h * w;
}

}  // namespace

std::string to_string(ArchKind k) {
  switch (k) {
    case ArchKind::mlp: return "mlp";
    case ArchKind::cnn_small: return "cnn_small";
    case ArchKind::generator_mlp: return "generator_mlp";
  }
  return "?";
}

std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

ArchKind arch_kind_from_string(const std::string& s) {
  if (s == "mlp") return ArchKind::mlp;
  if (s == "cnn_small") return ArchKind::cnn_small;
  if (s == "generator_mlp") return ArchKind::generator_mlp;
  throw InvalidArgument("unknown architecture kind: " + s);
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation: " + s);
}

void ArchitectureSpec::validate() const {
  if (layer_sizes.empty()) throw InvalidArgument("arch: layer_sizes must be non-empty");
  for (std::size_t s : layer_sizes)
    if (s == 0) throw InvalidArgument("arch: layer sizes must be positive");
  if (output_dim == 0) throw InvalidArgument("arch: output_dim must be positive");
  if (layer_sizes.back() != output_dim)
    throw InvalidArgument("arch: output_dim must equal the final layer width");
  if (input_shape.empty() || input_dim() == 0)
    throw InvalidArgument("arch: input_shape must be non-empty");
  if (kind == ArchKind::cnn_small) {
    if (input_shape.size() != 3)
      throw InvalidArgument("cnn_small: input_shape must be c x h x w");
    if (input_shape[1] < 4 || input_shape[2] < 4)
      throw InvalidArgument("cnn_small: spatial dims must be >= 4");
    if (layer_sizes.size() != 1)
      throw InvalidArgument("cnn_small: layer_sizes holds only the output width");
  }
}

std::string ArchitectureSpec::id() const {
  std::string s = to_string(kind) + "[";
  for (std::size_t i = 0; i < layer_sizes.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(layer_sizes[i]);
  }
  s += "]-" + to_string(activation) + "-in" + shape_str(input_shape);
  return s;
}

Model build(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.rng_seed = seed;
  Rng rng(seed);
  const double gain = kaiming_gain(spec.activation);

  if (spec.kind == ArchKind::cnn_small) {
    const std::size_t c = spec.input_shape[0];
    m.params["conv0.weight"] = kaiming_normal(
        rng, {kConv0Channels, c, kKernel, kKernel}, c * kKernel * kKernel, std::sqrt(2.0));
    m.params["conv0.bias"] = Tensor({kConv0Channels});
    m.params["conv1.weight"] =
        kaiming_normal(rng, {kConv1Channels, kConv0Channels, kKernel, kKernel},
                       kConv0Channels * kKernel * kKernel, std::sqrt(2.0));
    m.params["conv1.bias"] = Tensor({kConv1Channels});
    const std::size_t flat = cnn_flat_dim(spec);
    m.params["fc.weight"] = kaiming_normal(rng, {spec.output_dim, flat}, flat, std::sqrt(2.0));
    m.params["fc.bias"] = Tensor({spec.output_dim});
    return m;
  }

  std::size_t fan_in = spec.input_dim();
  for (std::size_t l = 0; l < spec.layer_sizes.size(); ++l) {
    const std::size_t width = spec.layer_sizes[l];
    const std::string prefix = "fc" + std::to_string(l);
    m.params[prefix + ".weight"] = kaiming_normal(rng, {width, fan_in}, fan_in, gain);
    m.params[prefix + ".bias"] = Tensor({width});
    fan_in = width;
  }
  return m;
}

namespace {

void check_batch_shape(const ArchitectureSpec& spec, const Tensor& batch) {
  bool ok = batch.shape.size() == spec.input_shape.size() + 1;
  for (std::size_t i = 0; ok && i < spec.input_shape.size(); ++i)
    ok = batch.shape[i + 1] == spec.input_shape[i];
  if (!ok)
    throw ShapeMismatch("forward: batch " + shape_str(batch.shape) +
                        " does not match input shape " + shape_str(spec.input_shape));
}

}  // namespace

Tensor forward(const Model& model, const Tensor& batch) {
  check_batch_shape(model.spec, batch);
  const std::size_t b = batch.shape[0];
  const auto& spec = model.spec;

  if (spec.kind == ArchKind::cnn_small) {
    const auto& k0 = model.params.at("conv0.weight");
    Tensor h0(ag::kern::conv2d_out_shape(batch.shape, k0.shape, kPad));
    ag::kern::conv2d_fwd(batch, k0, kPad, h0);
    ag::kern::add_channel_bias_inplace(h0, model.params.at("conv0.bias"));
    ag::kern::relu_inplace(h0);
    Tensor p0({h0.shape[0], h0.shape[1], h0.shape[2] / 2, h0.shape[3] / 2});
    std::vector<std::size_t> scratch;
    ag::kern::maxpool2_fwd(h0, p0, scratch);

    const auto& k1 = model.params.at("conv1.weight");
    Tensor h1(ag::kern::conv2d_out_shape(p0.shape, k1.shape, kPad));
    ag::kern::conv2d_fwd(p0, k1, kPad, h1);
    ag::kern::add_channel_bias_inplace(h1, model.params.at("conv1.bias"));
    ag::kern::relu_inplace(h1);
    Tensor p1({h1.shape[0], h1.shape[1], h1.shape[2] / 2, h1.shape[3] / 2});
    ag::kern::maxpool2_fwd(h1, p1, scratch);

    const std::size_t flat_dim = p1.size() / b;
    Tensor flat({b, flat_dim}, std::move(p1.data));
    Tensor out({b, spec.output_dim});
    ag::kern::matmul_xwT(flat, model.params.at("fc.weight"), out);
    ag::kern::add_row_inplace(out, model.params.at("fc.bias"));
    return out;
  }

  Tensor h({b, spec.input_dim()}, batch.data);
  for (std::size_t l = 0; l < spec.layer_sizes.size(); ++l) {
    const std::string prefix = "fc" + std::to_string(l);
    const auto& w = model.params.at(prefix + ".weight");
    Tensor next({b, w.shape[0]});
    ag::kern::matmul_xwT(h, w, next);
    ag::kern::add_row_inplace(next, model.params.at(prefix + ".bias"));
    const bool last = l + 1 == spec.layer_sizes.size();
    if (!last) {
      if (spec.activation == Activation::relu)
        ag::kern::relu_inplace(next);
      else
        ag::kern::tanh_inplace(next);
    } else if (spec.kind == ArchKind::generator_mlp) {
      ag::kern::tanh_inplace(next);
    }
    h = std::move(next);
  }
  return h;
}

Tensor forward_probs(const Model& model, const Tensor& batch) {
  Tensor logits = forward(model, batch);
  ag::kern::softmax_rows_inplace(logits, 1.0);
  return logits;
}

ParamVars make_param_vars(const Model& model) {
  ParamVars pv;
  for (const auto& [name, tensor] : model.params) pv.vars.emplace(name, ag::leaf(tensor));
  return pv;
}

ParamVars make_param_constants(const Model& model) {
  ParamVars pv;
  for (const auto& [name, tensor] : model.params) pv.vars.emplace(name, ag::constant(tensor));
  return pv;
}

ag::Var forward_graph(const ArchitectureSpec& spec, const ParamVars& pv,
                      const ag::Var& batch_var) {
  check_batch_shape(spec, batch_var.value());
  const std::size_t b = batch_var.value().shape[0];

  if (spec.kind == ArchKind::cnn_small) {
    ag::Var h = ag::conv2d(batch_var, pv.vars.at("conv0.weight"), kPad);
    h = ag::add_channel_bias(h, pv.vars.at("conv0.bias"));
    h = ag::maxpool2(ag::relu(h));
    h = ag::conv2d(h, pv.vars.at("conv1.weight"), kPad);
    h = ag::add_channel_bias(h, pv.vars.at("conv1.bias"));
    h = ag::maxpool2(ag::relu(h));
    h = ag::reshape(h, {b, h.value().size() / b});
    h = ag::matmul(h, pv.vars.at("fc.weight"));
    return ag::add_row(h, pv.vars.at("fc.bias"));
  }

  ag::Var h = ag::reshape(batch_var, {b, spec.input_dim()});
  for (std::size_t l = 0; l < spec.layer_sizes.size(); ++l) {
    const std::string prefix = "fc" + std::to_string(l);
    h = ag::matmul(h, pv.vars.at(prefix + ".weight"));
    h = ag::add_row(h, pv.vars.at(prefix + ".bias"));
    const bool last = l + 1 == spec.layer_sizes.size();
    if (!last)
      h = spec.activation == Activation::relu ? ag::relu(h) : ag::tanh_op(h);
    else if (spec.kind == ArchKind::generator_mlp)
      h = ag::tanh_op(h);
  }
  return h;
}

ag::Var forward_graph(const Model& model, const ParamVars& pv, const Tensor& batch) {
  return forward_graph(model.spec, pv, ag::constant(batch));
}

ParamMap gradients(const ParamVars& pv, const ag::Var& scalar_loss) {
  const auto visited = ag::backward(scalar_loss);
  bool any = false;
  for (const auto& [name, var] : pv.vars)
    if (visited.count(var.node().get())) any = true;
  if (!any) throw GraphError("gradients: loss does not depend on the model");

  ParamMap grads;
  for (const auto& [name, var] : pv.vars) {
    if (var.node()->grad_ready)
      grads[name] = var.node()->grad;
    else
      grads[name] = Tensor(var.value().shape);
  }
  return grads;
}

OptimizerState make_optimizer(const Model& model, double base_lr, double momentum,
                              std::size_t total_steps, double min_lr) {
  if (base_lr < 0.0) throw InvalidArgument("optimizer: base_lr must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw InvalidArgument("optimizer: momentum must be in [0,1)");
  if (min_lr < 0.0) throw InvalidArgument("optimizer: min_lr must be >= 0");
  OptimizerState st;
  st.base_lr = base_lr;
  st.momentum = momentum;
  st.total_steps = total_steps;
  st.min_lr = min_lr;
  for (const auto& [name, t] : model.params) st.momentum_buffers[name] = Tensor(t.shape);
  return st;
}

double cosine_lr(const OptimizerState& state) {
  if (state.total_steps == 0) return state.base_lr;
  const double t = double(std::min(state.step, state.total_steps));
  const double cosv = std::cos(M_PI * t / double(state.total_steps));
  return state.min_lr + 0.5 * (state.base_lr - state.min_lr) * (1.0 + cosv);
}

void sgd_step_inplace(Model& model, const ParamMap& grads, OptimizerState& state) {
  const double lr = cosine_lr(state);
  for (auto& [name, theta] : model.params) {
    auto git = grads.find(name);
    if (git == grads.end())
      throw InvalidArgument("sgd_step: missing gradient for " + name);
    const Tensor& g = git->second;
    Tensor& v = state.momentum_buffers.at(name);
    if (!g.same_shape(theta) || !v.same_shape(theta))
      throw ShapeMismatch("sgd_step: shape mismatch for " + name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v.data[i] = state.momentum * v.data[i] + g.data[i];
      theta.data[i] -= lr * v.data[i];
    }
  }
  ++state.step;
}

std::pair<Model, OptimizerState> sgd_step(Model model, const ParamMap& grads,
                                          OptimizerState state) {
  sgd_step_inplace(model, grads, state);
  return {std::move(model), std::move(state)};
}

double clip_global_norm(ParamMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.data) v *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Lipschitz certificate
// ---------------------------------------------------------------------------

namespace {

double l2_norm(const Tensor& t) {
  double sq = 0.0;
  for (double v : t.data) sq += v * v;
  return std::sqrt(sq);
}

void random_unit(Rng& rng, Tensor& t) {
  for (double& v : t.data) v = rng.normal();
  const double n = l2_norm(t);
  for (double& v : t.data) v /= n > 0 ? n : 1.0;
}

// largest singular value of W (out x in) by power iteration on W^T W
double spectral_norm_matrix(const Tensor& w, std::size_t iters, Rng& rng) {
  const std::size_t out = w.shape[0], in = w.shape[1];
  Tensor v({std::size_t(1), in});
  random_unit(rng, v);
  Tensor u({std::size_t(1), out});
  double sigma = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    ag::kern::matmul_xwT(v, w, u);  // u = W v
    sigma = l2_norm(u);
    if (sigma == 0.0) return 0.0;
    // v = W^T u
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) acc += w.data[o * in + i] * u.data[o];
      v.data[i] = acc;
    }
    const double vn = l2_norm(v);
    for (double& x : v.data) x /= vn > 0 ? vn : 1.0;
  }
  return sigma;
}

// operator norm of the (bias-free) convolution at the given input size,
// power iteration alternating the map and its adjoint
double spectral_norm_conv(const Tensor& k, const std::vector<std::size_t>& in_shape,
                          std::size_t iters, Rng& rng) {
  Tensor v({std::size_t(1), in_shape[0], in_shape[1], in_shape[2]});
  random_unit(rng, v);
  Tensor y(ag::kern::conv2d_out_shape(v.shape, k.shape, kPad));
  double sigma = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    std::fill(y.data.begin(), y.data.end(), 0.0);
    ag::kern::conv2d_fwd(v, k, kPad, y);
    sigma = l2_norm(y);
    if (sigma == 0.0) return 0.0;
    Tensor back(v.shape);
    ag::kern::conv2d_input_grad(y, k, kPad, back);
    const double bn = l2_norm(back);
    for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = back.data[i] / (bn > 0 ? bn : 1.0);
  }
  return sigma;
}

// two independent starts guard against an unlucky near-orthogonal init
template <typename F>
double best_of_two(F&& f, std::uint64_t seed) {
  Rng r1(derive_seed(seed, "power-iteration-a"));
  Rng r2(derive_seed(seed, "power-iteration-b"));
  return std::max(f(r1), f(r2));
}

}  // namespace

double lipschitz_upper_bound(const Model& model, std::size_t power_iters) {
  const auto& spec = model.spec;
  if (spec.kind == ArchKind::generator_mlp)
    throw Unsupported("lipschitz_upper_bound: generator output head is not certified");
  const std::size_t iters = std::max<std::size_t>(power_iters, 50);

  double bound = 1.0;
  if (spec.kind == ArchKind::cnn_small) {
    const auto& k0 = model.params.at("conv0.weight");
    const auto& k1 = model.params.at("conv1.weight");
    const std::vector<std::size_t> s0 = spec.input_shape;
    const std::vector<std::size_t> s1 = {kConv0Channels, spec.input_shape[1] / 2,
                                         spec.input_shape[2] / 2};
    bound *= best_of_two(
        [&](Rng& r) { return spectral_norm_conv(k0, s0, iters, r); }, model.rng_seed + 1);
    bound *= best_of_two(
        [&](Rng& r) { return spectral_norm_conv(k1, s1, iters, r); }, model.rng_seed + 2);
    bound *= best_of_two(
        [&](Rng& r) { return spectral_norm_matrix(model.params.at("fc.weight"), iters, r); },
        model.rng_seed + 3);
    return bound;
  }

  for (std::size_t l = 0; l < spec.layer_sizes.size(); ++l) {
    const auto& w = model.params.at("fc" + std::to_string(l) + ".weight");
    bound *= best_of_two(
        [&](Rng& r) { return spectral_norm_matrix(w, iters, r); }, model.rng_seed + 10 + l);
  }
  return bound;
}

int argmax_row(const double* row, std::size_t k) {
  int best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}

double accuracy(const Model& model, const Dataset& data) {
  const Tensor logits = forward(model, data.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i)
    if (argmax_row(logits.row(i), logits.row_size()) == data.labels[i]) ++correct;
  return data.size() ? double(correct) / double(data.size()) : 0.0;
}

}  // namespace misleader
