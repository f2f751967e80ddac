#include <cmath>

#include "doctest.h"
#include "misleader/losses.hpp"
#include "misleader/nn.hpp"

using namespace misleader;

namespace {

ArchitectureSpec mlp_spec(std::vector<std::size_t> layers, std::size_t in_dim,
                          Activation act = Activation::relu) {
  ArchitectureSpec s;
  s.kind = ArchKind::mlp;
  s.layer_sizes = std::move(layers);
  s.activation = act;
  s.input_shape = {in_dim};
  s.output_dim = s.layer_sizes.back();
  return s;
}

ArchitectureSpec cnn_spec(std::size_t c, std::size_t h, std::size_t w, std::size_t out) {
  ArchitectureSpec s;
  s.kind = ArchKind::cnn_small;
  s.layer_sizes = {out};
  s.input_shape = {c, h, w};
  s.output_dim = out;
  return s;
}

Tensor random_batch(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

// central differences on a sampled subset of coordinates
void check_gradients(const Model& model, const Tensor& batch,
                     const std::function<ag::Var(const ag::Var&)>& loss_of_logits,
                     Rng& pick, std::size_t coords_per_param = 4, double h = 1e-4) {
  ParamVars pv = make_param_vars(model);
  const ag::Var loss = loss_of_logits(forward_graph(model, pv, batch));
  const ParamMap grads = gradients(pv, loss);

  Model probe = model;
  auto loss_value = [&]() {
    ParamVars cpv = make_param_constants(probe);
    return loss_of_logits(forward_graph(probe.spec, cpv, ag::constant(batch))).scalar();
  };

  for (const auto& [name, g] : grads) {
    for (std::size_t trial = 0; trial < std::min(coords_per_param, g.size()); ++trial) {
      const std::size_t i = pick.uniform_index(g.size());
      double& slot = probe.params.at(name).data[i];
      const double keep = slot;
      slot = keep + h;
      const double up = loss_value();
      slot = keep - h;
      const double down = loss_value();
      slot = keep;
      const double fd = (up - down) / (2 * h);
      const double an = g.data[i];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-2});
      CHECK(rel < 1e-4);
    }
  }
}

}  // namespace

TEST_CASE("build is deterministic with zero biases") {
  const auto spec = mlp_spec({8, 4}, 3);
  const Model a = build(spec, 11);
  const Model b = build(spec, 11);
  for (const auto& [name, t] : a.params) CHECK(t.data == b.params.at(name).data);
  for (double v : a.params.at("fc0.bias").data) CHECK(v == 0.0);
  for (double v : a.params.at("fc1.bias").data) CHECK(v == 0.0);
}

TEST_CASE("kaiming init std matches fan-in formula") {
  const auto spec = mlp_spec({200, 4}, 100);
  const Model m = build(spec, 5);
  const Tensor& w = m.params.at("fc0.weight");  // 200 x 100 = 2e4 draws
  double mean = 0;
  for (double v : w.data) mean += v;
  mean /= double(w.size());
  double var = 0;
  for (double v : w.data) var += (v - mean) * (v - mean);
  const double stddev = std::sqrt(var / double(w.size()));
  const double expected = std::sqrt(2.0 / 100.0);
  CHECK(std::abs(stddev - expected) / expected < 0.10);
}

TEST_CASE("forward identity and zero-weight cases") {
  auto spec = mlp_spec({3}, 3);
  Model m = build(spec, 1);
  // identity weights
  Tensor& w = m.params.at("fc0.weight");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) w.data[i * 3 + i] = 1.0;
  Rng rng(2);
  const Tensor x = random_batch(rng, {5, 3});
  const Tensor y = forward(m, x);
  CHECK(y.data == x.data);

  std::fill(w.data.begin(), w.data.end(), 0.0);
  const Tensor z = forward(m, x);
  for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("forward is batch independent") {
  const auto spec = mlp_spec({16, 4}, 6);
  const Model m = build(spec, 3);
  Rng rng(4);
  const Tensor batch = random_batch(rng, {8, 6});
  const Tensor full = forward(m, batch);
  Tensor one({1, 6});
  std::copy(batch.row(3), batch.row(3) + 6, one.row(0));
  const Tensor single = forward(m, one);
  for (std::size_t j = 0; j < 4; ++j) CHECK(single.row(0)[j] == doctest::Approx(full.row(3)[j]).epsilon(1e-12));
}

TEST_CASE("forward rejects shape mismatch") {
  const Model m = build(mlp_spec({4}, 3), 1);
  CHECK_THROWS_AS(forward(m, Tensor({2, 5})), ShapeMismatch);
}

TEST_CASE("gradient of summed linear logits equals the input") {
  auto spec = mlp_spec({2}, 3);
  const Model m = build(spec, 9);
  Tensor x({1, 3}, {0.5, -1.25, 2.0});
  ParamVars pv = make_param_vars(m);
  const ag::Var loss = ag::sum(forward_graph(m, pv, x));
  const ParamMap grads = gradients(pv, loss);
  const Tensor& gw = grads.at("fc0.weight");
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 3; ++i) CHECK(gw.data[o * 3 + i] == doctest::Approx(x.data[i]));
  for (double v : grads.at("fc0.bias").data) CHECK(v == 1.0);
}

TEST_CASE("gradients match central differences on a 2-2-2 mlp") {
  Rng rng(17);
  const Model m = build(mlp_spec({2, 2}, 2, Activation::tanh), 31);
  const Tensor x = random_batch(rng, {4, 2});
  const std::vector<int> labels = {0, 1, 0, 1};
  Rng pick(99);
  check_gradients(m, x, [&](const ag::Var& logits) {
    return ag::cross_entropy_mean(logits, labels);
  }, pick, 8);
}

TEST_CASE("gradients match central differences on the small cnn") {
  Rng rng(23);
  const Model m = build(cnn_spec(1, 8, 8, 3), 7);
  Tensor x = random_batch(rng, {2, 1, 8, 8});
  for (double& v : x.data) v = std::abs(v) / 3.0;  // keep pixels positive-ish
  const std::vector<int> labels = {1, 2};
  Rng pick(100);
  check_gradients(m, x, [&](const ag::Var& logits) {
    return ag::cross_entropy_mean(logits, labels);
  }, pick, 3);
}

TEST_CASE("gradients raise GraphError when the loss ignores the model") {
  const Model m = build(mlp_spec({2}, 2), 1);
  ParamVars pv = make_param_vars(m);
  const ag::Var constant_loss = ag::sum(ag::constant(Tensor({1}, {3.0})));
  CHECK_THROWS_AS(gradients(pv, constant_loss), GraphError);
}

TEST_CASE("cosine schedule endpoints and monotonicity") {
  const Model m = build(mlp_spec({2}, 2), 1);
  OptimizerState st = make_optimizer(m, 0.5, 0.0, 10, 0.01);
  CHECK(cosine_lr(st) == doctest::Approx(0.5));
  double prev = 1e9;
  for (std::size_t t = 0; t <= 10; ++t) {
    st.step = t;
    const double lr = cosine_lr(st);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
  st.step = 10;
  CHECK(cosine_lr(st) == doctest::Approx(0.01));
}

TEST_CASE("sgd_step leaves parameters alone on zero gradients") {
  const Model m = build(mlp_spec({4, 2}, 3), 2);
  OptimizerState st = make_optimizer(m, 0.1, 0.9, 100);
  ParamMap zeros;
  for (const auto& [name, t] : m.params) zeros[name] = Tensor(t.shape);
  auto [m2, st2] = sgd_step(m, zeros, st);
  for (const auto& [name, t] : m.params) CHECK(t.data == m2.params.at(name).data);
  CHECK(st2.step == 1);
}

TEST_CASE("sgd_step applies momentum buffers") {
  Model m = build(mlp_spec({1}, 1), 2);
  m.params.at("fc0.weight").data[0] = 1.0;
  OptimizerState st = make_optimizer(m, 0.1, 0.5, 0);  // constant lr
  ParamMap g;
  g["fc0.weight"] = Tensor({std::size_t(1), std::size_t(1)}, {1.0});
  g["fc0.bias"] = Tensor({std::size_t(1)});
  auto [m1, st1] = sgd_step(m, g, st);
  CHECK(m1.params.at("fc0.weight").data[0] == doctest::Approx(0.9));
  auto [m2, st2] = sgd_step(m1, g, st1);  // v = 0.5*1 + 1 = 1.5
  CHECK(m2.params.at("fc0.weight").data[0] == doctest::Approx(0.9 - 0.15));
}

TEST_CASE("clip_global_norm rescales large gradients") {
  ParamMap g;
  g["w"] = Tensor({std::size_t(2)}, {3.0, 4.0});
  const double norm = clip_global_norm(g, 1.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(g["w"].data[0] == doctest::Approx(0.6));
  CHECK(g["w"].data[1] == doctest::Approx(0.8));
  ParamMap small;
  small["w"] = Tensor({std::size_t(1)}, {0.5});
  clip_global_norm(small, 1.0);
  CHECK(small["w"].data[0] == 0.5);
}

TEST_CASE("lipschitz bound of diagonal layers") {
  auto spec = mlp_spec({2}, 2);
  Model m = build(spec, 1);
  Tensor& w = m.params.at("fc0.weight");
  w.data = {2.0, 0.0, 0.0, 2.0};  // 2I
  CHECK(lipschitz_upper_bound(m, 100) == doctest::Approx(2.0).epsilon(1e-6));
  w.data = {3.0, 0.0, 0.0, 1.0};  // diag(3,1)
  CHECK(lipschitz_upper_bound(m, 100) == doctest::Approx(3.0).epsilon(1e-6));

  auto spec2 = mlp_spec({2, 2}, 2);
  Model m2 = build(spec2, 1);
  m2.params.at("fc0.weight").data = {2.0, 0.0, 0.0, 2.0};
  m2.params.at("fc1.weight").data = {3.0, 0.0, 0.0, 3.0};
  CHECK(lipschitz_upper_bound(m2, 100) == doctest::Approx(6.0).epsilon(1e-5));
}

TEST_CASE("lipschitz bound rejects the generator head") {
  ArchitectureSpec g;
  g.kind = ArchKind::generator_mlp;
  g.layer_sizes = {8, 2};
  g.input_shape = {4};
  g.output_dim = 2;
  const Model m = build(g, 3);
  CHECK_THROWS_AS(lipschitz_upper_bound(m, 100), Unsupported);
}

TEST_CASE("lipschitz certificate dominates sampled difference quotients") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const Model m = build(mlp_spec({16, 8, 3}, 4, Activation::tanh), seed);
    const double bound = lipschitz_upper_bound(m, 100);
    Rng rng(seed + 100);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
      Tensor pair({2, 4});
      for (double& v : pair.data) v = rng.normal(0.0, 2.0);
      const Tensor out = forward(m, pair);
      double dy = 0, dx = 0;
      for (std::size_t j = 0; j < 3; ++j)
        dy += (out.row(0)[j] - out.row(1)[j]) * (out.row(0)[j] - out.row(1)[j]);
      for (std::size_t j = 0; j < 4; ++j)
        dx += (pair.row(0)[j] - pair.row(1)[j]) * (pair.row(0)[j] - pair.row(1)[j]);
      if (dx > 0) worst = std::max(worst, std::sqrt(dy / dx));
    }
    CHECK(worst <= bound * (1 + 1e-9));
  }
}

TEST_CASE("cnn lipschitz certificate dominates sampled quotients") {
  const Model m = build(cnn_spec(1, 8, 8, 2), 5);
  const double bound = lipschitz_upper_bound(m, 80);
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    Tensor pair({2, 1, 8, 8});
    for (double& v : pair.data) v = rng.uniform();
    const Tensor out = forward(m, pair);
    double dy = 0, dx = 0;
    for (std::size_t j = 0; j < 2; ++j)
      dy += (out.row(0)[j] - out.row(1)[j]) * (out.row(0)[j] - out.row(1)[j]);
    for (std::size_t j = 0; j < 64; ++j)
      dx += (pair.row(0)[j] - pair.row(1)[j]) * (pair.row(0)[j] - pair.row(1)[j]);
    if (dx > 0) worst = std::max(worst, std::sqrt(dy / dx));
  }
  CHECK(worst <= bound * (1 + 1e-9));
}

TEST_CASE("generator head applies tanh to the final layer") {
  ArchitectureSpec g;
  g.kind = ArchKind::generator_mlp;
  g.layer_sizes = {8, 3};
  g.input_shape = {4};
  g.output_dim = 3;
  const Model m = build(g, 3);
  Rng rng(1);
  const Tensor z = random_batch(rng, {6, 4});
  const Tensor out = forward(m, z);
  for (double v : out.data) {
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
}
