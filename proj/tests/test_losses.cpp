#include <cmath>

#include "doctest.h"
#include "misleader/losses.hpp"
#include "misleader/nn.hpp"

using namespace misleader;

namespace {

std::vector<double> random_simplex(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  double sum = 0;
  for (double& v : p) {
    v = -std::log(rng.uniform() + 1e-12);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  Tensor t({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), t.row(i));
  return t;
}

}  // namespace

TEST_CASE("softmax_t closed forms") {
  CHECK(softmax_t({0.0, 0.0}, 1.0)[0] == doctest::Approx(0.5));
  CHECK(softmax_t({0.0, 0.0}, 7.3)[1] == doctest::Approx(0.5));
  const auto p = softmax_t({std::log(2.0), 0.0}, 1.0);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // large temperature flattens toward uniform
  const auto q = softmax_t({10.0, 0.0}, 100.0);
  CHECK(std::abs(q[0] - 0.5) < 0.03);
  CHECK(std::abs(q[1] - 0.5) < 0.03);
  CHECK_THROWS_AS(softmax_t({1.0}, 0.0), InvalidArgument);
}

TEST_CASE("softmax_t sums to one and shifts are invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(6);
    for (double& v : logits) v = rng.normal(0, 5);
    const double temp = rng.uniform(0.2, 8.0);
    const auto p = softmax_t(logits, temp);
    double sum = 0;
    for (double v : p) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
    std::vector<double> shifted = logits;
    const double c = rng.normal(0, 3);
    for (double& v : shifted) v += c;
    const auto q = softmax_t(shifted, temp);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
  }
}

TEST_CASE("cross entropy closed forms") {
  CHECK(cross_entropy(rows_tensor({{1e6, 0.0}}), {0}) < 1e-6);
  CHECK(cross_entropy(rows_tensor({{0.0, 0.0}}), {0}) == doctest::Approx(std::log(2.0)));
  const Tensor two = rows_tensor({{0.3, -0.7, 1.1}, {0.3, -0.7, 1.1}});
  const Tensor one = rows_tensor({{0.3, -0.7, 1.1}});
  CHECK(cross_entropy(two, {2, 2}) == doctest::Approx(cross_entropy(one, {2})));
  CHECK_THROWS_AS(cross_entropy(one, {3}), InvalidArgument);
}

TEST_CASE("kl divergence values and edge cases") {
  CHECK(kl_div({0.25, 0.75}, {0.25, 0.75}) == 0.0);
  CHECK(kl_div({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  const double expect = 0.7 * std::log(0.7 / 0.4) + 0.3 * std::log(0.3 / 0.6);
  CHECK(kl_div({0.7, 0.3}, {0.4, 0.6}) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.18384).epsilon(1e-4));
  CHECK_THROWS_AS(kl_div({0.9, 0.3}, {0.5, 0.5}), InvalidArgument);
  // q clamped rather than erroring on zeros
  CHECK(kl_div({0.5, 0.5}, {1.0, 0.0}) > 10.0);
}

TEST_CASE("js divergence symmetry and bounds") {
  CHECK(js_div({0.2, 0.8}, {0.2, 0.8}) == 0.0);
  CHECK(js_div({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(std::log(2.0)));
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_simplex(rng, 4);
    const auto q = random_simplex(rng, 4);
    const double a = js_div(p, q), b = js_div(q, p);
    CHECK(std::abs(a - b) < 1e-12);
    CHECK(a >= 0.0);
    CHECK(a <= std::log(2.0) + 1e-12);
  }
}

TEST_CASE("kd loss endpoints and the worked example") {
  const Tensor student = rows_tensor({{0.0, 0.0}});
  const Tensor teacher = rows_tensor({{2.0, 0.0}});
  const std::vector<int> labels = {0};

  // alpha = 0: pure cross entropy
  CHECK(kd_loss(student, teacher, labels, 0.0, 3.0) ==
        doctest::Approx(cross_entropy(student, labels)).epsilon(1e-12));
  // alpha = 1 with equal logits: zero
  CHECK(kd_loss(teacher, teacher, labels, 1.0, 2.0) == doctest::Approx(0.0));

  // alpha = 0.5, T = 2: 0.5*ln2 + 0.5*4*KL(softmax(1,0) || (0.5,0.5));
  // oracle: KL((0.731059,0.268941) || (0.5,0.5)) = 0.1109441
  const auto pt = softmax_t({2.0, 0.0}, 2.0);
  const double kl = kl_div(pt, {0.5, 0.5});
  const double expect = 0.5 * std::log(2.0) + 0.5 * 4.0 * kl;
  CHECK(kd_loss(student, teacher, labels, 0.5, 2.0) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.5684617336).epsilon(1e-9));
}

TEST_CASE("kd loss graph value matches the plain form and is continuous in alpha") {
  Rng rng(3);
  Tensor student({5, 4}), teacher({5, 4});
  for (double& v : student.data) v = rng.normal();
  for (double& v : teacher.data) v = rng.normal();
  const std::vector<int> labels = {0, 3, 1, 2, 0};
  for (double alpha : {0.0, 0.25, 0.5, 0.99, 1.0}) {
    const double plain = kd_loss(student, teacher, labels, alpha, 4.0);
    const ag::Var graph =
        kd_loss_graph(ag::constant(student), teacher, labels, alpha, 4.0);
    CHECK(std::abs(plain - graph.scalar()) < 1e-9);
  }
  const double at = kd_loss(student, teacher, labels, 0.5, 4.0);
  const double nearby = kd_loss(student, teacher, labels, 0.5 + 1e-9, 4.0);
  CHECK(std::abs(at - nearby) < 1e-6);
}

TEST_CASE("attacker loss matches rowwise kl") {
  Rng rng(7);
  Tensor clone({6, 3});
  for (double& v : clone.data) v = rng.normal();
  std::vector<std::vector<double>> defense_rows;
  for (int i = 0; i < 6; ++i) defense_rows.push_back(random_simplex(rng, 3));
  const Tensor defense = rows_tensor(defense_rows);

  double expect = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto q = softmax_t({clone.row(i)[0], clone.row(i)[1], clone.row(i)[2]}, 1.0);
    expect += kl_div(defense_rows[i], q);
  }
  expect /= 6.0;
  CHECK(attacker_loss(clone, defense) == doctest::Approx(expect).epsilon(1e-12));

  // zero when the clone softmax equals the defense distribution
  Tensor matched({1, 2}, {std::log(0.7), std::log(0.3)});
  const Tensor dp = rows_tensor({{0.7, 0.3}});
  CHECK(attacker_loss(matched, dp) == doctest::Approx(0.0).epsilon(1e-12));
  // defense one-hot vs uniform clone
  CHECK(attacker_loss(rows_tensor({{0.0, 0.0}}), rows_tensor({{1.0, 0.0}})) ==
        doctest::Approx(std::log(2.0)));
}

TEST_CASE("total defense loss arithmetic") {
  CHECK(total_defense_loss(0.5, 0.2, 1.0) == doctest::Approx(0.3));
  CHECK(total_defense_loss(0.7, 0.0, 2.0) == doctest::Approx(0.7));
  CHECK(total_defense_loss(1.0, 10.0, 0.01) == doctest::Approx(0.9));
  CHECK_THROWS_AS(total_defense_loss(1.0, 1.0, 0.0), InvalidArgument);
}

TEST_CASE("agreement utility endpoints and oracle value") {
  const Tensor a = rows_tensor({{0.7, 0.3}, {0.2, 0.8}});
  CHECK(agreement_utility(a, a, LossBound(kLn2), UtilityLoss::js) == 1.0);

  const Tensor onehot = rows_tensor({{1.0, 0.0}});
  const Tensor other = rows_tensor({{0.0, 1.0}});
  CHECK(agreement_utility(onehot, other, LossBound(kLn2), UtilityLoss::js) ==
        doctest::Approx(0.0));

  const Tensor p = rows_tensor({{0.7, 0.3}});
  const Tensor q = rows_tensor({{0.4, 0.6}});
  const double expect = 1.0 - js_div({0.7, 0.3}, {0.4, 0.6}) / kLn2;
  CHECK(agreement_utility(p, q, LossBound(kLn2), UtilityLoss::js) ==
        doctest::Approx(expect).epsilon(1e-12));

  // kl utility with an undersized bound must refuse
  CHECK_THROWS_AS(agreement_utility(onehot, other, LossBound(0.1), UtilityLoss::kl),
                  BoundViolation);
}

TEST_CASE("agreement utility stays within [0,1] on random batches") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> rows1, rows2;
    for (int i = 0; i < 8; ++i) {
      rows1.push_back(random_simplex(rng, 5));
      rows2.push_back(random_simplex(rng, 5));
    }
    const double u = agreement_utility(rows_tensor(rows1), rows_tensor(rows2),
                                       LossBound(kLn2), UtilityLoss::js);
    CHECK(u >= 0.0);
    CHECK(u <= 1.0);
  }
}

TEST_CASE("loss gradients agree with finite differences") {
  Rng rng(21);
  Tensor logits({3, 4});
  for (double& v : logits.data) v = rng.normal();
  const std::vector<int> labels = {1, 3, 0};
  Tensor teacher({3, 4});
  for (double& v : teacher.data) v = rng.normal();
  Tensor defense({3, 4});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto p = random_simplex(rng, 4);
    std::copy(p.begin(), p.end(), defense.row(i));
  }

  struct Case {
    const char* name;
    std::function<ag::Var(const ag::Var&)> make;
  };
  const std::vector<Case> cases = {
      {"ce", [&](const ag::Var& l) { return ag::cross_entropy_mean(l, labels); }},
      {"kd", [&](const ag::Var& l) { return kd_loss_graph(l, teacher, labels, 0.6, 3.0); }},
      {"att_clone", [&](const ag::Var& l) { return attacker_loss_graph_clone(l, defense); }},
      {"att_defense",
       [&](const ag::Var& l) { return attacker_loss_graph_defense(l, defense); }},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    const ag::Var leaf = ag::leaf(logits);
    const ag::Var loss = c.make(leaf);
    ag::backward(loss);
    const Tensor grad = leaf.grad();
    Tensor probe = logits;
    const double h = 1e-5;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const double keep = probe.data[i];
      probe.data[i] = keep + h;
      const double up = c.make(ag::constant(probe)).scalar();
      probe.data[i] = keep - h;
      const double down = c.make(ag::constant(probe)).scalar();
      probe.data[i] = keep;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - grad.data[i]) < 1e-6);
    }
  }
}
