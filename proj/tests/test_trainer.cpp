#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "twopass/trainer.hpp"

using namespace twopass;

namespace {

Matrix<double> mat2(double a, double b, double c, double d) {
  Matrix<double> m(2, 2);
  m << a, b, c, d;
  return m;
}

Batch<double> random_batch(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Batch<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Dataset labelled(Matrix<double> inputs, std::vector<int> labels, int classes) {
  Dataset ds;
  ds.inputs = std::move(inputs);
  ds.targets = one_hot(labels, classes);
  ds.labels = std::move(labels);
  return ds;
}

double max_abs_diff(const Matrix<double>& a, const Matrix<double>& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Two-pass step on one batch, spelled out with an explicit weight snapshot.
UpdateSet<double> reference_step(const Network<double>& net, const Batch<double>& x0, const Batch<double>& t,
                                 const ProjectionMatrix<double>& f) {
  const std::vector<Matrix<double>> frozen = [&] {
    std::vector<Matrix<double>> w;
    for (std::size_t l = 0; l < net.depth(); ++l) w.push_back(net.weights(l));
    return w;
  }();
  std::vector<Batch<double>> xs{x0};
  for (std::size_t l = 0; l < net.depth(); ++l)
    xs.push_back(activation_apply(net.layer(l).activation, frozen[l] * xs.back()));
  const Batch<double> gamma = xs.back() - t;
  std::vector<Batch<double>> xe{x0 + f.matrix * gamma};
  for (std::size_t l = 0; l < net.depth(); ++l)
    xe.push_back(activation_apply(net.layer(l).activation, frozen[l] * xe.back()));
  UpdateSet<double> out;
  const double inv = 1.0 / static_cast<double>(x0.cols());
  for (std::size_t l = 1; l < net.depth(); ++l) out.delta_w.push_back((xs[l] - xe[l]) * xe[l - 1].transpose() * inv);
  out.delta_w.push_back(gamma * xe[net.depth() - 1].transpose() * inv);
  return out;
}

}  // namespace

TEST_CASE("modulated pass with zero error reproduces the clean trace") {
  const auto net = make_network<double>({{3, 4, ActivationKind::ReLU}, {4, 2, ActivationKind::Sigmoid}}, 4);
  Batch<double> x0(3, 2);
  x0 << 0.1, 0.9, -0.4, 0.3, 0.7, 0.2;
  const auto clean = forward(net, x0);
  const auto f = sample_projection<double>(3, 2, 1);
  const auto mod = modulated_forward(net, modulate_input(x0, f, OutputError<double>{Batch<double>::Zero(2, 2)}));
  for (std::size_t l = 0; l <= clean.depth(); ++l) CHECK(clean.x[l] == mod.x[l]);

  Network<double> eye({{Matrix<double>::Identity(3, 3), ActivationKind::Identity}});
  CHECK(modulated_forward(eye, x0).output() == x0);
  CHECK_THROWS_AS(modulated_forward(net, Batch<double>::Zero(2, 1)), ShapeError);
}

TEST_CASE("modulated pass on a seeded 2-2-2 net matches the oracle") {
  const auto net = make_network<double>({{2, 2, ActivationKind::ReLU}, {2, 2, ActivationKind::Sigmoid}}, 42);
  Batch<double> xe(2, 1);
  xe << 1.03, -0.02;
  const auto trace = modulated_forward(net, xe);
  const auto expected = oracle::forward(oracle::from_network(net), {1.03, -0.02});
  for (std::size_t l = 0; l < expected.size(); ++l)
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(trace.x[l](static_cast<Eigen::Index>(i), 0) == doctest::Approx(expected[l][i]).epsilon(1e-14));
}

TEST_CASE("two-pass updates on a hand-sized identity network") {
  Network<double> net({{mat2(1, 2, 0, 1), ActivationKind::Identity}, {mat2(1, 0, 1, 1), ActivationKind::Identity}});
  Batch<double> x0(2, 1), t(2, 1);
  x0 << 1, 2;
  t << 4, 6;
  ProjectionMatrix<double> f{mat2(0.5, -0.25, 0.1, 0.2), 0, 0.0};

  const auto clean = forward(net, x0);  // x1 = (5, 2), x2 = (5, 7)
  const auto err = output_error(clean.output(), t);  // gamma = (1, 1)
  const auto mod = modulated_forward(net, modulate_input(x0, f, err));  // xe0 = (1.25, 2.3), xe1 = (5.85, 2.3)
  const auto up = two_pass_updates(clean, mod, err);
  REQUIRE(up.size() == 2);
  // dW1 = (x1 - xe1) xe0^T = (-0.85, -0.3)^T (1.25, 2.3)
  CHECK(max_abs_diff(up.delta_w[0], mat2(-1.0625, -1.955, -0.375, -0.69)) < 1e-12);
  // dW2 = gamma xe1^T
  CHECK(max_abs_diff(up.delta_w[1], mat2(5.85, 2.3, 5.85, 2.3)) < 1e-12);
}

TEST_CASE("zero output error leaves every update at exactly zero") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = make_network<double>({{5, 4, ActivationKind::ReLU}, {4, 3, ActivationKind::Square},
                                           {3, 2, ActivationKind::Identity}}, rng());
    const Batch<double> x0 = random_batch(rng, 5, 3);
    const auto clean = forward(net, x0);
    const auto err = output_error(clean.output(), clean.output());
    const auto f = sample_projection<double>(5, 2, rng());
    const auto up = two_pass_updates(clean, modulated_forward(net, modulate_input(x0, f, err)), err);
    CHECK(up.all_zero());
    CHECK(apply_updates(net, up, 0.5) == net);
    CHECK(backprop_updates(net, clean, err).all_zero());
  }
}

TEST_CASE("single-sample updates have rank at most one") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto net = make_network<double>({{6, 5, ActivationKind::ReLU}, {5, 4, ActivationKind::ReLU},
                                           {4, 3, ActivationKind::Softmax}}, rng());
    const Batch<double> x0 = random_batch(rng, 6, 1);
    const Batch<double> t = Batch<double>::Identity(3, 1);
    const auto clean = forward(net, x0);
    const auto err = output_error(clean.output(), t);
    const auto f = sample_projection<double>(6, 3, rng(), 1.0);
    const auto up = two_pass_updates(clean, modulated_forward(net, modulate_input(x0, f, err)), err);
    for (const auto& d : up.delta_w) {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(d);
      const auto& s = svd.singularValues();
      CHECK(s.size() >= 2);
      CHECK(s(1) <= 1e-12 * std::max(1.0, s(0)));
    }
    // A batch of b samples gives rank <= b.
    const Batch<double> xb = random_batch(rng, 6, 2);
    const auto cb = forward(net, xb);
    const auto eb = output_error(cb.output(), Batch<double>::Zero(3, 2));
    const auto ub = two_pass_updates(cb, modulated_forward(net, modulate_input(xb, f, eb)), eb);
    for (const auto& d : ub.delta_w) {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(d);
      if (svd.singularValues().size() > 2)
        CHECK(svd.singularValues()(2) <= 1e-12 * std::max(1.0, svd.singularValues()(0)));
    }
  }
}

TEST_CASE("first-layer update is the hidden-layer rule applied to x0 + F gamma") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = make_network<double>({{4, 5, ActivationKind::ReLU}, {5, 3, ActivationKind::Sigmoid}}, rng());
    const Batch<double> x0 = random_batch(rng, 4, 3);
    const Batch<double> t = random_batch(rng, 3, 3);
    const auto f = sample_projection<double>(4, 3, rng(), 1.0);
    const auto clean = forward(net, x0);
    const auto err = output_error(clean.output(), t);
    const auto up = two_pass_updates(clean, modulated_forward(net, modulate_input(x0, f, err)), err);

    // independent restatement: the same (x_l - xe_l) xe_{l-1}^T pattern with xe_0 built by hand
    const Batch<double> xe0 = x0 + f.matrix * (clean.output() - t);
    const Batch<double> xe1 = activation_apply(ActivationKind::ReLU, net.weights(0) * xe0);
    const Matrix<double> expected = (clean.x[1] - xe1) * xe0.transpose() / 3.0;
    CHECK(max_abs_diff(up.delta_w[0], expected) <= 1e-13);
  }
}

TEST_CASE("depth-one networks learn from the true error") {
  Network<double> net({{mat2(1, 0, 0, 1), ActivationKind::Identity}});
  Batch<double> x0(2, 1), t(2, 1);
  x0 << 1, 1;
  t << 0, 3;
  ProjectionMatrix<double> f{mat2(0.1, 0, 0, 0.1), 0, 0.0};
  const auto clean = forward(net, x0);
  const auto err = output_error(clean.output(), t);  // (1, -2)
  const auto mod = modulated_forward(net, modulate_input(x0, f, err));  // xe0 = (1.1, 0.8)
  const auto up = two_pass_updates(clean, mod, err);
  REQUIRE(up.size() == 1);
  CHECK(max_abs_diff(up.delta_w[0], mat2(1.1, 0.8, -2.2, -1.6)) < 1e-12);
}

TEST_CASE("two_pass_updates rejects mismatched traces") {
  const auto a = make_network<double>({{3, 3, ActivationKind::ReLU}, {3, 2, ActivationKind::Identity}}, 1);
  const auto b = make_network<double>({{3, 2, ActivationKind::Identity}}, 1);
  const Batch<double> x0 = Batch<double>::Ones(3, 1);
  const auto ta = forward(a, x0);
  const auto tb = forward(b, x0);
  const OutputError<double> err{Batch<double>::Zero(2, 1)};
  CHECK_THROWS_AS(two_pass_updates(ta, tb, err), ShapeError);
  CHECK_THROWS_AS(two_pass_updates(ta, ta, OutputError<double>{Batch<double>::Zero(2, 2)}), ShapeError);
}

TEST_CASE("apply_updates arithmetic") {
  Network<double> net({{Matrix<double>::Constant(1, 1, 1.0), ActivationKind::Identity}});
  UpdateSet<double> up{{Matrix<double>::Constant(1, 1, 2.0)}};
  CHECK(apply_updates(net, up, 0.5).weights(0)(0, 0) == 0.0);
  CHECK(apply_updates(net, up, 0.0) == net);
  CHECK(apply_updates(net, UpdateSet<double>{{Matrix<double>::Zero(1, 1)}}, 3.0) == net);
  CHECK_THROWS_AS(apply_updates(net, UpdateSet<double>{{Matrix<double>::Zero(2, 1)}}, 1.0), ShapeError);
  CHECK_THROWS_AS(apply_updates(net, UpdateSet<double>{}, 1.0), ShapeError);
}

TEST_CASE("backprop on a single linear layer is gamma x0^T") {
  std::mt19937_64 rng(2);
  const auto net = make_network<double>({{4, 3, ActivationKind::Identity}}, 9);
  const Batch<double> x0 = random_batch(rng, 4, 1);
  const Batch<double> t = random_batch(rng, 3, 1);
  const auto clean = forward(net, x0);
  const auto err = output_error(clean.output(), t);
  const auto up = backprop_updates(net, clean, err);
  CHECK(max_abs_diff(up.delta_w[0], err.gamma * x0.transpose()) < 1e-14);
}

TEST_CASE("backprop gradients match central finite differences") {
  struct Case {
    std::vector<LayerSpec> specs;
    std::uint64_t seed;
    int batch;
  };
  const std::vector<Case> cases{
      {{{4, 3, ActivationKind::Sigmoid}, {3, 2, ActivationKind::Identity}}, 42, 1},
      {{{4, 3, ActivationKind::ReLU}, {3, 2, ActivationKind::Softmax}}, 43, 3},
      {{{4, 3, ActivationKind::Square}, {3, 2, ActivationKind::Sigmoid}}, 44, 2},
      {{{10, 8, ActivationKind::ReLU}, {8, 6, ActivationKind::Sigmoid}, {6, 3, ActivationKind::Softmax}}, 45, 4},
  };
  std::mt19937_64 rng(77);
  for (const auto& c : cases) {
    const auto net = make_network<double>(c.specs, c.seed);
    const Batch<double> x0 = random_batch(rng, net.input_dim(), c.batch);
    const Batch<double> t = random_batch(rng, net.output_dim(), c.batch, 0.5);
    const auto clean = forward(net, x0);
    const auto up = backprop_updates(net, clean, output_error(clean.output(), t));

    std::vector<oracle::Vec> xs, ts;
    for (int s = 0; s < c.batch; ++s) {
      xs.emplace_back(x0.col(s).data(), x0.col(s).data() + x0.rows());
      ts.emplace_back(t.col(s).data(), t.col(s).data() + t.rows());
    }
    const auto fd = oracle::finite_difference_gradient(oracle::from_network(net), xs, ts, 1e-5);
    double worst = 0.0;
    for (std::size_t l = 0; l < net.depth(); ++l)
      for (Eigen::Index r = 0; r < up.delta_w[l].rows(); ++r)
        for (Eigen::Index k = 0; k < up.delta_w[l].cols(); ++k) {
          const double g = up.delta_w[l](r, k);
          const double n = fd[l][static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
          worst = std::max(worst, std::abs(g - n) / std::max(1e-6, std::max(std::abs(g), std::abs(n))));
        }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("training matches a snapshot-based reference step") {
  std::mt19937_64 rng(90);
  const auto net = make_network<double>({{5, 6, ActivationKind::ReLU}, {6, 4, ActivationKind::ReLU},
                                         {4, 3, ActivationKind::Softmax}}, 3);
  Matrix<double> inputs(8, 5);
  for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = std::uniform_real_distribution<>(0, 1)(rng);
  std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1};
  const auto data = labelled(inputs, labels, 3);
  const auto f = sample_projection<double>(5, 3, 4, 1.0);

  TrainConfig cfg;
  cfg.learning_rate = 0.3;
  cfg.batch_size = 8;
  cfg.epochs = 1;
  cfg.shuffle = false;
  const auto trained = train(net, data, f, cfg).network;

  const Batch<double> x0 = inputs.transpose();
  const Batch<double> t = data.targets.transpose();
  const auto expected = apply_updates(net, reference_step(net, x0, t, f), 0.3);
  for (std::size_t l = 0; l < net.depth(); ++l) CHECK(max_abs_diff(trained.weights(l), expected.weights(l)) < 1e-13);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto data = xor_dataset();
  const auto net = make_network<double>({{2, 8, ActivationKind::Square}, {8, 1, ActivationKind::Identity}}, 5);
  const auto f = sample_projection<double>(2, 1, 6);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 50;
  cfg.batch_size = 2;
  cfg.loss = LossMode::MSE;
  cfg.seed = 11;
  const auto a = train(net, data, f, cfg);
  const auto b = train(net, data, f, cfg);
  CHECK(a.history == b.history);
  CHECK(a.network == b.network);
  CHECK(a.history.records.size() == 100);
  for (std::size_t i = 0; i < a.history.records.size(); ++i)
    CHECK(a.history.records[i].iteration == static_cast<std::int64_t>(i));
  cfg.seed = 12;
  CHECK(!(train(net, data, f, cfg).history == a.history));
}

TEST_CASE("learning-rate schedule and iteration cap") {
  TrainConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.epochs = 30;
  CHECK(cfg.learning_rate_at(19) == 1.0);
  CHECK(cfg.learning_rate_at(20) == doctest::Approx(0.1));
  cfg.lr_decay_at = 1.0;
  CHECK(cfg.learning_rate_at(29) == 1.0);

  const auto data = xor_dataset();
  const auto net = make_network<double>({{2, 4, ActivationKind::Square}, {4, 1, ActivationKind::Identity}}, 5);
  TrainConfig capped;
  capped.epochs = 100;
  capped.batch_size = 4;
  capped.loss = LossMode::MSE;
  capped.max_iterations = 7;
  CHECK(train(net, data, sample_projection<double>(2, 1, 1), capped).history.records.size() == 7);
}

TEST_CASE("training reports divergence with the iteration") {
  const auto data = xor_dataset();
  const auto net = make_network<double>({{2, 8, ActivationKind::Square}, {8, 1, ActivationKind::Identity}}, 5);
  TrainConfig cfg;
  cfg.learning_rate = 1e6;
  cfg.epochs = 100;
  cfg.batch_size = 4;
  cfg.loss = LossMode::MSE;
  try {
    train(net, data, sample_projection<double>(2, 1, 1), cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration >= 0);
    CHECK(std::string(e.what()).find("iteration " + std::to_string(e.iteration)) != std::string::npos);
  }
}

TEST_CASE("training validates its inputs") {
  const auto data = xor_dataset();
  const auto net = make_network<double>({{2, 2, ActivationKind::Square}, {2, 1, ActivationKind::Identity}}, 5);
  const auto f = sample_projection<double>(2, 1, 1);
  TrainConfig cfg;
  cfg.loss = LossMode::MSE;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(train(net, data, f, cfg), ConfigError);
  cfg.learning_rate = 0.1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(net, data, f, cfg), ConfigError);
  cfg.batch_size = 4;
  cfg.loss = LossMode::SoftmaxMSE;
  CHECK_THROWS_AS(train(net, data, f, cfg), ConfigError);
  cfg.loss = LossMode::MSE;
  CHECK_THROWS_AS(train(net, data, sample_projection<double>(3, 1, 1), cfg), ShapeError);
  const auto wide = make_network<double>({{3, 1, ActivationKind::Identity}}, 1);
  CHECK_THROWS_AS(train(wide, data, f, cfg), ShapeError);
}

TEST_CASE("evaluate computes accuracy and mean square error") {
  Matrix<double> inputs(3, 2);
  inputs << 1, 0, 0, 1, 1, 0;
  const auto data = labelled(inputs, {0, 1, 1}, 2);
  Network<double> net({{Matrix<double>::Identity(2, 2), ActivationKind::Identity}});
  const auto ev = evaluate(net, data, {}, 2);
  REQUIRE(ev.accuracy.has_value());
  CHECK(*ev.accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(ev.mse == doctest::Approx(2.0 / 6.0));
  CHECK(ev.predictions == std::vector<int>{0, 1, 0});
}
