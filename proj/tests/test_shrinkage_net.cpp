#include <doctest.h>

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "nnshrink/errors.hpp"
#include "nnshrink/estimators.hpp"
#include "nnshrink/portfolio.hpp"
#include "nnshrink/shrinkage_net.hpp"
#include "nnshrink/synthetic.hpp"
#include "oracles.hpp"

using namespace nnshrink;

namespace {

constexpr ModelConfig kSmall{.width = 8, .heads = 2, .ff_width = 16, .layers = 1};

ShrinkageInput lw_input(const Matrix& x, EigenSystem* es_out = nullptr) {
  const auto es = eigh(ledoit_wolf(x).matrix);
  if (es_out) *es_out = es;
  return {es.values, double(x.rows()) / double(x.cols())};
}

void jitter(ShrinkageModel& model, double sd, synthetic::Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  for (auto& p : model.params) p += n(rng);
}

}  // namespace

TEST_CASE("forward basics") {
  synthetic::Rng rng(40);
  auto model = make_model(ModelConfig{}, 1);
  CHECK(model.config.layers == 6);
  CHECK(model.params.size() == ParamLayout(model.config).total);

  SUBCASE("zero head gives eta = 0") {
    const ParamLayout L = model.layout();
    std::fill(model.params.begin() + static_cast<std::ptrdiff_t>(L.w_head), model.params.end(), 0.0);
    const Vector eta = forward(model, lw_input(synthetic::gaussian_matrix(6, 20, rng)));
    CHECK(eta.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("N = 50, c = 50/60 from LW eigenvalues") {
    const Vector eta = forward(model, lw_input(synthetic::gaussian_matrix(50, 60, rng)));
    CHECK(eta.size() == 50);
    CHECK(eta.minCoeff() >= 0.0);
    CHECK(eta.allFinite());
  }
  SUBCASE("duplicated eigenvalue tokens get equal outputs") {
    jitter(model, 0.05, rng);
    ShrinkageInput in{Vector(5), 0.5};
    in.lambda << 4.0, 2.0, 2.0, 1.0, 0.5;
    const Vector eta = forward(model, in);
    CHECK(std::abs(eta(1) - eta(2)) <= 1e-10 * std::max(1.0, std::abs(eta(1))));
  }
  SUBCASE("invalid input") {
    CHECK_THROWS_AS(forward(model, {Vector(0), 1.0}), DataError);
    CHECK_THROWS_AS(forward(model, {Vector::Ones(3), 0.0}), DataError);
    CHECK_THROWS_AS(forward(model, {Vector::Constant(3, -1.0), 1.0}), DataError);
  }
}

TEST_CASE("forward is permutation equivariant and works for any token count") {
  synthetic::Rng rng(41);
  auto model = make_model(ModelConfig{}, 2);
  jitter(model, 0.05, rng);
  for (std::size_t n : {1u, 2u, 17u, 100u, 512u}) {
    Vector lambda = synthetic::gaussian_matrix(n, 1, rng).col(0).cwiseAbs();
    lambda(0) += 1.0;
    const ShrinkageInput in{lambda, 0.7};
    const Vector eta = forward(model, in);
    REQUIRE(eta.size() == static_cast<Eigen::Index>(n));
    CHECK(eta.minCoeff() >= 0.0);

    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    ShrinkageInput shuffled{Vector(n), 0.7};
    for (std::size_t k = 0; k < n; ++k) shuffled.lambda(k) = lambda(perm[k]);
    const Vector eta_p = forward(model, shuffled);
    for (std::size_t k = 0; k < n; ++k)
      CHECK(std::abs(eta_p(k) - eta(perm[k])) <= 1e-10 * std::max(1.0, std::abs(eta(perm[k]))));
  }
}

TEST_CASE("output is nonnegative even when the head pushes tokens below zero") {
  synthetic::Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    auto model = make_model(kSmall, static_cast<std::uint64_t>(trial));
    jitter(model, 0.5, rng);
    model.params.back() = -0.5;
    const Vector eta = forward(model, lw_input(synthetic::gaussian_matrix(7, 10, rng)));
    CHECK(eta.minCoeff() >= 0.0);
  }
}

TEST_CASE("risk loss") {
  synthetic::Rng rng(43);
  EigenSystem es;
  lw_input(synthetic::gaussian_matrix(6, 12, rng), &es);
  const Matrix val = synthetic::gaussian_matrix(6, 4, rng);

  SUBCASE("matches the plug-in formula") {
    const Vector eta = es.values.cwiseInverse();
    const auto rg = risk_loss(es, eta, val);
    const Vector h = gmvp_weights(reconstruct_precision(es, eta)).weights;
    CHECK((rg.weights - h).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(rg.loss == doctest::Approx(oracle::portfolio_return_variance(h, val)).epsilon(1e-12));
  }
  SUBCASE("constant eta: weights independent of the constant, zero gradient along eta") {
    const auto a = risk_loss(es, Vector::Constant(6, 0.3), val);
    const auto b = risk_loss(es, Vector::Constant(6, 7.0), val);
    CHECK((a.weights - b.weights).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(a.d_eta.sum()) <= 1e-8 * a.d_eta.norm() + 1e-15);
  }
  SUBCASE("common scale of eta is a null direction for any eta") {
    const Vector eta = synthetic::gaussian_matrix(6, 1, rng).col(0).cwiseAbs();
    const auto rg = risk_loss(es, eta, val);
    CHECK(std::abs(eta.dot(rg.d_eta)) <= 1e-10 * eta.norm() * rg.d_eta.norm());
    for (double k : {1e-3, 2.0, 1e4})
      CHECK((risk_loss(es, k * eta, val).weights - rg.weights).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("zero validation data gives zero loss and gradient") {
    const auto rg = risk_loss(es, es.values.cwiseInverse(), Matrix::Zero(6, 3));
    CHECK(rg.loss == 0.0);
    CHECK(rg.d_eta.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("collapsed eta is reported") {
    CHECK_THROWS_AS(risk_loss(es, Vector::Zero(6), val), NumericError);
  }
  SUBCASE("d_eta matches finite differences") {
    const Vector eta = synthetic::gaussian_matrix(6, 1, rng).col(0).cwiseAbs().array() + 0.1;
    const auto rg = risk_loss(es, eta, val);
    std::vector<double> p(eta.data(), eta.data() + 6);
    auto f = [&](const std::vector<double>& q) {
      return risk_loss(es, Eigen::Map<const Vector>(q.data(), 6), val).loss;
    };
    for (std::size_t k = 0; k < 6; ++k)
      CHECK(rg.d_eta(k) == doctest::Approx(oracle::central_difference(f, p, k, 1e-6)).epsilon(1e-6));
  }
}

TEST_CASE("loss_and_gradients: zero validation gives zero gradients") {
  synthetic::Rng rng(44);
  const auto model = make_model(kSmall, 3);
  EigenSystem es;
  const auto in = lw_input(synthetic::gaussian_matrix(5, 9, rng), &es);
  const auto gb = loss_and_gradients(model, in, es, Matrix::Zero(5, 3));
  CHECK(gb.loss == 0.0);
  CHECK(std::all_of(gb.grads.begin(), gb.grads.end(), [](double g) { return g == 0.0; }));
}

TEST_CASE("analytic gradients match central finite differences") {
  synthetic::Rng rng(45);
  double worst = 0.0;
  int checked = 0;
  for (int instance = 0; instance < 8; ++instance) {
    auto model = make_model(kSmall, 100 + static_cast<std::uint64_t>(instance));
    jitter(model, 0.2, rng);
    model.params.back() = 0.3;
    EigenSystem es;
    const auto in = lw_input(synthetic::gaussian_matrix(5, 8, rng), &es);
    const Matrix val = synthetic::gaussian_matrix(5, 3, rng);
    const auto tr = forward_trace(model, in);
    if (tr.head.cwiseAbs().minCoeff() < 1e-2 || tr.head.maxCoeff() <= 0.0) continue;  // keep the ReLU away from its kink

    const auto gb = loss_and_gradients(model, in, es, val);
    auto f = [&](const std::vector<double>& p) {
      ShrinkageModel m{model.config, p};
      return risk_loss(es, forward(m, in), val).loss;
    };
    for (std::size_t k = 0; k < model.params.size(); ++k) {
      const double fd = oracle::central_difference(f, model.params, k, 1e-4);
      const double an = gb.grads[k];
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-6 * gb.loss});
      worst = std::max(worst, std::abs(fd - an) / scale);
      ++checked;
    }
  }
  CHECK(checked > 0);
  CHECK(worst <= 1e-4);
  MESSAGE("max relative gradient error " << worst << " over " << checked << " coordinates");
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradients leave parameters unchanged") {
    auto model = make_model(kSmall, 5);
    const auto before = model.params;
    AdamState state;
    for (int i = 0; i < 3; ++i) adam_step(model, {0.0, std::vector<double>(model.params.size(), 0.0)}, state);
    CHECK(model.params == before);
  }
  SUBCASE("constant gradient: step tends to lr * sign(g)") {
    ShrinkageModel scalar{kSmall, {0.0}};
    AdamState state;
    double prev = 0.0, step = 0.0;
    for (int i = 0; i < 5000; ++i) {
      adam_step(scalar, {0.0, {-3.0}}, state, 1e-3);
      step = scalar.params[0] - prev;
      prev = scalar.params[0];
    }
    CHECK(step == doctest::Approx(1e-3).epsilon(1e-6));
  }
  SUBCASE("default learning rate") { CHECK(kDefaultLearningRate == 1e-4); }
  SUBCASE("shape mismatch") {
    auto model = make_model(kSmall, 5);
    AdamState state;
    CHECK_THROWS_AS(adam_step(model, {0.0, {1.0}}, state), DataError);
  }
}

TEST_CASE("make_model is deterministic and validates dimensions") {
  CHECK(make_model(ModelConfig{}, 9).params == make_model(ModelConfig{}, 9).params);
  CHECK(make_model(ModelConfig{}, 9).params != make_model(ModelConfig{}, 10).params);
  CHECK_THROWS_AS(make_model({.width = 30, .heads = 4, .ff_width = 64, .layers = 6}, 1), ConfigError);
}

TEST_CASE("model files") {
  synthetic::Rng rng(46);
  auto model = make_model(ModelConfig{}, 7);
  jitter(model, 0.01, rng);
  std::stringstream buf;
  write_model(model, buf);
  const std::string bytes = buf.str();

  SUBCASE("round trip is bit exact") {
    std::istringstream in(bytes);
    const auto back = read_model(in);
    CHECK(back.config == model.config);
    CHECK(std::memcmp(back.params.data(), model.params.data(), model.params.size() * sizeof(double)) == 0);
    const auto input = lw_input(synthetic::gaussian_matrix(12, 30, rng));
    const Vector a = forward(model, input), b = forward(back, input);
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
  }
  SUBCASE("d = 32, 6 layers through a file on disk") {
    const auto path = std::filesystem::temp_directory_path() / "nnshrink_model_test.bin";
    save_model(model, path);
    const auto back = load_model(path);
    CHECK(back.params == model.params);
    std::filesystem::remove(path);
  }
  SUBCASE("truncated file fails the checksum") {
    std::istringstream in(bytes.substr(0, bytes.size() - 100));
    CHECK_THROWS_WITH_AS(read_model(in), "model file checksum mismatch", ModelFileError);
  }
  SUBCASE("flipped byte fails the checksum") {
    std::string bad = bytes;
    bad[200] ^= 0x10;
    std::istringstream in(bad);
    CHECK_THROWS_AS(read_model(in), ModelFileError);
  }
  SUBCASE("schema version mismatch") {
    std::string bad = bytes;
    const std::uint32_t v = 99;
    std::memcpy(bad.data() + 8, &v, 4);
    const auto c = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bad.data()), static_cast<uInt>(bad.size() - 4)));
    std::memcpy(bad.data() + bad.size() - 4, &c, 4);
    std::istringstream in(bad);
    CHECK_THROWS_WITH_AS(read_model(in), "unsupported model schema version 99", ModelFileError);
  }
  SUBCASE("not a model file") {
    std::istringstream in("hello world, definitely not a model");
    CHECK_THROWS_AS(read_model(in), ModelFileError);
  }
}
