#include <filesystem>
#include <random>

#include "doctest.h"
#include "horizonlab/errors.hpp"
#include "horizonlab/net.hpp"
#include "oracles.hpp"

using namespace horizonlab;
using namespace horizonlab::net;

namespace {

Vector random_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Vector v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Parameters perturbed away from init so LN gains/shifts and biases matter.
ParamVector perturbed(const MlpConfig& c, std::uint64_t seed) {
  ParamVector p = init(c);
  p.flat() += random_vector(static_cast<Eigen::Index>(p.size()), seed, 0.2);
  return p;
}

double min_abs_preactivation(const MlpConfig& c, const ParamVector& p, const Vector& x) {
  auto [y, cache] = forward(c, p, x);
  double m = 1e300;
  for (const auto& b : cache.blocks) m = std::min(m, b.preact.cwiseAbs().minCoeff());
  return m;
}

}  // namespace

TEST_CASE("layout enumeration") {
  MlpConfig c;
  c.input_dim = 3;
  c.width_factor = 4;
  c.n_blocks = 2;
  // embed 12x3, per block gain+shift 2x12 and W 12x12 + b 12, unembed 3x12.
  const std::size_t expected = 12 * 3 + 2 * (12 * 12 + 12 + 2 * 12) + 3 * 12;
  CHECK(param_count(c) == expected);
  CHECK(make_layout(c).total == expected);
  c.unembed_bias = true;
  CHECK(param_count(c) == expected + 3);
  const Layout l = make_layout(c);
  std::size_t off = 0;
  for (const auto& s : l.slots) {
    CHECK(s.offset == off);
    off += s.size();
  }
  CHECK(off == l.total);
  CHECK_THROWS_AS(l.find("nope"), ArgumentError);
}

TEST_CASE("init is seeded and follows the documented distribution") {
  MlpConfig c;
  c.input_dim = 5;
  c.width_factor = 40;
  c.n_blocks = 1;
  c.seed = 9;
  const ParamVector a = init(c), b = init(c);
  CHECK(a.values == b.values);
  c.seed = 10;
  CHECK(init(c).values != a.values);
  const auto W = a.tensor("block0.W");
  const double var = W.array().square().mean();
  CHECK(var == doctest::Approx(1.0 / 200.0).epsilon(0.05));
  CHECK(a.tensor("block0.ln_gain").isOnes());
  CHECK(a.tensor("block0.ln_shift").isZero());
  CHECK(a.tensor("block0.b").isZero());
}

TEST_CASE("forward matches a direct layer-by-layer evaluation") {
  for (bool residual : {false, true})
    for (Activation act : {Activation::relu, Activation::softplus})
      for (int blocks : {0, 1, 3}) {
        MlpConfig c;
        c.input_dim = 3;
        c.width_factor = 3;
        c.n_blocks = blocks;
        c.residual = residual;
        c.activation = act;
        c.softplus_beta = 2.0;
        c.unembed_bias = blocks == 1;
        const ParamVector p = perturbed(c, 5);
        const Vector x = random_vector(3, 6);
        CHECK((apply(c, p, x) - oracle::mlp_forward(c, p, x)).norm() < 1e-12);
      }
}

TEST_CASE("zero depth is the product of embed and unembed") {
  MlpConfig c;
  c.input_dim = 4;
  c.n_blocks = 0;
  const ParamVector p = perturbed(c, 1);
  const Vector x = random_vector(4, 2);
  const Vector direct = p.tensor("unembed.W") * (p.tensor("embed.W") * x);
  CHECK((apply(c, p, x) - direct).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("all-zero parameters give zero output without skips") {
  MlpConfig c;
  c.input_dim = 3;
  c.residual = false;
  ParamVector p = ParamVector::zeros(std::make_shared<const Layout>(make_layout(c)));
  CHECK(apply(c, p, random_vector(3, 4)).isZero(0.0));
}

TEST_CASE("softplus approaches relu for large beta") {
  MlpConfig c;
  c.input_dim = 3;
  c.n_blocks = 2;
  MlpConfig s = c;
  s.activation = Activation::softplus;
  s.softplus_beta = 50.0;
  const ParamVector p = init(c);
  int checked = 0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const Vector x = random_vector(3, 100 + k);
    if (min_abs_preactivation(c, p, x) <= 0.1) continue;
    ++checked;
    CHECK((apply(c, p, x) - apply(s, p, x)).cwiseAbs().maxCoeff() < 2e-2);
  }
  CHECK(checked > 0);
}

TEST_CASE("layer norm statistics before gain and shift") {
  MlpConfig c;
  c.input_dim = 3;
  c.width_factor = 5;
  c.n_blocks = 3;
  const ParamVector p = perturbed(c, 8);
  auto [y, cache] = forward(c, p, random_vector(3, 9, 3.0));
  for (const auto& b : cache.blocks) {
    const Vector xh = b.xhat.col(0);
    const double m = xh.mean();
    const double sd = std::sqrt((xh.array() - m).square().mean());
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(sd - 1.0) < 1e-6);
  }
}

TEST_CASE("unembed homogeneity and determinism") {
  MlpConfig c;
  c.input_dim = 2;
  ParamVector p = perturbed(c, 3);
  const Vector x = random_vector(2, 4);
  const Vector y = apply(c, p, x);
  CHECK(apply(c, p, x) == y);
  p.tensor("unembed.W") *= 2.0;
  CHECK(apply(c, p, x) == 2.0 * y);
}

TEST_CASE("backward of a zero cotangent is zero") {
  MlpConfig c;
  c.input_dim = 3;
  const ParamVector p = perturbed(c, 1);
  auto [y, cache] = forward(c, p, random_vector(3, 2));
  const Cotangents cot = backward(c, p, cache, Vector::Zero(3));
  CHECK(cot.dx.isZero(0.0));
  CHECK(cot.dparams.flat().isZero(0.0));
  CHECK_THROWS_AS(backward(c, p, cache, Vector::Zero(2)), ArgumentError);
  CHECK_THROWS_AS(forward(c, p, Vector::Constant(3, INFINITY)), NumericError);
}

TEST_CASE("backward matches central differences") {
  for (bool residual : {false, true})
    for (Activation act : {Activation::softplus, Activation::relu})
      for (int blocks : {0, 1, 3}) {
        MlpConfig c;
        c.input_dim = 3;
        c.width_factor = 2;
        c.n_blocks = blocks;
        c.residual = residual;
        c.activation = act;
        c.unembed_bias = true;
        const ParamVector p = perturbed(c, 11 + static_cast<std::uint64_t>(blocks));
        Vector x = random_vector(3, 12);
        if (act == Activation::relu) {
          for (std::uint64_t k = 0; min_abs_preactivation(c, p, x) <= 1e-3; ++k) x = random_vector(3, 200 + k);
        }
        const Vector dy = random_vector(3, 13);
        auto [y, cache] = forward(c, p, x);
        const Cotangents cot = backward(c, p, cache, dy);
        const auto loss_of_params = [&](const Vector& th) {
          ParamVector q = p;
          q.flat() = th;
          return dy.dot(apply(c, q, x));
        };
        const auto loss_of_input = [&](const Vector& xi) { return dy.dot(apply(c, p, xi)); };
        // Step 1e-5 balances truncation against roundoff for these magnitudes.
        const double tol = act == Activation::softplus ? 1e-6 : 1e-5;
        INFO("residual=" << residual << " act=" << to_string(act) << " blocks=" << blocks);
        CHECK(oracle::max_rel_error(cot.dparams.flat(), oracle::fd_gradient(loss_of_params, p.flat(), 1e-5)) < tol);
        CHECK(oracle::max_rel_error(cot.dx, oracle::fd_gradient(loss_of_input, x, 1e-5)) < tol);
      }
}

TEST_CASE("batched passes equal per-sample passes") {
  MlpConfig c;
  c.input_dim = 3;
  c.n_blocks = 2;
  c.activation = Activation::softplus;
  const ParamVector p = perturbed(c, 21);
  Matrix X(3, 5), DY(3, 5);
  for (int b = 0; b < 5; ++b) {
    X.col(b) = random_vector(3, 30 + static_cast<std::uint64_t>(b));
    DY.col(b) = random_vector(3, 40 + static_cast<std::uint64_t>(b));
  }
  Cache cache;
  const Matrix Y = forward_batch(c, p, X, &cache);
  ParamVector g = p.zeros_like();
  const Matrix DX = backward_batch(c, p, cache, DY, g);
  Vector g_ref = Vector::Zero(static_cast<Eigen::Index>(p.size()));
  for (int b = 0; b < 5; ++b) {
    auto [y, cb] = forward(c, p, X.col(b));
    CHECK((Y.col(b) - y).norm() < 1e-14);
    const Cotangents cot = backward(c, p, cb, DY.col(b));
    CHECK((DX.col(b) - cot.dx).norm() < 1e-13);
    g_ref += cot.dparams.flat();
  }
  CHECK((g.flat() - g_ref).norm() < 1e-12);
}

TEST_CASE("parameter files round trip") {
  MlpConfig c;
  c.input_dim = 4;
  c.n_blocks = 2;
  c.activation = Activation::softplus;
  c.softplus_beta = 3.5;
  c.seed = 77;
  const ParamVector p = perturbed(c, 2);
  const auto dir = std::filesystem::temp_directory_path() / "horizonlab_net_test";
  std::filesystem::create_directories(dir);
  save_params(dir / "model", c, p);
  auto [c2, p2] = load_params(dir / "model");
  CHECK(config_to_json(c2) == config_to_json(c));
  CHECK(p2.values == p.values);
  std::filesystem::resize_file(dir / "model.bin", 16);
  CHECK_THROWS_AS(load_params(dir / "model"), ArgumentError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config validation") {
  MlpConfig c;
  c.softplus_beta = 0.0;
  c.activation = Activation::softplus;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK_THROWS_AS(activation_from_string("tanh"), ArgumentError);
}
