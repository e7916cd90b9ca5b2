#include <set>

#include "doctest.h"
#include "horizonlab/errors.hpp"
#include "horizonlab/optimize.hpp"
#include "horizonlab/rng.hpp"

using namespace horizonlab;
using namespace horizonlab::optimize;

namespace {

net::ParamVector flat_params(std::vector<double> v) {
  auto layout = std::make_shared<net::Layout>();
  layout->slots.push_back({"theta", static_cast<int>(v.size()), 1, 0});
  layout->total = v.size();
  net::ParamVector p;
  p.values = std::move(v);
  p.layout = layout;
  return p;
}

/// L(θ) = ½ Σ c_i θ_i², a single window.
class Quadratic : public Objective {
 public:
  explicit Quadratic(std::vector<double> curvature) : c_(std::move(curvature)) {}
  std::size_t n_windows() const override { return 1; }
  arloss::LossGrad loss_grad(const net::ParamVector& p, std::span<const std::size_t>) override {
    arloss::LossGrad lg{0.0, p.zeros_like()};
    for (std::size_t i = 0; i < c_.size(); ++i) {
      lg.loss += 0.5 * c_[i] * p.values[i] * p.values[i];
      lg.grad.values[i] = c_[i] * p.values[i];
    }
    return lg;
  }
  double validation_loss(const net::ParamVector& p) override {
    return loss_grad(p, {}).loss;
  }
  double divergence_threshold() const override { return 1e12; }

 private:
  std::vector<double> c_;
};

/// Zero loss and zero gradient everywhere.
class Flat : public Objective {
 public:
  std::size_t n_windows() const override { return 3; }
  arloss::LossGrad loss_grad(const net::ParamVector& p, std::span<const std::size_t>) override {
    return {0.0, p.zeros_like()};
  }
  double validation_loss(const net::ParamVector&) override { return 0.0; }
  double divergence_threshold() const override { return 1.0; }
};

dynamics::Trajectory limit_cycle_data(int n = 400, std::uint64_t seed = 1) {
  const auto spec = dynamics::SystemSpec::limit_cycle();
  return dynamics::normalize(dynamics::generate(spec, n, spec.default_dt, seed, {dynamics::Method::dopri5}));
}

net::MlpConfig small_model(int dim) {
  net::MlpConfig c;
  c.input_dim = dim;
  c.width_factor = 8;
  c.n_blocks = 2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("budget parsing") {
  CHECK(*Budget::parse("epochs:12").epochs == 12);
  CHECK(*Budget::parse("wall:2.5").wall_seconds == 2.5);
  CHECK(Budget::parse("epochs:7").to_string() == "epochs:7");
  CHECK_THROWS_AS(Budget::parse("epochs:1.5"), ArgumentError);
  CHECK_THROWS_AS(Budget::parse("steps:3"), ArgumentError);
  CHECK_THROWS_AS(Budget::parse("wall:-1"), ArgumentError);
  TrainConfig t;
  t.budget = {3, 4.0};
  CHECK_THROWS_AS(t.validate(), ArgumentError);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  const auto data = limit_cycle_data();
  for (OptimizerKind k : {OptimizerKind::sgd, OptimizerKind::adam}) {
    TrainConfig t;
    t.optimizer.kind = k;
    t.eta = 0.0;
    t.budget = Budget::of_epochs(3);
    t.batch_size = 64;
    const auto rep = train(small_model(2), data, 2, t);
    CHECK(rep.final_params.values == rep.initial_params.values);
    CHECK(rep.steps > 0);
  }
}

TEST_CASE("sgd on a convex quadratic decreases monotonically") {
  Quadratic q({2.0, 5.0});
  TrainConfig t;
  t.optimizer.kind = OptimizerKind::sgd;
  t.eta = 0.9 / 5.0;
  t.gamma = 0.0;
  t.budget = Budget::of_epochs(50);
  const auto rep = run_training(q, flat_params({1.0, -2.0}), t);
  REQUIRE(rep.loss_curve.size() == 50);
  for (std::size_t i = 1; i < rep.loss_curve.size(); ++i) CHECK(rep.loss_curve[i] < rep.loss_curve[i - 1]);
}

TEST_CASE("adam with zero gradient is a no-op") {
  Flat f;
  TrainConfig t;
  t.gamma = 0.0;
  t.budget = Budget::of_epochs(4);
  const auto p0 = flat_params({0.3, -1.0, 2.0});
  const auto rep = run_training(f, p0, t);
  CHECK(rep.final_params.values == p0.values);
  CHECK(rep.steps == 4);
}

TEST_CASE("gradient stop fires exactly when the last gradient norm is below gamma") {
  Quadratic q({1.0});
  TrainConfig t;
  t.optimizer.kind = OptimizerKind::sgd;
  t.eta = 0.5;
  t.gamma = 1e-3;
  t.budget = Budget::of_epochs(1000);
  const auto rep = run_training(q, flat_params({1.0}), t);
  CHECK(rep.stop_reason == StopReason::grad_stop);
  CHECK(rep.grad_norm_curve.back() < t.gamma);
  for (std::size_t i = 0; i + 1 < rep.grad_norm_curve.size(); ++i) CHECK(rep.grad_norm_curve[i] >= t.gamma);

  t.budget = Budget::of_epochs(3);
  const auto short_run = run_training(q, flat_params({1.0}), t);
  CHECK(short_run.stop_reason == StopReason::budget);
  CHECK(short_run.grad_norm_curve.back() >= t.gamma);
}

TEST_CASE("divergence is reported, not thrown") {
  Quadratic q({10.0});
  TrainConfig t;
  t.optimizer.kind = OptimizerKind::sgd;
  t.eta = 1.0;
  t.budget = Budget::of_epochs(1000);
  const auto rep = run_training(q, flat_params({1.0}), t);
  CHECK(rep.stop_reason == StopReason::divergence);
  CHECK(rep.steps < 1000);
  CHECK(std::isfinite(rep.best_val_loss));
}

TEST_CASE("epoch-budget training is deterministic") {
  const auto data = limit_cycle_data();
  TrainConfig t;
  t.budget = Budget::of_epochs(5);
  t.batch_size = 50;
  t.seed = 9;
  const auto a = train(small_model(2), data, 3, t);
  const auto b = train(small_model(2), data, 3, t);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.final_params.values == b.final_params.values);
  t.seed = 10;
  CHECK(train(small_model(2), data, 3, t).loss_curve != a.loss_curve);
}

TEST_CASE("chronological split keeps training targets before validation starts") {
  for (int T : {1, 4, 9}) {
    const Split s = chronological_split(100, T, 5, 0.2);
    const std::size_t last_train_target = s.train.back() + static_cast<std::size_t>(T);
    CHECK(last_train_target < s.validation.front());
    CHECK(s.validation.front() == 80);
    CHECK(s.validation.back() + 5 == 99);
    std::set<std::size_t> a(s.train.begin(), s.train.end());
    for (auto v : s.validation) CHECK(a.count(v) == 0);
  }
  CHECK_THROWS_AS(chronological_split(10, 8, 1, 0.2), ArgumentError);
}

TEST_CASE("best parameters match the recorded validation minimum") {
  const auto data = limit_cycle_data();
  TrainConfig t;
  t.budget = Budget::of_epochs(6);
  t.batch_size = 64;
  t.eta = 3e-3;
  const auto c = small_model(2);
  const auto rep = train(c, data, 2, t);
  HorizonObjective obj(c, data, 2, t);
  CHECK(obj.validation_loss(rep.best_params) == rep.best_val_loss);
  CHECK(rep.best_val_loss == *std::min_element(rep.val_curve.begin(), rep.val_curve.end()));
  CHECK(rep.val_curve.size() == 7);
}

TEST_CASE("limit cycle regression baseline") {
  const auto data = limit_cycle_data(500, 2);
  TrainConfig t;
  t.budget = Budget::of_epochs(200);
  t.eta = 1e-3;
  t.seed = 1;
  t.batch_size = 64;
  const auto c = small_model(2);
  const auto rep = train(c, data, 1, t);
  const double variance = dynamics::total_variance(data.states);
  CHECK(rep.val_curve.back() < 0.1 * variance);
}

TEST_CASE("curriculum") {
  const auto data = limit_cycle_data();
  TrainConfig t;
  t.batch_size = 64;
  t.seed = 4;
  const auto c = small_model(2);

  t.budget = Budget::of_epochs(7);
  const auto single = curriculum_train(c, data, 1, Budget::of_epochs(7), t);
  const auto direct = train(c, data, 1, t);
  REQUIRE(single.size() == 1);
  CHECK(single[0].loss_curve == direct.loss_curve);
  CHECK(single[0].final_params.values == direct.final_params.values);

  const auto phases = curriculum_train(c, data, 3, Budget::of_epochs(8), t);
  REQUIRE(phases.size() == 3);
  CHECK(phases[0].epochs_completed == 3);
  CHECK(phases[1].epochs_completed == 3);
  CHECK(phases[2].epochs_completed == 2);
  for (std::size_t k = 1; k < phases.size(); ++k)
    CHECK(phases[k].initial_params.values == phases[k - 1].final_params.values);
}

TEST_CASE("evaluate reports exactly the requested horizons") {
  net::MlpConfig c;
  c.input_dim = 2;
  c.n_blocks = 1;
  net::ParamVector p = net::ParamVector::zeros(std::make_shared<const net::Layout>(net::make_layout(c)));
  p.tensor("embed.W")(0, 0) = p.tensor("embed.W")(1, 1) = 1.0;
  p.tensor("unembed.W")(0, 0) = p.tensor("unembed.W")(1, 1) = 1.0;
  p.tensor("block0.ln_gain").setOnes();
  dynamics::Trajectory still;
  still.dt = 1.0;
  still.states = Matrix::Constant(50, 2, 0.5);
  const auto perfect = evaluate(c, p, still, {1, 3, 7});
  CHECK(perfect.size() == 3);
  for (auto [h, v] : perfect) CHECK(v == 0.0);

  const auto data = limit_cycle_data();
  const auto imperfect = evaluate(small_model(2), net::init(small_model(2)), data, {2, 5});
  CHECK(imperfect.count(2) == 1);
  CHECK(imperfect.count(5) == 1);
  CHECK(imperfect.count(1) == 0);
}

TEST_CASE("sweep rows and single-cell reduction") {
  SweepSetup setup;
  setup.spec = dynamics::SystemSpec::limit_cycle();
  setup.n_samples = 300;
  setup.model = small_model(2);
  setup.train.budget = Budget::of_epochs(3);
  setup.train.batch_size = 64;
  setup.workers = 1;
  SweepGrid grid{{1, 2}, {1e-3, 1e-2}, {0.0}, {{8, 2}}, {5}};
  const auto rows = sweep(grid, setup);
  CHECK(rows.size() == 4);
  const std::string csv = sweep_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.rfind("system,T,eta,sigma,width_factor,n_blocks,seed,best_val_loss,stop_reason,steps,wall_seconds\n", 0) ==
        0);

  SweepGrid one{{2}, {1e-3}, {0.0}, {{8, 2}}, {5}};
  const auto cell = sweep(one, setup);
  REQUIRE(cell.size() == 1);
  auto data = dynamics::normalize(dynamics::generate(setup.spec, 300, 0.5, 0, setup.integrator));
  net::MlpConfig m = setup.model;
  m.seed = derive_seed(5, Stream::model_init);
  TrainConfig t = setup.train;
  t.seed = 5;
  t.val_horizon = 1;
  const auto rep = train(m, data, 2, t);
  CHECK(cell[0].best_val_loss == rep.best_val_loss);
  CHECK(cell[0].steps == rep.steps);
  CHECK(rows[2].best_val_loss == cell[0].best_val_loss);

  SweepGrid bad = grid;
  bad.T = {1000};
  const auto failed = sweep(bad, setup);
  CHECK(failed[0].stop_reason == "error");
  CHECK_FALSE(failed[0].error.empty());
}
