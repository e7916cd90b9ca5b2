#include <cmath>

#include "doctest.h"
#include "horizonlab/errors.hpp"
#include "horizonlab/scheduler.hpp"

using namespace horizonlab;
using namespace horizonlab::scheduler;

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

/// Constant gradient of norm `slope`, constant validation loss: no look
/// phase can ever improve.
class Stuck : public optimize::Objective {
 public:
  std::size_t n_windows() const override { return 4; }
  arloss::LossGrad loss_grad(const net::ParamVector& p, std::span<const std::size_t>) override {
    arloss::LossGrad lg{1.0, p.zeros_like()};
    lg.grad.values[0] = 1.0;
    return lg;
  }
  double validation_loss(const net::ParamVector&) override { return 1.0; }
  double divergence_threshold() const override { return 1e12; }
};

/// ½ c θ² with c = T, validated by the same loss.
class Bowl : public optimize::Objective {
 public:
  explicit Bowl(int T) : c_(T) {}
  std::size_t n_windows() const override { return 1; }
  arloss::LossGrad loss_grad(const net::ParamVector& p, std::span<const std::size_t>) override {
    arloss::LossGrad lg{0.0, p.zeros_like()};
    for (std::size_t i = 0; i < p.size(); ++i) {
      lg.loss += 0.5 * c_ * p.values[i] * p.values[i];
      lg.grad.values[i] = c_ * p.values[i];
    }
    return lg;
  }
  double validation_loss(const net::ParamVector& p) override { return loss_grad(p, {}).loss; }
  double divergence_threshold() const override { return 1e12; }

 private:
  double c_;
};

dynamics::Trajectory limit_cycle_data(int n = 300) {
  const auto spec = dynamics::SystemSpec::limit_cycle();
  return dynamics::normalize(dynamics::generate(spec, n, spec.default_dt, 1, {dynamics::Method::dopri5}));
}

net::MlpConfig small_model() {
  net::MlpConfig c;
  c.input_dim = 2;
  c.width_factor = 4;
  c.n_blocks = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("eta shrink follows the fitted gradient trend") {
  SchedulerConfig s;
  s.eta0 = 1.0;
  std::vector<double> expo(10), line(10), flat(10, 3.0);
  for (int i = 0; i < 10; ++i) {
    expo[static_cast<std::size_t>(i)] = 2.0 * std::exp(0.1 * i);
    line[static_cast<std::size_t>(i)] = 1.0 + i;
  }
  CHECK(shrink_eta(0.5, expo, s) == doctest::Approx(0.5 / std::exp(1.0)).epsilon(1e-12));
  CHECK(shrink_eta(0.5, flat, s) == 0.25);
  s.trend_fit = TrendFit::linear;
  CHECK(shrink_eta(0.5, line, s) == doctest::Approx(0.5 / 11.0).epsilon(1e-12));
  s.eta_min = 0.1;
  CHECK(shrink_eta(0.5, line, s) == 0.1);
  CHECK(shrink_eta(0.5, {}, s) == 0.25);
}

TEST_CASE("config validation and names") {
  SchedulerConfig s;
  CHECK(s.gamma == 1.5e-4);
  CHECK(s.lookahead_epochs == 20);
  CHECK_NOTHROW(s.validate());
  s.eta_min = 1.0;
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  CHECK(trend_fit_from_string("linear") == TrendFit::linear);
  CHECK_THROWS_AS(trend_fit_from_string("cubic"), ArgumentError);
}

TEST_CASE("never-improving looks shrink eta to its floor and always restore theta_prev") {
  SchedulerConfig s;
  s.eta0 = 1e-2;
  s.eta_min = 1e-5;
  s.lookahead_epochs = 2;
  s.wall_limit_seconds = 0.2;
  optimize::TrainConfig base;
  base.optimizer.kind = optimize::OptimizerKind::sgd;
  const auto initial = flat_params({0.5, -0.25});
  const auto res = run_scheduler([](int) { return std::make_unique<Stuck>(); },
                                 [](const net::ParamVector&) { return 1.0; }, initial, s, base, 4);
  const auto& ev = res.trace.events;
  REQUIRE(ev.size() > 12);
  CHECK(ev[0].action == Action::init);
  for (std::size_t i = 1; i < ev.size(); ++i) {
    CHECK(ev[i].action == Action::reject_eta_adjust);
    CHECK(ev[i].start_hash == param_hash(initial));
  }
  CHECK(ev.back().eta == s.eta_min);
  CHECK(trace_violations(res.trace, s, 0.05).empty());
  CHECK(res.best_params.values == initial.values);
}

TEST_CASE("accepted look commits until the gradient stop, then raises T") {
  SchedulerConfig s;
  s.eta0 = 0.1;
  s.gamma = 1e-3;
  s.lookahead_epochs = 3;
  s.wall_limit_seconds = 5.0;
  optimize::TrainConfig base;
  base.optimizer.kind = optimize::OptimizerKind::sgd;
  const auto res = run_scheduler([](int T) { return std::make_unique<Bowl>(T); },
                                 [](const net::ParamVector& p) { return p.flat().squaredNorm(); },
                                 flat_params({1.0, 2.0}), s, base, 3);
  const auto& ev = res.trace.events;
  REQUIRE(ev.size() >= 3);
  CHECK(ev[1].action == Action::accept);
  CHECK(ev[2].phase == Phase::commit);
  CHECK(ev[2].action == Action::horizon_increment);
  CHECK(ev[2].T == 2);
  CHECK(ev.back().action == Action::horizon_cap);
  CHECK(ev.back().T == 3);
  CHECK(trace_violations(res.trace, s, 0.05).empty());
  CHECK(res.best_eval_loss < 1e-4);
}

TEST_CASE("plateau at T=1 triggers a horizon increment first") {
  dynamics::Trajectory still;
  still.dt = 1.0;
  still.states = Matrix::Constant(60, 2, 0.4);
  net::MlpConfig c;
  c.input_dim = 2;
  c.width_factor = 1;
  c.n_blocks = 1;
  net::ParamVector p = net::ParamVector::zeros(std::make_shared<const net::Layout>(net::make_layout(c)));
  p.tensor("embed.W")(0, 0) = p.tensor("embed.W")(1, 1) = 1.0;
  p.tensor("unembed.W")(0, 0) = p.tensor("unembed.W")(1, 1) = 1.0;
  p.tensor("block0.ln_gain").setOnes();
  SchedulerConfig s;
  s.wall_limit_seconds = 5.0;
  s.horizon_cap = 4;
  optimize::TrainConfig base;
  const auto res = run_scheduler(c, p, still, s, base);
  const auto& ev = res.trace.events;
  REQUIRE(ev.size() >= 2);
  CHECK(ev[1].action == Action::horizon_increment);
  CHECK(ev[1].T == 2);
  CHECK(ev.back().action == Action::horizon_cap);
  CHECK(ev.back().T == 4);
  CHECK(trace_violations(res.trace, s, 0.05).empty());
}

TEST_CASE("wall limit shorter than one look returns the initial parameters") {
  const auto data = limit_cycle_data();
  const auto c = small_model();
  SchedulerConfig s;
  s.wall_limit_seconds = 1e-4;
  optimize::TrainConfig base;
  base.batch_size = 16;
  const auto init = net::init(c);
  const auto res = run_scheduler(c, init, data, s, base);
  REQUIRE(res.trace.events.size() == 1);
  CHECK(res.trace.events[0].action == Action::init);
  CHECK(res.best_params.values == init.values);
  CHECK(res.trace.to_csv().rfind("wall_time,T,eta,phase,val_loss,grad_norm,action\n", 0) == 0);
}

TEST_CASE("limit cycle run honours every trace invariant") {
  const auto data = limit_cycle_data();
  const auto c = small_model();
  optimize::TrainConfig base;
  base.batch_size = 64;
  base.budget = optimize::Budget::of_epochs(1);
  const auto t0 = optimize::Clock::now();
  optimize::train(c, data, 4, base);
  const double epoch = std::chrono::duration<double>(optimize::Clock::now() - t0).count();

  SchedulerConfig s;
  s.eta0 = 3e-3;
  s.gamma = 2e-2;
  s.lookahead_epochs = 5;
  s.wall_limit_seconds = 1.5;
  s.trend_fit = TrendFit::linear;
  const auto res = run_scheduler(c, data, s, base);
  const auto violations = trace_violations(res.trace, s, 2.0 * epoch + 0.05);
  for (const auto& v : violations) MESSAGE(v);
  CHECK(violations.empty());
  CHECK(res.best_eval_loss <= res.trace.events[0].val_loss);
}
