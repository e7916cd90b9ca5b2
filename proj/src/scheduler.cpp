#include "horizonlab/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "horizonlab/errors.hpp"
#include "horizonlab/stats.hpp"

namespace horizonlab::scheduler {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_cell(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(TrendFit t) { return t == TrendFit::exponential ? "exponential" : "linear"; }

TrendFit trend_fit_from_string(std::string_view s) {
  if (s == "exponential") return TrendFit::exponential;
  if (s == "linear") return TrendFit::linear;
  throw ArgumentError("unknown trend fit '" + std::string(s) + "' (expected exponential or linear)");
}

std::string_view to_string(Phase p) { return p == Phase::look ? "look" : "commit"; }

std::string_view to_string(Action a) {
  switch (a) {
    case Action::init:
      return "init";
    case Action::accept:
      return "accept";
    case Action::reject_eta_adjust:
      return "reject_eta_adjust";
    case Action::horizon_increment:
      return "horizon_increment";
    case Action::horizon_cap:
      return "horizon_cap";
    case Action::wall_limit:
      return "wall_limit";
  }
  return "?";
}

void SchedulerConfig::validate() const {
  if (!(eta0 > 0.0)) throw ArgumentError("eta0 must be positive");
  if (!(gamma > 0.0)) throw ArgumentError("gamma must be positive");
  if (lookahead_epochs < 1) throw ArgumentError("lookahead_epochs must be >= 1");
  if (!(wall_limit_seconds > 0.0)) throw ArgumentError("wall_limit_seconds must be positive");
  if (!(improve_delta > 0.0)) throw ArgumentError("improve_delta must be positive");
  if (!(eta_min > 0.0) || eta_min > eta0) throw ArgumentError("eta_min must lie in (0, eta0]");
  if (!(min_shrink > 1.0)) throw ArgumentError("min_shrink must exceed 1");
  if (horizon_cap < 1) throw ArgumentError("horizon_cap must be >= 1");
  if (eval_horizon < 1) throw ArgumentError("eval_horizon must be >= 1");
}

std::string ScheduleTrace::to_csv() const {
  std::string out = "wall_time,T,eta,phase,val_loss,grad_norm,action\n";
  for (const auto& e : events) {
    out += format_cell(e.wall_time) + ',' + std::to_string(e.T) + ',' + format_cell(e.eta) + ',' +
           std::string(to_string(e.phase)) + ',' + format_cell(e.val_loss) + ',' + format_cell(e.grad_norm) + ',' +
           std::string(to_string(e.action)) + '\n';
  }
  return out;
}

std::uint64_t param_hash(const net::ParamVector& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : p.values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::vector<std::string> trace_violations(const ScheduleTrace& trace, const SchedulerConfig& scfg,
                                          double epoch_seconds) {
  std::vector<std::string> out;
  const auto& ev = trace.events;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    const std::string at = "event " + std::to_string(i) + ": ";
    if (ev[i].eta < scfg.eta_min || ev[i].eta > scfg.eta0) out.push_back(at + "eta outside [eta_min, eta0]");
    if (ev[i].wall_time > scfg.wall_limit_seconds + epoch_seconds) out.push_back(at + "past the wall limit");
    if (i == 0) continue;
    if (ev[i].T < ev[i - 1].T) out.push_back(at + "T decreased");
    if (ev[i].action == Action::reject_eta_adjust && !(ev[i].eta < ev[i - 1].eta) && ev[i].eta != scfg.eta_min)
      out.push_back(at + "reject did not lower eta");
    if (ev[i].phase == Phase::look && ev[i].start_hash != ev[i - 1].theta_prev_hash)
      out.push_back(at + "look did not start from theta_prev");
  }
  return out;
}

double shrink_eta(double eta, std::span<const double> grad_norms, const SchedulerConfig& scfg) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < grad_norms.size(); ++i) {
    if (std::isfinite(grad_norms[i]) && grad_norms[i] > 0.0) {
      x.push_back(static_cast<double>(i));
      y.push_back(grad_norms[i]);
    }
  }
  double growth = 1.0;
  if (x.size() >= 2) {
    const double W = static_cast<double>(grad_norms.size());
    if (scfg.trend_fit == TrendFit::exponential) {
      growth = std::exp(stats::exponential_fit(x, y).rate * W);
    } else {
      const auto fit = stats::linear_fit(x, y);
      if (fit.intercept > 0.0) growth = 1.0 + fit.slope * W / fit.intercept;
    }
  }
  if (!std::isfinite(growth)) growth = std::numeric_limits<double>::max();
  return std::clamp(eta / std::max(scfg.min_shrink, growth), scfg.eta_min, scfg.eta0);
}

ScheduleResult run_scheduler(const ObjectiveFactory& make_objective, const EvalFn& eval,
                             const net::ParamVector& initial, const SchedulerConfig& scfg,
                             const optimize::TrainConfig& base, int max_T) {
  scfg.validate();
  if (max_T < 1) throw ArgumentError("max_T must be >= 1");
  const auto t0 = optimize::Clock::now();
  const auto deadline = t0 + std::chrono::duration_cast<optimize::Clock::duration>(
                                 std::chrono::duration<double>(scfg.wall_limit_seconds));
  const auto elapsed = [&] { return std::chrono::duration<double>(optimize::Clock::now() - t0).count(); };

  ScheduleResult result;
  const auto consider = [&](const net::ParamVector& p) {
    double v;
    try {
      v = eval(p);
    } catch (const DivergenceError&) {
      v = std::numeric_limits<double>::infinity();
    }
    if (result.trace.events.empty() || v < result.best_eval_loss) {
      result.best_eval_loss = v;
      result.best_params = p;
    }
  };

  int T = 1;
  double eta = scfg.eta0;
  net::ParamVector theta_prev = initial;
  net::ParamVector theta = initial;
  std::unique_ptr<optimize::Objective> objective = make_objective(T);
  bool look = true;
  std::uint64_t phase_index = 0;

  const auto record = [&](Phase phase, double val, double gnorm, Action action, const net::ParamVector& start) {
    ScheduleEvent e;
    e.wall_time = elapsed();
    e.T = T;
    e.eta = eta;
    e.phase = phase;
    e.val_loss = val;
    e.grad_norm = gnorm;
    e.action = action;
    e.start_hash = param_hash(start);
    e.theta_prev_hash = param_hash(theta_prev);
    result.trace.events.push_back(e);
  };

  double init_val;
  try {
    init_val = objective->validation_loss(initial);
  } catch (const DivergenceError&) {
    init_val = std::numeric_limits<double>::infinity();
  }
  consider(initial);
  record(Phase::look, init_val, kNaN, Action::init, initial);

  // Advances T after a gradient stop; false once the cap is reached.
  const auto increment = [&](Phase phase, const optimize::TrainReport& rep) {
    theta_prev = rep.final_params;
    theta = theta_prev;
    consider(theta);
    if (T + 1 > max_T) {
      record(phase, rep.val_curve.back(), rep.grad_norm_curve.back(), Action::horizon_cap, rep.initial_params);
      return false;
    }
    ++T;
    objective = make_objective(T);
    look = true;
    record(phase, rep.val_curve.back(), rep.grad_norm_curve.back(), Action::horizon_increment, rep.initial_params);
    return true;
  };

  while (optimize::Clock::now() < deadline) {
    optimize::TrainConfig tc = base;
    tc.eta = eta;
    tc.gamma = scfg.gamma;
    const std::uint64_t stream = phase_index++;
    if (look) {
      tc.budget = optimize::Budget::of_epochs(scfg.lookahead_epochs);
      const auto rep = optimize::run_training(*objective, theta_prev, tc, deadline, stream);
      const double gnorm = rep.grad_norm_curve.empty() ? kNaN : rep.grad_norm_curve.back();
      if (rep.stop_reason == optimize::StopReason::grad_stop) {
        if (!increment(Phase::look, rep)) break;
        continue;
      }
      const bool diverged = rep.stop_reason == optimize::StopReason::divergence;
      if (!diverged && rep.epochs_completed < scfg.lookahead_epochs) break;  // wall limit inside the look
      const double v0 = rep.val_curve.front();
      const double v1 = rep.val_curve.back();
      const bool improved = !diverged && std::isfinite(v1) && (v0 - v1) > scfg.improve_delta * std::abs(v0);
      if (improved) {
        theta = rep.final_params;
        look = false;
        consider(theta);
        record(Phase::look, v1, gnorm, Action::accept, rep.initial_params);
      } else {
        eta = shrink_eta(eta, rep.grad_norm_curve, scfg);
        theta = theta_prev;
        record(Phase::look, v1, gnorm, Action::reject_eta_adjust, rep.initial_params);
      }
    } else {
      const double remaining = std::chrono::duration<double>(deadline - optimize::Clock::now()).count();
      if (remaining <= 0.0) break;
      tc.budget = optimize::Budget::of_seconds(remaining);
      const auto rep = optimize::run_training(*objective, theta, tc, deadline, stream);
      const double gnorm = rep.grad_norm_curve.empty() ? kNaN : rep.grad_norm_curve.back();
      switch (rep.stop_reason) {
        case optimize::StopReason::grad_stop:
          if (!increment(Phase::commit, rep)) return result;
          break;
        case optimize::StopReason::divergence:
          eta = shrink_eta(eta, rep.grad_norm_curve, scfg);
          theta = theta_prev;
          look = true;
          record(Phase::commit, rep.val_curve.back(), gnorm, Action::reject_eta_adjust, rep.initial_params);
          break;
        case optimize::StopReason::budget:
          theta = rep.final_params;
          consider(theta);
          record(Phase::commit, rep.val_curve.back(), gnorm, Action::wall_limit, rep.initial_params);
          return result;
      }
    }
  }
  return result;
}

namespace {

int supported_max_T(const dynamics::Trajectory& traj, const SchedulerConfig& scfg, const optimize::TrainConfig& base) {
  int best = 0;
  for (int T = 1; T <= scfg.horizon_cap; ++T) {
    try {
      const auto s = optimize::chronological_split(traj.size(), T, std::max(T, scfg.eval_horizon), base.val_fraction);
      if (s.train.empty() || s.validation.empty()) break;
      best = T;
    } catch (const ArgumentError&) {
      break;
    }
  }
  if (best < 1) throw ArgumentError("trajectory too short for the scheduler at T=1");
  return best;
}

}  // namespace

ScheduleResult run_scheduler(const net::MlpConfig& config, const net::ParamVector& initial,
                             const dynamics::Trajectory& traj, const SchedulerConfig& scfg,
                             const optimize::TrainConfig& base) {
  scfg.validate();
  const int max_T = supported_max_T(traj, scfg, base);
  const ObjectiveFactory make = [&](int T) -> std::unique_ptr<optimize::Objective> {
    optimize::TrainConfig tc = base;
    tc.val_horizon = 0;
    return std::make_unique<optimize::HorizonObjective>(config, traj, T, tc);
  };
  optimize::TrainConfig eval_cfg = base;
  eval_cfg.val_horizon = scfg.eval_horizon;
  auto eval_objective = std::make_shared<optimize::HorizonObjective>(config, traj, 1, eval_cfg);
  const EvalFn eval = [eval_objective](const net::ParamVector& p) { return eval_objective->validation_loss(p); };
  return run_scheduler(make, eval, initial, scfg, base, max_T);
}

ScheduleResult run_scheduler(const net::MlpConfig& config, const dynamics::Trajectory& traj,
                             const SchedulerConfig& scfg, const optimize::TrainConfig& base) {
  return run_scheduler(config, net::init(config), traj, scfg, base);
}

}  // namespace horizonlab::scheduler
