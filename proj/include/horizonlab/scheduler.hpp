#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "horizonlab/optimize.hpp"

namespace horizonlab::scheduler {

enum class TrendFit { exponential, linear };
std::string_view to_string(TrendFit t);
TrendFit trend_fit_from_string(std::string_view s);

struct SchedulerConfig {
  double eta0 = 1e-3;
  double gamma = 1.5e-4;
  int lookahead_epochs = 20;
  double wall_limit_seconds = 60.0;
  TrendFit trend_fit = TrendFit::exponential;
  /// A look phase is accepted when the validation loss drops by more than
  /// this fraction of its value at the start of the phase.
  double improve_delta = 1e-3;
  double eta_min = 1e-8;
  /// Minimum shrink factor applied on every reject.
  double min_shrink = 2.0;
  int horizon_cap = 32;
  /// Horizon of the validation loss used to pick the returned parameters.
  int eval_horizon = 1;

  void validate() const;
};

enum class Phase { look, commit };
enum class Action { init, accept, reject_eta_adjust, horizon_increment, horizon_cap, wall_limit };
std::string_view to_string(Phase p);
std::string_view to_string(Action a);

struct ScheduleEvent {
  double wall_time = 0.0;
  int T = 1;
  /// Learning rate in force after the event.
  double eta = 0.0;
  Phase phase = Phase::look;
  /// Validation loss of the phase's final parameters at the training horizon.
  double val_loss = 0.0;
  /// Last recorded gradient norm of the phase; NaN for init.
  double grad_norm = 0.0;
  Action action = Action::init;
  std::uint64_t start_hash = 0;       // parameters the phase started from
  std::uint64_t theta_prev_hash = 0;  // θ_prev after the event
};

struct ScheduleTrace {
  std::vector<ScheduleEvent> events;
  /// wall_time,T,eta,phase,val_loss,grad_norm,action
  std::string to_csv() const;
};

struct ScheduleResult {
  net::ParamVector best_params;
  double best_eval_loss = 0.0;
  ScheduleTrace trace;
};

/// Builds the training objective for a horizon.
using ObjectiveFactory = std::function<std::unique_ptr<optimize::Objective>(int T)>;
using EvalFn = std::function<double(const net::ParamVector&)>;

/// FNV-1a over the raw parameter bytes.
std::uint64_t param_hash(const net::ParamVector& p);

/// The look/commit loop over horizons 1..max_T. `base` supplies everything
/// but eta, gamma and budget.
ScheduleResult run_scheduler(const ObjectiveFactory& make_objective, const EvalFn& eval,
                             const net::ParamVector& initial, const SchedulerConfig& scfg,
                             const optimize::TrainConfig& base, int max_T);

/// MLP form over a trajectory; max_T is the horizon cap or the longest
/// horizon the trajectory's split supports, whichever is smaller.
ScheduleResult run_scheduler(const net::MlpConfig& config, const dynamics::Trajectory& traj,
                             const SchedulerConfig& scfg, const optimize::TrainConfig& base);
ScheduleResult run_scheduler(const net::MlpConfig& config, const net::ParamVector& initial,
                             const dynamics::Trajectory& traj, const SchedulerConfig& scfg,
                             const optimize::TrainConfig& base);

/// Invariant violations of a trace, empty when it conforms: T never
/// decreases, every reject lowers eta or pins it at eta_min, eta stays in
/// [eta_min, eta0], every look starts from the θ_prev left by the previous
/// event, and no event lands later than wall limit + epoch_seconds.
std::vector<std::string> trace_violations(const ScheduleTrace& trace, const SchedulerConfig& scfg,
                                          double epoch_seconds);

/// η / max(min_shrink, growth) where growth is e^{bW} (exponential) or
/// 1 + bW/c (linear) from a fit of the gradient norms against step index,
/// clipped to [eta_min, eta0].
double shrink_eta(double eta, std::span<const double> grad_norms, const SchedulerConfig& scfg);

}  // namespace horizonlab::scheduler
