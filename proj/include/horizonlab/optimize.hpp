#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "horizonlab/arloss.hpp"

namespace horizonlab::optimize {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Exactly one of the two limits is set.
struct Budget {
  std::optional<int> epochs;
  std::optional<double> wall_seconds;

  static Budget of_epochs(int n) { return {n, std::nullopt}; }
  static Budget of_seconds(double s) { return {std::nullopt, s}; }
  /// "epochs:100" or "wall:30" (seconds).
  static Budget parse(std::string_view text);
  std::string to_string() const;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  double eta = 1e-3;
  int batch_size = 512;
  Budget budget = Budget::of_epochs(100);
  /// Stop once a step's gradient norm falls below gamma.
  double gamma = 1.5e-4;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  arloss::NormMode norm_mode = arloss::NormMode::squared;
  /// Horizon of the validation loss; the training horizon when 0.
  int val_horizon = 0;
  /// Global-norm gradient clip, off when unset.
  std::optional<double> grad_clip;
  /// Loss above this multiple of the training-data total variance counts as
  /// divergence.
  double divergence_factor = 1e6;
  int workers = 1;

  void validate() const;
};

enum class StopReason { budget, grad_stop, divergence };
std::string_view to_string(StopReason r);

struct TrainReport {
  std::vector<double> loss_curve;       // per step
  std::vector<double> grad_norm_curve;  // per step, before clipping
  /// Entry 0 is the validation loss of the initial parameters, then one entry
  /// per completed epoch and a final entry when training stops mid-epoch.
  std::vector<double> val_curve;
  double wall_seconds = 0.0;
  std::size_t steps = 0;
  int epochs_completed = 0;
  net::ParamVector initial_params;
  net::ParamVector final_params;
  net::ParamVector best_params;
  double best_val_loss = 0.0;
  StopReason stop_reason = StopReason::budget;
  std::string divergence_detail;
};

/// Chronological split of M samples at s = floor(M·(1 − val_fraction)).
/// Training windows start in [0, s − T) so every training target lies before
/// s; validation windows start in [s, M − T_val).
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split chronological_split(Eigen::Index n_rows, int T, int T_val, double val_fraction);

/// A loss over numbered training windows plus a held-out validation score.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t n_windows() const = 0;
  /// Loss and gradient over the given window indices (0 .. n_windows-1).
  virtual arloss::LossGrad loss_grad(const net::ParamVector& params, std::span<const std::size_t> batch) = 0;
  virtual double validation_loss(const net::ParamVector& params) = 0;
  /// Losses above this (or non-finite) are divergence.
  virtual double divergence_threshold() const = 0;
};

/// Horizon loss over the training windows of a trajectory. Validation targets
/// come from `reference` when given (e.g. the clean series behind noisy
/// training data); it must have the same shape as `traj`.
class HorizonObjective : public Objective {
 public:
  HorizonObjective(net::MlpConfig config, const dynamics::Trajectory& traj, int T, const TrainConfig& tcfg,
                   const dynamics::Trajectory* reference = nullptr);
  std::size_t n_windows() const override { return split_.train.size(); }
  arloss::LossGrad loss_grad(const net::ParamVector& params, std::span<const std::size_t> batch) override;
  double validation_loss(const net::ParamVector& params) override;
  double divergence_threshold() const override { return threshold_; }
  const Split& split() const { return split_; }

 private:
  net::MlpConfig config_;
  const dynamics::Trajectory& traj_;
  const dynamics::Trajectory& reference_;
  int T_;
  int T_val_;
  arloss::NormMode mode_;
  int workers_;
  Split split_;
  double threshold_;
};

using Clock = std::chrono::steady_clock;

/// The training loop. `deadline`, when set, interrupts training in addition
/// to the configured budget and is reported as StopReason::budget.
/// `stream_index` selects the batch-order stream so sequential phases of one
/// run draw independent orders.
TrainReport run_training(Objective& objective, const net::ParamVector& initial, const TrainConfig& tcfg,
                         std::optional<Clock::time_point> deadline = std::nullopt, std::uint64_t stream_index = 0);

TrainReport train(const net::MlpConfig& config, const dynamics::Trajectory& traj, int T, const TrainConfig& tcfg,
                  const dynamics::Trajectory* reference = nullptr);
TrainReport train_from(const net::MlpConfig& config, const net::ParamVector& initial,
                       const dynamics::Trajectory& traj, int T, const TrainConfig& tcfg,
                       const dynamics::Trajectory* reference = nullptr);

/// Phases T = 1..T_max, each with total_budget / T_max (epoch remainders go
/// to the earliest phases), parameters carried from each phase's final state.
std::vector<TrainReport> curriculum_train(const net::MlpConfig& config, const dynamics::Trajectory& traj, int T_max,
                                          const Budget& total_budget, const TrainConfig& tcfg);

/// Final-step squared error at each horizon over the validation windows of
/// the chronological split.
std::map<int, double> evaluate(const net::MlpConfig& config, const net::ParamVector& params,
                               const dynamics::Trajectory& traj, const std::vector<int>& eval_horizons,
                               double val_fraction = 0.2);

struct ModelSize {
  int width_factor = 4;
  int n_blocks = 2;
};

struct SweepGrid {
  std::vector<int> T;
  std::vector<double> eta;
  std::vector<double> sigma;
  std::vector<ModelSize> size;
  std::vector<std::uint64_t> seeds{0};
};

struct SweepSetup {
  dynamics::SystemSpec spec;
  int n_samples = 1000;
  double dt = 0.0;  // spec.default_dt when <= 0
  std::uint64_t data_seed = 0;
  dynamics::IntegratorOptions integrator{dynamics::Method::dopri5};
  bool normalize = true;
  net::MlpConfig model;
  TrainConfig train;
  /// Validation horizon shared by all cells so losses compare across T.
  int eval_horizon = 1;
  int workers = 0;  // worker_count() when <= 0
};

struct SweepRow {
  std::string system;
  int T = 0;
  double eta = 0.0;
  double sigma = 0.0;
  int width_factor = 0;
  int n_blocks = 0;
  std::uint64_t seed = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
  std::string error;  // non-empty when the cell failed outright
};

/// One training run per cell of T × eta × sigma × size × seeds. Training data
/// carries observation noise sigma; validation always scores against the
/// clean series. Cell failures are recorded, never thrown.
std::vector<SweepRow> sweep(const SweepGrid& grid, const SweepSetup& setup);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Applies fixed normalization statistics.
dynamics::Trajectory apply_normalization(const dynamics::Trajectory& traj, const dynamics::Normalization& norm);

std::string_view to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(std::string_view s);

}  // namespace horizonlab::optimize
