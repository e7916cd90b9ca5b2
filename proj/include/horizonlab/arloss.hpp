#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "horizonlab/dynamics.hpp"
#include "horizonlab/net.hpp"

namespace horizonlab::arloss {

/// euclidean: per-step error ‖x(m+τ) − f^τ(x(m))‖, as in the horizon loss
/// definition. squared: ‖·‖², smooth everywhere and the default for training.
enum class NormMode { euclidean, squared };

std::string_view to_string(NormMode m);
NormMode norm_mode_from_string(std::string_view s);

struct HorizonLossConfig {
  int T = 1;
  NormMode norm_mode = NormMode::squared;
  /// Window starts to use; all of 0..M-T-1 when empty.
  std::optional<std::vector<std::size_t>> batch;
  /// Workers for the window loop. Results do not depend on this value.
  int workers = 1;
};

/// Window starts 0..n_rows-T-1.
std::vector<std::size_t> all_windows(Eigen::Index n_rows, int T);

/// Row τ-1 holds f^τ(x0), τ = 1..n. Throws DivergenceError carrying τ at the
/// first non-finite state.
Matrix rollout(const net::MlpConfig& config, const net::ParamVector& params, const Vector& x0, int n);

/// (1/|W|) Σ_{m∈W} (1/T) Σ_{τ=1..T} ‖x(m+τ) − f^τ(x(m))‖ (squared per norm_mode).
double horizon_loss(const net::MlpConfig& config, const net::ParamVector& params, const dynamics::Trajectory& traj,
                    const HorizonLossConfig& lcfg);

struct LossGrad {
  double loss = 0.0;
  net::ParamVector grad;
};

/// Loss and exact gradient by a single reverse sweep through the T-step
/// rollout of every window. Throws GradientSingularityError for a zero
/// residual in euclidean mode.
LossGrad horizon_loss_grad(const net::MlpConfig& config, const net::ParamVector& params,
                           const dynamics::Trajectory& traj, const HorizonLossConfig& lcfg);

/// Mean final-step squared error ‖x(m+T) − f^T(x(m))‖² over the given starts.
double final_step_error(const net::MlpConfig& config, const net::ParamVector& params, const Matrix& states, int T,
                        std::span<const std::size_t> starts);

/// Multiple-shooting loss: restart from the observed x(mT) for every segment
/// m = 0..⌊(M-1)/T⌋-1 and sum ‖x(mT+τ) − F^τ(x(mT); theta)‖ over τ = 1..T.
/// Samples past the last whole segment are ignored.
double mechanistic_loss(const dynamics::SystemSpec& spec, const std::vector<double>& theta,
                        const dynamics::Trajectory& traj, int T, const dynamics::IntegratorOptions& opts = {});

/// max_{i,j} ‖x_i − x_j‖² + 2ε.
double loss_upper_bound(const dynamics::Trajectory& traj, double epsilon);

using StepMap = std::function<Vector(const Vector&)>;

struct LongHorizonOptions {
  int n_starts = 32;
  int T_long = 1000;
  /// Sampling step of both model and truth; spec.default_dt when <= 0.
  double dt = 0.0;
  std::uint64_t seed = 0;
  int attractor_samples = 4000;
  dynamics::IntegratorOptions integrator{};
};

struct LongHorizonResult {
  double mean_squared_error = 0.0;
  /// 2 · trace of the attractor sample covariance.
  double variance_scale = 0.0;
  double ratio() const { return mean_squared_error / variance_scale; }
};

/// Average ‖f^{T_long}(x0) − x(T_long | x0)‖² over attractor starts. T_long·dt
/// should exceed a few Lyapunov times for the "random" branch to apply.
LongHorizonResult long_horizon_error(const StepMap& model, const dynamics::SystemSpec& spec,
                                     const LongHorizonOptions& opts);
LongHorizonResult long_horizon_error(const net::MlpConfig& config, const net::ParamVector& params,
                                     const dynamics::SystemSpec& spec, const LongHorizonOptions& opts);

}  // namespace horizonlab::arloss
