#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "horizonlab/optimize.hpp"

namespace horizonlab::landscape {

using LossFn = std::function<double(const Vector&)>;
using GradFn = std::function<Vector(const Vector&)>;

enum class ProbeKind { grad_ratio, roughness, hessian_ratio, gen_ratio, scan1d, scan2d, eps_check };
std::string_view to_string(ProbeKind k);
ProbeKind probe_kind_from_string(std::string_view s);

/// A probe result: echoed inputs plus a numeric table. Columns per kind:
///   grad_ratio     T,g
///   roughness      T,z,n_points
///   hessian_ratio  T,trace,std_error,ratio,flag
///   gen_ratio      T_l,T_h,r,seed
///   scan1d         coord0,loss,flag
///   scan2d         coord0,coord1,loss,flag
///   eps_check      epsilon,max_deviation,pass
/// flag is 1 for entries excluded from trends (divergent cells, negative
/// Hessian traces); their numeric values may be NaN.
struct LandscapeProbe {
  ProbeKind kind = ProbeKind::grad_ratio;
  nlohmann::json inputs = nlohmann::json::object();
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::uint64_t seed = 0;

  std::string to_csv() const;
};

// --- gradient scaling ------------------------------------------------------

struct GradRatioRow {
  int T = 0;
  double g = 0.0;
};

/// g(T) = ‖∇L(θ,T)‖ / ‖∇L(θ,1)‖ over every window of the trajectory. Throws
/// DegenerateMinimumError when ‖∇L(θ,1)‖ <= 1e-12.
/// Generic form over any horizon-indexed gradient.
std::vector<GradRatioRow> gradient_ratio(const std::function<Vector(int T)>& grad_at, const std::vector<int>& T_list);
std::vector<GradRatioRow> gradient_ratio(const net::MlpConfig& config, const net::ParamVector& params,
                                         const dynamics::Trajectory& traj, const std::vector<int>& T_list,
                                         arloss::NormMode mode = arloss::NormMode::squared);

// --- roughness -------------------------------------------------------------

/// Interior local extrema of a sampled curve: sign changes between
/// consecutive non-flat differences, where a difference is flat when its
/// magnitude is below flat_tol · (max − min).
int count_extrema(std::span<const double> values, double flat_tol);

struct Roughness {
  int z = 0;
  int n_points = 0;
  std::vector<double> values;
};

/// n_points <= 0 selects max(3, ceil(512 · ‖θ2 − θ1‖)).
Roughness segment_roughness(const LossFn& loss, const Vector& theta1, const Vector& theta2, int n_points = 0,
                            double flat_tol = 1e-9);

// --- Hessian trace ---------------------------------------------------------

struct TraceEstimate {
  double trace = 0.0;
  double std_error = 0.0;
  int n_probes = 0;
};

/// Hutchinson estimate of tr(H) with Rademacher probes and central-difference
/// Hessian-vector products of step fd_step · (1 + ‖θ‖) / ‖v‖.
TraceEstimate hessian_trace(const GradFn& grad, const Vector& theta, int n_probes = 100, double fd_step = 1e-4,
                            std::uint64_t seed = 0);

struct HessianRatioOptions {
  double gamma = 1.5e-4;
  int n_probes = 100;
  double fd_step = 1e-4;
  std::uint64_t seed = 0;
  arloss::NormMode norm_mode = arloss::NormMode::squared;
};

struct HessianRatioRow {
  int T = 0;
  TraceEstimate estimate;
  double ratio = 0.0;
  bool flagged = false;  // negative trace: a saddle, excluded from trends
};

/// Trace at each horizon's own minimum divided by the trace at the T=1
/// minimum, with full-trajectory losses. Throws StationarityError naming the
/// first T whose minimum has ‖∇L‖ >= 10·gamma.
std::vector<HessianRatioRow> hessian_ratio(const net::MlpConfig& config, const dynamics::Trajectory& traj,
                                           const std::map<int, net::ParamVector>& minima,
                                           const std::vector<int>& T_list, const HessianRatioOptions& opts = {});

/// Ratio assembly shared by hessian_ratio: negative traces are flagged and get
/// a NaN ratio, as does every row when the T=1 trace itself is negative.
std::vector<HessianRatioRow> hessian_ratio_rows(const std::map<int, TraceEstimate>& traces,
                                                const std::vector<int>& T_list);

// --- cross-horizon generalization -----------------------------------------

struct PairedMinima {
  net::ParamVector theta_l;
  net::ParamVector theta_h;
  /// ‖θ_return − θ_l‖ / ‖θ_l‖ of the verification run.
  double return_distance = 0.0;
};

/// θ_l by training at T_l from `initial`, θ_h by training at T_h from θ_l,
/// then a verification run at T_l from θ_h that must land within delta_pair
/// (relative) of θ_l. Uses final parameters of each run. Throws
/// BasinMismatchError when verification fails.
PairedMinima paired_minima(const net::MlpConfig& config, const net::ParamVector& initial,
                           const dynamics::Trajectory& traj, int T_l, int T_h, const optimize::TrainConfig& tcfg,
                           double delta_pair = 0.05);
PairedMinima paired_minima(const net::MlpConfig& config, const dynamics::Trajectory& traj, int T_l, int T_h,
                           const optimize::TrainConfig& tcfg, double delta_pair = 0.05);

/// Squared horizon loss over the validation windows of the chronological split.
double validation_horizon_loss(const net::MlpConfig& config, const net::ParamVector& params,
                               const dynamics::Trajectory& traj, int T, double val_fraction = 0.2);

/// r = (L(θ_h,T_h) − L(θ_l,T_h)) / (L(θ_l,T_l) − L(θ_h,T_l)) on validation
/// windows. Throws IndeterminateRatioError when |denominator| <= 1e-12.
double generalization_ratio(const net::MlpConfig& config, const dynamics::Trajectory& traj,
                            const net::ParamVector& theta_l, const net::ParamVector& theta_h, int T_l, int T_h,
                            double val_fraction = 0.2);

// --- epsilon-bounded region ------------------------------------------------

struct EpsilonCheck {
  double epsilon = 0.0;
  double max_deviation = 0.0;
  bool pass = false;
};

/// max over states and random unit directions r of
/// ‖f(x + εr) − f(x) − J_φ(x) r ε‖, with J_φ the flow Jacobian over one
/// sampling step dt; passes when the maximum is below ε².
EpsilonCheck epsilon_region_check(const arloss::StepMap& model, const dynamics::SystemSpec& spec,
                                  const Matrix& states, double dt, double epsilon, int n_directions,
                                  std::uint64_t seed, const dynamics::IntegratorOptions& opts = {});

/// MLP overload. With `norm`, the network acts on z-scored states and is
/// wrapped to map raw states to raw states.
EpsilonCheck epsilon_region_check(const net::MlpConfig& config, const net::ParamVector& params,
                                  const dynamics::SystemSpec& spec, const Matrix& states, double dt, double epsilon,
                                  int n_directions, std::uint64_t seed, const dynamics::IntegratorOptions& opts = {},
                                  const dynamics::Normalization* norm = nullptr);

// --- parameter scans -------------------------------------------------------

struct ScanResult {
  std::vector<int> dims;
  Matrix coords;  // one row per grid point, one column per scanned dim
  std::vector<double> loss;
  std::vector<bool> flagged;
};

/// Grid over the selected dims of theta_center (1 or 2 dims, n_per_dim >= 3
/// points per dim over [lo, hi]). Evaluation failures and non-finite losses
/// are flagged with NaN loss. With normalize, finite losses are divided by
/// their maximum.
ScanResult param_scan(const LossFn& loss, const Vector& theta_center, const std::vector<int>& dims,
                      const std::vector<std::pair<double, double>>& ranges, int n_per_dim, bool normalize);

// --- noise-limited horizon -------------------------------------------------

enum class TMaxKind { chaotic, limit_cycle };

/// chaotic: (ln S − ln σ)/λ; limit cycle: L/σ. σ = 0 returns +infinity.
double t_max_estimate(TMaxKind kind, double lambda_or_omega, double sigma, double S_or_L);

// --- probe records ---------------------------------------------------------

LandscapeProbe to_probe(const std::vector<GradRatioRow>& rows);
LandscapeProbe to_probe(const std::vector<HessianRatioRow>& rows);
LandscapeProbe to_probe(const ScanResult& scan);
LandscapeProbe roughness_probe(const std::vector<std::pair<int, Roughness>>& by_T);
LandscapeProbe eps_check_probe(const std::vector<EpsilonCheck>& checks);

struct GenRatioRow {
  int T_l = 0;
  int T_h = 0;
  double r = 0.0;
  std::uint64_t seed = 0;
};
LandscapeProbe to_probe(const std::vector<GenRatioRow>& rows);

}  // namespace horizonlab::landscape
