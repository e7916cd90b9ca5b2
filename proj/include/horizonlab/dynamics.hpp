#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace horizonlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace dynamics {

enum class SystemKind { lorenz, double_pendulum, food_web, limit_cycle, external };

/// Second limit-cycle equation: the Hopf normal form uses −y(x²+y²); the
/// printed form uses −x(x²+y²), which has no bounded attractor and diverges
/// in finite time from most initial states.
enum class LimitCycleVariant { hopf_normal_form, printed };

using VectorField = std::function<Vector(const Vector&)>;

/// A named autonomous ODE dx/dt = F(x; params).
///
/// Parameter layouts:
///   lorenz           (sigma, rho, beta)                 = (10, 28, 8/3)
///   double_pendulum  (m1, m2, l1, l2, g)                = (1, 1, 1, 1, 9.81)
///                    state (theta1, theta2, omega1, omega2), point masses
///   food_web         r1..r7, alpha11, alpha44,
///                    H21 H32 H35 H54 H63 H76,
///                    q21 q32 q35 q54 q63 q76, omega      (22 values)
///   limit_cycle      (a, mu)                            = (1, 0.4)
struct SystemSpec {
  SystemKind kind = SystemKind::external;
  std::vector<double> params;
  int dim = 0;
  double default_dt = 0.0;
  LimitCycleVariant limit_cycle_variant = LimitCycleVariant::hopf_normal_form;
  /// Use the trophic sign exactly as printed (predators lose by feeding).
  bool food_web_printed_sign = false;
  /// Only for SystemKind::external.
  VectorField field;

  static SystemSpec lorenz(double dt = 0.04);
  static SystemSpec double_pendulum(double dt = 0.005);
  static SystemSpec food_web(double dt = 2.0);
  static SystemSpec limit_cycle(double dt = 0.5, LimitCycleVariant variant = LimitCycleVariant::hopf_normal_form);
  static SystemSpec external(int dim, VectorField field, double dt, std::vector<double> params = {});

  std::string name() const;
  SystemSpec with_params(std::vector<double> p) const;

  /// Throws ArgumentError if dim, params or dt disagree with the kind.
  void validate() const;
};

std::string_view to_string(SystemKind kind);
/// Throws ArgumentError for unknown names.
SystemKind system_kind_from_string(std::string_view name);
std::size_t param_count(SystemKind kind);
std::vector<std::string> param_names(SystemKind kind);
/// Built-in spec by name; `external` is rejected because it needs a field.
SystemSpec builtin(std::string_view name);

struct Normalization {
  Vector mean;
  Vector stddev;
};

/// Uniformly sampled states, one row per sample.
struct Trajectory {
  Matrix states;
  double dt = 0.0;
  double t0 = 0.0;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  std::optional<Normalization> normalization;

  Eigen::Index size() const { return states.rows(); }
  int dim() const { return static_cast<int>(states.cols()); }
  Vector row(Eigen::Index i) const { return states.row(i).transpose(); }

  /// Throws ArgumentError / NumericError on a broken invariant.
  void validate() const;
};

Vector derivative(const SystemSpec& spec, const Vector& x);
Matrix jacobian(const SystemSpec& spec, const Vector& x);

enum class Method { rk4, dopri5 };

struct IntegratorOptions {
  Method method = Method::rk4;
  /// rk4 substeps each sampling interval into ceil(dt / h_max) equal steps.
  double h_max = 0.01;
  double rtol = 1e-9;
  double atol = 1e-9;
};

std::string_view to_string(Method m);
Method method_from_string(std::string_view name);

/// One sampling interval of the flow map. The result depends only on
/// (x, dt, options): adaptive step control restarts each interval, so
/// restarting from any stored sample reproduces the stored continuation
/// bitwise.
Vector advance(const SystemSpec& spec, const Vector& x, double dt, const IntegratorOptions& opts = {});

/// Trajectory with steps + 1 rows; row 0 is x0. Throws DivergenceError when any
/// |x_i| exceeds 1e12 or turns non-finite.
Trajectory integrate(const SystemSpec& spec, const Vector& x0, double dt, int steps,
                     const IntegratorOptions& opts = {});

/// Jacobian of the time-delta_t flow map via the variational equation.
Matrix flow_jacobian(const SystemSpec& spec, const Vector& x, double delta_t, const IntegratorOptions& opts = {});

/// State and flow Jacobian advanced together over delta_t.
std::pair<Vector, Matrix> advance_with_jacobian(const SystemSpec& spec, const Vector& x, double delta_t,
                                                const IntegratorOptions& opts = {});

/// Benettin QR estimate, exponents per unit system time, sorted descending.
Vector lyapunov_spectrum(const SystemSpec& spec, const Vector& x0, double dt, int n_steps, int discard,
                         const IntegratorOptions& opts = {});

Trajectory add_observation_noise(const Trajectory& traj, double sigma, std::uint64_t seed);

/// Per-dimension z-score. Throws DegenerateDataError naming a zero-variance
/// dimension.
Trajectory normalize(const Trajectory& traj);
Trajectory denormalize(const Trajectory& traj);

/// Sum of per-dimension variances (trace of the sample covariance).
double total_variance(const Matrix& states);

/// Seeded initial condition: lorenz (1,1,1)+N(0,1); double pendulum
/// (pi/2, pi/2, 0, 0)+N(0,0.1) on the angles; food web N(1, 0.1) clipped to
/// >= 1e-6; limit cycle a uniformly random point of the unit circle.
Vector default_initial_state(const SystemSpec& spec, std::uint64_t seed);

/// Integrates from default_initial_state(seed) and drops the leading
/// `transient_fraction` of the samples, returning exactly n_samples rows.
Trajectory generate(const SystemSpec& spec, int n_samples, double dt, std::uint64_t seed,
                    const IntegratorOptions& opts = {}, double transient_fraction = 0.2);

}  // namespace dynamics
}  // namespace horizonlab
