#include "horizonlab/dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

#include "horizonlab/errors.hpp"
#include "horizonlab/rng.hpp"

namespace horizonlab::dynamics {

namespace {

constexpr double kBlowUp = 1e12;

// Double pendulum defaults. Point masses on massless rods.
constexpr double kPendulumMass = 1.0;
constexpr double kPendulumLength = 1.0;
constexpr double kGravity = 9.81;

// ---------------------------------------------------------------------------
// Food web. Index pairs (i, j) are 0-based "i feeds on j".

constexpr std::array<std::pair<int, int>, 6> kTrophicLinks = {{{1, 0}, {2, 1}, {2, 4}, {4, 3}, {5, 2}, {6, 5}}};

struct FoodWeb {
  std::array<double, 7> r{};
  std::array<std::array<double, 7>, 7> alpha{}, W{}, H{}, q{};
  double sign = 1.0;  // +1 predator gains, -1 as printed
};

FoodWeb unpack_food_web(const SystemSpec& spec) {
  const auto& p = spec.params;
  FoodWeb fw;
  for (int i = 0; i < 7; ++i) fw.r[i] = p[i];
  fw.alpha[0][0] = p[7];
  fw.alpha[3][3] = p[8];
  for (std::size_t k = 0; k < kTrophicLinks.size(); ++k) {
    const auto [i, j] = kTrophicLinks[k];
    fw.H[i][j] = p[9 + k];
    fw.q[i][j] = p[15 + k];
  }
  const double omega = p[21];
  fw.W[1][0] = 1.0;
  fw.W[2][1] = omega;
  fw.W[2][4] = 1.0;
  fw.W[4][3] = 1.0 - omega;
  fw.W[5][2] = 1.0;
  fw.W[6][5] = 1.0;
  fw.sign = spec.food_web_printed_sign ? -1.0 : 1.0;
  return fw;
}

// Feeding matrix F and prey-weighted sums S of the type-II functional response.
void food_web_feeding(const FoodWeb& fw, const Vector& N, double F[7][7], double S[7]) {
  for (int i = 0; i < 7; ++i) {
    S[i] = 0.0;
    for (int k = 0; k < 7; ++k) S[i] += fw.W[i][k] * N[k];
    for (int j = 0; j < 7; ++j) F[i][j] = fw.q[i][j] * fw.W[i][j] / (1.0 + fw.q[i][j] * fw.H[i][j] * S[i]);
  }
}

Vector food_web_rhs(const FoodWeb& fw, const Vector& N, Vector* growth = nullptr) {
  double F[7][7], S[7];
  food_web_feeding(fw, N, F, S);
  Vector g(7), out(7);
  for (int i = 0; i < 7; ++i) {
    double gi = fw.r[i];
    for (int j = 0; j < 7; ++j) gi += N[j] * (-fw.alpha[i][j] + fw.sign * (F[i][j] - F[j][i]));
    g[i] = gi;
    out[i] = N[i] * gi;
  }
  if (growth) *growth = g;
  return out;
}

Matrix food_web_jacobian(const FoodWeb& fw, const Vector& N) {
  double F[7][7], S[7];
  food_web_feeding(fw, N, F, S);
  Vector g;
  food_web_rhs(fw, N, &g);
  // dF[i][j] / dN[k] = -q_ij^2 W_ij H_ij W_ik / D_ij^2
  auto dF = [&](int i, int j, int k) {
    const double D = 1.0 + fw.q[i][j] * fw.H[i][j] * S[i];
    return -fw.q[i][j] * fw.q[i][j] * fw.W[i][j] * fw.H[i][j] * fw.W[i][k] / (D * D);
  };
  Matrix J = Matrix::Zero(7, 7);
  for (int i = 0; i < 7; ++i) {
    for (int k = 0; k < 7; ++k) {
      double dg = -fw.alpha[i][k] + fw.sign * (F[i][k] - F[k][i]);
      for (int j = 0; j < 7; ++j) dg += fw.sign * (dF(i, j, k) - dF(j, i, k)) * N[j];
      J(i, k) = N[i] * dg;
    }
    J(i, i) += g[i];
  }
  return J;
}

// ---------------------------------------------------------------------------
// Double pendulum, written once over a scalar type so the Jacobian comes from
// forward-mode dual numbers (exact derivatives of the same expression).

struct Dual4 {
  double v = 0.0;
  std::array<double, 4> d{};
};
inline Dual4 operator+(Dual4 a, const Dual4& b) {
  a.v += b.v;
  for (int i = 0; i < 4; ++i) a.d[i] += b.d[i];
  return a;
}
inline Dual4 operator-(Dual4 a, const Dual4& b) {
  a.v -= b.v;
  for (int i = 0; i < 4; ++i) a.d[i] -= b.d[i];
  return a;
}
inline Dual4 operator*(const Dual4& a, const Dual4& b) {
  Dual4 r;
  r.v = a.v * b.v;
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
inline Dual4 operator/(const Dual4& a, const Dual4& b) {
  Dual4 r;
  r.v = a.v / b.v;
  for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
inline Dual4 operator*(double s, Dual4 a) {
  a.v *= s;
  for (auto& x : a.d) x *= s;
  return a;
}
inline Dual4 sin(const Dual4& a) {
  Dual4 r;
  r.v = std::sin(a.v);
  const double c = std::cos(a.v);
  for (int i = 0; i < 4; ++i) r.d[i] = c * a.d[i];
  return r;
}
inline Dual4 cos(const Dual4& a) {
  Dual4 r;
  r.v = std::cos(a.v);
  const double s = -std::sin(a.v);
  for (int i = 0; i < 4; ++i) r.d[i] = s * a.d[i];
  return r;
}
inline Dual4 lift_dual(double v) { return Dual4{v, {}}; }
inline double lift_double(double v) { return v; }

template <class S, class C>
std::array<S, 4> pendulum_rhs(const std::vector<double>& p, const std::array<S, 4>& x, C lift) {
  using std::cos;
  using std::sin;
  const double m1 = p[0], m2 = p[1], l1 = p[2], l2 = p[3], g = p[4];
  const S& t1 = x[0];
  const S& t2 = x[1];
  const S& w1 = x[2];
  const S& w2 = x[3];
  const S delta = t1 - t2;
  const S den = lift(2.0 * m1 + m2) - m2 * cos(2.0 * delta);
  const S num1 = (-g * (2.0 * m1 + m2)) * sin(t1) - (m2 * g) * sin(t1 - 2.0 * t2) -
                 (2.0 * m2) * sin(delta) * (l2 * (w2 * w2) + l1 * (w1 * w1) * cos(delta));
  const S num2 = 2.0 * sin(delta) *
                 ((l1 * (m1 + m2)) * (w1 * w1) + (g * (m1 + m2)) * cos(t1) + (l2 * m2) * (w2 * w2) * cos(delta));
  return {w1, w2, num1 / (l1 * den), num2 / (l2 * den)};
}

Vector pendulum_derivative(const std::vector<double>& p, const Vector& x) {
  const std::array<double, 4> s{x[0], x[1], x[2], x[3]};
  const auto r = pendulum_rhs<double>(p, s, lift_double);
  return Eigen::Vector4d(r[0], r[1], r[2], r[3]);
}

Matrix pendulum_jacobian(const std::vector<double>& p, const Vector& x) {
  std::array<Dual4, 4> s;
  for (int i = 0; i < 4; ++i) {
    s[i].v = x[i];
    s[i].d[i] = 1.0;
  }
  const auto r = pendulum_rhs<Dual4>(p, s, lift_dual);
  Matrix J(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) J(i, k) = r[i].d[k];
  return J;
}

Matrix central_difference_jacobian(const SystemSpec& spec, const Vector& x) {
  const auto n = x.size();
  Matrix J(n, n);
  Vector xp = x, xm = x;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    J.col(k) = (spec.field(xp) - spec.field(xm)) / (2.0 * h);
    xp[k] = xm[k] = x[k];
  }
  return J;
}

void check_state(const SystemSpec& spec, const Vector& x) {
  if (x.size() != spec.dim)
    throw ArgumentError("state has length " + std::to_string(x.size()) + ", " + spec.name() + " expects " +
                        std::to_string(spec.dim));
  if (!x.allFinite()) throw NumericError("non-finite state passed to " + spec.name());
}

// ---------------------------------------------------------------------------
// Generic integrators over an arbitrary right-hand side.

using Rhs = std::function<Vector(const Vector&)>;

Vector rk4_interval(const Rhs& f, Vector y, double dt, double h_max) {
  const int n = std::max(1, static_cast<int>(std::ceil(dt / h_max - 1e-12)));
  const double h = dt / n;
  for (int s = 0; s < n; ++s) {
    const Vector k1 = f(y);
    const Vector k2 = f(y + 0.5 * h * k1);
    const Vector k3 = f(y + 0.5 * h * k2);
    const Vector k4 = f(y + h * k3);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

double error_norm(const Vector& e, const Vector& y0, const Vector& y1, double rtol, double atol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    acc += (e[i] / sc) * (e[i] / sc);
  }
  return std::sqrt(acc / static_cast<double>(e.size()));
}

// Dormand–Prince 5(4) over [0, dt], landing exactly on dt. Step control
// restarts every call so the interval map is a function of y alone.
Vector dopri5_interval(const Rhs& f, Vector y, double dt, double rtol, double atol) {
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;
  (void)c2;
  (void)c3;
  (void)c4;
  (void)c5;

  Vector k1 = f(y);
  // Initial step guess (Hairer, Nørsett & Wanner II.4).
  double h;
  {
    Vector sc(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) sc[i] = atol + rtol * std::abs(y[i]);
    const double d0 = std::sqrt((y.array() / sc.array()).square().mean());
    const double d1 = std::sqrt((k1.array() / sc.array()).square().mean());
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, dt);
    const Vector y1 = y + h0 * k1;
    const Vector f1 = f(y1);
    const double d2 = std::sqrt(((f1 - k1).array() / sc.array()).square().mean()) / h0;
    const double dmax = std::max(d1, d2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 1.0 / 5.0);
    h = std::min({100.0 * h0, h1, dt});
  }

  double t = 0.0;
  int guard = 0;
  while (t < dt) {
    if (++guard > 10000000) throw NumericError("dopri5: step budget exhausted");
    bool last = false;
    if (t + h >= dt) {
      h = dt - t;
      last = true;
    }
    if (h < 1e-14 * std::max(1.0, dt)) throw NumericError("dopri5: step size underflow");
    const Vector k2 = f(y + h * (a21 * k1));
    const Vector k3 = f(y + h * (a31 * k1 + a32 * k2));
    const Vector k4 = f(y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vector k5 = f(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vector k6 = f(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Vector ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Vector k7 = f(ynew);
    const Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = error_norm(err, y, ynew, rtol, atol);
    if (!std::isfinite(en)) {
      h *= 0.2;
      continue;
    }
    if (en <= 1.0) {
      t = last ? dt : t + h;
      y = ynew;
      k1 = k7;
      const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      h *= fac;
    } else {
      h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
    }
  }
  return y;
}

Vector advance_rhs(const Rhs& f, const Vector& y, double dt, const IntegratorOptions& opts) {
  switch (opts.method) {
    case Method::rk4:
      return rk4_interval(f, y, dt, opts.h_max);
    case Method::dopri5:
      return dopri5_interval(f, y, dt, opts.rtol, opts.atol);
  }
  throw ArgumentError("unknown integration method");
}

bool blown_up(const Vector& x) {
  if (!x.allFinite()) return true;
  return x.cwiseAbs().maxCoeff() > kBlowUp;
}

}  // namespace

// ---------------------------------------------------------------------------

SystemSpec SystemSpec::lorenz(double dt) {
  SystemSpec s;
  s.kind = SystemKind::lorenz;
  s.params = {10.0, 28.0, 8.0 / 3.0};
  s.dim = 3;
  s.default_dt = dt;
  return s;
}

SystemSpec SystemSpec::double_pendulum(double dt) {
  SystemSpec s;
  s.kind = SystemKind::double_pendulum;
  s.params = {kPendulumMass, kPendulumMass, kPendulumLength, kPendulumLength, kGravity};
  s.dim = 4;
  s.default_dt = dt;
  return s;
}

SystemSpec SystemSpec::food_web(double dt) {
  SystemSpec s;
  s.kind = SystemKind::food_web;
  s.params = {1.0,     -0.15,   -0.08, 1.0,   -0.15, -0.01, -0.005,  // r
              1.0,     1.0,                                          // alpha11, alpha44
              2.89855, 7.35294, 7.35294, 2.89855, 8.0,  12.0,        // H
              1.38,    0.272,   0.272,   1.38,    0.1,  0.05,        // q
              0.2};                                                  // omega
  s.dim = 7;
  s.default_dt = dt;
  return s;
}

SystemSpec SystemSpec::limit_cycle(double dt, LimitCycleVariant variant) {
  SystemSpec s;
  s.kind = SystemKind::limit_cycle;
  s.params = {1.0, 0.4};
  s.dim = 2;
  s.default_dt = dt;
  s.limit_cycle_variant = variant;
  return s;
}

SystemSpec SystemSpec::external(int dim, VectorField field, double dt, std::vector<double> params) {
  SystemSpec s;
  s.kind = SystemKind::external;
  s.dim = dim;
  s.field = std::move(field);
  s.default_dt = dt;
  s.params = std::move(params);
  return s;
}

std::string SystemSpec::name() const { return std::string(to_string(kind)); }

SystemSpec SystemSpec::with_params(std::vector<double> p) const {
  SystemSpec s = *this;
  s.params = std::move(p);
  s.validate();
  return s;
}

void SystemSpec::validate() const {
  if (dim <= 0) throw ArgumentError("system dimension must be positive");
  if (!(default_dt > 0.0)) throw ArgumentError("default_dt must be positive");
  if (kind == SystemKind::external) {
    if (!field) throw ArgumentError("external system requires a vector field");
    return;
  }
  const int expected_dim = kind == SystemKind::lorenz            ? 3
                           : kind == SystemKind::double_pendulum ? 4
                           : kind == SystemKind::food_web        ? 7
                                                                 : 2;
  if (dim != expected_dim)
    throw ArgumentError(name() + " has dimension " + std::to_string(expected_dim) + ", got " + std::to_string(dim));
  if (params.size() != param_count(kind))
    throw ArgumentError(name() + " takes " + std::to_string(param_count(kind)) + " parameters, got " +
                        std::to_string(params.size()));
  for (double p : params)
    if (!std::isfinite(p)) throw ArgumentError(name() + " parameters must be finite");
}

std::string_view to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::lorenz:
      return "lorenz";
    case SystemKind::double_pendulum:
      return "double_pendulum";
    case SystemKind::food_web:
      return "food_web";
    case SystemKind::limit_cycle:
      return "limit_cycle";
    case SystemKind::external:
      return "external";
  }
  return "unknown";
}

SystemKind system_kind_from_string(std::string_view name) {
  for (auto k : {SystemKind::lorenz, SystemKind::double_pendulum, SystemKind::food_web, SystemKind::limit_cycle,
                 SystemKind::external})
    if (to_string(k) == name) return k;
  throw ArgumentError("unknown system '" + std::string(name) + "'");
}

std::size_t param_count(SystemKind kind) {
  switch (kind) {
    case SystemKind::lorenz:
      return 3;
    case SystemKind::double_pendulum:
      return 5;
    case SystemKind::food_web:
      return 22;
    case SystemKind::limit_cycle:
      return 2;
    case SystemKind::external:
      return 0;
  }
  return 0;
}

std::vector<std::string> param_names(SystemKind kind) {
  switch (kind) {
    case SystemKind::lorenz:
      return {"sigma", "rho", "beta"};
    case SystemKind::double_pendulum:
      return {"m1", "m2", "l1", "l2", "g"};
    case SystemKind::food_web:
      return {"r1",  "r2",  "r3",  "r4",  "r5",  "r6",  "r7",  "alpha11", "alpha44", "H21",  "H32",
              "H35", "H54", "H63", "H76", "q21", "q32", "q35", "q54",     "q63",     "q76",  "omega"};
    case SystemKind::limit_cycle:
      return {"a", "mu"};
    case SystemKind::external:
      return {};
  }
  return {};
}

SystemSpec builtin(std::string_view name) {
  switch (system_kind_from_string(name)) {
    case SystemKind::lorenz:
      return SystemSpec::lorenz();
    case SystemKind::double_pendulum:
      return SystemSpec::double_pendulum();
    case SystemKind::food_web:
      return SystemSpec::food_web();
    case SystemKind::limit_cycle:
      return SystemSpec::limit_cycle();
    case SystemKind::external:
      break;
  }
  throw ArgumentError("the external system needs a vector-field plugin");
}

void Trajectory::validate() const {
  if (states.rows() < 2) throw ArgumentError("trajectory needs at least two samples");
  if (states.cols() < 1) throw ArgumentError("trajectory needs at least one dimension");
  if (!(dt > 0.0)) throw ArgumentError("trajectory dt must be positive");
  if (!states.allFinite()) throw NumericError("trajectory contains non-finite entries");
  if (normalization) {
    if (normalization->mean.size() != states.cols() || normalization->stddev.size() != states.cols())
      throw ArgumentError("normalization size does not match trajectory dimension");
    if ((normalization->stddev.array() <= 0.0).any()) throw ArgumentError("normalization std must be positive");
  }
}

Vector derivative(const SystemSpec& spec, const Vector& x) {
  check_state(spec, x);
  const auto& p = spec.params;
  switch (spec.kind) {
    case SystemKind::lorenz: {
      Vector d(3);
      d << p[0] * (x[1] - x[0]), x[0] * (p[1] - x[2]) - x[1], x[0] * x[1] - p[2] * x[2];
      return d;
    }
    case SystemKind::limit_cycle: {
      const double a = p[0], mu = p[1];
      const double r2 = x[0] * x[0] + x[1] * x[1];
      const double tail = spec.limit_cycle_variant == LimitCycleVariant::printed ? x[0] : x[1];
      Vector d(2);
      d << a * (mu * x[0] - x[1] - x[0] * r2), a * (x[0] + mu * x[1] - tail * r2);
      return d;
    }
    case SystemKind::food_web:
      return food_web_rhs(unpack_food_web(spec), x);
    case SystemKind::double_pendulum:
      return pendulum_derivative(p, x);
    case SystemKind::external: {
      Vector d = spec.field(x);
      if (d.size() != spec.dim) throw ArgumentError("external vector field returned wrong dimension");
      return d;
    }
  }
  throw ArgumentError("unknown system kind");
}

Matrix jacobian(const SystemSpec& spec, const Vector& x) {
  check_state(spec, x);
  const auto& p = spec.params;
  switch (spec.kind) {
    case SystemKind::lorenz: {
      Matrix J(3, 3);
      J << -p[0], p[0], 0.0,      //
          p[1] - x[2], -1.0, -x[0],  //
          x[1], x[0], -p[2];
      return J;
    }
    case SystemKind::limit_cycle: {
      const double a = p[0], mu = p[1];
      const double X = x[0], Y = x[1], r2 = X * X + Y * Y;
      Matrix J(2, 2);
      J(0, 0) = a * (mu - r2 - 2.0 * X * X);
      J(0, 1) = a * (-1.0 - 2.0 * X * Y);
      if (spec.limit_cycle_variant == LimitCycleVariant::printed) {
        J(1, 0) = a * (1.0 - r2 - 2.0 * X * X);
        J(1, 1) = a * (mu - 2.0 * X * Y);
      } else {
        J(1, 0) = a * (1.0 - 2.0 * X * Y);
        J(1, 1) = a * (mu - r2 - 2.0 * Y * Y);
      }
      return J;
    }
    case SystemKind::food_web:
      return food_web_jacobian(unpack_food_web(spec), x);
    case SystemKind::double_pendulum:
      return pendulum_jacobian(p, x);
    case SystemKind::external:
      return central_difference_jacobian(spec, x);
  }
  throw ArgumentError("unknown system kind");
}

std::string_view to_string(Method m) { return m == Method::rk4 ? "rk4" : "dopri5"; }

Method method_from_string(std::string_view name) {
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  throw ArgumentError("unknown integration method '" + std::string(name) + "'");
}

Vector advance(const SystemSpec& spec, const Vector& x, double dt, const IntegratorOptions& opts) {
  check_state(spec, x);
  if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
  return advance_rhs([&](const Vector& y) { return derivative(spec, y); }, x, dt, opts);
}

Trajectory integrate(const SystemSpec& spec, const Vector& x0, double dt, int steps, const IntegratorOptions& opts) {
  spec.validate();
  check_state(spec, x0);
  if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
  if (steps < 1) throw ArgumentError("steps must be >= 1");
  Trajectory traj;
  traj.dt = dt;
  traj.states.resize(steps + 1, spec.dim);
  traj.states.row(0) = x0.transpose();
  // Stay in the raw state space between samples: no clamping, no projection.
  const Rhs rhs = [&](const Vector& y) {
    if (blown_up(y)) return Vector(Vector::Constant(y.size(), std::numeric_limits<double>::quiet_NaN()));
    return derivative(spec, y);
  };
  Vector x = x0;
  for (int k = 1; k <= steps; ++k) {
    try {
      x = advance_rhs(rhs, x, dt, opts);
    } catch (const NumericError&) {
      throw DivergenceError(spec.name() + " integration diverged", static_cast<std::size_t>(k));
    }
    if (blown_up(x)) throw DivergenceError(spec.name() + " integration diverged", static_cast<std::size_t>(k));
    traj.states.row(k) = x.transpose();
  }
  return traj;
}

std::pair<Vector, Matrix> advance_with_jacobian(const SystemSpec& spec, const Vector& x, double delta_t,
                                                const IntegratorOptions& opts) {
  check_state(spec, x);
  if (!(delta_t > 0.0)) throw ArgumentError("delta_t must be positive");
  const Eigen::Index n = spec.dim;
  Vector y(n + n * n);
  y.head(n) = x;
  Eigen::Map<Matrix>(y.data() + n, n, n).setIdentity();
  const Rhs rhs = [&](const Vector& s) -> Vector {
    if (blown_up(s)) return Vector::Constant(s.size(), std::numeric_limits<double>::quiet_NaN());
    Vector out(s.size());
    const Vector xs = s.head(n);
    out.head(n) = derivative(spec, xs);
    Eigen::Map<Matrix>(out.data() + n, n, n) = jacobian(spec, xs) * Eigen::Map<const Matrix>(s.data() + n, n, n);
    return out;
  };
  Vector yt;
  try {
    yt = advance_rhs(rhs, y, delta_t, opts);
  } catch (const NumericError&) {
    throw DivergenceError(spec.name() + " variational integration diverged", 1);
  }
  if (blown_up(yt)) throw DivergenceError(spec.name() + " variational integration diverged", 1);
  return {yt.head(n), Eigen::Map<const Matrix>(yt.data() + n, n, n)};
}

Matrix flow_jacobian(const SystemSpec& spec, const Vector& x, double delta_t, const IntegratorOptions& opts) {
  return advance_with_jacobian(spec, x, delta_t, opts).second;
}

Vector lyapunov_spectrum(const SystemSpec& spec, const Vector& x0, double dt, int n_steps, int discard,
                         const IntegratorOptions& opts) {
  spec.validate();
  if (!(n_steps > discard && discard >= 0)) throw ArgumentError("lyapunov_spectrum needs n_steps > discard >= 0");
  const Eigen::Index n = spec.dim;
  Vector x = x0;
  Matrix Q = Matrix::Identity(n, n);
  Vector log_growth = Vector::Zero(n);
  for (int k = 0; k < n_steps; ++k) {
    Matrix Phi;
    try {
      std::tie(x, Phi) = advance_with_jacobian(spec, x, dt, opts);
    } catch (const DivergenceError&) {
      throw DivergenceError(spec.name() + " diverged during Lyapunov estimation", static_cast<std::size_t>(k + 1));
    }
    Eigen::HouseholderQR<Matrix> qr(Phi * Q);
    Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
    Q = qr.householderQ() * Matrix::Identity(n, n);
    // Fix signs so the diagonal of R is positive and Q is continuous.
    for (Eigen::Index i = 0; i < n; ++i) {
      if (R(i, i) < 0.0) {
        R.row(i) *= -1.0;
        Q.col(i) *= -1.0;
      }
    }
    if (k >= discard)
      for (Eigen::Index i = 0; i < n; ++i) log_growth[i] += std::log(R(i, i));
  }
  Vector exps = log_growth / (static_cast<double>(n_steps - discard) * dt);
  std::sort(exps.data(), exps.data() + n, std::greater<>());
  return exps;
}

Trajectory add_observation_noise(const Trajectory& traj, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ArgumentError("noise sigma must be non-negative");
  Trajectory out = traj;
  out.noise_sigma = sigma;
  if (sigma == 0.0) return out;
  Rng rng = make_rng(seed, Stream::observation_noise);
  std::normal_distribution<double> dist(0.0, sigma);
  // Row-major fill so the noise stream is independent of the matrix storage order.
  for (Eigen::Index i = 0; i < out.states.rows(); ++i)
    for (Eigen::Index j = 0; j < out.states.cols(); ++j) out.states(i, j) += dist(rng);
  return out;
}

double total_variance(const Matrix& states) {
  const Eigen::RowVectorXd mean = states.colwise().mean();
  const double n = static_cast<double>(states.rows());
  return (states.rowwise() - mean).array().square().sum() / n;
}

Trajectory normalize(const Trajectory& traj) {
  traj.validate();
  const Eigen::Index n = traj.states.rows();
  Normalization norm;
  norm.mean = traj.states.colwise().mean().transpose();
  norm.stddev.resize(traj.states.cols());
  for (Eigen::Index j = 0; j < traj.states.cols(); ++j) {
    const double var = (traj.states.col(j).array() - norm.mean[j]).square().sum() / static_cast<double>(n);
    if (!(var > 0.0)) throw DegenerateDataError("dimension " + std::to_string(j) + " has zero variance");
    norm.stddev[j] = std::sqrt(var);
  }
  Trajectory out = traj;
  for (Eigen::Index j = 0; j < traj.states.cols(); ++j)
    out.states.col(j) = (traj.states.col(j).array() - norm.mean[j]) / norm.stddev[j];
  out.normalization = norm;
  return out;
}

Trajectory denormalize(const Trajectory& traj) {
  if (!traj.normalization) return traj;
  Trajectory out = traj;
  for (Eigen::Index j = 0; j < traj.states.cols(); ++j)
    out.states.col(j) = traj.states.col(j).array() * traj.normalization->stddev[j] + traj.normalization->mean[j];
  out.normalization.reset();
  return out;
}

Vector default_initial_state(const SystemSpec& spec, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::initial_state);
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector x(spec.dim);
  switch (spec.kind) {
    case SystemKind::lorenz:
      for (int i = 0; i < 3; ++i) x[i] = 1.0 + n01(rng);
      break;
    case SystemKind::double_pendulum:
      x << std::numbers::pi / 2 + 0.1 * n01(rng), std::numbers::pi / 2 + 0.1 * n01(rng), 0.0, 0.0;
      break;
    case SystemKind::food_web:
      for (int i = 0; i < 7; ++i) x[i] = std::max(1e-6, 1.0 + 0.1 * n01(rng));
      break;
    case SystemKind::limit_cycle: {
      const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
      x << std::cos(phase), std::sin(phase);
      break;
    }
    case SystemKind::external:
      for (int i = 0; i < spec.dim; ++i) x[i] = n01(rng);
      break;
  }
  return x;
}

Trajectory generate(const SystemSpec& spec, int n_samples, double dt, std::uint64_t seed,
                    const IntegratorOptions& opts, double transient_fraction) {
  if (n_samples < 2) throw ArgumentError("generate needs at least two samples");
  if (!(transient_fraction >= 0.0 && transient_fraction < 1.0))
    throw ArgumentError("transient_fraction must lie in [0, 1)");
  const int total = static_cast<int>(std::ceil(n_samples / (1.0 - transient_fraction) - 1e-9));
  const int drop = total - n_samples;
  Trajectory full = integrate(spec, default_initial_state(spec, seed), dt, total - 1, opts);
  Trajectory out;
  out.states = full.states.bottomRows(n_samples);
  out.dt = dt;
  out.t0 = drop * dt;
  out.seed = seed;
  return out;
}

}  // namespace horizonlab::dynamics
