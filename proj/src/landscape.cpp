#include "horizonlab/landscape.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "horizonlab/errors.hpp"
#include "horizonlab/rng.hpp"
#include "horizonlab/stats.hpp"

namespace horizonlab::landscape {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

net::ParamVector with_values(const net::ParamVector& like, const Vector& theta) {
  net::ParamVector p = like;
  p.flat() = theta;
  return p;
}

Vector full_gradient(const net::MlpConfig& config, const net::ParamVector& params, const dynamics::Trajectory& traj,
                     int T, arloss::NormMode mode) {
  return arloss::horizon_loss_grad(config, params, traj, {T, mode, std::nullopt}).grad.flat();
}

std::string format_cell(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::grad_ratio:
      return "grad_ratio";
    case ProbeKind::roughness:
      return "roughness";
    case ProbeKind::hessian_ratio:
      return "hessian_ratio";
    case ProbeKind::gen_ratio:
      return "gen_ratio";
    case ProbeKind::scan1d:
      return "scan1d";
    case ProbeKind::scan2d:
      return "scan2d";
    case ProbeKind::eps_check:
      return "eps_check";
  }
  return "grad_ratio";
}

ProbeKind probe_kind_from_string(std::string_view s) {
  for (ProbeKind k : {ProbeKind::grad_ratio, ProbeKind::roughness, ProbeKind::hessian_ratio, ProbeKind::gen_ratio,
                      ProbeKind::scan1d, ProbeKind::scan2d, ProbeKind::eps_check})
    if (to_string(k) == s) return k;
  throw ArgumentError("unknown probe kind '" + std::string(s) + "'");
}

std::string LandscapeProbe::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
  out += '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + format_cell(row[i]);
    out += '\n';
  }
  return out;
}

std::vector<GradRatioRow> gradient_ratio(const std::function<Vector(int T)>& grad_at, const std::vector<int>& T_list) {
  if (T_list.empty()) throw ArgumentError("empty horizon list");
  const double base = grad_at(1).norm();
  if (!(base > 1e-12)) throw DegenerateMinimumError("gradient norm at T=1 vanishes; g(T) is undefined");
  std::vector<GradRatioRow> rows;
  for (int T : T_list) rows.push_back({T, T == 1 ? 1.0 : grad_at(T).norm() / base});
  return rows;
}

std::vector<GradRatioRow> gradient_ratio(const net::MlpConfig& config, const net::ParamVector& params,
                                         const dynamics::Trajectory& traj, const std::vector<int>& T_list,
                                         arloss::NormMode mode) {
  return gradient_ratio([&](int T) { return full_gradient(config, params, traj, T, mode); }, T_list);
}

int count_extrema(std::span<const double> values, double flat_tol) {
  if (values.size() < 3) return 0;
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi - lo;
  if (!(range > 0.0)) return 0;
  const double tol = flat_tol * range;
  int count = 0, last_sign = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double d = values[i] - values[i - 1];
    if (std::abs(d) <= tol) continue;
    const int sign = d > 0.0 ? 1 : -1;
    if (last_sign != 0 && sign != last_sign) ++count;
    last_sign = sign;
  }
  return count;
}

Roughness segment_roughness(const LossFn& loss, const Vector& theta1, const Vector& theta2, int n_points,
                            double flat_tol) {
  if (theta1.size() != theta2.size()) throw ArgumentError("segment endpoints differ in size");
  const double dist = (theta2 - theta1).norm();
  if (!(dist > 0.0)) throw ArgumentError("segment endpoints coincide");
  if (n_points <= 0) n_points = std::max(3, static_cast<int>(std::ceil(512.0 * dist)));
  if (n_points < 3) throw ArgumentError("segment_roughness needs at least 3 points");
  if (!(flat_tol >= 0.0)) throw ArgumentError("flat_tol must be non-negative");
  Roughness r;
  r.n_points = n_points;
  r.values.resize(static_cast<std::size_t>(n_points));
  const double last = n_points - 1;
  for (int i = 0; i < n_points; ++i) {
    // Complementary weights make the sample set identical under endpoint swap.
    const double w1 = (last - i) / last, w2 = i / last;
    r.values[static_cast<std::size_t>(i)] = loss(w1 * theta1 + w2 * theta2);
  }
  r.z = count_extrema(r.values, flat_tol);
  return r;
}

TraceEstimate hessian_trace(const GradFn& grad, const Vector& theta, int n_probes, double fd_step,
                            std::uint64_t seed) {
  if (n_probes < 1) throw ArgumentError("n_probes must be >= 1");
  if (!(fd_step > 0.0)) throw ArgumentError("fd_step must be positive");
  Rng rng = make_rng(seed, Stream::probe);
  std::bernoulli_distribution coin(0.5);
  const double scale = fd_step * (1.0 + theta.norm());
  std::vector<double> samples(static_cast<std::size_t>(n_probes));
  Vector v(theta.size());
  for (int k = 0; k < n_probes; ++k) {
    for (auto& e : v) e = coin(rng) ? 1.0 : -1.0;
    const double h = scale / v.norm();
    const Vector hv = (grad(theta + h * v) - grad(theta - h * v)) / (2.0 * h);
    samples[static_cast<std::size_t>(k)] = v.dot(hv);
  }
  TraceEstimate est;
  est.n_probes = n_probes;
  est.trace = stats::mean(samples);
  if (n_probes > 1) {
    double ss = 0.0;
    for (double s : samples) ss += (s - est.trace) * (s - est.trace);
    est.std_error = std::sqrt(ss / (n_probes - 1) / n_probes);
  }
  return est;
}

std::vector<HessianRatioRow> hessian_ratio(const net::MlpConfig& config, const dynamics::Trajectory& traj,
                                           const std::map<int, net::ParamVector>& minima,
                                           const std::vector<int>& T_list, const HessianRatioOptions& opts) {
  if (!minima.count(1)) throw ArgumentError("hessian_ratio needs the T=1 minimum");
  std::vector<int> horizons{1};
  for (int T : T_list)
    if (T != 1) horizons.push_back(T);
  for (int T : horizons) {
    const auto it = minima.find(T);
    if (it == minima.end()) throw ArgumentError("no minimum supplied for T=" + std::to_string(T));
    const double gn = full_gradient(config, it->second, traj, T, opts.norm_mode).norm();
    if (!(gn < 10.0 * opts.gamma))
      throw StationarityError("minimum for T=" + std::to_string(T) + " is not stationary (gradient norm " +
                                  std::to_string(gn) + ")",
                              T);
  }
  std::map<int, TraceEstimate> traces;
  for (int T : horizons) {
    const net::ParamVector& p = minima.at(T);
    const GradFn grad = [&](const Vector& th) {
      return full_gradient(config, with_values(p, th), traj, T, opts.norm_mode);
    };
    traces[T] = hessian_trace(grad, p.flat(), opts.n_probes, opts.fd_step, opts.seed);
  }
  return hessian_ratio_rows(traces, T_list);
}

std::vector<HessianRatioRow> hessian_ratio_rows(const std::map<int, TraceEstimate>& traces,
                                                const std::vector<int>& T_list) {
  const auto base_it = traces.find(1);
  if (base_it == traces.end()) throw ArgumentError("hessian ratios need the T=1 trace");
  const bool base_flagged = base_it->second.trace < 0.0;
  std::vector<HessianRatioRow> rows;
  for (int T : T_list) {
    const auto it = traces.find(T);
    if (it == traces.end()) throw ArgumentError("no trace for T=" + std::to_string(T));
    HessianRatioRow row;
    row.T = T;
    row.estimate = it->second;
    row.flagged = row.estimate.trace < 0.0;
    if (row.flagged || base_flagged)
      row.ratio = kNaN;
    else
      row.ratio = T == 1 ? 1.0 : row.estimate.trace / base_it->second.trace;
    rows.push_back(row);
  }
  return rows;
}

PairedMinima paired_minima(const net::MlpConfig& config, const net::ParamVector& initial,
                           const dynamics::Trajectory& traj, int T_l, int T_h, const optimize::TrainConfig& tcfg,
                           double delta_pair) {
  if (T_l > T_h) throw ArgumentError("paired_minima needs T_l <= T_h");
  if (!(delta_pair > 0.0)) throw ArgumentError("delta_pair must be positive");
  const auto run = [&](const net::ParamVector& from, int T) {
    const auto rep = optimize::train_from(config, from, traj, T, tcfg);
    if (rep.stop_reason == optimize::StopReason::divergence)
      throw DivergenceError("training at T=" + std::to_string(T) + " diverged: " + rep.divergence_detail, rep.steps);
    return rep.final_params;
  };
  PairedMinima out;
  out.theta_l = run(initial, T_l);
  out.theta_h = run(out.theta_l, T_h);
  const net::ParamVector back = run(out.theta_h, T_l);
  out.return_distance = (back.flat() - out.theta_l.flat()).norm() / out.theta_l.flat().norm();
  if (!(out.return_distance <= delta_pair))
    throw BasinMismatchError("re-training at T=" + std::to_string(T_l) + " from the T=" + std::to_string(T_h) +
                             " minimum ended at relative distance " + std::to_string(out.return_distance));
  return out;
}

PairedMinima paired_minima(const net::MlpConfig& config, const dynamics::Trajectory& traj, int T_l, int T_h,
                           const optimize::TrainConfig& tcfg, double delta_pair) {
  return paired_minima(config, net::init(config), traj, T_l, T_h, tcfg, delta_pair);
}

double validation_horizon_loss(const net::MlpConfig& config, const net::ParamVector& params,
                               const dynamics::Trajectory& traj, int T, double val_fraction) {
  const auto split = optimize::chronological_split(traj.size(), 1, T, val_fraction);
  return arloss::horizon_loss(config, params, traj, {T, arloss::NormMode::squared, split.validation});
}

double generalization_ratio(const net::MlpConfig& config, const dynamics::Trajectory& traj,
                            const net::ParamVector& theta_l, const net::ParamVector& theta_h, int T_l, int T_h,
                            double val_fraction) {
  const auto L = [&](const net::ParamVector& p, int T) {
    return validation_horizon_loss(config, p, traj, T, val_fraction);
  };
  const double denom = L(theta_l, T_l) - L(theta_h, T_l);
  if (!(std::abs(denom) > 1e-12))
    throw IndeterminateRatioError("the two minima have the same loss at T=" + std::to_string(T_l) +
                                  "; the generalization ratio is undetermined");
  return (L(theta_h, T_h) - L(theta_l, T_h)) / denom;
}

EpsilonCheck epsilon_region_check(const arloss::StepMap& model, const dynamics::SystemSpec& spec,
                                  const Matrix& states, double dt, double epsilon, int n_directions,
                                  std::uint64_t seed, const dynamics::IntegratorOptions& opts) {
  if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  if (n_directions < 1) throw ArgumentError("n_directions must be >= 1");
  if (states.rows() < 1 || states.cols() != spec.dim) throw ArgumentError("states do not match the system");
  Rng rng = make_rng(seed, Stream::directions);
  std::normal_distribution<double> n01(0.0, 1.0);
  EpsilonCheck out;
  out.epsilon = epsilon;
  Vector r(spec.dim);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const Vector x = states.row(i).transpose();
    const Matrix J = dynamics::flow_jacobian(spec, x, dt, opts);
    const Vector fx = model(x);
    for (int k = 0; k < n_directions; ++k) {
      for (auto& e : r) e = n01(rng);
      r.normalize();
      const double dev = (model(x + epsilon * r) - (fx + epsilon * (J * r))).norm();
      out.max_deviation = std::max(out.max_deviation, dev);
    }
  }
  out.pass = out.max_deviation < epsilon * epsilon;
  return out;
}

EpsilonCheck epsilon_region_check(const net::MlpConfig& config, const net::ParamVector& params,
                                  const dynamics::SystemSpec& spec, const Matrix& states, double dt, double epsilon,
                                  int n_directions, std::uint64_t seed, const dynamics::IntegratorOptions& opts,
                                  const dynamics::Normalization* norm) {
  arloss::StepMap model;
  if (norm) {
    model = [&](const Vector& x) -> Vector {
      const Vector z = (x - norm->mean).cwiseQuotient(norm->stddev);
      return net::apply(config, params, z).cwiseProduct(norm->stddev) + norm->mean;
    };
  } else {
    model = [&](const Vector& x) -> Vector { return net::apply(config, params, x); };
  }
  return epsilon_region_check(model, spec, states, dt, epsilon, n_directions, seed, opts);
}

ScanResult param_scan(const LossFn& loss, const Vector& theta_center, const std::vector<int>& dims,
                      const std::vector<std::pair<double, double>>& ranges, int n_per_dim, bool normalize) {
  if (dims.empty() || dims.size() > 2) throw ArgumentError("param_scan scans one or two dimensions");
  if (ranges.size() != dims.size()) throw ArgumentError("one range per scanned dimension");
  if (n_per_dim < 3) throw ArgumentError("n_per_dim must be >= 3");
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (dims[d] < 0 || dims[d] >= theta_center.size()) throw ArgumentError("scan dimension out of range");
    if (!std::isfinite(ranges[d].first) || !std::isfinite(ranges[d].second) || !(ranges[d].first < ranges[d].second))
      throw ArgumentError("scan ranges must be finite with lo < hi");
  }
  const auto coord = [&](std::size_t d, int i) {
    const auto [lo, hi] = ranges[d];
    return lo + (hi - lo) * i / (n_per_dim - 1);
  };
  ScanResult out;
  out.dims = dims;
  const int total = dims.size() == 1 ? n_per_dim : n_per_dim * n_per_dim;
  out.coords.resize(total, static_cast<Eigen::Index>(dims.size()));
  out.loss.resize(static_cast<std::size_t>(total));
  out.flagged.resize(static_cast<std::size_t>(total));
  for (int k = 0; k < total; ++k) {
    Vector theta = theta_center;
    const int idx[2] = {dims.size() == 1 ? k : k / n_per_dim, k % n_per_dim};
    for (std::size_t d = 0; d < dims.size(); ++d) {
      const double c = coord(d, idx[d]);
      out.coords(k, static_cast<Eigen::Index>(d)) = c;
      theta[dims[d]] = c;
    }
    double v;
    try {
      v = loss(theta);
    } catch (const NumericError&) {
      v = kNaN;
    } catch (const DivergenceError&) {
      v = kNaN;
    }
    const auto i = static_cast<std::size_t>(k);
    out.flagged[i] = !std::isfinite(v);
    out.loss[i] = out.flagged[i] ? kNaN : v;
  }
  if (normalize) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < out.loss.size(); ++i)
      if (!out.flagged[i]) mx = std::max(mx, out.loss[i]);
    if (std::isfinite(mx) && mx > 0.0)
      for (std::size_t i = 0; i < out.loss.size(); ++i)
        if (!out.flagged[i]) out.loss[i] /= mx;
  }
  return out;
}

double t_max_estimate(TMaxKind kind, double lambda_or_omega, double sigma, double S_or_L) {
  if (!(sigma >= 0.0)) throw ArgumentError("sigma must be non-negative");
  if (kind == TMaxKind::chaotic) {
    if (!(lambda_or_omega > 0.0)) throw ArgumentError("a chaotic horizon needs a positive Lyapunov exponent");
    if (!(S_or_L > 0.0)) throw ArgumentError("S must be positive");
    if (sigma == 0.0) return std::numeric_limits<double>::infinity();
    return (std::log(S_or_L) - std::log(sigma)) / lambda_or_omega;
  }
  if (!(S_or_L > 0.0)) throw ArgumentError("L must be positive");
  if (sigma == 0.0) return std::numeric_limits<double>::infinity();
  return S_or_L / sigma;
}

LandscapeProbe to_probe(const std::vector<GradRatioRow>& rows) {
  LandscapeProbe p;
  p.kind = ProbeKind::grad_ratio;
  p.columns = {"T", "g"};
  for (const auto& r : rows) p.rows.push_back({static_cast<double>(r.T), r.g});
  return p;
}

LandscapeProbe to_probe(const std::vector<HessianRatioRow>& rows) {
  LandscapeProbe p;
  p.kind = ProbeKind::hessian_ratio;
  p.columns = {"T", "trace", "std_error", "ratio", "flag"};
  for (const auto& r : rows)
    p.rows.push_back({static_cast<double>(r.T), r.estimate.trace, r.estimate.std_error, r.ratio, r.flagged ? 1.0 : 0.0});
  return p;
}

LandscapeProbe to_probe(const ScanResult& scan) {
  LandscapeProbe p;
  p.kind = scan.dims.size() == 1 ? ProbeKind::scan1d : ProbeKind::scan2d;
  for (std::size_t d = 0; d < scan.dims.size(); ++d) p.columns.push_back("coord" + std::to_string(d));
  p.columns.push_back("loss");
  p.columns.push_back("flag");
  for (std::size_t i = 0; i < scan.loss.size(); ++i) {
    std::vector<double> row;
    for (Eigen::Index d = 0; d < scan.coords.cols(); ++d) row.push_back(scan.coords(static_cast<Eigen::Index>(i), d));
    row.push_back(scan.loss[i]);
    row.push_back(scan.flagged[i] ? 1.0 : 0.0);
    p.rows.push_back(std::move(row));
  }
  return p;
}

LandscapeProbe roughness_probe(const std::vector<std::pair<int, Roughness>>& by_T) {
  LandscapeProbe p;
  p.kind = ProbeKind::roughness;
  p.columns = {"T", "z", "n_points"};
  for (const auto& [T, r] : by_T)
    p.rows.push_back({static_cast<double>(T), static_cast<double>(r.z), static_cast<double>(r.n_points)});
  return p;
}

LandscapeProbe eps_check_probe(const std::vector<EpsilonCheck>& checks) {
  LandscapeProbe p;
  p.kind = ProbeKind::eps_check;
  p.columns = {"epsilon", "max_deviation", "pass"};
  for (const auto& c : checks) p.rows.push_back({c.epsilon, c.max_deviation, c.pass ? 1.0 : 0.0});
  return p;
}

LandscapeProbe to_probe(const std::vector<GenRatioRow>& rows) {
  LandscapeProbe p;
  p.kind = ProbeKind::gen_ratio;
  p.columns = {"T_l", "T_h", "r", "seed"};
  for (const auto& r : rows)
    p.rows.push_back({static_cast<double>(r.T_l), static_cast<double>(r.T_h), r.r, static_cast<double>(r.seed)});
  return p;
}

}  // namespace horizonlab::landscape
