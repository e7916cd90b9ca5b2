#include "horizonlab/arloss.hpp"

#include <cmath>

#include "horizonlab/errors.hpp"
#include "horizonlab/parallel.hpp"
#include "horizonlab/stats.hpp"

namespace horizonlab::arloss {

namespace {

// Fixed window-chunk size: chunk boundaries, and therefore every floating
// point reduction, are independent of the number of workers.
constexpr std::size_t kChunk = 256;

void check_horizon(const dynamics::Trajectory& traj, const HorizonLossConfig& lcfg) {
  if (lcfg.T < 1) throw ArgumentError("horizon T must be >= 1");
  if (lcfg.T >= traj.size())
    throw ArgumentError("horizon T=" + std::to_string(lcfg.T) + " needs more than " + std::to_string(traj.size()) +
                        " samples");
}

std::vector<std::size_t> resolve_windows(const dynamics::Trajectory& traj, const HorizonLossConfig& lcfg) {
  if (!lcfg.batch) return all_windows(traj.size(), lcfg.T);
  const auto limit = static_cast<std::size_t>(traj.size() - lcfg.T);
  for (std::size_t m : *lcfg.batch)
    if (m >= limit) throw ArgumentError("window start " + std::to_string(m) + " leaves no room for the horizon");
  if (lcfg.batch->empty()) throw ArgumentError("empty window batch");
  return *lcfg.batch;
}

Matrix gather(const Matrix& states, std::span<const std::size_t> starts, std::size_t offset) {
  Matrix x(states.cols(), static_cast<Eigen::Index>(starts.size()));
  for (std::size_t b = 0; b < starts.size(); ++b)
    x.col(static_cast<Eigen::Index>(b)) = states.row(static_cast<Eigen::Index>(starts[b] + offset)).transpose();
  return x;
}

void check_finite(const Matrix& x, int tau) {
  if (!x.allFinite()) throw DivergenceError("autoregressive rollout produced non-finite states", static_cast<std::size_t>(tau));
}

// Per-window loss values (already divided by T) for one chunk, plus the
// gradient contribution when `grad` is non-null. The gradient carries the
// 1/T factor but not the 1/|W| factor.
void chunk_loss(const net::MlpConfig& config, const net::ParamVector& params, const Matrix& states, int T,
                NormMode mode, std::span<const std::size_t> starts, std::span<double> window_loss,
                net::ParamVector* grad) {
  const auto B = static_cast<Eigen::Index>(starts.size());
  const double invT = 1.0 / T;
  std::vector<net::Cache> caches(grad ? static_cast<std::size_t>(T) : 0);
  std::vector<Matrix> direct(grad ? static_cast<std::size_t>(T) : 0);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(B);
  Matrix x = gather(states, starts, 0);
  for (int tau = 1; tau <= T; ++tau) {
    x = net::forward_batch(config, params, x, grad ? &caches[static_cast<std::size_t>(tau - 1)] : nullptr);
    check_finite(x, tau);
    const Matrix r = x - gather(states, starts, static_cast<std::size_t>(tau));
    const Eigen::RowVectorXd sq = r.colwise().squaredNorm();
    if (mode == NormMode::squared) {
      acc += sq.transpose();
      if (grad) direct[static_cast<std::size_t>(tau - 1)] = (2.0 * invT) * r;
    } else {
      const Eigen::RowVectorXd nrm = sq.cwiseSqrt();
      acc += nrm.transpose();
      if (grad) {
        if ((nrm.array() <= 1e-12).any())
          throw GradientSingularityError(
              "euclidean horizon loss is not differentiable at a zero residual; use squared mode");
        direct[static_cast<std::size_t>(tau - 1)] = invT * (r.array().rowwise() / nrm.array()).matrix();
      }
    }
  }
  for (Eigen::Index b = 0; b < B; ++b) window_loss[static_cast<std::size_t>(b)] = acc[b] * invT;
  if (!grad) return;
  Matrix upstream = direct[static_cast<std::size_t>(T - 1)];
  for (int tau = T; tau >= 1; --tau) {
    Matrix dx = net::backward_batch(config, params, caches[static_cast<std::size_t>(tau - 1)], upstream, *grad);
    if (tau > 1) upstream = direct[static_cast<std::size_t>(tau - 2)] + dx;
  }
}

struct WindowResult {
  double loss;
  std::vector<net::ParamVector> chunk_grads;
};

WindowResult evaluate_windows(const net::MlpConfig& config, const net::ParamVector& params, const Matrix& states,
                              int T, NormMode mode, std::span<const std::size_t> starts, bool with_grad,
                              int workers) {
  const std::size_t n_chunks = (starts.size() + kChunk - 1) / kChunk;
  std::vector<double> per_window(starts.size());
  WindowResult res{0.0, {}};
  if (with_grad) res.chunk_grads.assign(n_chunks, params.zeros_like());
  parallel_for(
      n_chunks,
      [&](std::size_t c) {
        const std::size_t lo = c * kChunk, hi = std::min(starts.size(), lo + kChunk);
        chunk_loss(config, params, states, T, mode, starts.subspan(lo, hi - lo),
                   std::span<double>(per_window).subspan(lo, hi - lo), with_grad ? &res.chunk_grads[c] : nullptr);
      },
      workers);
  res.loss = stats::pairwise_sum(per_window) / static_cast<double>(starts.size());
  return res;
}

// Pairwise combination of chunk gradients in index order.
void reduce_grads(std::vector<net::ParamVector>& grads, std::size_t lo, std::size_t hi) {
  if (hi - lo <= 1) return;
  const std::size_t mid = lo + (hi - lo) / 2;
  reduce_grads(grads, lo, mid);
  reduce_grads(grads, mid, hi);
  grads[lo].flat() += grads[mid].flat();
}

}  // namespace

std::string_view to_string(NormMode m) { return m == NormMode::squared ? "squared" : "euclidean"; }

NormMode norm_mode_from_string(std::string_view s) {
  if (s == "squared") return NormMode::squared;
  if (s == "euclidean") return NormMode::euclidean;
  throw ArgumentError("unknown norm mode '" + std::string(s) + "'");
}

std::vector<std::size_t> all_windows(Eigen::Index n_rows, int T) {
  if (T < 1 || n_rows <= T) return {};
  std::vector<std::size_t> w(static_cast<std::size_t>(n_rows - T));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = i;
  return w;
}

Matrix rollout(const net::MlpConfig& config, const net::ParamVector& params, const Vector& x0, int n) {
  if (n < 1) throw ArgumentError("rollout length must be >= 1");
  if (x0.size() != config.input_dim) throw ArgumentError("initial state has wrong dimension");
  if (!x0.allFinite()) throw NumericError("non-finite initial state");
  Matrix out(n, config.input_dim);
  Matrix x = x0;
  for (int tau = 1; tau <= n; ++tau) {
    x = net::forward_batch(config, params, x, nullptr);
    check_finite(x, tau);
    out.row(tau - 1) = x.col(0).transpose();
  }
  return out;
}

double horizon_loss(const net::MlpConfig& config, const net::ParamVector& params, const dynamics::Trajectory& traj,
                    const HorizonLossConfig& lcfg) {
  check_horizon(traj, lcfg);
  const auto starts = resolve_windows(traj, lcfg);
  return evaluate_windows(config, params, traj.states, lcfg.T, lcfg.norm_mode, starts, false, lcfg.workers).loss;
}

LossGrad horizon_loss_grad(const net::MlpConfig& config, const net::ParamVector& params,
                           const dynamics::Trajectory& traj, const HorizonLossConfig& lcfg) {
  check_horizon(traj, lcfg);
  const auto starts = resolve_windows(traj, lcfg);
  auto res = evaluate_windows(config, params, traj.states, lcfg.T, lcfg.norm_mode, starts, true, lcfg.workers);
  reduce_grads(res.chunk_grads, 0, res.chunk_grads.size());
  LossGrad out{res.loss, std::move(res.chunk_grads.front())};
  out.grad.flat() /= static_cast<double>(starts.size());
  return out;
}

double final_step_error(const net::MlpConfig& config, const net::ParamVector& params, const Matrix& states, int T,
                        std::span<const std::size_t> starts) {
  if (starts.empty()) throw ArgumentError("no windows to evaluate");
  std::vector<double> err(starts.size());
  for (std::size_t lo = 0; lo < starts.size(); lo += kChunk) {
    const auto chunk = starts.subspan(lo, std::min(kChunk, starts.size() - lo));
    Matrix x = gather(states, chunk, 0);
    for (int tau = 1; tau <= T; ++tau) {
      x = net::forward_batch(config, params, x, nullptr);
      check_finite(x, tau);
    }
    const Eigen::RowVectorXd sq = (x - gather(states, chunk, static_cast<std::size_t>(T))).colwise().squaredNorm();
    for (Eigen::Index b = 0; b < sq.size(); ++b) err[lo + static_cast<std::size_t>(b)] = sq[b];
  }
  return stats::pairwise_sum(err) / static_cast<double>(err.size());
}

double mechanistic_loss(const dynamics::SystemSpec& spec, const std::vector<double>& theta,
                        const dynamics::Trajectory& traj, int T, const dynamics::IntegratorOptions& opts) {
  if (T < 1) throw ArgumentError("horizon T must be >= 1");
  if (traj.dim() != spec.dim) throw ArgumentError("trajectory dimension does not match the system");
  const dynamics::SystemSpec model = spec.with_params(theta);
  const Eigen::Index last = traj.size() - 1;
  const Eigen::Index segments = last / T;
  if (segments < 1) throw ArgumentError("trajectory shorter than one segment of length T");
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(segments * T));
  for (Eigen::Index m = 0; m < segments; ++m) {
    Vector x = traj.row(m * T);
    for (int tau = 1; tau <= T; ++tau) {
      const std::size_t index = static_cast<std::size_t>(m * T + tau);
      try {
        x = dynamics::advance(model, x, traj.dt, opts);
      } catch (const NumericError&) {
        throw DivergenceError("mechanistic segment " + std::to_string(m) + " diverged", index);
      }
      if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e12)
        throw DivergenceError("mechanistic segment " + std::to_string(m) + " diverged", index);
      terms.push_back((traj.row(static_cast<Eigen::Index>(index)) - x).norm());
    }
  }
  return stats::pairwise_sum(terms);
}

double loss_upper_bound(const dynamics::Trajectory& traj, double epsilon) {
  if (!(epsilon >= 0.0)) throw ArgumentError("epsilon must be non-negative");
  double best = 0.0;
  for (Eigen::Index i = 0; i < traj.size(); ++i)
    for (Eigen::Index j = i + 1; j < traj.size(); ++j)
      best = std::max(best, (traj.states.row(i) - traj.states.row(j)).squaredNorm());
  return best + 2.0 * epsilon;
}

LongHorizonResult long_horizon_error(const StepMap& model, const dynamics::SystemSpec& spec,
                                     const LongHorizonOptions& opts) {
  if (opts.n_starts < 1 || opts.T_long < 1) throw ArgumentError("n_starts and T_long must be >= 1");
  const double dt = opts.dt > 0.0 ? opts.dt : spec.default_dt;
  const auto attractor =
      dynamics::generate(spec, std::max(opts.attractor_samples, opts.n_starts + 1), dt, opts.seed, opts.integrator);
  LongHorizonResult res;
  res.variance_scale = 2.0 * dynamics::total_variance(attractor.states);
  const Eigen::Index stride = attractor.size() / opts.n_starts;
  std::vector<double> errors;
  for (int s = 0; s < opts.n_starts; ++s) {
    const Vector x0 = attractor.row(s * stride);
    Vector truth = x0, pred = x0;
    for (int k = 1; k <= opts.T_long; ++k) {
      truth = dynamics::advance(spec, truth, dt, opts.integrator);
      pred = model(pred);
      if (!pred.allFinite()) throw DivergenceError("model rollout diverged", static_cast<std::size_t>(k));
    }
    errors.push_back((pred - truth).squaredNorm());
  }
  res.mean_squared_error = stats::mean(errors);
  return res;
}

LongHorizonResult long_horizon_error(const net::MlpConfig& config, const net::ParamVector& params,
                                     const dynamics::SystemSpec& spec, const LongHorizonOptions& opts) {
  return long_horizon_error([&](const Vector& x) { return net::apply(config, params, x); }, spec, opts);
}

}  // namespace horizonlab::arloss
