#include "horizonlab/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "horizonlab/errors.hpp"
#include "horizonlab/parallel.hpp"
#include "horizonlab/rng.hpp"

namespace horizonlab::optimize {

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, double eta, std::size_t n) : cfg_(cfg), eta_(eta) {
    if (cfg.kind == OptimizerKind::adam) {
      m_ = Vector::Zero(static_cast<Eigen::Index>(n));
      v_ = Vector::Zero(static_cast<Eigen::Index>(n));
    }
  }

  void step(net::ParamVector& params, const net::ParamVector& grad) {
    auto theta = params.flat();
    const auto g = grad.flat();
    if (cfg_.kind == OptimizerKind::sgd) {
      theta -= eta_ * g;
      return;
    }
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    theta.array() -= eta_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
  }

 private:
  OptimizerConfig cfg_;
  double eta_;
  Vector m_, v_;
  long long t_ = 0;
};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Budget Budget::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ArgumentError("budget must look like epochs:N or wall:SECONDS");
  const auto kind = text.substr(0, colon);
  const std::string value(text.substr(colon + 1));
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || !(v > 0.0))
    throw ArgumentError("budget amount must be a positive number");
  if (kind == "epochs") {
    if (v != std::floor(v)) throw ArgumentError("epoch budget must be an integer");
    return of_epochs(static_cast<int>(v));
  }
  if (kind == "wall") return of_seconds(v);
  throw ArgumentError("unknown budget kind '" + std::string(kind) + "'");
}

std::string Budget::to_string() const {
  if (epochs) return "epochs:" + std::to_string(*epochs);
  return "wall:" + format_double(wall_seconds.value_or(0.0));
}

void TrainConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ArgumentError("eta must be a non-negative finite number");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (budget.epochs.has_value() == budget.wall_seconds.has_value())
    throw ArgumentError("exactly one of an epoch or a wall-time budget must be set");
  if (budget.epochs && *budget.epochs < 0) throw ArgumentError("epoch budget must be >= 0");
  if (budget.wall_seconds && !(*budget.wall_seconds >= 0.0)) throw ArgumentError("wall budget must be >= 0");
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be non-negative");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ArgumentError("val_fraction must lie in (0, 1)");
  if (val_horizon < 0) throw ArgumentError("val_horizon must be >= 0");
  if (grad_clip && !(*grad_clip > 0.0)) throw ArgumentError("grad_clip must be positive");
  if (!(divergence_factor > 0.0)) throw ArgumentError("divergence_factor must be positive");
  if (optimizer.kind == OptimizerKind::adam &&
      !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 &&
        optimizer.eps > 0.0))
    throw ArgumentError("adam needs beta1, beta2 in [0, 1) and eps > 0");
}

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::budget:
      return "budget";
    case StopReason::grad_stop:
      return "grad_stop";
    case StopReason::divergence:
      return "divergence";
  }
  return "budget";
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ArgumentError("unknown optimizer '" + std::string(s) + "'");
}

Split chronological_split(Eigen::Index n_rows, int T, int T_val, double val_fraction) {
  if (T < 1 || T_val < 1) throw ArgumentError("horizons must be >= 1");
  const auto s = static_cast<Eigen::Index>(std::floor(static_cast<double>(n_rows) * (1.0 - val_fraction)));
  if (s - T < 1)
    throw ArgumentError("horizon T=" + std::to_string(T) + " leaves no training window in " + std::to_string(s) +
                        " training samples");
  if (n_rows - T_val - s < 1)
    throw ArgumentError("validation horizon " + std::to_string(T_val) + " leaves no validation window");
  Split split;
  split.train.resize(static_cast<std::size_t>(s - T));
  std::iota(split.train.begin(), split.train.end(), std::size_t{0});
  split.validation.resize(static_cast<std::size_t>(n_rows - T_val - s));
  std::iota(split.validation.begin(), split.validation.end(), static_cast<std::size_t>(s));
  return split;
}

HorizonObjective::HorizonObjective(net::MlpConfig config, const dynamics::Trajectory& traj, int T,
                                   const TrainConfig& tcfg, const dynamics::Trajectory* reference)
    : config_(std::move(config)),
      traj_(traj),
      reference_(reference ? *reference : traj),
      T_(T),
      T_val_(tcfg.val_horizon > 0 ? tcfg.val_horizon : T),
      mode_(tcfg.norm_mode),
      workers_(tcfg.workers) {
  if (traj.dim() != config_.input_dim) throw ArgumentError("trajectory dimension does not match the model");
  if (reference_.states.rows() != traj.states.rows() || reference_.states.cols() != traj.states.cols())
    throw ArgumentError("validation reference must match the training trajectory's shape");
  split_ = chronological_split(traj.size(), T_, T_val_, tcfg.val_fraction);
  const auto s = static_cast<Eigen::Index>(split_.train.size()) + T_;
  threshold_ = tcfg.divergence_factor * std::max(dynamics::total_variance(traj.states.topRows(s)), 1e-300);
}

arloss::LossGrad HorizonObjective::loss_grad(const net::ParamVector& params, std::span<const std::size_t> batch) {
  std::vector<std::size_t> starts(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) starts[i] = split_.train.at(batch[i]);
  return arloss::horizon_loss_grad(config_, params, traj_, {T_, mode_, std::move(starts), workers_});
}

double HorizonObjective::validation_loss(const net::ParamVector& params) {
  return arloss::horizon_loss(config_, params, reference_,
                              {T_val_, arloss::NormMode::squared, split_.validation, workers_});
}

TrainReport run_training(Objective& objective, const net::ParamVector& initial, const TrainConfig& tcfg,
                         std::optional<Clock::time_point> deadline, std::uint64_t stream_index) {
  tcfg.validate();
  const auto t0 = Clock::now();
  TrainReport rep;
  rep.initial_params = initial;
  net::ParamVector params = initial;
  Optimizer opt(tcfg.optimizer, tcfg.eta, params.size());
  Rng rng = make_rng(tcfg.seed, Stream::batch_order, stream_index);

  const auto validate = [&](const net::ParamVector& p) {
    double v;
    try {
      v = objective.validation_loss(p);
    } catch (const DivergenceError&) {
      v = std::numeric_limits<double>::infinity();
    }
    rep.val_curve.push_back(v);
    if (rep.val_curve.size() == 1 || v < rep.best_val_loss) {
      rep.best_val_loss = v;
      rep.best_params = p;
    }
  };
  const auto out_of_time = [&] {
    if (deadline && Clock::now() >= *deadline) return true;
    return tcfg.budget.wall_seconds && seconds_since(t0) >= *tcfg.budget.wall_seconds;
  };

  validate(params);
  const std::size_t n = objective.n_windows();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(tcfg.batch_size), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  bool stopped = false, partial_epoch = false;
  if (n == 0) throw ArgumentError("objective has no training windows");

  for (int epoch = 0; !stopped; ++epoch) {
    if (tcfg.budget.epochs && epoch >= *tcfg.budget.epochs) break;
    if (out_of_time()) break;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < n; lo += batch) {
      const std::span<const std::size_t> idx(order.data() + lo, std::min(batch, n - lo));
      arloss::LossGrad lg;
      try {
        lg = objective.loss_grad(params, idx);
      } catch (const DivergenceError& e) {
        rep.stop_reason = StopReason::divergence;
        rep.divergence_detail = e.what();
        stopped = partial_epoch = true;
        break;
      }
      const double gnorm = lg.grad.flat().norm();
      rep.loss_curve.push_back(lg.loss);
      rep.grad_norm_curve.push_back(gnorm);
      if (!std::isfinite(lg.loss) || lg.loss > objective.divergence_threshold() || !std::isfinite(gnorm)) {
        rep.stop_reason = StopReason::divergence;
        rep.divergence_detail = "training loss " + format_double(lg.loss) + " at step " + std::to_string(rep.steps);
        stopped = partial_epoch = true;
        break;
      }
      if (tcfg.grad_clip && gnorm > *tcfg.grad_clip) lg.grad.flat() *= *tcfg.grad_clip / gnorm;
      opt.step(params, lg.grad);
      ++rep.steps;
      if (gnorm < tcfg.gamma) {
        rep.stop_reason = StopReason::grad_stop;
        stopped = true;
        partial_epoch = lo + batch < n;
        break;
      }
      if (out_of_time() && lo + batch < n) {
        rep.stop_reason = StopReason::budget;
        stopped = partial_epoch = true;
        break;
      }
    }
    if (!partial_epoch) {
      ++rep.epochs_completed;
      validate(params);
    }
  }
  if (partial_epoch) validate(params);
  rep.final_params = std::move(params);
  rep.wall_seconds = seconds_since(t0);
  return rep;
}

TrainReport train_from(const net::MlpConfig& config, const net::ParamVector& initial, const dynamics::Trajectory& traj,
                       int T, const TrainConfig& tcfg, const dynamics::Trajectory* reference) {
  HorizonObjective objective(config, traj, T, tcfg, reference);
  return run_training(objective, initial, tcfg);
}

TrainReport train(const net::MlpConfig& config, const dynamics::Trajectory& traj, int T, const TrainConfig& tcfg,
                  const dynamics::Trajectory* reference) {
  return train_from(config, net::init(config), traj, T, tcfg, reference);
}

std::vector<TrainReport> curriculum_train(const net::MlpConfig& config, const dynamics::Trajectory& traj, int T_max,
                                          const Budget& total_budget, const TrainConfig& tcfg) {
  if (T_max < 1) throw ArgumentError("T_max must be >= 1");
  std::vector<TrainReport> reports;
  net::ParamVector params = net::init(config);
  for (int k = 0; k < T_max; ++k) {
    TrainConfig phase = tcfg;
    if (total_budget.epochs) {
      const int base = *total_budget.epochs / T_max, extra = *total_budget.epochs % T_max;
      phase.budget = Budget::of_epochs(base + (k < extra ? 1 : 0));
    } else {
      phase.budget = Budget::of_seconds(total_budget.wall_seconds.value() / T_max);
    }
    HorizonObjective objective(config, traj, k + 1, phase);
    reports.push_back(run_training(objective, params, phase, std::nullopt, static_cast<std::uint64_t>(k)));
    params = reports.back().final_params;
    if (reports.back().stop_reason == StopReason::divergence) break;
  }
  return reports;
}

std::map<int, double> evaluate(const net::MlpConfig& config, const net::ParamVector& params,
                               const dynamics::Trajectory& traj, const std::vector<int>& eval_horizons,
                               double val_fraction) {
  if (eval_horizons.empty()) throw ArgumentError("no evaluation horizons");
  std::map<int, double> out;
  for (int h : eval_horizons) {
    const Split split = chronological_split(traj.size(), 1, h, val_fraction);
    out[h] = arloss::final_step_error(config, params, traj.states, h, split.validation);
  }
  return out;
}

dynamics::Trajectory apply_normalization(const dynamics::Trajectory& traj, const dynamics::Normalization& norm) {
  dynamics::Trajectory out = traj;
  for (Eigen::Index j = 0; j < traj.states.cols(); ++j)
    out.states.col(j) = (traj.states.col(j).array() - norm.mean[j]) / norm.stddev[j];
  out.normalization = norm;
  return out;
}

std::vector<SweepRow> sweep(const SweepGrid& grid, const SweepSetup& setup) {
  if (grid.T.empty() || grid.eta.empty() || grid.sigma.empty() || grid.size.empty() || grid.seeds.empty())
    throw ArgumentError("every sweep axis needs at least one value");
  const double dt = setup.dt > 0.0 ? setup.dt : setup.spec.default_dt;
  dynamics::Trajectory clean = dynamics::generate(setup.spec, setup.n_samples, dt, setup.data_seed, setup.integrator);
  std::optional<dynamics::Normalization> norm;
  if (setup.normalize) {
    clean = dynamics::normalize(clean);
    norm = clean.normalization;
  }

  struct Cell {
    int T;
    double eta, sigma;
    ModelSize size;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (int T : grid.T)
    for (double eta : grid.eta)
      for (double sigma : grid.sigma)
        for (const auto& size : grid.size)
          for (auto seed : grid.seeds) cells.push_back({T, eta, sigma, size, seed});

  std::vector<SweepRow> rows(cells.size());
  parallel_for(
      cells.size(),
      [&](std::size_t i) {
        const Cell& c = cells[i];
        SweepRow& row = rows[i];
        row.system = setup.spec.name();
        row.T = c.T;
        row.eta = c.eta;
        row.sigma = c.sigma;
        row.width_factor = c.size.width_factor;
        row.n_blocks = c.size.n_blocks;
        row.seed = c.seed;
        const auto t0 = Clock::now();
        try {
          // Noise is drawn in raw units, then mapped through the clean statistics.
          dynamics::Trajectory noisy = clean;
          if (c.sigma > 0.0) {
            const dynamics::Trajectory raw = norm ? dynamics::denormalize(clean) : clean;
            noisy = dynamics::add_observation_noise(raw, c.sigma, derive_seed(setup.data_seed, Stream::observation_noise, c.seed));
            if (norm) noisy = apply_normalization(noisy, *norm);
          }
          net::MlpConfig model = setup.model;
          model.input_dim = clean.dim();
          model.width_factor = c.size.width_factor;
          model.n_blocks = c.size.n_blocks;
          model.seed = derive_seed(c.seed, Stream::model_init);
          TrainConfig tc = setup.train;
          tc.eta = c.eta;
          tc.seed = c.seed;
          tc.val_horizon = setup.eval_horizon;
          tc.workers = 1;
          const TrainReport rep = train(model, noisy, c.T, tc, &clean);
          row.best_val_loss = rep.best_val_loss;
          row.stop_reason = std::string(to_string(rep.stop_reason));
          row.steps = rep.steps;
        } catch (const std::exception& e) {
          row.best_val_loss = std::numeric_limits<double>::quiet_NaN();
          row.stop_reason = "error";
          row.error = e.what();
        }
        row.wall_seconds = seconds_since(t0);
      },
      setup.workers > 0 ? setup.workers : worker_count());
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "system,T,eta,sigma,width_factor,n_blocks,seed,best_val_loss,stop_reason,steps,wall_seconds\n";
  for (const auto& r : rows) {
    out += r.system + ',' + std::to_string(r.T) + ',' + format_double(r.eta) + ',' + format_double(r.sigma) + ',' +
           std::to_string(r.width_factor) + ',' + std::to_string(r.n_blocks) + ',' + std::to_string(r.seed) + ',' +
           format_double(r.best_val_loss) + ',' + r.stop_reason + ',' + std::to_string(r.steps) + ',' +
           format_double(r.wall_seconds) + '\n';
  }
  return out;
}

}  // namespace horizonlab::optimize
