#include "horizonlab/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <ostream>
#include <set>

#include "CLI11.hpp"
#include "horizonlab/errors.hpp"
#include "horizonlab/landscape.hpp"
#include "horizonlab/parallel.hpp"
#include "horizonlab/rng.hpp"
#include "horizonlab/scheduler.hpp"
#include "horizonlab/trajectory_io.hpp"

namespace horizonlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- configuration ---------------------------------------------------------

json data_defaults() {
  return {{"system", "limit_cycle"},
          {"params", nullptr},
          {"n_samples", 1000},
          {"dt", nullptr},
          {"method", "dopri5"},
          {"transient", 0.2},
          {"noise_sigma", 0.0},
          {"normalize", true},
          {"path", nullptr},
          {"limit_cycle_variant", "hopf_normal_form"},
          {"food_web_printed_sign", false}};
}

json model_defaults() {
  return {{"width_factor", 4}, {"n_blocks", 2},       {"residual", true},      {"activation", "relu"},
          {"softplus_beta", 1.0}, {"ln_epsilon", 1e-5}, {"unembed_bias", false}};
}

json train_defaults() {
  return {{"optimizer", "adam"}, {"eta", 1e-3},       {"batch_size", 512},     {"budget", "epochs:100"},
          {"gamma", 1.5e-4},     {"val_fraction", 0.2}, {"val_horizon", 0},     {"grad_clip", nullptr},
          {"divergence_factor", 1e6}, {"beta1", 0.9},   {"beta2", 0.999},        {"eps", 1e-8}};
}

json section_defaults(std::string_view section) {
  if (section == "data") return data_defaults();
  if (section == "model") return model_defaults();
  if (section == "train") return train_defaults();
  if (section == "loss") return {{"T", 1}, {"norm_mode", "squared"}};
  if (section == "sweep")
    return {{"T", {1, 2, 4}},
            {"eta", {1e-3}},
            {"sigma", {0.0}},
            {"sizes", {{{"width_factor", 4}, {"n_blocks", 2}}}},
            {"seeds", {0}},
            {"eval_horizon", 1}};
  if (section == "curriculum") return {{"T_max", 4}};
  if (section == "probe")
    return {{"kind", "grad_ratio"},
            {"checkpoint", nullptr},
            {"T_list", {1, 2, 4, 8}},
            {"n_pairs", 3},
            {"T_l", 1},
            {"T_h", {3, 9}},
            {"delta_pair", 0.05},
            {"n_probes", 100},
            {"fd_step", 1e-4},
            {"n_points", 0},
            {"flat_tol", 1e-9},
            {"epsilons", {1e-2}},
            {"n_states", 20},
            {"n_directions", 8},
            {"dims", {0}},
            {"ranges", {{8.0, 12.0}}},
            {"n_per_dim", 41},
            {"scan_T", 10},
            {"normalize_scan", false}};
  if (section == "schedule") {
    const scheduler::SchedulerConfig s;
    return {{"eta0", s.eta0},
            {"gamma", s.gamma},
            {"lookahead_epochs", s.lookahead_epochs},
            {"wall_limit_seconds", s.wall_limit_seconds},
            {"trend_fit", "exponential"},
            {"improve_delta", s.improve_delta},
            {"eta_min", s.eta_min},
            {"min_shrink", s.min_shrink},
            {"horizon_cap", s.horizon_cap},
            {"eval_horizon", s.eval_horizon}};
  }
  if (section == "lyapunov") return {{"n_steps", 20000}, {"discard", 1000}, {"dt", 0.01}};
  return json::object();
}

std::vector<std::string> sections_for(std::string_view command) {
  if (command == "train") return {"data", "model", "loss", "train"};
  if (command == "sweep") return {"data", "model", "loss", "train", "sweep"};
  if (command == "curriculum") return {"data", "model", "loss", "train", "curriculum"};
  if (command == "probe") return {"data", "model", "loss", "train", "probe"};
  if (command == "schedule") return {"data", "model", "loss", "train", "schedule"};
  if (command == "lyapunov") return {"data", "lyapunov"};
  throw ArgumentError("'" + std::string(command) + "' does not take a config");
}

}  // namespace

json resolve_config(std::string_view command, const json& raw_in) {
  json raw = raw_in;
  if (raw.is_object() && raw.contains("tool") && raw.contains("config")) raw = raw.at("config");
  if (!raw.is_object()) throw ArgumentError("config must be a JSON object");
  const auto sections = sections_for(command);
  std::vector<std::string> bad;
  json out = {{"experiment", std::string(command)}, {"seed", 0}, {"output_dir", "out"}};
  const bool takes_eval = command != "lyapunov";
  if (takes_eval) out["eval_horizons"] = {1, 5, 10};
  for (const auto& s : sections) out[s] = section_defaults(s);

  for (const auto& [key, value] : raw.items()) {
    if (key == "experiment") {
      if (value != command) bad.push_back("experiment (\"" + value.dump() + "\" given to " + std::string(command) + ")");
      continue;
    }
    if (key == "seed" || key == "output_dir" || (takes_eval && key == "eval_horizons")) {
      out[key] = value;
      continue;
    }
    if (std::find(sections.begin(), sections.end(), key) == sections.end()) {
      bad.push_back(key);
      continue;
    }
    if (!value.is_object()) {
      bad.push_back(key + " (must be an object)");
      continue;
    }
    for (const auto& [k, v] : value.items()) {
      if (!out[key].contains(k))
        bad.push_back(key + "." + k);
      else
        out[key][k] = v;
    }
  }
  if (!bad.empty()) {
    std::string msg = "invalid config keys:";
    for (const auto& b : bad) msg += " " + b;
    throw ArgumentError(msg);
  }
  return out;
}

namespace {

struct ConfigTypeGuard {
  template <class F>
  static auto run(F&& f) {
    try {
      return f();
    } catch (const json::exception& e) {
      throw ArgumentError(std::string("config type error: ") + e.what());
    }
  }
};

dynamics::SystemSpec make_spec(const json& d) {
  return ConfigTypeGuard::run([&] {
    const std::string name = d.at("system").get<std::string>();
    dynamics::SystemSpec spec = dynamics::builtin(name);
    if (spec.kind == dynamics::SystemKind::limit_cycle) {
      const auto v = d.at("limit_cycle_variant").get<std::string>();
      if (v == "printed")
        spec.limit_cycle_variant = dynamics::LimitCycleVariant::printed;
      else if (v != "hopf_normal_form")
        throw ArgumentError("data.limit_cycle_variant must be hopf_normal_form or printed");
    }
    spec.food_web_printed_sign = d.at("food_web_printed_sign").get<bool>();
    if (!d.at("params").is_null()) spec = spec.with_params(d.at("params").get<std::vector<double>>());
    if (!d.at("dt").is_null()) spec.default_dt = d.at("dt").get<double>();
    spec.validate();
    return spec;
  });
}

dynamics::IntegratorOptions integrator(const json& d) {
  return {dynamics::method_from_string(d.at("method").get<std::string>())};
}

/// Training data and the clean reference series behind it.
struct Dataset {
  dynamics::Trajectory train;
  dynamics::Trajectory clean;
  bool noisy = false;
};

Dataset load_dataset(const json& cfg) {
  const json& d = cfg.at("data");
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const bool norm = d.at("normalize").get<bool>();
  Dataset ds;
  if (!d.at("path").is_null()) {
    dynamics::Trajectory t = dynamics::load_trajectory(d.at("path").get<std::string>());
    if (norm && !t.normalization) t = dynamics::normalize(t);
    ds.train = ds.clean = std::move(t);
    return ds;
  }
  const auto spec = make_spec(d);
  const dynamics::Trajectory raw = dynamics::generate(spec, d.at("n_samples").get<int>(), spec.default_dt, seed,
                                                      integrator(d), d.at("transient").get<double>());
  const double sigma = d.at("noise_sigma").get<double>();
  if (sigma < 0.0) throw ArgumentError("data.noise_sigma must be non-negative");
  if (!norm) {
    ds.clean = raw;
    ds.train = sigma > 0.0 ? dynamics::add_observation_noise(raw, sigma, derive_seed(seed, Stream::observation_noise))
                           : raw;
  } else {
    ds.clean = dynamics::normalize(raw);
    ds.train = sigma > 0.0 ? optimize::apply_normalization(
                                 dynamics::add_observation_noise(raw, sigma, derive_seed(seed, Stream::observation_noise)),
                                 *ds.clean.normalization)
                           : ds.clean;
  }
  ds.noisy = sigma > 0.0;
  return ds;
}

net::MlpConfig make_model(const json& cfg, int input_dim, std::uint64_t seed) {
  return ConfigTypeGuard::run([&] {
    const json& m = cfg.at("model");
    net::MlpConfig c;
    c.input_dim = input_dim;
    c.width_factor = m.at("width_factor").get<int>();
    c.n_blocks = m.at("n_blocks").get<int>();
    c.residual = m.at("residual").get<bool>();
    c.activation = net::activation_from_string(m.at("activation").get<std::string>());
    c.softplus_beta = m.at("softplus_beta").get<double>();
    c.ln_epsilon = m.at("ln_epsilon").get<double>();
    c.unembed_bias = m.at("unembed_bias").get<bool>();
    c.seed = derive_seed(seed, Stream::model_init);
    c.validate();
    return c;
  });
}

optimize::TrainConfig make_train(const json& cfg) {
  return ConfigTypeGuard::run([&] {
    const json& t = cfg.at("train");
    optimize::TrainConfig tc;
    tc.optimizer.kind = optimize::optimizer_from_string(t.at("optimizer").get<std::string>());
    tc.optimizer.beta1 = t.at("beta1").get<double>();
    tc.optimizer.beta2 = t.at("beta2").get<double>();
    tc.optimizer.eps = t.at("eps").get<double>();
    tc.eta = t.at("eta").get<double>();
    tc.batch_size = t.at("batch_size").get<int>();
    tc.budget = optimize::Budget::parse(t.at("budget").get<std::string>());
    tc.gamma = t.at("gamma").get<double>();
    tc.val_fraction = t.at("val_fraction").get<double>();
    tc.val_horizon = t.at("val_horizon").get<int>();
    if (!t.at("grad_clip").is_null()) tc.grad_clip = t.at("grad_clip").get<double>();
    tc.divergence_factor = t.at("divergence_factor").get<double>();
    tc.seed = cfg.at("seed").get<std::uint64_t>();
    tc.norm_mode = arloss::norm_mode_from_string(cfg.at("loss").at("norm_mode").get<std::string>());
    tc.workers = worker_count();
    tc.validate();
    return tc;
  });
}

// --- output ----------------------------------------------------------------

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Run {
  std::string command;
  json config;
  fs::path dir;
  json manifest;

  Run(std::string cmd, json cfg) : command(std::move(cmd)), config(std::move(cfg)) {
    dir = config.at("output_dir").get<std::string>();
    fs::create_directories(dir);
    manifest = {{"tool", kToolName},   {"version", kVersion},  {"command", command}, {"config", config},
                {"status", "ok"},      {"outputs", json::array()}, {"errors", json::array()}, {"summary", json::object()}};
  }

  void write(const std::string& name, const std::string& contents) {
    dynamics::write_file_atomic(dir / name, contents);
    manifest["outputs"].push_back(name);
  }
  void save_model(const net::MlpConfig& c, const net::ParamVector& p) {
    net::save_params(dir / "model", c, p);
    manifest["outputs"].push_back("model.bin");
    manifest["outputs"].push_back("model.json");
  }
  void error(const std::string& what) {
    manifest["errors"].push_back(what);
    if (manifest["status"] == "ok") manifest["status"] = "partial";
  }
  void finish() { dynamics::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n"); }
};

std::string curve_csv(const optimize::TrainReport& rep) {
  std::string s = "step,loss,grad_norm\n";
  for (std::size_t i = 0; i < rep.loss_curve.size(); ++i)
    s += std::to_string(i) + "," + num(rep.loss_curve[i]) + "," + num(rep.grad_norm_curve[i]) + "\n";
  return s;
}

std::string val_csv(const optimize::TrainReport& rep) {
  std::string s = "epoch,val_loss\n";
  for (std::size_t i = 0; i < rep.val_curve.size(); ++i) s += std::to_string(i) + "," + num(rep.val_curve[i]) + "\n";
  return s;
}

std::string eval_csv(const std::map<int, double>& e) {
  std::string s = "horizon,loss\n";
  for (auto [h, v] : e) s += std::to_string(h) + "," + num(v) + "\n";
  return s;
}

std::map<int, double> evaluate_clean(const json& cfg, const net::MlpConfig& c, const net::ParamVector& p,
                                     const Dataset& ds, double val_fraction) {
  std::vector<int> horizons = cfg.at("eval_horizons").get<std::vector<int>>();
  return optimize::evaluate(c, p, ds.clean, horizons, val_fraction);
}

json report_summary(const optimize::TrainReport& rep) {
  return {{"stop_reason", optimize::to_string(rep.stop_reason)},
          {"steps", rep.steps},
          {"epochs_completed", rep.epochs_completed},
          {"best_val_loss", rep.best_val_loss},
          {"divergence_detail", rep.divergence_detail}};
}

// --- subcommands -----------------------------------------------------------

int cmd_train(Run& run) {
  const Dataset ds = load_dataset(run.config);
  const auto seed = run.config.at("seed").get<std::uint64_t>();
  const auto model = make_model(run.config, ds.train.dim(), seed);
  const auto tc = make_train(run.config);
  const int T = run.config.at("loss").at("T").get<int>();
  const auto rep = optimize::train(model, ds.train, T, tc, ds.noisy ? &ds.clean : nullptr);
  run.write("loss_curve.csv", curve_csv(rep));
  run.write("val_curve.csv", val_csv(rep));
  run.save_model(model, rep.best_params);
  run.manifest["summary"] = report_summary(rep);
  if (rep.stop_reason == optimize::StopReason::divergence) {
    run.manifest["status"] = "diverged";
    run.error(rep.divergence_detail);
    return exit_divergence;
  }
  run.write("eval.csv", eval_csv(evaluate_clean(run.config, model, rep.best_params, ds, tc.val_fraction)));
  return exit_ok;
}

int cmd_sweep(Run& run) {
  const json& c = run.config;
  if (!c.at("data").at("path").is_null()) throw ArgumentError("sweep generates its own data; data.path is not allowed");
  const auto seed = c.at("seed").get<std::uint64_t>();
  optimize::SweepSetup setup;
  setup.spec = make_spec(c.at("data"));
  setup.n_samples = c.at("data").at("n_samples").get<int>();
  setup.dt = setup.spec.default_dt;
  setup.data_seed = seed;
  setup.integrator = integrator(c.at("data"));
  setup.normalize = c.at("data").at("normalize").get<bool>();
  setup.model = make_model(c, setup.spec.dim, seed);
  setup.train = make_train(c);
  const json& s = c.at("sweep");
  optimize::SweepGrid grid = ConfigTypeGuard::run([&] {
    optimize::SweepGrid g;
    g.T = s.at("T").get<std::vector<int>>();
    g.eta = s.at("eta").get<std::vector<double>>();
    g.sigma = s.at("sigma").get<std::vector<double>>();
    for (const auto& z : s.at("sizes")) g.size.push_back({z.at("width_factor").get<int>(), z.at("n_blocks").get<int>()});
    g.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
    return g;
  });
  setup.eval_horizon = s.at("eval_horizon").get<int>();
  setup.workers = 0;
  const auto rows = optimize::sweep(grid, setup);
  run.write("sweep.csv", optimize::sweep_csv(rows));
  std::size_t failed = 0;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      ++failed;
      run.error("T=" + std::to_string(r.T) + " eta=" + num(r.eta) + " sigma=" + num(r.sigma) + " seed=" +
                std::to_string(r.seed) + ": " + r.error);
    }
  }
  run.manifest["summary"] = {{"cells", rows.size()}, {"failed_cells", failed}};
  return exit_ok;
}

int cmd_curriculum(Run& run) {
  const Dataset ds = load_dataset(run.config);
  const auto seed = run.config.at("seed").get<std::uint64_t>();
  const auto model = make_model(run.config, ds.train.dim(), seed);
  const auto tc = make_train(run.config);
  const int T_max = run.config.at("curriculum").at("T_max").get<int>();
  const auto phases = optimize::curriculum_train(model, ds.train, T_max, tc.budget, tc);
  std::string curve = "phase,T,step,loss,grad_norm\n";
  std::string table = "phase,T,epochs,steps,best_val_loss,final_val_loss,stop_reason\n";
  json summary = json::array();
  for (std::size_t k = 0; k < phases.size(); ++k) {
    const auto& r = phases[k];
    const std::string pk = std::to_string(k) + "," + std::to_string(k + 1);
    for (std::size_t i = 0; i < r.loss_curve.size(); ++i)
      curve += pk + "," + std::to_string(i) + "," + num(r.loss_curve[i]) + "," + num(r.grad_norm_curve[i]) + "\n";
    table += pk + "," + std::to_string(r.epochs_completed) + "," + std::to_string(r.steps) + "," +
             num(r.best_val_loss) + "," + num(r.val_curve.back()) + "," + std::string(optimize::to_string(r.stop_reason)) +
             "\n";
    summary.push_back(report_summary(r));
  }
  run.write("curriculum_curve.csv", curve);
  run.write("phases.csv", table);
  run.manifest["summary"] = summary;
  const auto& last = phases.back();
  run.save_model(model, last.final_params);
  for (const auto& r : phases) {
    if (r.stop_reason == optimize::StopReason::divergence) {
      run.manifest["status"] = "diverged";
      run.error(r.divergence_detail);
      return exit_divergence;
    }
  }
  run.write("eval.csv", eval_csv(evaluate_clean(run.config, model, last.final_params, ds, tc.val_fraction)));
  return exit_ok;
}

int cmd_schedule(Run& run) {
  const Dataset ds = load_dataset(run.config);
  const auto seed = run.config.at("seed").get<std::uint64_t>();
  const auto model = make_model(run.config, ds.train.dim(), seed);
  const auto tc = make_train(run.config);
  const json& s = run.config.at("schedule");
  const auto scfg = ConfigTypeGuard::run([&] {
    scheduler::SchedulerConfig c;
    c.eta0 = s.at("eta0").get<double>();
    c.gamma = s.at("gamma").get<double>();
    c.lookahead_epochs = s.at("lookahead_epochs").get<int>();
    c.wall_limit_seconds = s.at("wall_limit_seconds").get<double>();
    c.trend_fit = scheduler::trend_fit_from_string(s.at("trend_fit").get<std::string>());
    c.improve_delta = s.at("improve_delta").get<double>();
    c.eta_min = s.at("eta_min").get<double>();
    c.min_shrink = s.at("min_shrink").get<double>();
    c.horizon_cap = s.at("horizon_cap").get<int>();
    c.eval_horizon = s.at("eval_horizon").get<int>();
    c.validate();
    return c;
  });
  const auto res = scheduler::run_scheduler(model, ds.train, scfg, tc);
  run.write("trace.csv", res.trace.to_csv());
  run.save_model(model, res.best_params);
  run.manifest["summary"] = {{"events", res.trace.events.size()},
                             {"final_T", res.trace.events.back().T},
                             {"best_eval_loss", res.best_eval_loss}};
  run.write("eval.csv", eval_csv(evaluate_clean(run.config, model, res.best_params, ds, tc.val_fraction)));
  return exit_ok;
}

int cmd_lyapunov(Run& run) {
  const json& d = run.config.at("data");
  const json& l = run.config.at("lyapunov");
  const auto spec = make_spec(d);
  const auto seed = run.config.at("seed").get<std::uint64_t>();
  const double dt = l.at("dt").get<double>();
  const Vector x0 = dynamics::default_initial_state(spec, seed);
  const Vector spectrum = dynamics::lyapunov_spectrum(spec, x0, dt, l.at("n_steps").get<int>(),
                                                      l.at("discard").get<int>(), integrator(d));
  std::string csv = "index,exponent\n";
  for (Eigen::Index i = 0; i < spectrum.size(); ++i) csv += std::to_string(i) + "," + num(spectrum[i]) + "\n";
  run.write("spectrum.csv", csv);
  run.manifest["summary"] = {{"lambda1", spectrum[0]}};
  return exit_ok;
}

net::ParamVector checkpoint_or_init(const json& p, const net::MlpConfig& model, net::MlpConfig* used) {
  if (p.at("checkpoint").is_null()) {
    *used = model;
    return net::init(model);
  }
  auto [c, params] = net::load_params(p.at("checkpoint").get<std::string>());
  if (c.input_dim != model.input_dim) throw ArgumentError("checkpoint input_dim does not match the data");
  *used = c;
  return params;
}

int cmd_probe(Run& run) {
  using namespace landscape;
  const json& cfg = run.config;
  const json& p = cfg.at("probe");
  const ProbeKind kind = probe_kind_from_string(p.at("kind").get<std::string>());
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  LandscapeProbe probe;

  if (kind == ProbeKind::scan1d || kind == ProbeKind::scan2d) {
    const json& d = cfg.at("data");
    const auto spec = make_spec(d);
    const auto opts = integrator(d);
    const auto traj = dynamics::generate(spec, d.at("n_samples").get<int>(), spec.default_dt, seed, opts,
                                         d.at("transient").get<double>());
    const int T = p.at("scan_T").get<int>();
    const auto dims = p.at("dims").get<std::vector<int>>();
    if ((kind == ProbeKind::scan1d) != (dims.size() == 1)) throw ArgumentError("probe.dims does not match the scan kind");
    std::vector<std::pair<double, double>> ranges;
    for (const auto& r : p.at("ranges")) ranges.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
    const Vector center = Eigen::Map<const Vector>(spec.params.data(), static_cast<Eigen::Index>(spec.params.size()));
    const LossFn loss = [&](const Vector& th) {
      return arloss::mechanistic_loss(spec, std::vector<double>(th.begin(), th.end()), traj, T, opts);
    };
    const auto scan = param_scan(loss, center, dims, ranges, p.at("n_per_dim").get<int>(),
                                 p.at("normalize_scan").get<bool>());
    probe = to_probe(scan);
    std::vector<double> finite;
    for (std::size_t i = 0; i < scan.loss.size(); ++i)
      if (!scan.flagged[i]) finite.push_back(scan.loss[i]);
    if (kind == ProbeKind::scan1d)
      run.manifest["summary"] = {{"extrema", count_extrema(finite, p.at("flat_tol").get<double>())}};
  } else {
    const Dataset ds = load_dataset(cfg);
    const auto base_model = make_model(cfg, ds.train.dim(), seed);
    const auto tc = make_train(cfg);
    const auto T_list = p.at("T_list").get<std::vector<int>>();
    const auto full_loss = [&](const net::MlpConfig& c, const net::ParamVector& like, int T) -> LossFn {
      return [&c, like, T, &ds](const Vector& th) {
        net::ParamVector q = like;
        q.flat() = th;
        arloss::HorizonLossConfig lc;
        lc.T = T;
        return arloss::horizon_loss(c, q, ds.train, lc);
      };
    };
    const auto seeded = [&](std::uint64_t k) {
      net::MlpConfig c = base_model;
      c.seed = derive_seed(seed + k, Stream::model_init);
      return c;
    };

    switch (kind) {
      case ProbeKind::grad_ratio: {
        net::MlpConfig c;
        const auto params = checkpoint_or_init(p, base_model, &c);
        probe = to_probe(gradient_ratio(c, params, ds.train, T_list, tc.norm_mode));
        break;
      }
      case ProbeKind::roughness: {
        std::vector<std::pair<int, Roughness>> rows;
        const int n_pairs = p.at("n_pairs").get<int>();
        for (int T : T_list) {
          for (int k = 0; k < n_pairs; ++k) {
            const auto ca = seeded(2 * static_cast<std::uint64_t>(k));
            const auto cb = seeded(2 * static_cast<std::uint64_t>(k) + 1);
            const auto a = optimize::train(ca, ds.train, T, tc).final_params;
            const auto b = optimize::train(cb, ds.train, T, tc).final_params;
            rows.emplace_back(T, segment_roughness(full_loss(ca, a, T), a.flat(), b.flat(),
                                                   p.at("n_points").get<int>(), p.at("flat_tol").get<double>()));
          }
        }
        probe = roughness_probe(rows);
        break;
      }
      case ProbeKind::hessian_ratio: {
        std::map<int, net::ParamVector> minima;
        std::vector<int> horizons = T_list;
        if (std::find(horizons.begin(), horizons.end(), 1) == horizons.end()) horizons.insert(horizons.begin(), 1);
        for (int T : horizons) minima[T] = optimize::train(base_model, ds.train, T, tc).final_params;
        HessianRatioOptions ho;
        ho.gamma = tc.gamma;
        ho.n_probes = p.at("n_probes").get<int>();
        ho.fd_step = p.at("fd_step").get<double>();
        ho.seed = seed;
        ho.norm_mode = tc.norm_mode;
        probe = to_probe(hessian_ratio(base_model, ds.train, minima, T_list, ho));
        break;
      }
      case ProbeKind::gen_ratio: {
        std::vector<GenRatioRow> rows;
        const int T_l = p.at("T_l").get<int>();
        const int n_pairs = p.at("n_pairs").get<int>();
        for (int T_h : p.at("T_h").get<std::vector<int>>()) {
          for (int k = 0; k < n_pairs; ++k) {
            const auto c = seeded(static_cast<std::uint64_t>(k));
            GenRatioRow row{T_l, T_h, std::numeric_limits<double>::quiet_NaN(), seed + static_cast<std::uint64_t>(k)};
            try {
              const auto pm = paired_minima(c, ds.train, T_l, T_h, tc, p.at("delta_pair").get<double>());
              row.r = generalization_ratio(c, ds.clean, pm.theta_l, pm.theta_h, T_l, T_h, tc.val_fraction);
            } catch (const Error& e) {
              run.error("T_h=" + std::to_string(T_h) + " pair " + std::to_string(k) + ": " + e.what());
            }
            rows.push_back(row);
          }
        }
        probe = to_probe(rows);
        break;
      }
      case ProbeKind::eps_check: {
        if (p.at("checkpoint").is_null()) throw ArgumentError("eps_check needs probe.checkpoint");
        net::MlpConfig c;
        const auto params = checkpoint_or_init(p, base_model, &c);
        const auto spec = make_spec(cfg.at("data"));
        const auto opts = integrator(cfg.at("data"));
        const dynamics::Trajectory raw = ds.clean.normalization ? dynamics::denormalize(ds.clean) : ds.clean;
        const int n = std::min<int>(p.at("n_states").get<int>(), static_cast<int>(raw.size()));
        const Matrix states = raw.states.topRows(n);
        const dynamics::Normalization* norm = ds.clean.normalization ? &*ds.clean.normalization : nullptr;
        std::vector<EpsilonCheck> checks;
        for (double eps : p.at("epsilons").get<std::vector<double>>())
          checks.push_back(epsilon_region_check(c, params, spec, states, raw.dt, eps,
                                                p.at("n_directions").get<int>(), seed, opts, norm));
        probe = eps_check_probe(checks);
        break;
      }
      default:
        break;
    }
  }
  probe.seed = seed;
  run.write("probe.csv", probe.to_csv());
  run.manifest["summary"]["kind"] = std::string(to_string(kind));
  run.manifest["summary"]["rows"] = probe.rows.size();
  return exit_ok;
}

// --- flag-driven subcommands -----------------------------------------------

struct SimulateArgs {
  std::string system;
  double dt = 0.0;
  int steps = 1000;
  std::uint64_t seed = 0;
  std::string method = "dopri5";
  double transient = 0.2;
  std::vector<double> params;
  double noise = 0.0;
  bool normalize = false;
  std::string variant = "hopf_normal_form";
  std::string out = "trajectory";
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.system == "external")
    throw ArgumentError("simulate: the external system needs a vector-field plugin; use ingest for external data");
  json d = data_defaults();
  d["system"] = a.system;
  if (a.dt > 0.0) d["dt"] = a.dt;
  if (!a.params.empty()) d["params"] = a.params;
  d["limit_cycle_variant"] = a.variant;
  const auto spec = make_spec(d);
  if (a.steps < 1) throw ArgumentError("--steps must be >= 1");
  dynamics::Trajectory t = dynamics::generate(spec, a.steps + 1, spec.default_dt, a.seed,
                                              {dynamics::method_from_string(a.method)}, a.transient);
  if (a.noise > 0.0) t = dynamics::add_observation_noise(t, a.noise, derive_seed(a.seed, Stream::observation_noise));
  if (a.normalize) t = dynamics::normalize(t);
  dynamics::TrajectoryMeta meta;
  meta.system = spec.name();
  meta.params = spec.params;
  dynamics::save_trajectory(a.out, t, meta);
  out << "wrote " << a.out << ".csv (" << t.size() << " rows)\n";
  return exit_ok;
}

int cmd_ingest(const std::string& in, const std::string& stem, bool normalize, std::ostream& out) {
  dynamics::TrajectoryMeta meta;
  dynamics::Trajectory t = dynamics::load_trajectory(in, &meta);
  if (normalize && !t.normalization) t = dynamics::normalize(t);
  dynamics::save_trajectory(stem, t, meta);
  out << "wrote " << stem << ".csv (" << t.size() << " rows, " << t.dim() << " dims)\n";
  return exit_ok;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IngestionError*>(&e) || dynamic_cast<const DegenerateDataError*>(&e)) return exit_ingestion;
  if (dynamic_cast<const ArgumentError*>(&e) || dynamic_cast<const json::exception*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e))
    return exit_usage;
  if (dynamic_cast<const Error*>(&e)) return exit_divergence;
  return 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Horizon-dependent training of autoregressive forecasters for dynamical systems", "horizonlab"};
  app.set_version_flag("--version", std::string(kToolName) + " " + std::string(kVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Integrate a built-in system to a trajectory CSV");
  simulate->add_option("--system", sim.system, "lorenz, double_pendulum, food_web, limit_cycle")->required();
  simulate->add_option("--dt", sim.dt, "Sampling interval (system default when omitted)");
  simulate->add_option("--steps", sim.steps, "Number of sampling steps; rows = steps + 1");
  simulate->add_option("--seed", sim.seed, "Initial-condition seed");
  simulate->add_option("--method", sim.method, "rk4 or dopri5")->check(CLI::IsMember({"rk4", "dopri5"}));
  simulate->add_option("--transient", sim.transient, "Leading fraction of the run discarded");
  simulate->add_option("--params", sim.params, "System parameters")->delimiter(',');
  simulate->add_option("--noise", sim.noise, "Observation noise standard deviation");
  simulate->add_flag("--normalize", sim.normalize, "Z-score each dimension");
  simulate->add_option("--variant", sim.variant, "Limit-cycle variant: hopf_normal_form or printed");
  simulate->add_option("--out", sim.out, "Output stem; writes <stem>.csv and <stem>.json");

  std::string ingest_in, ingest_out = "ingested";
  bool ingest_norm = false;
  auto* ingest = app.add_subcommand("ingest", "Validate an external trajectory CSV");
  ingest->add_option("--in", ingest_in, "CSV with header t,x0..x{D-1}")->required();
  ingest->add_option("--out", ingest_out, "Output stem");
  ingest->add_flag("--normalize", ingest_norm, "Z-score each dimension");

  struct ConfigArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string budget;
    std::string kind;
    std::string checkpoint;
  };
  std::map<std::string, ConfigArgs> cargs;
  std::map<std::string, CLI::App*> config_cmds;
  const std::vector<std::pair<std::string, std::string>> described = {
      {"train", "Train a forecaster at a fixed horizon"},
      {"sweep", "Grid of training runs over T, eta, noise, size and seed"},
      {"curriculum", "Train through horizons 1..T_max in sequence"},
      {"probe", "Measure a loss-landscape quantity"},
      {"schedule", "Joint horizon and learning-rate schedule"},
      {"lyapunov", "Lyapunov spectrum of a built-in system"}};
  for (const auto& [name, help] : described) {
    auto* sc = app.add_subcommand(name, help);
    auto& a = cargs[name];
    sc->add_option("--config", a.config, "JSON config or a previous manifest.json");
    sc->add_option("--out", a.out, "Output directory (overrides output_dir)");
    sc->add_option("--seed", a.seed, "Global seed (overrides seed)");
    if (name == "train" || name == "curriculum") sc->add_option("--budget", a.budget, "epochs:N or wall:S");
    if (name == "probe") {
      sc->add_option("--kind", a.kind, "grad_ratio, roughness, hessian_ratio, gen_ratio, scan1d, scan2d, eps_check");
      sc->add_option("--checkpoint", a.checkpoint, "Model stem written by train (model.bin/model.json)");
    }
    config_cmds[name] = sc;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim, out);
    if (ingest->parsed()) return cmd_ingest(ingest_in, ingest_out, ingest_norm, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }

  for (const auto& [name, sc] : config_cmds) {
    if (!sc->parsed()) continue;
    const auto& a = cargs[name];
    json cfg;
    try {
      json raw = json::object();
      if (!a.config.empty()) raw = json::parse(dynamics::read_file(a.config));
      if (raw.is_object() && raw.contains("tool") && raw.contains("config")) raw = raw.at("config");
      if (!a.out.empty()) raw["output_dir"] = a.out;
      if (a.seed) raw["seed"] = *a.seed;
      if (!a.budget.empty()) raw["train"]["budget"] = a.budget;
      if (!a.kind.empty()) raw["probe"]["kind"] = a.kind;
      if (!a.checkpoint.empty()) raw["probe"]["checkpoint"] = a.checkpoint;
      cfg = resolve_config(name, raw);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return exit_usage;
    }
    std::unique_ptr<Run> r;
    try {
      r = std::make_unique<Run>(name, cfg);
      int code = exit_ok;
      if (name == "train") code = cmd_train(*r);
      if (name == "sweep") code = cmd_sweep(*r);
      if (name == "curriculum") code = cmd_curriculum(*r);
      if (name == "probe") code = cmd_probe(*r);
      if (name == "schedule") code = cmd_schedule(*r);
      if (name == "lyapunov") code = cmd_lyapunov(*r);
      r->finish();
      out << name << ": " << r->manifest["status"].get<std::string>() << " -> " << r->dir.string() << "\n";
      return code;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      if (r) {
        r->manifest["status"] = "failed";
        r->manifest["errors"].push_back(e.what());
        try {
          r->finish();
        } catch (const std::exception&) {
        }
      }
      return exit_code_for(e);
    }
  }
  return exit_usage;
}

}  // namespace horizonlab::cli
