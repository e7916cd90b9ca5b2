#include "horizonlab/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <json.hpp>

#include "horizonlab/errors.hpp"
#include "horizonlab/rng.hpp"
#include "horizonlab/trajectory_io.hpp"

namespace horizonlab::net {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

// Slot order is fixed by make_layout: 0 embed, then four per block, then unembed.
std::size_t embed_slot() { return 0; }
std::size_t block_slot(int k, int part) { return 1 + 4 * static_cast<std::size_t>(k) + part; }
std::size_t unembed_slot(int n_blocks) { return 1 + 4 * static_cast<std::size_t>(n_blocks); }

ConstMap view(const ParamVector& p, std::size_t slot) {
  const auto& s = p.layout->slots[slot];
  return {p.values.data() + s.offset, s.rows, s.cols};
}
MutMap view(ParamVector& p, std::size_t slot) {
  const auto& s = p.layout->slots[slot];
  return {p.values.data() + s.offset, s.rows, s.cols};
}

double softplus(double z, double beta) {
  const double bz = beta * z;
  if (bz > 30.0) return z + std::log1p(std::exp(-bz)) / beta;
  return std::log1p(std::exp(bz)) / beta;
}
double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

Matrix activate(const MlpConfig& c, const Matrix& z) {
  if (c.activation == Activation::relu) return z.cwiseMax(0.0);
  return z.unaryExpr([b = c.softplus_beta](double v) { return softplus(v, b); });
}
Matrix activation_slope(const MlpConfig& c, const Matrix& z) {
  if (c.activation == Activation::relu) return (z.array() > 0.0).cast<double>().matrix();
  return z.unaryExpr([b = c.softplus_beta](double v) { return sigmoid(b * v); });
}

void check_params(const MlpConfig& config, const ParamVector& params) {
  if (!params.layout || params.layout->total != params.values.size() || params.values.size() != param_count(config))
    throw ArgumentError("parameter vector does not match the network configuration");
}

}  // namespace

void MlpConfig::validate() const {
  if (input_dim <= 0) throw ArgumentError("input_dim must be positive");
  if (width_factor <= 0) throw ArgumentError("width_factor must be positive");
  if (n_blocks < 0) throw ArgumentError("n_blocks must be non-negative");
  if (!(softplus_beta > 0.0)) throw ArgumentError("softplus beta must be positive");
  if (!(ln_epsilon > 0.0)) throw ArgumentError("ln_epsilon must be positive");
}

const TensorSlot& Layout::find(const std::string& name) const {
  for (const auto& s : slots)
    if (s.name == name) return s;
  throw ArgumentError("no tensor named '" + name + "' in layout");
}

Layout make_layout(const MlpConfig& config) {
  config.validate();
  const int v = config.input_dim, h = config.hidden();
  Layout layout;
  auto add = [&](std::string name, int rows, int cols) {
    layout.slots.push_back({std::move(name), rows, cols, layout.total});
    layout.total += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  };
  add("embed.W", h, v);
  for (int k = 0; k < config.n_blocks; ++k) {
    const std::string p = "block" + std::to_string(k) + ".";
    add(p + "ln_gain", h, 1);
    add(p + "ln_shift", h, 1);
    add(p + "W", h, h);
    add(p + "b", h, 1);
  }
  add("unembed.W", v, h);
  if (config.unembed_bias) add("unembed.b", v, 1);
  return layout;
}

std::size_t param_count(const MlpConfig& config) { return make_layout(config).total; }

ParamVector ParamVector::zeros(std::shared_ptr<const Layout> layout) {
  ParamVector p;
  p.values.assign(layout->total, 0.0);
  p.layout = std::move(layout);
  return p;
}

Eigen::Map<Matrix> ParamVector::tensor(const std::string& name) {
  const auto& s = layout->find(name);
  return {values.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Matrix> ParamVector::tensor(const std::string& name) const {
  const auto& s = layout->find(name);
  return {values.data() + s.offset, s.rows, s.cols};
}

ParamVector init(const MlpConfig& config) {
  auto layout = std::make_shared<const Layout>(make_layout(config));
  ParamVector p = ParamVector::zeros(layout);
  Rng rng = make_rng(config.seed, Stream::model_init);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (const auto& slot : layout->slots) {
    const bool weight = slot.name.ends_with(".W");
    const bool gain = slot.name.ends_with("ln_gain");
    for (std::size_t i = 0; i < slot.size(); ++i) {
      double& v = p.values[slot.offset + i];
      if (weight)
        v = n01(rng) / std::sqrt(static_cast<double>(slot.cols));
      else if (gain)
        v = 1.0;
    }
  }
  return p;
}

Matrix forward_batch(const MlpConfig& config, const ParamVector& params, const Matrix& x, Cache* cache) {
  check_params(config, params);
  if (x.rows() != config.input_dim) throw ArgumentError("input has wrong dimension");
  const Eigen::Index H = config.hidden();
  const double invH = 1.0 / static_cast<double>(H);
  Matrix h = view(params, embed_slot()) * x;
  if (cache) {
    cache->x = x;
    cache->blocks.resize(static_cast<std::size_t>(config.n_blocks));
  }
  for (int k = 0; k < config.n_blocks; ++k) {
    const auto gain = view(params, block_slot(k, 0));
    const auto shift = view(params, block_slot(k, 1));
    const auto W = view(params, block_slot(k, 2));
    const auto b = view(params, block_slot(k, 3));
    const Eigen::RowVectorXd mu = h.colwise().sum() * invH;
    Matrix xhat = h.rowwise() - mu;
    const Eigen::RowVectorXd var = xhat.array().square().colwise().sum().matrix() * invH;
    const Eigen::RowVectorXd inv_std = (var.array() + config.ln_epsilon).rsqrt().matrix();
    xhat.array().rowwise() *= inv_std.array();
    Matrix ln_out = (xhat.array().colwise() * gain.col(0).array()).colwise() + shift.col(0).array();
    Matrix z = W * ln_out;
    z.colwise() += b.col(0);
    Matrix a = activate(config, z);
    if (config.residual) a += h;
    if (cache) {
      auto& blk = cache->blocks[static_cast<std::size_t>(k)];
      blk.input = std::move(h);
      blk.xhat = std::move(xhat);
      blk.inv_std = inv_std;
      blk.ln_out = std::move(ln_out);
      blk.preact = std::move(z);
    }
    h = std::move(a);
  }
  Matrix y = view(params, unembed_slot(config.n_blocks)) * h;
  if (config.unembed_bias) y.colwise() += view(params, unembed_slot(config.n_blocks) + 1).col(0);
  if (cache) cache->last_hidden = std::move(h);
  return y;
}

Matrix backward_batch(const MlpConfig& config, const ParamVector& params, const Cache& cache, const Matrix& dy,
                      ParamVector& grad) {
  check_params(config, params);
  if (grad.values.size() != params.values.size()) throw ArgumentError("gradient buffer has wrong size");
  if (dy.rows() != config.input_dim || dy.cols() != cache.last_hidden.cols())
    throw ArgumentError("output cotangent does not match the cached forward pass");
  if (cache.blocks.size() != static_cast<std::size_t>(config.n_blocks))
    throw ArgumentError("cache was produced by a different network");
  const double Hd = static_cast<double>(config.hidden());

  const std::size_t us = unembed_slot(config.n_blocks);
  view(grad, us).noalias() += dy * cache.last_hidden.transpose();
  if (config.unembed_bias) view(grad, us + 1).col(0) += dy.rowwise().sum();
  Matrix dh = view(params, us).transpose() * dy;

  for (int k = config.n_blocks - 1; k >= 0; --k) {
    const auto& blk = cache.blocks[static_cast<std::size_t>(k)];
    const auto gain = view(params, block_slot(k, 0));
    const auto W = view(params, block_slot(k, 2));
    const Matrix dz = dh.cwiseProduct(activation_slope(config, blk.preact));
    view(grad, block_slot(k, 2)).noalias() += dz * blk.ln_out.transpose();
    view(grad, block_slot(k, 3)).col(0) += dz.rowwise().sum();
    const Matrix du = W.transpose() * dz;
    view(grad, block_slot(k, 0)).col(0) += du.cwiseProduct(blk.xhat).rowwise().sum();
    view(grad, block_slot(k, 1)).col(0) += du.rowwise().sum();
    const Matrix dxhat = du.array().colwise() * gain.col(0).array();
    const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
    const Eigen::RowVectorXd s2 = dxhat.cwiseProduct(blk.xhat).colwise().sum();
    Matrix dx = (Hd * dxhat - blk.xhat.cwiseProduct(s2.replicate(dxhat.rows(), 1))).rowwise() - s1;
    dx.array().rowwise() *= (blk.inv_std.array() / Hd);
    if (config.residual)
      dh += dx;
    else
      dh = std::move(dx);
  }
  view(grad, embed_slot()).noalias() += dh * cache.x.transpose();
  return view(params, embed_slot()).transpose() * dh;
}

std::pair<Vector, Cache> forward(const MlpConfig& config, const ParamVector& params, const Vector& x) {
  if (!x.allFinite()) throw NumericError("non-finite network input");
  Cache cache;
  Matrix y = forward_batch(config, params, x, &cache);
  return {y.col(0), std::move(cache)};
}

Cotangents backward(const MlpConfig& config, const ParamVector& params, const Cache& cache, const Vector& dy) {
  Cotangents out{Vector(), params.zeros_like()};
  Matrix dx = backward_batch(config, params, cache, dy, out.dparams);
  out.dx = dx.col(0);
  return out;
}

Vector apply(const MlpConfig& config, const ParamVector& params, const Vector& x) {
  return forward_batch(config, params, x, nullptr).col(0);
}

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "softplus"; }

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  throw ArgumentError("unknown activation '" + std::string(s) + "'");
}

namespace {

nlohmann::json config_json(const MlpConfig& c) {
  return {{"input_dim", c.input_dim},     {"width_factor", c.width_factor},
          {"n_blocks", c.n_blocks},       {"residual", c.residual},
          {"activation", to_string(c.activation)}, {"softplus_beta", c.softplus_beta},
          {"ln_epsilon", c.ln_epsilon},   {"unembed_bias", c.unembed_bias},
          {"seed", c.seed}};
}

MlpConfig config_from(const nlohmann::json& j) {
  MlpConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.width_factor = j.at("width_factor").get<int>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.residual = j.value("residual", c.residual);
  c.activation = activation_from_string(j.value("activation", std::string("relu")));
  c.softplus_beta = j.value("softplus_beta", c.softplus_beta);
  c.ln_epsilon = j.value("ln_epsilon", c.ln_epsilon);
  c.unembed_bias = j.value("unembed_bias", c.unembed_bias);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

}  // namespace

std::string config_to_json(const MlpConfig& config) { return config_json(config).dump(2); }

MlpConfig config_from_json(const std::string& text) { return config_from(nlohmann::json::parse(text)); }

void save_params(const std::filesystem::path& stem, const MlpConfig& config, const ParamVector& params) {
  check_params(config, params);
  std::string blob(params.values.size() * sizeof(double), '\0');
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(params.values[i]);
    for (int b = 0; b < 8; ++b) blob[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  nlohmann::json desc;
  desc["config"] = config_json(config);
  desc["dtype"] = "f64le";
  desc["count"] = params.values.size();
  for (const auto& s : params.layout->slots)
    desc["layout"].push_back({{"name", s.name}, {"shape", {s.rows, s.cols}}, {"offset", s.offset}});
  auto bin = stem;
  bin += ".bin";
  auto js = stem;
  js += ".json";
  dynamics::write_file_atomic(bin, blob);
  dynamics::write_file_atomic(js, desc.dump(2) + "\n");
}

std::pair<MlpConfig, ParamVector> load_params(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto js = stem;
  js += ".json";
  const auto desc = nlohmann::json::parse(dynamics::read_file(js));
  MlpConfig config = config_from(desc.at("config"));
  auto layout = std::make_shared<const Layout>(make_layout(config));
  const auto& stored = desc.at("layout");
  if (stored.size() != layout->slots.size()) throw ArgumentError("stored layout does not match config");
  for (std::size_t i = 0; i < stored.size(); ++i) {
    const auto& s = layout->slots[i];
    if (stored[i].at("name") != s.name || stored[i].at("offset").get<std::size_t>() != s.offset)
      throw ArgumentError("stored layout slot " + std::to_string(i) + " does not match config");
  }
  const std::string blob = dynamics::read_file(bin);
  if (blob.size() != layout->total * sizeof(double))
    throw ArgumentError("parameter blob has " + std::to_string(blob.size()) + " bytes, expected " +
                        std::to_string(layout->total * sizeof(double)));
  ParamVector p = ParamVector::zeros(layout);
  for (std::size_t i = 0; i < layout->total; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[i * 8 + b])) << (8 * b);
    p.values[i] = std::bit_cast<double>(bits);
  }
  return {config, p};
}

}  // namespace horizonlab::net
