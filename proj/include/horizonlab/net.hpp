#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "horizonlab/dynamics.hpp"

namespace horizonlab::net {

enum class Activation { relu, softplus };

/// Embed → n_blocks × [LayerNorm → affine → activation] (+ skip) → unembed.
/// Hidden width is width_factor · input_dim.
struct MlpConfig {
  int input_dim = 1;
  int width_factor = 4;
  int n_blocks = 2;
  bool residual = true;
  Activation activation = Activation::relu;
  double softplus_beta = 1.0;
  double ln_epsilon = 1e-5;
  bool unembed_bias = false;
  std::uint64_t seed = 0;

  int hidden() const { return width_factor * input_dim; }
  void validate() const;
};

struct TensorSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Ordered tensors of the flat parameter vector, column-major within each.
///   embed.W              hidden × input_dim
///   block{k}.ln_gain     hidden × 1
///   block{k}.ln_shift    hidden × 1
///   block{k}.W           hidden × hidden
///   block{k}.b           hidden × 1
///   unembed.W            input_dim × hidden
///   unembed.b            input_dim × 1          (only with unembed_bias)
struct Layout {
  std::vector<TensorSlot> slots;
  std::size_t total = 0;

  const TensorSlot& find(const std::string& name) const;
};

Layout make_layout(const MlpConfig& config);

struct ParamVector {
  std::vector<double> values;
  std::shared_ptr<const Layout> layout;

  std::size_t size() const { return values.size(); }
  static ParamVector zeros(std::shared_ptr<const Layout> layout);
  ParamVector zeros_like() const { return zeros(layout); }

  Eigen::Map<Matrix> tensor(const std::string& name);
  Eigen::Map<const Matrix> tensor(const std::string& name) const;
  Eigen::Map<Vector> flat() { return {values.data(), static_cast<Eigen::Index>(values.size())}; }
  Eigen::Map<const Vector> flat() const { return {values.data(), static_cast<Eigen::Index>(values.size())}; }
};

std::size_t param_count(const MlpConfig& config);

/// Weights ~ N(0, 1/fan_in), biases 0, LayerNorm gains 1 and shifts 0.
ParamVector init(const MlpConfig& config);

/// Intermediates of a batched forward pass (one column per sample).
struct Cache {
  struct Block {
    Matrix input;                 // h_{k-1}
    Matrix xhat;                  // normalized input
    Eigen::RowVectorXd inv_std;   // 1/sqrt(var + eps), per column
    Matrix ln_out;                // gain ∘ xhat + shift
    Matrix preact;                // W ln_out + b
  };
  Matrix x;
  std::vector<Block> blocks;
  Matrix last_hidden;  // h_n
};

/// Batched forward. `x` is input_dim × batch. Pass cache = nullptr for
/// inference-only use.
Matrix forward_batch(const MlpConfig& config, const ParamVector& params, const Matrix& x, Cache* cache);

/// Reverse pass for a matching forward_batch. Adds parameter cotangents into
/// `grad` and returns the input cotangent.
Matrix backward_batch(const MlpConfig& config, const ParamVector& params, const Cache& cache, const Matrix& dy,
                      ParamVector& grad);

/// Single-sample forward. Throws NumericError on a non-finite input.
std::pair<Vector, Cache> forward(const MlpConfig& config, const ParamVector& params, const Vector& x);

struct Cotangents {
  Vector dx;
  ParamVector dparams;
};
Cotangents backward(const MlpConfig& config, const ParamVector& params, const Cache& cache, const Vector& dy);

/// Inference helper.
Vector apply(const MlpConfig& config, const ParamVector& params, const Vector& x);

// Serialization: flat little-endian f64 blob plus a JSON descriptor holding
// the config and the layout.
std::string config_to_json(const MlpConfig& config);
MlpConfig config_from_json(const std::string& text);
void save_params(const std::filesystem::path& stem, const MlpConfig& config, const ParamVector& params);
/// Reads `<stem>.bin` and `<stem>.json`; throws ArgumentError when the blob
/// size or stored layout disagree with the config.
std::pair<MlpConfig, ParamVector> load_params(const std::filesystem::path& stem);

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

}  // namespace horizonlab::net
