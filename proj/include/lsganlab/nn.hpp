#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lsganlab/tape.hpp"
#include "lsganlab/tensor.hpp"

namespace lsgan {

/// I.i.d. Normal(mean, std^2) entries from a seeded generator.
Tensor init_gaussian(const Shape& shape, double mean, double std, std::uint64_t seed);

enum class Activation : std::uint8_t { None, Relu, LeakyRelu, Tanh, Sigmoid };

const char* activation_name(Activation a);

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Activation activation = Activation::None;
  double leaky_slope = 0.2;

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
};

/// Per-feature batch normalization for [batch, features] activations.
/// Training mode standardizes with batch statistics (and advances the
/// running estimates); eval mode uses the running estimates.
struct BatchNorm1d {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  explicit BatchNorm1d(std::size_t features);
  std::size_t features() const { return gamma.shape()[0]; }
};

enum class NetRole : std::uint8_t { Generator, Discriminator };

struct MlpBlock {
  DenseLayer dense;
  std::optional<BatchNorm1d> norm;  // applied after the linear map, before activation
};

/// Stack of dense layers, optionally with batch norm. Parameters live here
/// as plain tensors; each forward() records them as fresh leaves on the
/// given tape so gradients map back via `param_nodes`.
class Mlp {
 public:
  Mlp() = default;
  Mlp(NetRole role, std::vector<MlpBlock> blocks);

  NetRole role() const { return role_; }
  const std::vector<MlpBlock>& blocks() const { return blocks_; }
  std::vector<MlpBlock>& blocks() { return blocks_; }
  std::size_t in_features() const;
  std::size_t out_features() const;

  /// Weights, biases, gammas, betas in layer order. Stable across calls.
  std::vector<Tensor*> parameters();
  std::vector<std::string> parameter_names() const;

  /// Runs the batch through the stack. `param_nodes`, when given, receives
  /// the leaf ids in the same order as parameters().
  NodeId forward(Tape& tape, NodeId batch, bool training,
                 std::vector<NodeId>* param_nodes = nullptr);

 private:
  NetRole role_ = NetRole::Generator;
  std::vector<MlpBlock> blocks_;
};

/// Builds a fully-connected net: widths = {in, hidden..., out}. Hidden
/// layers use `hidden_act`; the output layer uses `output_act` (generators
/// emitting image-scaled data want Tanh, discriminators None). Weights are
/// Normal(0, init_std^2), biases zero. `batchnorm_hidden` inserts BatchNorm1d
/// after every hidden linear layer.
Mlp make_mlp(NetRole role, const std::vector<std::size_t>& widths, Activation hidden_act,
             Activation output_act, bool batchnorm_hidden, double init_std, std::uint64_t seed);

/// Checkpoint format: one text header line
///   mlp v1 <generator|discriminator> <in>x<out>:<act>[:bn] ...
/// followed by all parameters as little-endian 64-bit floats in
/// parameters() order (per block: weight row-major, bias, then gamma, beta,
/// running mean, running var when the block has batch norm).
void save_mlp(const Mlp& net, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace lsgan
