#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchdiff/nn/graph.hpp"
#include "patchdiff/nn/tensor.hpp"

namespace patchdiff {
class Rng;
}

namespace patchdiff::nn {

/// Backbone hyper-parameters. Stored verbatim in checkpoints.
struct UNetConfig {
  static constexpr int kInputChannels = 6;   // noisy patch + condition patch
  static constexpr int kOutputChannels = 3;  // noise estimate

  int patch_size = 64;
  int base_channels = 128;
  std::vector<int> channel_multipliers{1, 2, 2, 2};
  int num_res_blocks = 2;
  /// Self-attention is inserted wherever the feature map is this many pixels wide.
  int attention_resolution = 16;
  int groupnorm_groups = 32;
  int time_embed_dim = 512;
  double dropout = 0.0;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  bool operator==(const UNetConfig&) const = default;
};

/// Defaults for the two supported patch sizes (64 and 128).
UNetConfig default_unet_config(int patch_size);

/// Sinusoidal timestep embedding of even length `dim`: entries (2k, 2k+1) hold
/// (sin(t w_k), cos(t w_k)) with w_k = 10000^(-k / (dim/2 - 1)), so the
/// frequencies run geometrically from 1 down to 1/10000.
std::vector<double> time_embedding(double t, int dim);

/// Parameter registry and module wiring shared by all UNet instances of a config.
struct UNetLayout;

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
};

/// Shapes of every parameter, in registration order, without allocating them.
std::vector<std::pair<std::string, std::vector<int>>> unet_parameter_shapes(const UNetConfig& config);

std::size_t unet_parameter_count(const UNetConfig& config);

/// Encoder/decoder with skip connections, time-conditioned residual blocks,
/// group normalisation and single-head self-attention.
template <typename Real>
class UNet {
 public:
  /// Fan-in scaled normal init for convolutions and linears, zeros for biases
  /// and for the final output convolution.
  UNet(UNetConfig config, std::uint64_t seed);
  /// Adopts existing weights; names and shapes must match the config's layout.
  UNet(UNetConfig config, std::vector<Parameter<Real>> parameters);

  const UNetConfig& config() const { return config_; }
  std::vector<Parameter<Real>>& parameters() { return params_; }
  const std::vector<Parameter<Real>>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  struct Trace {
    int output = -1;
    std::vector<int> parameter_nodes;  // parallel to parameters()
  };

  /// Builds the forward pass on `graph`. `input` is (N, 6, p, p) and must
  /// outlive the graph; `timesteps` has N entries. Dropout is active only
  /// when `dropout_rng` is given.
  Trace forward(Graph<Real>& graph, const Tensor<Real>& input, std::span<const int> timesteps,
                Rng* dropout_rng) const;

  /// Inference pass: (N, 6, p, p) -> (N, 3, p, p).
  Tensor<Real> predict(const Tensor<Real>& input, std::span<const int> timesteps) const;

  /// Mean squared error against `target` (N, 3, p, p) and its parameter
  /// gradients (overwritten, parallel to parameters()).
  double loss_and_gradients(const Tensor<Real>& input, std::span<const int> timesteps,
                            const Tensor<Real>& target, Rng* dropout_rng,
                            std::vector<Tensor<Real>>& gradients) const;

 private:
  UNetConfig config_;
  std::shared_ptr<const UNetLayout> layout_;
  std::vector<Parameter<Real>> params_;
};

}  // namespace patchdiff::nn
