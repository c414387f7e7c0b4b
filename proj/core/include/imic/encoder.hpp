#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "imic/rng.hpp"

namespace imic {

enum class Activation { kTanh, kLinear };

/// One affine layer: y = W x + b with W of shape (out, in).
struct Layer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Feed-forward embedding network. The activation is applied between layers,
/// never after the last one; outputs are L2-normalized by `forward`.
struct EncoderParams {
  std::vector<Layer> layers;
  Activation activation = Activation::kTanh;

  int input_dim() const;
  int output_dim() const;
  /// Throws ContractError on broken shape chains or non-finite entries.
  void validate() const;
};

/// Gaussian init with variance gain^2 / fan_in, zero biases.
EncoderParams init_encoder(int input_dim, std::span<const int> hidden, int output_dim,
                           Activation activation, Rng& rng, double gain = 1.0);

/// Rows whose raw norm is below this are shifted by kNormFloor * e1 before
/// normalization.
inline constexpr double kNormFloor = 1e-12;

/// Everything backward() needs from a forward pass.
struct ForwardTrace {
  // Input to each layer (inputs[0] is the feature matrix); one row per sample.
  std::vector<Eigen::MatrixXd> inputs;
  Eigen::MatrixXd raw;         // pre-normalization output
  Eigen::VectorXd norms;       // norm actually divided by (after the guard)
  Eigen::MatrixXd embeddings;  // unit rows
};

/// Throws NumericError("encoder layer <i>") on non-finite activations.
ForwardTrace forward(const EncoderParams& params, const Eigen::MatrixXd& inputs);

/// Forward pass followed by row-wise L2 normalization.
Eigen::MatrixXd embed(const EncoderParams& params, const Eigen::MatrixXd& inputs);

/// Parameter-shaped gradient accumulator.
struct GradBuffer {
  std::vector<Layer> grads;
  int accumulation_count = 0;

  GradBuffer() = default;
  explicit GradBuffer(const EncoderParams& params);
  void zero();
};

/// Adds d(loss)/d(params) to `buffer`, given d(loss)/d(embeddings) for the
/// pass recorded in `trace`. Chains through the normalization Jacobian.
void backward(const EncoderParams& params, const ForwardTrace& trace,
              const Eigen::MatrixXd& grad_embeddings, GradBuffer& buffer);

/// Convenience overload that recomputes the forward pass for `inputs`.
void backward(const EncoderParams& params, const Eigen::MatrixXd& inputs,
              const Eigen::MatrixXd& grad_embeddings, GradBuffer& buffer);

/// Versioned little-endian binary: magic "IMICENC\0", u32 version,
/// u32 activation, u64 layer count, then per layer u64 rows, u64 cols,
/// rows*cols float64 weights (column-major) and rows float64 biases.
void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the raw parameter bytes; changes whenever any bit does.
std::uint64_t param_hash(const EncoderParams& params);

std::size_t parameter_count(const EncoderParams& params);

}  // namespace imic
