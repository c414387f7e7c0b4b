#include "imic/encoder.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "imic/error.hpp"

namespace imic {
namespace {

constexpr std::array<char, 8> kMagic = {'I', 'M', 'I', 'C', 'E', 'N', 'C', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error("truncated checkpoint");
  return value;
}

void apply_activation(Activation a, Eigen::MatrixXd& z) {
  if (a == Activation::kTanh) z = z.array().tanh().matrix();
}

}  // namespace

int EncoderParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

int EncoderParams::output_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

void EncoderParams::validate() const {
  if (layers.empty()) throw ContractError("encoder has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.size() != layer.weight.rows())
      throw ContractError("layer " + std::to_string(l) + ": bias length mismatch");
    if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows())
      throw ContractError("layer " + std::to_string(l) + ": shape does not chain");
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
      throw ContractError("layer " + std::to_string(l) + ": non-finite parameters");
  }
}

EncoderParams init_encoder(int input_dim, std::span<const int> hidden, int output_dim,
                           Activation activation, Rng& rng, double gain) {
  if (input_dim < 1 || output_dim < 1) throw ContractError("encoder dims must be positive");
  std::vector<int> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);

  EncoderParams params;
  params.activation = activation;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l + 1] < 1) throw ContractError("hidden widths must be positive");
    Layer layer;
    const double scale = gain / std::sqrt(static_cast<double>(dims[l]));
    layer.weight.resize(dims[l + 1], dims[l]);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        layer.weight(r, c) = scale * normal(rng);
    layer.bias = Eigen::VectorXd::Zero(dims[l + 1]);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

ForwardTrace forward(const EncoderParams& params, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != params.input_dim())
    throw ContractError("input width " + std::to_string(inputs.cols()) +
                        " != encoder input dim " + std::to_string(params.input_dim()));
  ForwardTrace trace;
  trace.inputs.reserve(params.layers.size());
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (l + 1 < params.layers.size()) apply_activation(params.activation, z);
    if (!z.allFinite())
      throw NumericError("encoder layer " + std::to_string(l), "non-finite activations");
    trace.inputs.push_back(std::move(h));
    h = std::move(z);
  }
  trace.raw = std::move(h);
  trace.embeddings = trace.raw;
  trace.norms.resize(trace.raw.rows());
  for (Eigen::Index r = 0; r < trace.raw.rows(); ++r) {
    double n = trace.raw.row(r).norm();
    if (n < kNormFloor) {
      trace.embeddings(r, 0) += kNormFloor;
      n = trace.embeddings.row(r).norm();
    }
    trace.norms(r) = n;
    trace.embeddings.row(r) /= n;
  }
  return trace;
}

Eigen::MatrixXd embed(const EncoderParams& params, const Eigen::MatrixXd& inputs) {
  return forward(params, inputs).embeddings;
}

GradBuffer::GradBuffer(const EncoderParams& params) {
  for (const auto& layer : params.layers)
    grads.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                     Eigen::VectorXd::Zero(layer.bias.size())});
}

void GradBuffer::zero() {
  for (auto& g : grads) {
    g.weight.setZero();
    g.bias.setZero();
  }
  accumulation_count = 0;
}

void backward(const EncoderParams& params, const ForwardTrace& trace,
              const Eigen::MatrixXd& grad_embeddings, GradBuffer& buffer) {
  if (grad_embeddings.rows() != trace.embeddings.rows() ||
      grad_embeddings.cols() != trace.embeddings.cols())
    throw ContractError("grad_embeddings shape does not match the forward output");
  if (buffer.grads.size() != params.layers.size())
    throw ContractError("gradient buffer is not shape-congruent with params");

  // d/dy of y/|y| applied to g: (g - u (u.g)) / |y|.
  const Eigen::MatrixXd& u = trace.embeddings;
  const Eigen::VectorXd dots = (u.array() * grad_embeddings.array()).rowwise().sum();
  Eigen::MatrixXd delta = grad_embeddings - u.cwiseProduct(dots.replicate(1, u.cols()));
  delta.array().colwise() /= trace.norms.array();

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    auto& g = buffer.grads[l];
    const auto& input = trace.inputs[l];
    g.weight.noalias() += delta.transpose() * input;
    g.bias.noalias() += delta.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd upstream = delta * params.layers[l].weight;
    if (params.activation == Activation::kTanh)
      upstream.array() *= 1.0 - input.array().square();
    delta = std::move(upstream);
  }
  ++buffer.accumulation_count;
}

void backward(const EncoderParams& params, const Eigen::MatrixXd& inputs,
              const Eigen::MatrixXd& grad_embeddings, GradBuffer& buffer) {
  backward(params, forward(params, inputs), grad_embeddings, buffer);
}

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, params.activation == Activation::kTanh ? 0U : 1U);
  put<std::uint64_t>(out, params.layers.size());
  for (const auto& layer : params.layers) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(layer.weight.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(layer.weight.cols()));
    out.write(reinterpret_cast<const char*>(layer.weight.data()),
              static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(layer.bias.data()),
              static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error("not an encoder checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version));
  EncoderParams params;
  const auto act = get<std::uint32_t>(in);
  if (act > 1) throw Error("unknown activation code in checkpoint");
  params.activation = act == 0 ? Activation::kTanh : Activation::kLinear;
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t l = 0; l < count; ++l) {
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    Layer layer;
    layer.weight.resize(rows, cols);
    layer.bias.resize(rows);
    in.read(reinterpret_cast<char*>(layer.weight.data()),
            static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(layer.bias.data()),
            static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
    if (!in) throw Error("truncated checkpoint " + path.string());
    params.layers.push_back(std::move(layer));
  }
  params.validate();
  return params;
}

std::uint64_t param_hash(const EncoderParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const double* data, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& layer : params.layers) {
    mix(layer.weight.data(), layer.weight.size());
    mix(layer.bias.data(), layer.bias.size());
  }
  return h;
}

std::size_t parameter_count(const EncoderParams& params) {
  std::size_t n = 0;
  for (const auto& layer : params.layers)
    n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  return n;
}

}  // namespace imic
