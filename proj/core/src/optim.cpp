#include "imic/optim.hpp"

#include <cmath>
#include <string>

#include "imic/error.hpp"

namespace imic {
namespace {

Layer zeros_like(const Layer& layer) {
  return {Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
          Eigen::VectorXd::Zero(layer.bias.size())};
}

template <typename Param, typename Grad, typename Moment>
void update(Param& w, const Grad& g, Moment& m, Moment& v, const AdamConfig& c,
            double correction1, double correction2) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  const auto m_hat = m.array() / correction1;
  const auto v_hat = v.array() / correction2;
  w.array() -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * w.array());
}

}  // namespace

OptimState::OptimState(const EncoderParams& params, AdamConfig cfg) : config(cfg) {
  for (const auto& layer : params.layers) {
    first_moment.push_back(zeros_like(layer));
    second_moment.push_back(zeros_like(layer));
  }
}

void adam_step(EncoderParams& params, GradBuffer& buffer, OptimState& state) {
  if (buffer.accumulation_count < 1)
    throw ContractError("adam_step needs at least one accumulated gradient");
  if (buffer.grads.size() != params.layers.size() ||
      state.first_moment.size() != params.layers.size())
    throw ContractError("optimizer state is not shape-congruent with params");

  ++state.step;
  const auto& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    update(layer.weight, buffer.grads[l].weight, state.first_moment[l].weight,
           state.second_moment[l].weight, c, correction1, correction2);
    update(layer.bias, buffer.grads[l].bias, state.first_moment[l].bias,
           state.second_moment[l].bias, c, correction1, correction2);
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
      throw NumericError("adam step " + std::to_string(state.step) + " layer " +
                             std::to_string(l),
                         "non-finite parameter update");
  }
  buffer.zero();
}

}  // namespace imic
