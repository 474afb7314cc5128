#include "mac/spatial_birnn.hpp"

#include "mac/errors.hpp"
#include "mac/ops.hpp"

namespace mac {

namespace {

template <typename T>
Tensor<T> gate_preact(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& w, const Tensor<T>& u,
                      const Tensor<T>& b) {
  return add(fc(x, w, b), fc(h, u, Tensor<T>{}));
}

template <typename T>
const LstmParams<T>& params_at(const std::vector<LstmParams<T>>& sets, std::size_t r, std::size_t count) {
  if (sets.size() == 1) return sets.front();
  if (sets.size() != count)
    throw ConfigError("need 1 or " + std::to_string(count) + " LSTM parameter sets, got " +
                      std::to_string(sets.size()));
  return sets[r];
}

}  // namespace

template <typename T>
LstmState<T> lstm_cell(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                       const LstmParams<T>& p) {
  if (h_prev.shape() != c_prev.shape() || h_prev.dim(h_prev.rank() - 1) != p.hidden() ||
      x.rank() != h_prev.rank() || (x.rank() == 2 && x.dim(0) != h_prev.dim(0)))
    throw DimensionError("lstm_cell: input " + shape_str(x.shape()) + ", state " + shape_str(h_prev.shape()) +
                         "/" + shape_str(c_prev.shape()) + ", hidden " + std::to_string(p.hidden()));
  const auto f = sigmoid(gate_preact(x, h_prev, p.w_f, p.u_f, p.b_f));
  const auto i = sigmoid(gate_preact(x, h_prev, p.w_i, p.u_i, p.b_i));
  const auto o = sigmoid(gate_preact(x, h_prev, p.w_o, p.u_o, p.b_o));
  const auto candidate = tanh(gate_preact(x, h_prev, p.w_c, p.u_c, p.b_c));
  auto c = add(mul(f, c_prev), mul(i, candidate));
  auto h = mul(o, tanh(c));
  return {std::move(h), std::move(c)};
}

template <typename T>
std::vector<Tensor<T>> bidirectional_pass(const std::vector<Tensor<T>>& descriptors,
                                          const std::vector<LstmParams<T>>& forward,
                                          const std::vector<LstmParams<T>>& backward) {
  const std::size_t steps = descriptors.size();
  if (steps == 0) throw UsageError("bidirectional_pass: empty sequence");
  const auto& first = descriptors.front();
  Shape state_shape = first.shape();
  state_shape.back() = params_at(forward, 0, steps).hidden();
  Shape back_shape = state_shape;
  back_shape.back() = params_at(backward, 0, steps).hidden();

  std::vector<Tensor<T>> h_fwd(steps), h_bwd(steps);
  LstmState<T> s{Tensor<T>::zeros(state_shape), Tensor<T>::zeros(state_shape)};
  for (std::size_t r = 0; r < steps; ++r) {
    s = lstm_cell(descriptors[r], s.h, s.c, params_at(forward, r, steps));
    h_fwd[r] = s.h;
  }
  s = {Tensor<T>::zeros(back_shape), Tensor<T>::zeros(back_shape)};
  for (std::size_t r = steps; r-- > 0;) {
    s = lstm_cell(descriptors[r], s.h, s.c, params_at(backward, r, steps));
    h_bwd[r] = s.h;
  }
  std::vector<Tensor<T>> out;
  out.reserve(steps);
  const std::size_t axis = first.rank() - 1;
  for (std::size_t r = 0; r < steps; ++r) out.push_back(concat<T>({h_fwd[r], h_bwd[r]}, axis));
  return out;
}

template LstmState<float> lstm_cell(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                    const LstmParams<float>&);
template LstmState<double> lstm_cell(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                     const LstmParams<double>&);
template std::vector<Tensor<float>> bidirectional_pass(const std::vector<Tensor<float>>&,
                                                       const std::vector<LstmParams<float>>&,
                                                       const std::vector<LstmParams<float>>&);
template std::vector<Tensor<double>> bidirectional_pass(const std::vector<Tensor<double>>&,
                                                        const std::vector<LstmParams<double>>&,
                                                        const std::vector<LstmParams<double>>&);

}  // namespace mac
