#pragma once

// Bidirectional LSTM over the patch sequence. The forward pass reads patches
// 1..R, the backward pass R..1, both from zero initial states; each patch's
// sequential descriptor is [h_forward; h_backward].

#include <vector>

#include "mac/tensor.hpp"

namespace mac {

/// Gate parameters of one LSTM direction. W_* map the input (hidden x d_in),
/// U_* the previous hidden state (hidden x hidden).
template <typename T>
struct LstmParams {
  Tensor<T> w_f, w_i, w_o, w_c;
  Tensor<T> u_f, u_i, u_o, u_c;
  Tensor<T> b_f, b_i, b_o, b_c;

  std::size_t hidden() const { return b_f.dim(0); }
};

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

/// One step:
///   f = sigmoid(W_f x + U_f h + b_f), i and o likewise,
///   c' = f * c + i * tanh(W_c x + U_c h + b_c),  h' = o * tanh(c').
/// Works on single vectors ([d]) or batches of rows ([B x d]).
template <typename T>
LstmState<T> lstm_cell(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                       const LstmParams<T>& p);

/// `forward` and `backward` hold either one parameter set (shared by every
/// position) or one per position. Inputs are R tensors of shape [d] or
/// [B x d]; outputs R tensors of width 2 * hidden.
template <typename T>
std::vector<Tensor<T>> bidirectional_pass(const std::vector<Tensor<T>>& descriptors,
                                          const std::vector<LstmParams<T>>& forward,
                                          const std::vector<LstmParams<T>>& backward);

}  // namespace mac
