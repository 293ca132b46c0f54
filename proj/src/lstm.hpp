#pragma once

// Recurrent-cell and head building blocks shared by inference and training.

#include <span>
#include <vector>

#include "kernels.hpp"
#include "smcpose/predictor.hpp"

namespace smcpose::detail {

// x[t][feature][n] for t < L.
template <typename T>
std::vector<T> encode_inputs(std::span<const KeypointHistory* const> histories, int history_len) {
  const int n = static_cast<int>(histories.size());
  std::vector<T> x(static_cast<std::size_t>(history_len) * kInputFeatures * n, T(0));
  for (int col = 0; col < n; ++col) {
    const KeypointHistory& h = *histories[col];
    const double inv_scale = 1.0 / h.scale;
    for (int t = 0; t < history_len; ++t) {
      const HistoryStep& s = h.steps[t];
      T* base = x.data() + static_cast<std::size_t>(t) * kInputFeatures * n;
      base[0 * n + col] = static_cast<T>(s.dx * inv_scale);
      base[1 * n + col] = static_cast<T>(s.dy * inv_scale);
      base[2 * n + col] = s.visible ? T(1) : T(0);
    }
  }
  return x;
}

// Without restrict the seven streams need more alias checks than gcc will
// version for, and the loop stays scalar.
template <typename T>
void cell_update(int count, const T* __restrict gi, const T* __restrict gf,
                 const T* __restrict gg, const T* __restrict go, T* __restrict cell,
                 T* __restrict tanh_cell, T* __restrict h_out) {
  for (int e = 0; e < count; ++e) {
    cell[e] = std::fma(gf[e], cell[e], gi[e] * gg[e]);
    tanh_cell[e] = kernels::tanh_act(cell[e]);
    h_out[e] = go[e] * tanh_cell[e];
  }
}

// One LSTM step over n columns. `gates` receives the activated gates
// (input, forget, cell, output blocks of H rows). `cell` is updated in place
// (start from zeros). h_prev may be null for the zero initial state.
template <typename T>
void lstm_step(const BasicPredictor<T>& model, int n, const T* x_t, const T* h_prev, T* gates,
               T* cell, T* tanh_cell, T* h_out) {
  using M = BasicPredictor<T>;
  const int hidden = model.config().hidden;
  const int rows = 4 * hidden;
  const T* bias = model.tensor(M::kGateBias).data.data();
  for (int r = 0; r < rows; ++r) std::fill(gates + r * n, gates + (r + 1) * n, bias[r]);
  kernels::gemm_nn(rows, n, kInputFeatures, model.tensor(M::kInputWeights).data.data(), x_t, gates,
                   true);
  if (h_prev != nullptr) {
    kernels::gemm_nn(rows, n, hidden, model.tensor(M::kRecurrentWeights).data.data(), h_prev,
                     gates, true);
  }
  const int block = hidden * n;
  T* gi = gates;
  T* gf = gates + block;
  T* gg = gates + 2 * block;
  T* go = gates + 3 * block;
  for (int e = 0; e < block; ++e) gi[e] = kernels::sigmoid(gi[e]);
  for (int e = 0; e < block; ++e) gf[e] = kernels::sigmoid(gf[e]);
  for (int e = 0; e < block; ++e) gg[e] = kernels::tanh_act(gg[e]);
  for (int e = 0; e < block; ++e) go[e] = kernels::sigmoid(go[e]);
  cell_update(block, gi, gf, gg, go, cell, tanh_cell, h_out);
}

template <typename T>
T leaky(T v, T slope) {
  return v > T(0) ? v : v * slope;
}

// Output layer for one column of FC pre-activations (stride = column count).
template <typename T>
void head_column(const BasicPredictor<T>& model, const T* preact, int stride, const T* mask,
                 T out[kOutputs]) {
  using M = BasicPredictor<T>;
  const int fc = model.config().fc_hidden;
  const T slope = static_cast<T>(model.config().leak_slope);
  const T* w2 = model.tensor(M::kOutputWeights).data.data();
  const T* b2 = model.tensor(M::kOutputBias).data.data();
  for (int o = 0; o < kOutputs; ++o) out[o] = b2[o];
  for (int f = 0; f < fc; ++f) {
    T r = leaky(preact[f * stride], slope);
    if (mask != nullptr) r *= mask[f];
    for (int o = 0; o < kOutputs; ++o) out[o] = std::fma(w2[o * fc + f], r, out[o]);
  }
}

}  // namespace smcpose::detail
