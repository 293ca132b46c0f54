#pragma once

// Dense kernels for the predictor. Matrices are row-major; activations are
// feature-major (row = feature, column = batch item) so every column is
// computed with the same sequence of fused multiply-adds regardless of the
// batch width. Batched and single-item forward passes are bit-identical.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>

namespace smcpose::kernels {

// c[M x N] (+)= a[M x K] * b[K x N]
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  constexpr int kColBlock = 128 / static_cast<int>(sizeof(T));
  constexpr int kRowBlock = 4;
  int n0 = 0;
  for (; n0 + kColBlock <= n; n0 += kColBlock) {
    int i = 0;
    for (; i + kRowBlock <= m; i += kRowBlock) {
      T acc[kRowBlock][kColBlock];
      for (int r = 0; r < kRowBlock; ++r) {
        for (int col = 0; col < kColBlock; ++col) {
          acc[r][col] = accumulate ? c[(i + r) * n + n0 + col] : T(0);
        }
      }
      for (int j = 0; j < k; ++j) {
        const T* brow = b + j * n + n0;
        for (int r = 0; r < kRowBlock; ++r) {
          const T w = a[(i + r) * k + j];
          for (int col = 0; col < kColBlock; ++col) acc[r][col] = std::fma(w, brow[col], acc[r][col]);
        }
      }
      for (int r = 0; r < kRowBlock; ++r) {
        std::memcpy(c + (i + r) * n + n0, acc[r], sizeof(T) * kColBlock);
      }
    }
    for (; i < m; ++i) {
      T acc[kColBlock];
      for (int col = 0; col < kColBlock; ++col) acc[col] = accumulate ? c[i * n + n0 + col] : T(0);
      for (int j = 0; j < k; ++j) {
        const T* brow = b + j * n + n0;
        const T w = a[i * k + j];
        for (int col = 0; col < kColBlock; ++col) acc[col] = std::fma(w, brow[col], acc[col]);
      }
      std::memcpy(c + i * n + n0, acc, sizeof(T) * kColBlock);
    }
  }
  if (n0 == n) return;
  for (int i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow + n0, crow + n, T(0));
    for (int j = 0; j < k; ++j) {
      const T w = a[i * k + j];
      const T* brow = b + j * n;
      for (int col = n0; col < n; ++col) crow[col] = std::fma(w, brow[col], crow[col]);
    }
  }
}

// c[K x N] += a[M x K]^T * d[M x N]
template <typename T>
void gemm_tn_acc(int m, int n, int k, const T* a, const T* d, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* drow = d + i * n;
    for (int j = 0; j < k; ++j) {
      const T w = a[i * k + j];
      if (w == T(0)) continue;
      T* crow = c + j * n;
      for (int col = 0; col < n; ++col) crow[col] += w * drow[col];
    }
  }
}

// c[M x K] += d[M x N] * x[K x N]^T
template <typename T>
void gemm_nt_acc(int m, int n, int k, const T* d, const T* x, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* drow = d + i * n;
    for (int j = 0; j < k; ++j) {
      const T* xrow = x + j * n;
      T acc = T(0);
      for (int col = 0; col < n; ++col) acc += drow[col] * xrow[col];
      c[i * k + j] += acc;
    }
  }
}

// Branch-free single-precision exp (Cephes polynomial, ~2 ulp).
inline float exp_approx(float x) {
  x = std::min(std::max(x, -87.0f), 88.0f);
  // Round to nearest with the 1.5 * 2^23 trick; std::floor does not vectorize.
  constexpr float kShifter = 12582912.0f;
  const float fn = (x * 1.44269504088896341f + kShifter) - kShifter;
  float r = x - fn * 0.693359375f;
  r = r - fn * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t bits = (static_cast<std::int32_t>(fn) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

inline float sigmoid(float x) { return 1.0f / (1.0f + exp_approx(-x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline float tanh_act(float x) { return 1.0f - 2.0f / (1.0f + exp_approx(2.0f * x)); }
inline double tanh_act(double x) { return std::tanh(x); }

}  // namespace smcpose::kernels
