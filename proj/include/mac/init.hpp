#pragma once

#include <cstdint>
#include <string_view>

#include "mac/tensor.hpp"

namespace mac {

struct Fans {
  std::size_t in, out;
};

/// (input width, output width) for [out x in] matrices, (Cin*kh*kw, Cout*kh*kw)
/// for [Cout x Cin x kh x kw] kernels, (n, n) for vectors.
Fans xavier_fans(const Shape& shape);

/// sqrt(6 / (fan_in + fan_out))
double xavier_bound(const Fans& fans);

/// Uniform draws on [-a, a], a = xavier_bound. The stream is derived from
/// (seed, name), so the same pair always yields the same values.
template <typename T>
Tensor<T> xavier_init(const Shape& shape, std::uint64_t seed, std::string_view name);

}  // namespace mac
