#include "mac/init.hpp"

#include <cmath>

#include "mac/errors.hpp"
#include "mac/rng.hpp"

namespace mac {

Fans xavier_fans(const Shape& shape) {
  switch (shape.size()) {
    case 1:
      return {shape[0], shape[0]};
    case 2:
      return {shape[1], shape[0]};
    case 4: {
      const std::size_t receptive = shape[2] * shape[3];
      return {shape[1] * receptive, shape[0] * receptive};
    }
    default:
      throw DimensionError("xavier_init: no fan convention for shape " + shape_str(shape));
  }
}

double xavier_bound(const Fans& fans) {
  return std::sqrt(6.0 / static_cast<double>(fans.in + fans.out));
}

template <typename T>
Tensor<T> xavier_init(const Shape& shape, std::uint64_t seed, std::string_view name) {
  const double a = xavier_bound(xavier_fans(shape));
  Rng rng(derive_seed(seed, name));
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.uniform(-a, a));
  return Tensor<T>::from(shape, std::move(values), true);
}

template Tensor<float> xavier_init<float>(const Shape&, std::uint64_t, std::string_view);
template Tensor<double> xavier_init<double>(const Shape&, std::uint64_t, std::string_view);

}  // namespace mac
