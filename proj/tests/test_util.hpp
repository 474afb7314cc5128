#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mac/rng.hpp"
#include "mac/spatial_birnn.hpp"
#include "oracles.hpp"
#include "mac/tensor.hpp"

namespace testing {

template <typename T = double>
mac::Tensor<T> random_tensor(mac::Rng& rng, mac::Shape shape, double scale = 1.0, bool requires_grad = false) {
  std::vector<T> v(mac::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(scale * rng.normal());
  return mac::Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
std::vector<T> values(const mac::Tensor<T>& t) {
  auto d = t.data();
  return {d.begin(), d.end()};
}

template <typename T>
bool bit_equal(const mac::Tensor<T>& a, const mac::Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

template <typename T>
double max_abs_diff(const mac::Tensor<T>& a, const mac::Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("mac_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline mac::LstmParams<double> random_lstm(mac::Rng& rng, std::size_t input, std::size_t hidden, double scale = 0.5) {
  auto w = [&] { return random_tensor(rng, {hidden, input}, scale); };
  auto u = [&] { return random_tensor(rng, {hidden, hidden}, scale); };
  auto b = [&] { return random_tensor(rng, {hidden}, scale); };
  return {w(), w(), w(), w(), u(), u(), u(), u(), b(), b(), b(), b()};
}

inline oracle::Matrix to_matrix(const mac::Tensord& t) {
  oracle::Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
  return m;
}

inline oracle::ScalarLstm to_scalar(const mac::LstmParams<double>& p) {
  oracle::ScalarLstm s;
  const mac::Tensord* w[] = {&p.w_f, &p.w_i, &p.w_o, &p.w_c};
  const mac::Tensord* u[] = {&p.u_f, &p.u_i, &p.u_o, &p.u_c};
  const mac::Tensord* b[] = {&p.b_f, &p.b_i, &p.b_o, &p.b_c};
  for (int g = 0; g < 4; ++g) {
    s.W[g] = to_matrix(*w[g]);
    s.U[g] = to_matrix(*u[g]);
    s.b[g] = values(*b[g]);
  }
  return s;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
