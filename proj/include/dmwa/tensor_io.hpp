#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmwa/tensor.hpp"

namespace dmwa {

// n-dimensional float32 array as stored on disk.
//
// File layout (all little-endian):
//   "DMWA" | u32 version (=1) | u32 rank | u32 extent * rank | f32 * prod(extents)
struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> values;

  std::size_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

inline constexpr std::uint32_t kTensorFormatVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// Matrix <-> rank-2 tensor. Values are narrowed to float32 on the way out.
template <typename Scalar>
Tensor to_tensor(const Matrix<Scalar>& m) {
  Tensor t;
  t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.values.resize(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) t.values[i] = static_cast<float>(m.data()[i]);
  return t;
}

template <typename Scalar>
Matrix<Scalar> to_matrix(const Tensor& t) {
  if (t.shape.size() != 2) {
    throw DimensionError("expected a rank-2 tensor, got rank " + std::to_string(t.shape.size()));
  }
  Matrix<Scalar> m(t.shape[0], t.shape[1]);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(t.values[i]);
  return m;
}

}  // namespace dmwa
