#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "logitfuse/types.hpp"

namespace logitfuse {

enum class NpyDtype { f32, i64 };

struct NpyHeader {
  NpyDtype dtype = NpyDtype::f32;
  std::size_t ndim = 0;         // 1 or 2
  std::size_t rows = 0;         // shape[0]
  std::size_t cols = 1;         // shape[1] for 2-D, 1 for 1-D
  std::size_t data_offset = 0;  // payload start = magic + version + header text
};

struct NpyArray {
  NpyHeader header;
  std::vector<float> f32;         // payload when dtype == f32
  std::vector<std::int64_t> i64;  // payload when dtype == i64
};

// Parses the v1.0 header only; used to validate bundles without paying for
// payload reads.
NpyHeader peek_npy_header(const std::filesystem::path& path);

// Little-endian '<f4' / '<i8', C-order, 1-D or 2-D. Float payloads are
// rejected if they contain NaN or infinity.
NpyArray load_npy(const std::filesystem::path& path);

// 1-D arrays widen to an N x 1 matrix; requires a float32 payload.
Matrix2D to_matrix(const NpyArray& array);
LabelVector to_labels(const NpyArray& array);

Matrix2D load_matrix(const std::filesystem::path& path);
LabelVector load_labels(const std::filesystem::path& path);

// Writes '<f4' 2-D (matrices) or '<i8' 1-D (labels), header block padded to a
// 128-byte boundary (any multiple of 64 keeps numpy happy). Values are cast
// double -> float, so data that came from an npy file rewrites bit-identically.
void save_npy(const std::filesystem::path& path, const Matrix2D& matrix);
void save_npy(const std::filesystem::path& path, const LabelVector& labels);

}  // namespace logitfuse
