#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace logitfuse {

std::string base64_encode(const std::uint8_t* data, std::size_t len);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Model parameters travel inside JSON as base64 of raw little-endian float32,
// which keeps save/load exact (doubles pass through a single f32 rounding).
std::string encode_f32_blob(const std::vector<double>& values);
std::vector<double> decode_f32_blob(const std::string& blob, std::size_t expected);

}  // namespace logitfuse
