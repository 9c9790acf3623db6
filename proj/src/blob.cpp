#include "logitfuse/blob.hpp"

#include <cstring>

#include "logitfuse/types.hpp"

namespace logitfuse {

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= len; i += 3) {
    const std::uint32_t word = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out.push_back(kAlphabet[(word >> 18) & 63]);
    out.push_back(kAlphabet[(word >> 12) & 63]);
    out.push_back(kAlphabet[(word >> 6) & 63]);
    out.push_back(kAlphabet[word & 63]);
  }
  const std::size_t rest = len - i;
  if (rest == 1) {
    const std::uint32_t word = data[i] << 16;
    out.push_back(kAlphabet[(word >> 18) & 63]);
    out.push_back(kAlphabet[(word >> 12) & 63]);
    out.append("==");
  } else if (rest == 2) {
    const std::uint32_t word = (data[i] << 16) | (data[i + 1] << 8);
    out.push_back(kAlphabet[(word >> 18) & 63]);
    out.push_back(kAlphabet[(word >> 12) & 63]);
    out.push_back(kAlphabet[(word >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0)
    throw Error(ErrorKind::schema_violation, "base64 blob length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        // '=' is legal only in the final two positions
        if (i + 4 != text.size() || k < 2) {
          throw Error(ErrorKind::schema_violation, "misplaced base64 padding");
        }
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw Error(ErrorKind::schema_violation, "misplaced base64 padding");
        vals[k] = decode_char(c);
        if (vals[k] < 0) throw Error(ErrorKind::schema_violation, "invalid base64 character");
      }
    }
    const std::uint32_t word = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back((word >> 16) & 0xff);
    if (pad < 2) out.push_back((word >> 8) & 0xff);
    if (pad < 1) out.push_back(word & 0xff);
  }
  return out;
}

std::string encode_f32_blob(const std::vector<double>& values) {
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + i * 4, &f, 4);
  }
  return base64_encode(bytes.data(), bytes.size());
}

std::vector<double> decode_f32_blob(const std::string& blob, std::size_t expected) {
  const std::vector<std::uint8_t> bytes = base64_decode(blob);
  if (bytes.size() != expected * 4)
    throw Error(ErrorKind::schema_violation,
                "parameter blob holds " + std::to_string(bytes.size() / 4) + " floats, expected " +
                    std::to_string(expected));
  std::vector<double> values(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * 4, 4);
    values[i] = f;
  }
  return values;
}

}  // namespace logitfuse
