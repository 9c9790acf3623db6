#include "logitfuse/npy.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace logitfuse {

static_assert(std::endian::native == std::endian::little,
              "npy payloads are read/written as raw little-endian words");
static_assert(sizeof(float) == 4 && sizeof(std::int64_t) == 8);

namespace {

constexpr char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};
constexpr std::size_t kHeaderAlign = 128;

[[noreturn]] void bad_header(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorKind::malformed_header, path.string() + ": " + why);
}

// Pulls the value following "'key':" out of the header dict. The writers we
// care about (numpy, this file) all emit the three standard keys.
std::string dict_value(const std::string& dict, const std::string& key,
                       const std::filesystem::path& path) {
  const std::string needle = "'" + key + "':";
  std::size_t pos = dict.find(needle);
  if (pos == std::string::npos) bad_header(path, "header missing key '" + key + "'");
  pos += needle.size();
  while (pos < dict.size() && dict[pos] == ' ') ++pos;
  std::size_t end = pos;
  if (pos < dict.size() && dict[pos] == '(') {
    end = dict.find(')', pos);
    if (end == std::string::npos) bad_header(path, "unterminated shape tuple");
    ++end;
  } else {
    while (end < dict.size() && dict[end] != ',' && dict[end] != '}') ++end;
  }
  return dict.substr(pos, end - pos);
}

std::vector<std::size_t> parse_shape(std::string text, const std::filesystem::path& path) {
  if (text.size() < 2 || text.front() != '(' || text.back() != ')')
    bad_header(path, "shape is not a tuple");
  text = text.substr(1, text.size() - 2);
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t begin = item.find_first_not_of(' ');
    if (begin == std::string::npos) continue;  // trailing comma of a 1-tuple
    std::size_t len = item.find_last_not_of(' ') - begin + 1;
    item = item.substr(begin, len);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      bad_header(path, "non-integer dimension in shape");
    dims.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return dims;
}

NpyHeader read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
    bad_header(path, "bad magic string");
  unsigned char version[2];
  if (!in.read(reinterpret_cast<char*>(version), 2)) bad_header(path, "truncated version");
  if (version[0] != 1 || version[1] != 0)
    bad_header(path,
               "unsupported format version " + std::to_string(version[0]) + "." +
                   std::to_string(version[1]));
  unsigned char len_bytes[2];
  if (!in.read(reinterpret_cast<char*>(len_bytes), 2)) bad_header(path, "truncated header length");
  const std::size_t header_len = len_bytes[0] | (std::size_t(len_bytes[1]) << 8);
  std::string dict(header_len, '\0');
  if (!in.read(dict.data(), static_cast<std::streamsize>(header_len)))
    bad_header(path, "truncated header dict");

  const std::string descr = dict_value(dict, "descr", path);
  const std::string order = dict_value(dict, "fortran_order", path);
  const std::vector<std::size_t> shape = parse_shape(dict_value(dict, "shape", path), path);

  if (order.find("False") == std::string::npos)
    bad_header(path, "fortran_order arrays are not supported");

  NpyHeader header;
  if (descr.find("'<f4'") != std::string::npos) {
    header.dtype = NpyDtype::f32;
  } else if (descr.find("'<i8'") != std::string::npos) {
    header.dtype = NpyDtype::i64;
  } else {
    throw Error(ErrorKind::unsupported_dtype,
                path.string() + ": dtype " + descr + " (want '<f4' or '<i8')");
  }
  if (shape.empty() || shape.size() > 2)
    bad_header(path, "expected a 1-D or 2-D array, got " + std::to_string(shape.size()) + "-D");
  header.ndim = shape.size();
  header.rows = shape[0];
  header.cols = shape.size() == 2 ? shape[1] : 1;
  header.data_offset = 6 + 2 + 2 + header_len;
  return header;
}

void write_header(std::ofstream& out, const std::string& descr, const std::string& shape) {
  std::string dict =
      "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " + shape + ", }";
  std::size_t total = 6 + 2 + 2 + dict.size() + 1;
  const std::size_t padded = (total + kHeaderAlign - 1) / kHeaderAlign * kHeaderAlign;
  dict.append(padded - total, ' ');
  dict.push_back('\n');

  out.write(kMagic, 6);
  const unsigned char version[2] = {1, 0};
  out.write(reinterpret_cast<const char*>(version), 2);
  const std::size_t header_len = dict.size();
  const unsigned char len_bytes[2] = {static_cast<unsigned char>(header_len & 0xff),
                                      static_cast<unsigned char>((header_len >> 8) & 0xff)};
  out.write(reinterpret_cast<const char*>(len_bytes), 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
}

}  // namespace

NpyHeader peek_npy_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + path.string());
  return read_header(in, path);
}

NpyArray load_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_failure, "cannot open " + path.string());
  NpyArray array;
  array.header = read_header(in, path);
  const std::size_t count = array.header.rows * array.header.cols;
  if (array.header.dtype == NpyDtype::f32) {
    array.f32.resize(count);
    if (!in.read(reinterpret_cast<char*>(array.f32.data()),
                 static_cast<std::streamsize>(count * 4)))
      bad_header(path, "payload shorter than shape implies");
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::isfinite(array.f32[i]))
        throw Error(ErrorKind::non_finite_value,
                    path.string() + ": non-finite value at flat index " + std::to_string(i));
    }
  } else {
    array.i64.resize(count);
    if (!in.read(reinterpret_cast<char*>(array.i64.data()),
                 static_cast<std::streamsize>(count * 8)))
      bad_header(path, "payload shorter than shape implies");
  }
  return array;
}

Matrix2D to_matrix(const NpyArray& array) {
  if (array.header.dtype != NpyDtype::f32)
    throw Error(ErrorKind::unsupported_dtype, "matrix payload must be float32");
  Matrix2D m(array.header.rows, array.header.cols);
  for (std::size_t i = 0; i < array.f32.size(); ++i) m.values[i] = array.f32[i];
  return m;
}

LabelVector to_labels(const NpyArray& array) {
  if (array.header.dtype != NpyDtype::i64)
    throw Error(ErrorKind::unsupported_dtype, "label payload must be int64");
  if (array.header.ndim != 1)
    throw Error(ErrorKind::malformed_header, "labels must be a 1-D array");
  return array.i64;
}

Matrix2D load_matrix(const std::filesystem::path& path) { return to_matrix(load_npy(path)); }

LabelVector load_labels(const std::filesystem::path& path) { return to_labels(load_npy(path)); }

void save_npy(const std::filesystem::path& path, const Matrix2D& matrix) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  write_header(out, "<f4",
               "(" + std::to_string(matrix.rows) + ", " + std::to_string(matrix.cols) + ")");
  std::vector<float> payload(matrix.values.size());
  for (std::size_t i = 0; i < payload.size(); ++i)
    payload[i] = static_cast<float>(matrix.values[i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * 4));
  if (!out) throw Error(ErrorKind::io_failure, "short write to " + path.string());
}

void save_npy(const std::filesystem::path& path, const LabelVector& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  write_header(out, "<i8", "(" + std::to_string(labels.size()) + ",)");
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size() * 8));
  if (!out) throw Error(ErrorKind::io_failure, "short write to " + path.string());
}

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io_failure: return "IoFailure";
    case ErrorKind::malformed_header: return "MalformedHeader";
    case ErrorKind::unsupported_dtype: return "UnsupportedDtype";
    case ErrorKind::non_finite_value: return "NonFiniteValue";
    case ErrorKind::schema_violation: return "SchemaViolation";
    case ErrorKind::duplicate_backbone_name: return "DuplicateBackboneName";
    case ErrorKind::unknown_backbone_name: return "UnknownBackboneName";
    case ErrorKind::empty_matrix: return "EmptyMatrix";
    case ErrorKind::empty_list: return "EmptyList";
    case ErrorKind::empty_union: return "EmptyUnion";
    case ErrorKind::empty_split: return "EmptySplit";
    case ErrorKind::empty_class_set: return "EmptyClassSet";
    case ErrorKind::length_mismatch: return "LengthMismatch";
    case ErrorKind::shape_mismatch: return "ShapeMismatch";
    case ErrorKind::dim_mismatch_on_load: return "DimMismatchOnLoad";
    case ErrorKind::too_many_backbones: return "TooManyBackbones";
    case ErrorKind::too_few_classes: return "TooFewClasses";
    case ErrorKind::zero_baseline: return "ZeroBaseline";
    case ErrorKind::degenerate_input: return "DegenerateInput";
    case ErrorKind::non_positive_temperature: return "NonPositiveTemperature";
    case ErrorKind::not_a_distribution: return "NotADistribution";
    case ErrorKind::non_finite_loss: return "NonFiniteLoss";
    case ErrorKind::missing_features: return "MissingFeatures";
    case ErrorKind::missing_combiner_state: return "MissingCombinerState";
    case ErrorKind::infeasible_rates: return "InfeasibleRates";
    case ErrorKind::usage: return "Usage";
  }
  return "Unknown";
}

}  // namespace logitfuse
