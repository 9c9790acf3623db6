#pragma once

// Shared scaffolding for the unit suites: throwaway directories, random
// stacks, and a tiny subprocess wrapper for the CLI tests.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "logitfuse/rng.hpp"
#include "logitfuse/types.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Self-deleting temp directory, one per test case that touches disk.
class TmpDir {
 public:
  explicit TmpDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("logitfuse_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TmpDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TmpDir(const TmpDir&) = delete;
  TmpDir& operator=(const TmpDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  fs::path path_;
};

inline logitfuse::Matrix2D random_matrix(std::size_t rows, std::size_t cols,
                                         logitfuse::Rng& rng, double scale = 1.0) {
  logitfuse::Matrix2D m(rows, cols);
  for (double& v : m.values) v = scale * rng.normal();
  return m;
}

inline logitfuse::LogitStack random_stack(std::size_t backbones, std::size_t rows,
                                          std::size_t classes, logitfuse::Rng& rng) {
  logitfuse::LogitStack stack;
  for (std::size_t b = 0; b < backbones; ++b) {
    stack.names.push_back("bb" + std::to_string(b));
    stack.logits.push_back(random_matrix(rows, classes, rng));
  }
  for (std::size_t r = 0; r < rows; ++r)
    stack.labels.push_back(static_cast<std::int64_t>(rng.index(classes)));
  return stack;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline bool same_bytes(const fs::path& a, const fs::path& b) {
  return read_file(a) == read_file(b);
}

// Runs `cmd`, captures stdout into *out when asked, returns the exit status.
inline int run_cmd(const std::string& cmd, std::string* out = nullptr,
                   std::string* err = nullptr) {
  static int counter = 0;
  const fs::path out_file =
      fs::temp_directory_path() / ("lgf_out_" + std::to_string(::getpid()) + "_" +
                                   std::to_string(counter));
  const fs::path err_file =
      fs::temp_directory_path() / ("lgf_err_" + std::to_string(::getpid()) + "_" +
                                   std::to_string(counter));
  ++counter;
  const std::string full =
      cmd + " > " + out_file.string() + " 2> " + err_file.string();
  const int status = std::system(full.c_str());
  if (out) *out = read_file(out_file);
  if (err) *err = read_file(err_file);
  std::error_code ec;
  fs::remove(out_file, ec);
  fs::remove(err_file, ec);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace testutil
