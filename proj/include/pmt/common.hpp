#pragma once

#include <cstdint>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pmt {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

// All library errors carry a short machine-parsable slug plus free-form
// detail; the CLI prints "error: <slug> <detail>" on one stderr line.
class Error : public std::runtime_error {
 public:
  Error(std::string slug, const std::string& detail)
      : std::runtime_error(detail.empty() ? slug : slug + " " + detail),
        slug_(std::move(slug)) {}
  const std::string& slug() const { return slug_; }

 private:
  std::string slug_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& detail)
      : Error("dimension-mismatch", detail) {}
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& slug, const std::string& detail)
      : Error(slug, detail) {}
  explicit ConfigError(const std::string& detail)
      : Error("invalid-config", detail) {}
};

class ContractError : public Error {
 public:
  ContractError(const std::string& slug, const std::string& detail)
      : Error(slug, detail) {}
};

class IoError : public Error {
 public:
  IoError(const std::string& slug, const std::string& detail)
      : Error(slug, detail) {}
};

// Raised when a verification routine cannot produce a valid verdict
// (e.g. the function under gradient check is not deterministic).
class CheckError : public Error {
 public:
  explicit CheckError(const std::string& detail)
      : Error("check-invalid", detail) {}
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(const std::string& detail)
      : Error("non-finite-loss", detail) {}
};

// Thread budget for internal data parallelism. PMTRANS_THREADS caps it;
// default is the hardware core count.
inline int thread_count() {
  static const int n = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("PMTRANS_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) return static_cast<int>(v);
    }
    return hw;
  }();
  return n;
}

}  // namespace pmt
