#include <cmath>
#include <numbers>

#include "gbs/error.hpp"
#include "gbs/rng.hpp"

namespace gbs {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kCheckpoint: return "checkpoint error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace gbs
