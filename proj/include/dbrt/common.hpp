#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace dbrt {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Precondition violations (bad counts, ranges, ids).
struct InvalidParameter : Error {
  using Error::Error;
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
  using Error::Error;
};

// Config parsing/validation failures (exit code 2 in the CLI).
struct ConfigError : Error {
  using Error::Error;
};

// On-disk artifact problems.
struct CorruptFileError : Error {
  using Error::Error;
};
struct VersionMismatchError : Error {
  using Error::Error;
};
struct MissingArtifactError : Error {
  using Error::Error;
};

// Non-finite loss during training.
struct DivergenceError : Error {
  using Error::Error;
};

// A named view over one parameter (or gradient) tensor. Vectors are
// represented with cols == 1. Generic code (optimizer, serialization,
// finite differences) works on these; math code uses the typed structs.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

inline TensorRef tensor_ref(std::string name, Mat& m) {
  return TensorRef{std::move(name), m.data(), m.rows(), m.cols()};
}
inline TensorRef tensor_ref(std::string name, Vec& v) {
  return TensorRef{std::move(name), v.data(), v.size(), 1};
}

inline long total_size(const std::vector<TensorRef>& refs) {
  long n = 0;
  for (const auto& r : refs) n += static_cast<long>(r.size());
  return n;
}

}  // namespace dbrt
