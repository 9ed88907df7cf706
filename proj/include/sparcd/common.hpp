#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sparcd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Base error for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed files, invalid parameters, violated preconditions.
// The CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A region whose centered distance matrix has zero energy, so dCor is undefined.
class DegenerateRegionError : public Error {
 public:
  DegenerateRegionError(std::size_t region, std::size_t other, const std::string& what)
      : Error(what), region_(region), other_(other) {}

  std::size_t region() const noexcept { return region_; }
  std::size_t other() const noexcept { return other_; }

 private:
  std::size_t region_;
  std::size_t other_;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

inline double max_asymmetry(const Matrix& m) {
  if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace detail

}  // namespace sparcd
