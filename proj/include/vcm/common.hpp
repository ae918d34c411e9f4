#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace vcm {

using Eigen::ArrayXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Error categories map onto CLI exit codes: usage 1, data 2, numerical 3.
enum class ErrorKind { Usage = 1, Data = 2, Numerical = 3 };

class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind)
  {
  }
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

struct UsageError : Error
{
  explicit UsageError(const std::string &w) : Error(ErrorKind::Usage, w) {}
};

struct DataError : Error
{
  explicit DataError(const std::string &w) : Error(ErrorKind::Data, w) {}
};

struct NumericalError : Error
{
  explicit NumericalError(const std::string &w) : Error(ErrorKind::Numerical, w) {}
};

// Deterministic seed derivation. Every random stream in the toolkit is
// derived from one master seed through these two functions.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept
{
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Per-purpose seed: hash(master, tag, index).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                    std::uint64_t index = 0) noexcept
{
  return splitmix64(splitmix64(master ^ fnv1a64(tag)) + index);
}

} // namespace vcm
