#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace atlas
{
static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and written natively");

/// Thrown for malformed, truncated or version-mismatched files.
class FormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

namespace io
{
template <typename T>
void write_pod(std::ostream& out, const T& value)
{
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in)
{
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in)
  {
    throw FormatError("truncated file");
  }
  return value;
}

void write_magic(std::ostream& out, const char (&magic)[5]);
void expect_magic(std::istream& in, const char (&magic)[5]);
}  // namespace io

/// Row-major float32 table in the "ATLF" layout:
///   {magic "ATLF", u32 version, u32 count, u32 dim} then count*dim float32.
struct FloatTable
{
  static constexpr uint32_t kVersion = 1;

  uint32_t count = 0;
  uint32_t dim = 0;
  std::vector<float> values;

  Eigen::MatrixXd to_matrix() const;  // count x dim
  static FloatTable from_matrix(const Eigen::MatrixXd& rows);
};

void write_table(std::ostream& out, const FloatTable& table);
FloatTable read_table(std::istream& in);

void save_table(const std::filesystem::path& path, const FloatTable& table);
FloatTable load_table(const std::filesystem::path& path);

/// Corpus convenience: each row is one feature vector.
void save_corpus(const std::filesystem::path& path, const Eigen::MatrixXd& rows);
Eigen::MatrixXd load_corpus(const std::filesystem::path& path);

}  // namespace atlas
