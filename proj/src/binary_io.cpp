#include "atlas/binary_io.hpp"

#include <fstream>

namespace atlas
{
namespace io
{
void write_magic(std::ostream& out, const char (&magic)[5])
{
  out.write(magic, 4);
}

void expect_magic(std::istream& in, const char (&magic)[5])
{
  char got[4] = {};
  in.read(got, 4);
  if (!in)
  {
    throw FormatError("truncated file");
  }
  if (std::memcmp(got, magic, 4) != 0)
  {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
}
}  // namespace io

Eigen::MatrixXd FloatTable::to_matrix() const
{
  Eigen::MatrixXd rows(count, dim);
  for (uint32_t r = 0; r < count; ++r)
  {
    for (uint32_t c = 0; c < dim; ++c)
    {
      rows(r, c) = values[static_cast<size_t>(r) * dim + c];
    }
  }
  return rows;
}

FloatTable FloatTable::from_matrix(const Eigen::MatrixXd& rows)
{
  FloatTable table;
  table.count = static_cast<uint32_t>(rows.rows());
  table.dim = static_cast<uint32_t>(rows.cols());
  table.values.resize(static_cast<size_t>(table.count) * table.dim);
  for (uint32_t r = 0; r < table.count; ++r)
  {
    for (uint32_t c = 0; c < table.dim; ++c)
    {
      table.values[static_cast<size_t>(r) * table.dim + c] =
          static_cast<float>(rows(r, c));
    }
  }
  return table;
}

void write_table(std::ostream& out, const FloatTable& table)
{
  if (table.values.size() != static_cast<size_t>(table.count) * table.dim)
  {
    throw std::invalid_argument("table payload does not match count*dim");
  }
  io::write_magic(out, "ATLF");
  io::write_pod<uint32_t>(out, FloatTable::kVersion);
  io::write_pod<uint32_t>(out, table.count);
  io::write_pod<uint32_t>(out, table.dim);
  out.write(reinterpret_cast<const char*>(table.values.data()),
            static_cast<std::streamsize>(table.values.size() * sizeof(float)));
}

FloatTable read_table(std::istream& in)
{
  io::expect_magic(in, "ATLF");
  const auto version = io::read_pod<uint32_t>(in);
  if (version != FloatTable::kVersion)
  {
    throw FormatError("unsupported ATLF version " + std::to_string(version));
  }
  FloatTable table;
  table.count = io::read_pod<uint32_t>(in);
  table.dim = io::read_pod<uint32_t>(in);
  table.values.resize(static_cast<size_t>(table.count) * table.dim);
  in.read(reinterpret_cast<char*>(table.values.data()),
          static_cast<std::streamsize>(table.values.size() * sizeof(float)));
  if (!in)
  {
    throw FormatError("truncated ATLF payload");
  }
  return table;
}

void save_table(const std::filesystem::path& path, const FloatTable& table)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
  {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  write_table(out, table);
}

FloatTable load_table(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw std::runtime_error("cannot open " + path.string());
  }
  return read_table(in);
}

void save_corpus(const std::filesystem::path& path, const Eigen::MatrixXd& rows)
{
  save_table(path, FloatTable::from_matrix(rows));
}

Eigen::MatrixXd load_corpus(const std::filesystem::path& path)
{
  return load_table(path).to_matrix();
}

}  // namespace atlas
