#include "atlas/feature_codec.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include <Eigen/SVD>

#include "atlas/binary_io.hpp"

namespace atlas
{
namespace
{
void require_finite(const MatX& m, const char* what)
{
  if (!m.allFinite())
  {
    throw CodecError(std::string(what) + " has non-finite entries");
  }
}

// Extend `rows` (orthonormal, possibly fewer than `target`) to `target`
// orthonormal rows using the standard basis as candidates.
MatX complete_orthonormal(const MatX& rows, int target, int dim)
{
  MatX out(target, dim);
  int filled = 0;
  for (int r = 0; r < rows.rows() && filled < target; ++r)
  {
    out.row(filled++) = rows.row(r);
  }
  for (int j = 0; j < dim && filled < target; ++j)
  {
    VecX candidate = VecX::Unit(dim, j);
    for (int pass = 0; pass < 2; ++pass)
    {
      for (int r = 0; r < filled; ++r)
      {
        candidate -= out.row(r).dot(candidate) * out.row(r).transpose();
      }
    }
    const double norm = candidate.norm();
    if (norm > 0.5)
    {
      out.row(filled++) = candidate / norm;
    }
  }
  return out;
}

// Modified Gram-Schmidt in place; rows keep their order and orientation.
void reorthonormalize(MatX& rows)
{
  for (int r = 0; r < rows.rows(); ++r)
  {
    for (int k = 0; k < r; ++k)
    {
      rows.row(r) -= rows.row(k).dot(rows.row(r)) * rows.row(k);
    }
    rows.row(r).normalize();
  }
}

// Deterministic sign: the largest-magnitude entry of each row is positive.
void flip_signs(MatX& rows)
{
  for (int r = 0; r < rows.rows(); ++r)
  {
    Eigen::Index arg = 0;
    rows.row(r).cwiseAbs().maxCoeff(&arg);
    if (rows(r, arg) < 0.0)
    {
      rows.row(r) *= -1.0;
    }
  }
}

MatX prepare_batch(const PcaBasis& basis, const MatX& batch)
{
  if (batch.rows() == 0)
  {
    throw CodecError("empty batch");
  }
  if (batch.cols() != basis.feature_dim())
  {
    throw CodecError("batch dimension " + std::to_string(batch.cols()) +
                     " does not match basis dimension " +
                     std::to_string(basis.feature_dim()));
  }
  require_finite(batch, "batch");
  if (batch.cwiseAbs().maxCoeff() == 0.0)
  {
    throw CodecError("batch contains only zero vectors (degenerate covariance)");
  }
  if (!basis.normalize_inputs)
  {
    return batch;
  }
  MatX out = batch;
  for (Eigen::Index r = 0; r < out.rows(); ++r)
  {
    const double norm = out.row(r).norm();
    if (norm == 0.0)
    {
      throw CodecError("cannot normalize a zero feature vector");
    }
    out.row(r) /= norm;
  }
  return out;
}
}  // namespace

VecX PcaBasis::explained_variance() const
{
  if (samples_seen < 2)
  {
    return VecX::Zero(singular_values.size());
  }
  return singular_values.array().square() / static_cast<double>(samples_seen - 1);
}

PcaBasis make_basis(int n_features, int n_components, bool normalize_inputs)
{
  if (n_features <= 0 || n_components <= 0 || n_components > n_features)
  {
    throw CodecError("require 0 < n_components <= n_features");
  }
  PcaBasis basis;
  basis.mean = VecX::Zero(n_features);
  basis.components = MatX::Identity(n_components, n_features);
  basis.singular_values = VecX::Zero(n_components);
  basis.normalize_inputs = normalize_inputs;
  return basis;
}

PcaBasis fit_incremental(const PcaBasis& basis, const MatX& raw_batch)
{
  const MatX batch = prepare_batch(basis, raw_batch);
  const int n_c = basis.compressed_dim();
  const int n_f = basis.feature_dim();
  const auto n_batch = static_cast<double>(batch.rows());
  const auto n_seen = static_cast<double>(basis.samples_seen);
  const double n_total = n_seen + n_batch;

  const VecX batch_mean = batch.colwise().mean().transpose();
  MatX centered = batch.rowwise() - batch_mean.transpose();

  PcaBasis next = basis;
  next.samples_seen = basis.samples_seen + batch.rows();

  MatX stacked;
  if (basis.samples_seen == 0)
  {
    stacked = std::move(centered);
    next.mean = batch_mean;
  }
  else
  {
    stacked.resize(n_c + batch.rows() + 1, n_f);
    stacked.topRows(n_c) = basis.singular_values.asDiagonal() * basis.components;
    stacked.middleRows(n_c, batch.rows()) = centered;
    stacked.bottomRows(1) =
        std::sqrt(n_seen * n_batch / n_total) * (basis.mean - batch_mean).transpose();
    next.mean = (n_seen * basis.mean + n_batch * batch_mean) / n_total;
  }

  Eigen::BDCSVD<MatX> svd(stacked, Eigen::ComputeThinV);
  const MatX vt = svd.matrixV().transpose();
  const VecX& sv = svd.singularValues();
  const int available = std::min<int>(n_c, static_cast<int>(vt.rows()));

  MatX top = vt.topRows(available);
  flip_signs(top);
  next.components = complete_orthonormal(top, n_c, n_f);
  next.singular_values = VecX::Zero(n_c);
  next.singular_values.head(available) = sv.head(available);
  return next;
}

PcaBasis fit_corpus(PcaBasis basis, const MatX& corpus, int batch_size)
{
  if (batch_size <= 0)
  {
    throw CodecError("batch_size must be positive");
  }
  for (Eigen::Index start = 0; start < corpus.rows(); start += batch_size)
  {
    const Eigen::Index n = std::min<Eigen::Index>(batch_size, corpus.rows() - start);
    basis = fit_incremental(basis, corpus.middleRows(start, n));
  }
  return basis;
}

VecX normalized(const VecX& f)
{
  if (!f.allFinite())
  {
    throw CodecError("feature has non-finite entries");
  }
  const double norm = f.norm();
  if (norm == 0.0)
  {
    throw CodecError("cannot normalize a zero feature vector");
  }
  return f / norm;
}

VecX project(const PcaBasis& basis, const VecX& f)
{
  if (!basis.fitted())
  {
    throw CodecError("projecting with an unfitted basis");
  }
  if (f.size() != basis.feature_dim())
  {
    throw CodecError("feature length does not match basis");
  }
  return basis.components * (f - basis.mean);
}

VecX lift(const PcaBasis& basis, const VecX& c)
{
  if (!basis.fitted())
  {
    throw CodecError("lifting with an unfitted basis");
  }
  if (c.size() != basis.compressed_dim())
  {
    throw CodecError("compressed feature length does not match basis");
  }
  return basis.mean + basis.components.transpose() * c;
}

VecX encode(const PcaBasis& basis, const VecX& f)
{
  return project(basis, basis.normalize_inputs ? normalized(f) : f);
}

double cosine(const VecX& a, const VecX& b)
{
  if (a.size() != b.size())
  {
    throw CodecError("cosine of vectors with different lengths");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0)
  {
    throw CodecError("cosine of a zero-norm vector");
  }
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double relevancy(const VecX& feature, const VecX& task)
{
  return cosine(feature, task);
}

double relevancy(const VecX& compressed, const VecX& task, const PcaBasis& basis)
{
  return cosine(lift(basis, compressed), task);
}

RelevancyQuery::RelevancyQuery(const PcaBasis& basis, const VecX& task)
{
  if (!basis.fitted())
  {
    throw CodecError("relevancy query with an unfitted basis");
  }
  if (task.size() != basis.feature_dim())
  {
    throw CodecError("task embedding length does not match basis");
  }
  task_norm_ = task.norm();
  if (task_norm_ == 0.0)
  {
    throw CodecError("task embedding has zero norm");
  }
  task_in_basis_ = basis.components * task;
  mean_in_basis_ = basis.components * basis.mean;
  mean_dot_task_ = basis.mean.dot(task);
  mean_norm_sq_ = basis.mean.squaredNorm();
}

double RelevancyQuery::operator()(const VecX& compressed) const
{
  if (compressed.size() != task_in_basis_.size())
  {
    throw CodecError("compressed feature length does not match basis");
  }
  return std::clamp(evaluate(compressed), -1.0, 1.0);
}

void save_basis(const std::filesystem::path& path, const PcaBasis& basis)
{
  MatX rows(basis.compressed_dim() + 1, basis.feature_dim());
  rows.row(0) = basis.mean.transpose();
  rows.bottomRows(basis.compressed_dim()) = basis.components;

  std::ofstream out(path, std::ios::binary);
  if (!out)
  {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  write_table(out, FloatTable::from_matrix(rows));
  io::write_pod<uint64_t>(out, static_cast<uint64_t>(basis.samples_seen));
  io::write_pod<uint8_t>(out, basis.normalize_inputs ? 1 : 0);
  for (int i = 0; i < basis.compressed_dim(); ++i)
  {
    io::write_pod<float>(out, static_cast<float>(basis.singular_values(i)));
  }
}

PcaBasis load_basis(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw std::runtime_error("cannot open " + path.string());
  }
  const FloatTable table = read_table(in);
  if (table.count < 2 || table.dim < table.count - 1)
  {
    throw FormatError("basis table has an invalid shape");
  }
  const MatX rows = table.to_matrix();
  PcaBasis basis;
  basis.mean = rows.row(0).transpose();
  basis.components = rows.bottomRows(table.count - 1);
  // float32 storage perturbs orthonormality at ~1e-7; restore it exactly.
  reorthonormalize(basis.components);
  basis.samples_seen = static_cast<int64_t>(io::read_pod<uint64_t>(in));
  basis.normalize_inputs = io::read_pod<uint8_t>(in) != 0;
  basis.singular_values.resize(basis.components.rows());
  for (Eigen::Index i = 0; i < basis.singular_values.size(); ++i)
  {
    basis.singular_values(i) = io::read_pod<float>(in);
  }
  return basis;
}

}  // namespace atlas
