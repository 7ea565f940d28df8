#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "atlas/types.hpp"

namespace atlas
{
/// Raised when a feature or basis has the wrong length, a zero norm or a
/// degenerate batch is passed to the codec.
class CodecError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Incremental PCA basis for language features.
///
/// `components` holds N_c orthonormal rows of length N_f. `singular_values`
/// are those of the centered data seen so far and are what makes the next
/// incremental update possible. An unfitted basis has samples_seen == 0.
struct PcaBasis
{
  VecX mean;
  MatX components;
  VecX singular_values;
  int64_t samples_seen = 0;
  bool normalize_inputs = true;

  int feature_dim() const { return static_cast<int>(components.cols()); }
  int compressed_dim() const { return static_cast<int>(components.rows()); }
  bool fitted() const { return samples_seen > 0; }

  /// Variance along each component, singular_values^2 / (n - 1).
  VecX explained_variance() const;
};

/// Empty basis with zero mean and an arbitrary (identity-prefix) orthonormal
/// frame. Requires 0 < n_components <= n_features.
PcaBasis make_basis(int n_features, int n_components, bool normalize_inputs = true);

/// Mean-and-subspace update with one mini-batch (rows are feature vectors).
/// Returns a new basis; the input is not modified.
PcaBasis fit_incremental(const PcaBasis& basis, const MatX& batch);

/// Convenience: feed `corpus` in consecutive batches of `batch_size` rows.
PcaBasis fit_corpus(PcaBasis basis, const MatX& corpus, int batch_size);

/// Unit-norm copy; throws CodecError for a zero or non-finite vector.
VecX normalized(const VecX& f);

/// components * (f - mean). Pure affine map; see encode() for the
/// normalizing variant used on raw sensor features.
VecX project(const PcaBasis& basis, const VecX& f);

/// mean + components^T * c.
VecX lift(const PcaBasis& basis, const VecX& c);

/// project(normalized(f)) when the basis normalizes inputs, else project(f).
VecX encode(const PcaBasis& basis, const VecX& f);

/// Cosine similarity; throws CodecError on zero-norm input.
double cosine(const VecX& a, const VecX& b);

/// Cosine between a raw (full dimension) feature and the task.
double relevancy(const VecX& feature, const VecX& task);

/// Cosine between lift(compressed) and the task.
double relevancy(const VecX& compressed, const VecX& task, const PcaBasis& basis);

/// Task relevancy evaluated without materializing the lifted feature.
///
/// With orthonormal rows C and mean m:
///   <m + C^T c, t>   = <m, t> + <c, C t>
///   |m + C^T c|^2    = |m|^2 + 2 <c, C m> + |c|^2
/// so a query costs O(N_c) per feature instead of O(N_f).
class RelevancyQuery
{
public:
  RelevancyQuery(const PcaBasis& basis, const VecX& task);

  double operator()(const VecX& compressed) const;

  int compressed_dim() const { return static_cast<int>(task_in_basis_.size()); }

  template <typename Derived>
  double evaluate(const Eigen::MatrixBase<Derived>& compressed) const
  {
    const double dot = mean_dot_task_ + compressed.dot(task_in_basis_);
    const double norm_sq =
        mean_norm_sq_ + 2.0 * compressed.dot(mean_in_basis_) + compressed.squaredNorm();
    if (norm_sq <= 0.0)
    {
      throw CodecError("lifted feature has zero norm");
    }
    return dot / (std::sqrt(norm_sq) * task_norm_);
  }

private:
  VecX task_in_basis_;
  VecX mean_in_basis_;
  double mean_dot_task_ = 0.0;
  double mean_norm_sq_ = 0.0;
  double task_norm_ = 0.0;
};

/// Basis file: ATLF table with count = N_c + 1 rows (mean, then components),
/// followed by a trailer {u64 samples_seen, u8 normalize, N_c float32
/// singular values}.
void save_basis(const std::filesystem::path& path, const PcaBasis& basis);
PcaBasis load_basis(const std::filesystem::path& path);

}  // namespace atlas
