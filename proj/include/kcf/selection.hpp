#pragma once

#include <string>
#include <vector>

#include "kcf/errors.hpp"
#include "kcf/tensor_algebra.hpp"

namespace kcf {

/// Binary row selector: each row has exactly one unit entry.
class SelectionMatrix {
 public:
  SelectionMatrix() = default;

  explicit SelectionMatrix(const Matrix& s) : m_(s) {
    for (Index i = 0; i < s.rows(); ++i) {
      Index ones_in_row = 0;
      for (Index j = 0; j < s.cols(); ++j) {
        const double v = s(i, j);
        if (v != 0.0 && v != 1.0) throw DimensionError("SelectionMatrix: entries must be 0 or 1");
        if (v == 1.0) {
          ++ones_in_row;
          indices_.push_back(j);
        }
      }
      if (ones_in_row != 1) {
        throw DimensionError("SelectionMatrix: row " + std::to_string(i) +
                             " must contain exactly one 1");
      }
    }
  }

  static SelectionMatrix from_indices(const std::vector<Index>& indices, Index cols) {
    Matrix s = Matrix::Zero(static_cast<Index>(indices.size()), cols);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] < 0 || indices[r] >= cols) throw DimensionError("SelectionMatrix: index");
      s(static_cast<Index>(r), indices[r]) = 1.0;
    }
    return SelectionMatrix(s);
  }

  static SelectionMatrix identity(Index n) { return SelectionMatrix(Matrix::Identity(n, n)); }

  static SelectionMatrix from_mask(const std::vector<bool>& mask) {
    std::vector<Index> idx;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) idx.push_back(static_cast<Index>(i));
    }
    return from_indices(idx, static_cast<Index>(mask.size()));
  }

  const Matrix& matrix() const { return m_; }
  Index rows() const { return m_.rows(); }
  Index cols() const { return m_.cols(); }
  /// Column picked by each row.
  const std::vector<Index>& indices() const { return indices_; }

  Vector apply(const Vector& psi) const {
    Vector out(rows());
    for (Index r = 0; r < rows(); ++r) out(r) = psi(indices_[static_cast<std::size_t>(r)]);
    return out;
  }

 private:
  Matrix m_;
  std::vector<Index> indices_;
};

}  // namespace kcf
