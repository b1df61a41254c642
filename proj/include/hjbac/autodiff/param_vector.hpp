#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hjbac::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One named block (a weight matrix or a bias column) inside a ParamVector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

/// Flat float64 storage with a fixed list of column-major matrix views.
///
/// Blocks tile the storage exactly in the order they were added; the layout
/// is frozen once the vector is built.
class ParamVector {
 public:
  class Builder {
   public:
    Builder& add(std::string name, Eigen::Index rows, Eigen::Index cols);
    ParamVector build() const;

   private:
    std::vector<ParamBlock> blocks_;
    std::size_t total_ = 0;
  };

  ParamVector() = default;

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  std::size_t block_count() const { return blocks_.size(); }
  const ParamBlock& block(std::size_t i) const { return blocks_.at(i); }
  const std::vector<ParamBlock>& layout() const { return blocks_; }

  Eigen::Map<const Matrix> view(std::size_t i) const;
  Eigen::Map<Matrix> view(std::size_t i);

  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  /// Replaces every value; throws std::invalid_argument on a length mismatch.
  void assign(const Vector& v);

  bool same_layout(const ParamVector& other) const;

 private:
  std::vector<ParamBlock> blocks_;
  Vector values_;
};

}  // namespace hjbac::ad
