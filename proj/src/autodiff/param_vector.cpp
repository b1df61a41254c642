#include "hjbac/autodiff/param_vector.hpp"

#include <stdexcept>

namespace hjbac::ad {

ParamVector::Builder& ParamVector::Builder::add(std::string name, Eigen::Index rows,
                                                Eigen::Index cols) {
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("ParamVector block '" + name + "' must have positive shape");
  }
  ParamBlock b{std::move(name), total_, rows, cols};
  total_ += b.size();
  blocks_.push_back(std::move(b));
  return *this;
}

ParamVector ParamVector::Builder::build() const {
  ParamVector p;
  p.blocks_ = blocks_;
  p.values_ = Vector::Zero(static_cast<Eigen::Index>(total_));
  return p;
}

Eigen::Map<const Matrix> ParamVector::view(std::size_t i) const {
  const ParamBlock& b = blocks_.at(i);
  return {values_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<Matrix> ParamVector::view(std::size_t i) {
  const ParamBlock& b = blocks_.at(i);
  return {values_.data() + b.offset, b.rows, b.cols};
}

void ParamVector::assign(const Vector& v) {
  if (v.size() != values_.size()) {
    throw std::invalid_argument("ParamVector::assign: length mismatch");
  }
  values_ = v;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) {
      return false;
    }
  }
  return true;
}

}  // namespace hjbac::ad
