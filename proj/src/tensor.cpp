#include "flowlift/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "flowlift/error.hpp"

namespace flowlift {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_product(shape_) == data_.size(), ErrorCode::kShapeMismatch,
          "tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + shape_string());
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorCode::kShapeMismatch, "ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::from_matrix(const RowMatrix& m) {
  Tensor t = matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  t.as_matrix() = m;
  return t;
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() <= 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorCode::kShapeMismatch,
          "item() on tensor of shape " + shape_string());
  return data_[0];
}

ConstMatrixMap Tensor::as_matrix() const {
  return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

MatrixMap Tensor::as_matrix() {
  return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ']';
  return os.str();
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kBehindCamera: return "point behind camera";
    case ErrorCode::kDegenerate: return "degenerate input";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kMalformedHeader: return "malformed header";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kUnsupportedVersion: return "unsupported version";
    case ErrorCode::kSkeletonMismatch: return "skeleton mismatch";
    case ErrorCode::kMaxRetries: return "retry limit exceeded";
  }
  return "unknown";
}

}  // namespace flowlift
