#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "a3/grouping.hpp"

namespace a3 {

// Row-major boolean matrix; true = attention allowed.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { data_[i * cols_ + j] = v ? 1 : 0; }
  const std::uint8_t* row(std::size_t i) const { return data_.data() + i * cols_; }

  bool operator==(const BoolMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> data_;
};

// With BOS, index 0 is a sentinel group ordered before every group and
// position i of the grouping maps to index i + 1.
struct MaskPair {
  BoolMatrix content;
  BoolMatrix query;
  bool with_bos = true;
};

// content(i, j) = group(j) <= group(i)
BoolMatrix content_mask(const Grouping& g, bool with_bos);

// query(i, j) = group(j) < group(i). Without BOS the first group's rows are
// all false; their indices are appended to *degenerate_rows when given.
BoolMatrix query_mask(const Grouping& g, bool with_bos, std::vector<int>* degenerate_rows = nullptr);

MaskPair make_mask_pair(const Grouping& g, bool with_bos);

struct FlowReport {
  bool ok = true;
  std::string stream;  // "content" or "query"
  std::size_t row = 0;
  std::size_t col = 0;
  bool expected = false;
  bool actual = false;

  explicit operator bool() const { return ok; }
  std::string message() const;
};

// Recomputes both masks from g by definition and compares element-wise.
// Throws ShapeError when the matrices do not match g's length (+BOS).
FlowReport check_flow(const MaskPair& mp, const Grouping& g);

// '#' allowed, '.' blocked; one row per line.
std::string render(const BoolMatrix& m);

}  // namespace a3
