#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "a3/rng.hpp"

namespace a3 {

// Ordered partition of positions {0..N-1}. Group k is predicted conditioned
// on the tokens of groups 0..k-1; positions inside one group are predicted
// independently of each other.
class Grouping {
 public:
  Grouping() = default;
  explicit Grouping(std::vector<std::vector<int>> groups) : groups_(std::move(groups)) {}

  const std::vector<std::vector<int>>& groups() const { return groups_; }
  std::size_t num_groups() const { return groups_.size(); }
  const std::vector<int>& operator[](std::size_t k) const { return groups_[k]; }

  // Total number of listed indices (equals N for a valid grouping).
  std::size_t num_positions() const;

  // group_ids()[i] = index of the group holding position i. Requires a valid
  // grouping over num_positions() positions.
  std::vector<int> group_ids() const;

  bool operator==(const Grouping&) const = default;

 private:
  std::vector<std::vector<int>> groups_;
};

struct ValidationReport {
  bool ok = true;
  std::string property;      // "empty-group", "out-of-range", "overlap", "uncovered"
  std::vector<int> indices;  // offending positions (or group indices for empty-group)

  explicit operator bool() const { return ok; }
  std::string message() const;
};

ValidationReport validate(const Grouping& g, std::size_t n);

// Throws ValidationError carrying the report message when g is not a
// partition of {0..n-1}.
void require_valid(const Grouping& g, std::size_t n);

Grouping make_singleton(std::size_t n);
Grouping make_fixed(std::size_t n, std::size_t group_size);
Grouping make_permuted(std::size_t n, std::size_t group_size, Rng& rng);

struct InfillSpec {
  std::vector<int> left;
  std::vector<int> middle;
  std::vector<int> right;
  std::size_t group_size = 1;
  // false: all of left+right is one context group.
  // true: left+right (ascending) is cut into chunks of group_size.
  bool split_context = false;
};

struct InfillGrouping {
  Grouping grouping;
  std::size_t k0 = 0;  // number of context groups; masked groups start here
};

InfillGrouping make_infill(const InfillSpec& spec);

// One group per line, space-separated indices, group order = line order.
// Blank lines and lines starting with '#' are skipped by the parser.
std::string to_text(const Grouping& g);
Grouping parse_grouping(std::string_view text);

}  // namespace a3
