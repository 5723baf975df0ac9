#include "a3/grouping.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

#include "a3/error.hpp"

namespace a3 {

std::size_t Grouping::num_positions() const {
  std::size_t n = 0;
  for (const auto& grp : groups_) n += grp.size();
  return n;
}

std::vector<int> Grouping::group_ids() const {
  std::vector<int> ids(num_positions(), -1);
  for (std::size_t k = 0; k < groups_.size(); ++k) {
    for (int i : groups_[k]) ids.at(static_cast<std::size_t>(i)) = static_cast<int>(k);
  }
  return ids;
}

std::string ValidationReport::message() const {
  if (ok) return "ok";
  std::ostringstream os;
  os << property << ":";
  for (int i : indices) os << ' ' << i;
  return os.str();
}

ValidationReport validate(const Grouping& g, std::size_t n) {
  ValidationReport report;
  std::vector<int> seen(n, 0);
  std::vector<int> empty, out_of_range, overlap;
  for (std::size_t k = 0; k < g.num_groups(); ++k) {
    if (g[k].empty()) empty.push_back(static_cast<int>(k));
    for (int i : g[k]) {
      if (i < 0 || static_cast<std::size_t>(i) >= n) {
        out_of_range.push_back(i);
      } else if (seen[static_cast<std::size_t>(i)]++ == 1) {
        overlap.push_back(i);
      }
    }
  }
  auto fail = [&](const char* property, std::vector<int> indices) {
    report.ok = false;
    report.property = property;
    std::sort(indices.begin(), indices.end());
    report.indices = std::move(indices);
    return report;
  };
  if (!empty.empty()) return fail("empty-group", std::move(empty));
  if (!out_of_range.empty()) return fail("out-of-range", std::move(out_of_range));
  if (!overlap.empty()) return fail("overlap", std::move(overlap));
  std::vector<int> uncovered;
  for (std::size_t i = 0; i < n; ++i) {
    if (seen[i] == 0) uncovered.push_back(static_cast<int>(i));
  }
  if (!uncovered.empty()) return fail("uncovered", std::move(uncovered));
  if (n == 0) return fail("uncovered", {});
  return report;
}

void require_valid(const Grouping& g, std::size_t n) {
  if (auto report = validate(g, n); !report) {
    throw ValidationError("invalid grouping over " + std::to_string(n) +
                          " positions: " + report.message());
  }
}

Grouping make_singleton(std::size_t n) { return make_fixed(n, 1); }

Grouping make_fixed(std::size_t n, std::size_t group_size) {
  if (n == 0) throw LengthError("grouping length must be positive");
  if (group_size == 0) throw ValidationError("group size must be positive");
  std::vector<std::vector<int>> groups;
  groups.reserve((n + group_size - 1) / group_size);
  for (std::size_t start = 0; start < n; start += group_size) {
    auto& grp = groups.emplace_back();
    for (std::size_t i = start; i < std::min(n, start + group_size); ++i) {
      grp.push_back(static_cast<int>(i));
    }
  }
  return Grouping(std::move(groups));
}

Grouping make_permuted(std::size_t n, std::size_t group_size, Rng& rng) {
  if (n == 0) throw LengthError("grouping length must be positive");
  if (group_size == 0) throw ValidationError("group size must be positive");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<int>(perm));
  std::vector<std::vector<int>> groups;
  for (std::size_t start = 0; start < n; start += group_size) {
    const auto stop = std::min(n, start + group_size);
    groups.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                        perm.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return Grouping(std::move(groups));
}

InfillGrouping make_infill(const InfillSpec& spec) {
  if (spec.middle.empty()) throw ValidationError("infill spec: masked span is empty");
  if (spec.group_size == 0) throw ValidationError("infill spec: group size must be positive");

  std::vector<int> context(spec.left);
  context.insert(context.end(), spec.right.begin(), spec.right.end());
  std::sort(context.begin(), context.end());
  std::vector<int> middle(spec.middle);
  std::sort(middle.begin(), middle.end());

  std::vector<std::vector<int>> groups;
  if (!context.empty()) {
    if (spec.split_context) {
      for (std::size_t start = 0; start < context.size(); start += spec.group_size) {
        const auto stop = std::min(context.size(), start + spec.group_size);
        groups.emplace_back(context.begin() + static_cast<std::ptrdiff_t>(start),
                            context.begin() + static_cast<std::ptrdiff_t>(stop));
      }
    } else {
      groups.push_back(context);
    }
  }
  const std::size_t k0 = groups.size();
  for (std::size_t start = 0; start < middle.size(); start += spec.group_size) {
    const auto stop = std::min(middle.size(), start + spec.group_size);
    groups.emplace_back(middle.begin() + static_cast<std::ptrdiff_t>(start),
                        middle.begin() + static_cast<std::ptrdiff_t>(stop));
  }

  Grouping g(std::move(groups));
  const std::size_t n = spec.left.size() + spec.middle.size() + spec.right.size();
  if (auto report = validate(g, n); !report) {
    throw ValidationError("infill spec: left/middle/right do not partition the sequence: " +
                          report.message());
  }
  return {std::move(g), k0};
}

std::string to_text(const Grouping& g) {
  std::string out;
  for (const auto& grp : g.groups()) {
    for (std::size_t j = 0; j < grp.size(); ++j) {
      if (j) out += ' ';
      out += std::to_string(grp[j]);
    }
    out += '\n';
  }
  return out;
}

Grouping parse_grouping(std::string_view text) {
  std::vector<std::vector<int>> groups;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string_view::npos || line[first] == '#') continue;
    auto& grp = groups.emplace_back();
    std::size_t pos = first;
    while (pos < line.size()) {
      if (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r') {
        ++pos;
        continue;
      }
      int value = 0;
      auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + line.size(), value);
      if (ec != std::errc{}) {
        throw ValidationError("grouping text line " + std::to_string(line_no) +
                              ": expected integer index");
      }
      grp.push_back(value);
      pos = static_cast<std::size_t>(ptr - line.data());
    }
  }
  return Grouping(std::move(groups));
}

}  // namespace a3
