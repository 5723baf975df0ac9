#include "a3/masking.hpp"

#include <sstream>

#include "a3/error.hpp"

namespace a3 {
namespace {

// Group rank per mask index; the BOS sentinel gets rank 0 and shifts the rest.
std::vector<int> ranks(const Grouping& g, bool with_bos) {
  require_valid(g, g.num_positions());
  std::vector<int> ids = g.group_ids();
  if (!with_bos) return ids;
  std::vector<int> out;
  out.reserve(ids.size() + 1);
  out.push_back(0);
  for (int id : ids) out.push_back(id + 1);
  return out;
}

}  // namespace

BoolMatrix content_mask(const Grouping& g, bool with_bos) {
  const auto r = ranks(g, with_bos);
  BoolMatrix m(r.size(), r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) m.set(i, j, r[j] <= r[i]);
  }
  return m;
}

BoolMatrix query_mask(const Grouping& g, bool with_bos, std::vector<int>* degenerate_rows) {
  const auto r = ranks(g, with_bos);
  BoolMatrix m(r.size(), r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const bool allowed = r[j] < r[i];
      m.set(i, j, allowed);
      any = any || allowed;
    }
    // The sentinel row itself is never a prediction target.
    const bool sentinel = with_bos && i == 0;
    if (!any && !sentinel && degenerate_rows) degenerate_rows->push_back(static_cast<int>(i));
  }
  return m;
}

MaskPair make_mask_pair(const Grouping& g, bool with_bos) {
  return {content_mask(g, with_bos), query_mask(g, with_bos), with_bos};
}

std::string FlowReport::message() const {
  if (ok) return "ok";
  std::ostringstream os;
  os << stream << " mask mismatch at (" << row << ", " << col << "): expected "
     << (expected ? "allowed" : "blocked") << ", got " << (actual ? "allowed" : "blocked");
  return os.str();
}

FlowReport check_flow(const MaskPair& mp, const Grouping& g) {
  const std::size_t n = g.num_positions() + (mp.with_bos ? 1 : 0);
  for (const auto* m : {&mp.content, &mp.query}) {
    if (m->rows() != n || m->cols() != n) {
      std::ostringstream os;
      os << "mask is " << m->rows() << "x" << m->cols() << ", grouping needs " << n << "x" << n;
      throw ShapeError(os.str());
    }
  }
  const auto r = ranks(g, mp.with_bos);
  FlowReport report;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool want_c = r[j] <= r[i];
      if (mp.content(i, j) != want_c) return {false, "content", i, j, want_c, !want_c};
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool want_q = r[j] < r[i];
      if (mp.query(i, j) != want_q) return {false, "query", i, j, want_q, !want_q};
    }
  }
  return report;
}

std::string render(const BoolMatrix& m) {
  std::string out;
  out.reserve(m.rows() * (m.cols() + 1));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out += m(i, j) ? '#' : '.';
    out += '\n';
  }
  return out;
}

}  // namespace a3
