#pragma once

// Exact backing-store element counts of a nest, computed from the access
// functions alone (no execution). Matches the interpreter's counters.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ir.hpp"
#include "loop_nest.hpp"

namespace einfuse {

namespace detail {

using ValueSet = std::vector<std::int64_t>; // sorted, unique
using Box = std::vector<ValueSet>;          // one set per tensor dimension

inline ValueSet rank_values(const Cascade& c, const std::string& r, bool init_domain, bool has_init) {
  auto& d = c.rank(r);
  ValueSet v;
  if (d.generational() && init_domain) return {0};
  for (std::int64_t x = 0; x < d.bound(); x += d.step)
    if (!(d.generational() && has_init && x == 0)) v.push_back(x);
  return v;
}

// image of one index expression, clipped to [0, extent)
inline ValueSet index_values(const Cascade& c, const IndexExpr& ix, std::int64_t extent, bool init_domain, bool has_init) {
  ValueSet acc{ix.offset};
  for (auto& t : ix.terms) {
    auto vals = rank_values(c, t.rank, init_domain, has_init);
    ValueSet next;
    next.reserve(acc.size() * vals.size());
    for (auto a : acc)
      for (auto v : vals) next.push_back(a + t.coeff * v);
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    acc = std::move(next);
  }
  std::erase_if(acc, [&](std::int64_t x) { return x < 0 || x >= extent; });
  return acc;
}

inline bool separable(const TensorAccess& a) {
  RankSet seen;
  for (auto& ix : a.indices)
    for (auto& t : ix.terms)
      if (!seen.insert(t.rank).second) return false;
  return true;
}

inline Box access_box(const Cascade& c, const TensorAccess& a, bool init_domain, bool has_init) {
  if (!separable(a)) throw IrError("footprint: access to " + a.tensor + " reuses a rank across dimensions");
  Box b;
  auto shape = c.tensor_shape(a.tensor);
  for (std::size_t d = 0; d < a.indices.size(); ++d)
    b.push_back(index_values(c, a.indices[d], shape[d], init_domain, has_init));
  return b;
}

inline std::int64_t box_size(const Box& b) {
  std::int64_t n = 1;
  for (auto& s : b) n *= static_cast<std::int64_t>(s.size());
  return n;
}

inline Box box_intersect(const Box& a, const Box& b) {
  Box r(a.size());
  for (std::size_t d = 0; d < a.size(); ++d)
    std::set_intersection(a[d].begin(), a[d].end(), b[d].begin(), b[d].end(), std::back_inserter(r[d]));
  return r;
}

// |union of boxes| by inclusion-exclusion
inline std::int64_t union_size(std::vector<Box> boxes) {
  std::sort(boxes.begin(), boxes.end());
  boxes.erase(std::unique(boxes.begin(), boxes.end()), boxes.end());
  if (boxes.size() > 16) throw IrError("footprint: too many distinct access boxes");
  std::int64_t total = 0;
  std::size_t n = boxes.size();
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    Box acc;
    int bits = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (mask & (1u << k)) {
        acc = bits ? box_intersect(acc, boxes[k]) : boxes[k];
        ++bits;
      }
    total += (bits % 2 ? 1 : -1) * box_size(acc);
  }
  return total;
}

inline void read_boxes(const Cascade& c, std::size_t j, const std::string& T, std::vector<Box>& out) {
  auto& e = c.einsums[j];
  for (auto& a : e.outputs)
    for_each_access(a.body, [&](const TensorAccess& x) {
      if (x.tensor == T && !is_recurrent_read(c, j, x)) out.push_back(access_box(c, x, false, e.has_init()));
    });
  for (auto& a : e.init)
    for_each_access(a.body, [&](const TensorAccess& x) {
      if (x.tensor == T && !is_recurrent_read(c, j, x)) out.push_back(access_box(c, x, true, true));
    });
}

} // namespace detail

struct TensorTraffic {
  std::int64_t reads = 0;  // elements
  std::int64_t writes = 0;
};

// backing-store traffic of one nest, per tensor, in elements
inline std::map<std::string, TensorTraffic> analytic_traffic(const LoopNest& nest, const Cascade& c) {
  std::map<std::string, TensorTraffic> out;
  for (auto& [T, b] : nest.buffers) {
    TensorTraffic t;
    for (auto& cl : b.backing_reads) {
      std::vector<detail::Box> boxes;
      for (auto j : cl.readers) detail::read_boxes(c, j, T, boxes);
      t.reads += detail::union_size(boxes);
    }
    if (b.backing_write) {
      auto p = *c.producer(T);
      auto& e = c.einsums[p];
      std::vector<detail::Box> boxes;
      for (auto& a : e.outputs)
        if (a.output.tensor == T) boxes.push_back(detail::access_box(c, a.output, false, e.has_init()));
      for (auto& a : e.init)
        if (a.output.tensor == T) boxes.push_back(detail::access_box(c, a.output, true, true));
      t.writes = detail::union_size(boxes);
    }
    if (t.reads || t.writes) out[T] = t;
  }
  return out;
}

} // namespace einfuse
