#pragma once

// Pairwise fusion classes and greedy stitching into fusion groups.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ir.hpp"
#include "loop_nest.hpp"
#include "validate.hpp"

namespace einfuse {

enum class FusionClass { RI, RSb, RSp, RD, NotAdjacent };

inline const char* class_name(FusionClass k) {
  switch (k) {
  case FusionClass::RI: return "RI";
  case FusionClass::RSb: return "RSb";
  case FusionClass::RSp: return "RSp";
  case FusionClass::RD: return "RD";
  case FusionClass::NotAdjacent: return "not-adjacent";
  }
  return "?";
}

// set comparison only; adjacency is the caller's business
inline FusionClass compare_spaces(const RankSet& up, const RankSet& dwn) {
  if (up == dwn) return FusionClass::RI;
  bool up_has_all = std::includes(up.begin(), up.end(), dwn.begin(), dwn.end());
  bool dwn_has_all = std::includes(dwn.begin(), dwn.end(), up.begin(), up.end());
  if (up_has_all) return FusionClass::RSb;
  if (dwn_has_all) return FusionClass::RSp;
  return FusionClass::RD;
}

inline FusionClass classify_pair(const Cascade& c, std::size_t up, std::size_t dwn) {
  if (!adjacent(c, up, dwn)) return FusionClass::NotAdjacent;
  return compare_spaces(rank_set(c.einsums[up]), rank_set(c.einsums[dwn]));
}

enum class StitchPolicy { unfused, marca, geens, ri, ri_rsb, ri_rsb_rsp, fully_fused };

inline const char* policy_name(StitchPolicy p) {
  switch (p) {
  case StitchPolicy::unfused: return "unfused";
  case StitchPolicy::marca: return "marca";
  case StitchPolicy::geens: return "geens";
  case StitchPolicy::ri: return "ri";
  case StitchPolicy::ri_rsb: return "ri-rsb";
  case StitchPolicy::ri_rsb_rsp: return "ri-rsb-rsp";
  case StitchPolicy::fully_fused: return "fully-fused";
  }
  return "?";
}

inline std::optional<StitchPolicy> policy_from_name(const std::string& s) {
  for (auto p : {StitchPolicy::unfused, StitchPolicy::marca, StitchPolicy::geens, StitchPolicy::ri, StitchPolicy::ri_rsb,
                 StitchPolicy::ri_rsb_rsp, StitchPolicy::fully_fused})
    if (s == policy_name(p)) return p;
  return std::nullopt;
}

inline const std::vector<StitchPolicy>& fusion_policies() {
  static const std::vector<StitchPolicy> v{StitchPolicy::ri, StitchPolicy::ri_rsb, StitchPolicy::ri_rsb_rsp,
                                           StitchPolicy::fully_fused};
  return v;
}

struct FusionGroup {
  std::vector<std::size_t> members;          // cascade indices, contiguous
  std::vector<FusionClass> links;            // members[k] -> members[k+1]
  std::vector<RankSet> chain;                // running intersection after each admission
  std::vector<std::size_t> segment_starts;   // positions in members where a bridged sub-group starts
  std::map<std::string, Residency> residency;
  std::optional<std::int64_t> generational_tile;
  std::int64_t state_elements = 0;           // on-chip carried recurrence state
  std::vector<std::string> notes;
};

struct StitchOptions {
  std::set<std::string> spill; // intermediates that must reach the backing store
};

struct FusionPlan {
  StitchPolicy policy = StitchPolicy::unfused;
  std::vector<FusionGroup> groups;
  std::vector<Diagnostic> diagnostics;
};

namespace detail {

// cascade positions [reader, writer] of every recurrence
inline std::vector<std::pair<std::size_t, std::size_t>> recurrence_spans(const Cascade& c) {
  std::vector<std::pair<std::size_t, std::size_t>> v;
  for (std::size_t j = 0; j < c.einsums.size(); ++j)
    for (auto& x : reads(c.einsums[j]))
      if (is_recurrent_read(c, j, x)) {
        std::pair<std::size_t, std::size_t> s{j, *c.producer(x.tensor)};
        if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
      }
  return v;
}

// must j join a group whose last member is `last`?
inline bool inside_span(const std::vector<std::pair<std::size_t, std::size_t>>& spans, std::size_t last, std::size_t j) {
  for (auto& [a, b] : spans)
    if (last >= a && j <= b && last < j) return true;
  return false;
}

inline bool reads_group(const Cascade& c, const std::vector<std::size_t>& group, std::size_t j) {
  for (auto& t : read_tensors(c.einsums[j]))
    for (auto m : group)
      if (c.einsums[m].writes(t) && m < j) return true;
  return false;
}

inline bool pair_allowed(StitchPolicy p, FusionClass k) {
  switch (p) {
  case StitchPolicy::ri: return k == FusionClass::RI;
  case StitchPolicy::ri_rsb: return k == FusionClass::RI || k == FusionClass::RSb;
  default: return k != FusionClass::NotAdjacent;
  }
}

inline bool subset(const RankSet& a, const RankSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

inline bool admit(StitchPolicy p, const RankSet& prev, const RankSet& curr, FusionClass k) {
  bool eq = curr == prev;
  bool sub = !eq && subset(curr, prev);
  bool sup = !eq && subset(prev, curr);
  switch (p) {
  case StitchPolicy::ri: return eq && k == FusionClass::RI;
  case StitchPolicy::ri_rsb: return (eq || sub) && (k == FusionClass::RI || k == FusionClass::RSb);
  default: return (eq || sub || sup) && k != FusionClass::RD;
  }
}

inline RankSet intersect(const RankSet& a, const RankSet& b) {
  RankSet r;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(r, r.end()));
  return r;
}

inline void fill_links(const Cascade& c, FusionGroup& g) {
  g.links.clear();
  for (std::size_t k = 0; k + 1 < g.members.size(); ++k) {
    auto a = g.members[k], b = g.members[k + 1];
    g.links.push_back(adjacent(c, a, b) ? compare_spaces(rank_set(c.einsums[a]), rank_set(c.einsums[b]))
                                        : FusionClass::NotAdjacent);
  }
}

inline void fill_residency(const Cascade& c, FusionGroup& g, const StitchOptions& opt) {
  NestOptions no;
  no.segment_starts = g.segment_starts;
  no.spill = opt.spill;
  auto nest = build_nest(c, g.members, no);
  g.residency.clear();
  for (auto& [t, b] : nest.buffers)
    if (b.produced_here) g.residency[t] = b.residency;
}

// groups of the baselines: singletons plus one fused region
inline std::vector<FusionGroup> region_groups(const Cascade& c, std::size_t first, std::size_t last) {
  std::vector<FusionGroup> v;
  for (std::size_t j = 0; j < c.einsums.size();) {
    FusionGroup g;
    if (j == first) {
      for (std::size_t k = first; k <= last; ++k) g.members.push_back(k);
      j = last + 1;
    } else {
      g.members.push_back(j++);
    }
    v.push_back(g);
  }
  return v;
}

} // namespace detail

inline std::vector<FusionGroup> greedy_stitch_groups(const Cascade& c, StitchPolicy policy, const StitchOptions& opt = {}) {
  std::vector<FusionGroup> out;
  std::size_t n = c.einsums.size();
  auto spans = detail::recurrence_spans(c);
  auto must_spill = [&](std::size_t m) {
    for (auto& t : c.einsums[m].output_tensors())
      if (!opt.spill.count(t)) return false;
    return true;
  };
  if (policy == StitchPolicy::unfused || policy == StitchPolicy::marca || policy == StitchPolicy::geens) {
    // singletons; recurrences still travel together
    for (std::size_t j = 0; j < n;) {
      FusionGroup g;
      g.members.push_back(j);
      while (j + 1 < n && detail::inside_span(spans, g.members.back(), j + 1)) g.members.push_back(++j);
      ++j;
      out.push_back(g);
    }
    return out;
  }
  StitchPolicy base = policy == StitchPolicy::fully_fused ? StitchPolicy::ri_rsb_rsp : policy;
  for (std::size_t i = 0; i < n;) {
    FusionGroup g;
    g.members.push_back(i);
    std::size_t j = i + 1;
    bool seeded = false;
    if (j < n) {
      bool forced = detail::inside_span(spans, i, j);
      auto k = classify_pair(c, i, j);
      if (forced || (k != FusionClass::NotAdjacent && detail::pair_allowed(base, k) && !must_spill(i))) {
        g.members.push_back(j);
        g.chain.push_back(detail::intersect(rank_set(c.einsums[i]), rank_set(c.einsums[j])));
        if (forced && !detail::pair_allowed(base, k)) g.notes.push_back("seeded inside a recurrence");
        seeded = true;
        ++j;
      }
    }
    if (seeded) {
      for (; j < n; ++j) {
        std::size_t last = g.members.back();
        auto curr = detail::intersect(rank_set(c.einsums[last]), rank_set(c.einsums[j]));
        auto k = compare_spaces(rank_set(c.einsums[last]), rank_set(c.einsums[j]));
        bool ok = detail::reads_group(c, g.members, j) && !must_spill(last) && detail::admit(base, g.chain.back(), curr, k);
        if (!ok && detail::inside_span(spans, last, j)) {
          g.notes.push_back("E" + c.einsums[j].label() + " admitted to keep a recurrence together");
          ok = true;
        }
        if (!ok) break;
        g.members.push_back(j);
        g.chain.push_back(curr);
      }
    } else {
      j = i + 1;
    }
    out.push_back(g);
    i = j;
  }
  if (policy == StitchPolicy::fully_fused) {
    // bridge groups meeting at an RD boundary; the shared tensor goes through the backing store
    std::vector<FusionGroup> merged;
    for (auto& g : out) {
      if (!merged.empty()) {
        auto& prev = merged.back();
        auto a = prev.members.back(), b = g.members.front();
        if (classify_pair(c, a, b) == FusionClass::RD) {
          if (prev.segment_starts.empty()) prev.segment_starts.push_back(0);
          prev.segment_starts.push_back(prev.members.size());
          prev.members.insert(prev.members.end(), g.members.begin(), g.members.end());
          prev.chain.insert(prev.chain.end(), g.chain.begin(), g.chain.end());
          prev.notes.insert(prev.notes.end(), g.notes.begin(), g.notes.end());
          continue;
        }
      }
      merged.push_back(g);
    }
    out = std::move(merged);
  }
  return out;
}

// the SSM region of the baselines: the recurrence plus its rank-isomorphic
// neighbours on both sides (Mamba: 16-21)
inline std::optional<std::pair<std::size_t, std::size_t>> ssm_region(const Cascade& c) {
  auto spans = detail::recurrence_spans(c);
  if (spans.empty()) return std::nullopt;
  auto [first, last] = spans.front();
  auto is = rank_set(c.einsums[first]);
  while (first > 0 && rank_set(c.einsums[first - 1]) == is) --first;
  while (last + 1 < c.einsums.size() && rank_set(c.einsums[last + 1]) == is) ++last;
  return std::pair{first, last};
}

inline FusionPlan greedy_stitch(const Cascade& c, StitchPolicy policy, const StitchOptions& opt = {}) {
  FusionPlan plan;
  plan.policy = policy;
  if (policy == StitchPolicy::marca || policy == StitchPolicy::geens) {
    auto r = ssm_region(c);
    if (!r) {
      plan.diagnostics.push_back({"no-ssm-region", "baseline needs a recurrence to fuse around"});
      plan.groups = greedy_stitch_groups(c, StitchPolicy::unfused, opt);
    } else {
      plan.groups = detail::region_groups(c, r->first, r->second);
      for (auto& g : plan.groups)
        for (std::size_t k = 1; k < g.members.size(); ++k)
          g.chain.push_back(detail::intersect(rank_set(c.einsums[g.members[k - 1]]), rank_set(c.einsums[g.members[k]])));
    }
  } else {
    plan.groups = greedy_stitch_groups(c, policy, opt);
  }
  for (auto& g : plan.groups) {
    detail::fill_links(c, g);
    if (policy != StitchPolicy::unfused) detail::fill_residency(c, g, opt);
  }
  // challenge (B): an Einsum fed by several producers stitches with the latest one; others go through memory
  for (std::size_t j = 0; j < c.einsums.size(); ++j) {
    std::set<std::size_t> ps;
    for (auto& t : read_tensors(c.einsums[j]))
      if (auto p = c.producer(t); p && *p < j) ps.insert(*p);
    if (ps.size() < 2) continue;
    for (auto& g : plan.groups) {
      if (std::find(g.members.begin(), g.members.end(), j) == g.members.end()) continue;
      for (auto p : ps)
        if (std::find(g.members.begin(), g.members.end(), p) == g.members.end())
          g.notes.push_back("E" + c.einsums[j].label() + " also reads E" + c.einsums[p].label() + " from memory");
    }
  }
  return plan;
}

// ranks that must be outermost, outermost first
inline std::vector<std::string> stationary_ranks(const Cascade& c, const FusionGroup& g) {
  RankSet s;
  if (g.chain.empty()) {
    s = output_ranks(c.einsums[g.members.front()]);
  } else {
    s = g.chain.front();
    for (auto& x : g.chain) s = detail::intersect(s, x);
  }
  std::map<std::string, int> count;
  RankSet reduced;
  for (auto m : g.members) {
    for (auto& r : rank_set(c.einsums[m])) ++count[r];
    for (auto& r : reduction_ranks(c.einsums[m])) reduced.insert(r);
  }
  // a rank some member reduces over cannot lead that member's loops, so it goes last
  std::vector<std::string> v(s.begin(), s.end());
  std::sort(v.begin(), v.end(), [&](auto& a, auto& b) {
    if (reduced.count(a) != reduced.count(b)) return reduced.count(a) < reduced.count(b);
    if (count[a] != count[b]) return count[a] > count[b];
    return c.rank_order(a) < c.rank_order(b);
  });
  return v;
}

namespace detail {

struct GenerationalMapping {
  std::vector<std::string> order;
  std::map<std::string, std::int64_t> tiles;
};

// tile 1: the recurrence innermost under the other stationary ranks, so the
// carried state is one element. Larger tiles: the generational rank leads and
// the state of a whole tile of the other ranks stays on chip.
inline GenerationalMapping generational_mapping(const Cascade& c, const FusionGroup& g, std::int64_t tile) {
  GenerationalMapping m;
  std::optional<std::string> gen;
  for (auto x : g.members)
    if (auto r = generational_rank(c.einsums[x], c)) gen = r;
  if (!gen) return m;
  auto st = stationary_ranks(c, g);
  if (tile <= 1) {
    for (auto& r : st)
      if (r != *gen) m.order.push_back(r);
    m.order.push_back(*gen);
  } else {
    if (tile < c.rank(*gen).iterations()) m.tiles[*gen] = tile;
    m.order.push_back(*gen);
    for (auto& r : st)
      if (r != *gen) m.order.push_back(r);
  }
  return m;
}

} // namespace detail

// partition the generational rank in tiles of tile_I and record the carried
// state's residency and on-chip size
inline FusionGroup handle_generational(const Cascade& c, FusionGroup g, std::int64_t tile_I,
                                       std::vector<Diagnostic>* diags = nullptr) {
  std::optional<std::string> gen;
  for (auto m : g.members)
    if (auto r = generational_rank(c.einsums[m], c)) gen = r;
  if (!gen) {
    if (diags) diags->push_back({"no-generational-rank", "group has no generational rank", -1, 0, 0, true});
    return g;
  }
  auto iters = c.rank(*gen).iterations();
  if (tile_I < 1) tile_I = 1;
  if (tile_I > iters) {
    if (diags)
      diags->push_back({"tile-clamped", "generational tile " + std::to_string(tile_I) + " clamped to " + std::to_string(iters),
                        -1, 0, 0, true});
    tile_I = iters;
  }
  g.generational_tile = tile_I;

  auto map = detail::generational_mapping(c, g, tile_I);
  NestOptions no;
  no.order = map.order;
  no.tiles = map.tiles;
  no.segment_starts = g.segment_starts;
  auto nest = build_nest(c, g.members, no);
  g.state_elements = 0;
  for (auto& [t, b] : nest.buffers)
    if (b.produced_here) {
      g.residency[t] = b.residency;
      if (b.carried_readers.empty()) continue;
      std::int64_t n = 1;
      for (auto e : b.residency.extents) n *= e;
      g.state_elements += n;
    }
  return g;
}

} // namespace einfuse
