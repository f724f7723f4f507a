#pragma once

// Brute-force reference for greedy stitching on small recurrence-free
// cascades. Enumerates every contiguous partition and keeps the ones in which
// each group obeys the admission conditions and cannot be grown by its right
// neighbour. The greedy result must be the unique survivor.
//
// Conditions, evaluated from scratch here:
//   seed (a, a+1): a+1 reads an output of a, and the pair's set relation is
//     allowed (ri: equal; ri-rsb: equal or up-superset; ri-rsb-rsp: any)
//   admit j after last: j reads an output of some member, curr = IS(last) & IS(j)
//     compared to the previous intersection: ri equal; ri-rsb equal or
//     subset; ri-rsb-rsp equal, subset or superset; plus the pair relation of
//     (last, j) limited as for seeds (RD never admitted)
//   fully-fused: ri-rsb-rsp groups, then neighbours whose boundary pair is RD
//     (and adjacent) become one group

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "einfuse/ir.hpp"

namespace oracle {

enum class Rel { same, up_bigger, dwn_bigger, neither };
enum class Pol { ri, ri_rsb, ri_rsb_rsp, fully_fused };

struct Info {
  std::set<std::string> space, writes, reads;
};

inline std::vector<Info> infos(const einfuse::Cascade& c) {
  std::vector<Info> v;
  for (auto& e : c.einsums) {
    Info x;
    for (auto& a : e.outputs) {
      x.writes.insert(a.output.tensor);
      for (auto& ix : a.output.indices)
        for (auto& t : ix.terms) x.space.insert(t.rank);
      einfuse::for_each_access(a.body, [&](const einfuse::TensorAccess& acc) {
        x.reads.insert(acc.tensor);
        for (auto& ix : acc.indices)
          for (auto& t : ix.terms) x.space.insert(t.rank);
      });
    }
    v.push_back(x);
  }
  return v;
}

inline bool contains(const std::set<std::string>& big, const std::set<std::string>& small) {
  for (auto& s : small)
    if (!big.count(s)) return false;
  return true;
}

inline Rel relation(const std::set<std::string>& up, const std::set<std::string>& dwn) {
  if (up == dwn) return Rel::same;
  if (contains(up, dwn)) return Rel::up_bigger;
  if (contains(dwn, up)) return Rel::dwn_bigger;
  return Rel::neither;
}

inline std::set<std::string> meet(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::set<std::string> r;
  for (auto& x : a)
    if (b.count(x)) r.insert(x);
  return r;
}

inline bool feeds(const Info& up, const Info& dwn) {
  for (auto& t : up.writes)
    if (dwn.reads.count(t)) return true;
  return false;
}

inline bool pair_ok(Pol p, Rel r) {
  if (p == Pol::ri) return r == Rel::same;
  if (p == Pol::ri_rsb) return r == Rel::same || r == Rel::up_bigger;
  return true;
}

inline bool step_ok(Pol p, const std::set<std::string>& prev, const std::set<std::string>& curr, Rel r) {
  if (r == Rel::neither) return false;
  if (!pair_ok(p, r)) return false;
  bool eq = curr == prev, sub = !eq && contains(prev, curr), sup = !eq && contains(curr, prev);
  if (p == Pol::ri) return eq;
  if (p == Pol::ri_rsb) return eq || sub;
  return eq || sub || sup;
}

// can [s, e] be a group? (size >= 2)
inline bool group_valid(const std::vector<Info>& in, Pol p, std::size_t s, std::size_t e) {
  if (!feeds(in[s], in[s + 1]) || !pair_ok(p, relation(in[s].space, in[s + 1].space))) return false;
  auto prev = meet(in[s].space, in[s + 1].space);
  for (std::size_t j = s + 2; j <= e; ++j) {
    bool fed = false;
    for (std::size_t m = s; m < j; ++m) fed = fed || feeds(in[m], in[j]);
    if (!fed) return false;
    auto curr = meet(in[j - 1].space, in[j].space);
    if (!step_ok(p, prev, curr, relation(in[j - 1].space, in[j].space))) return false;
    prev = curr;
  }
  return true;
}

inline bool can_start(const std::vector<Info>& in, Pol p, std::size_t s) {
  return s + 1 < in.size() && group_valid(in, p, s, s + 1);
}

// groups as lists of cascade positions
inline std::vector<std::vector<std::size_t>> alg1_groups(const einfuse::Cascade& c, Pol p) {
  auto in = infos(c);
  std::size_t n = in.size();
  Pol base = p == Pol::fully_fused ? Pol::ri_rsb_rsp : p;
  std::vector<std::vector<std::vector<std::size_t>>> survivors;
  if (n == 0) return {};
  for (std::uint32_t cuts = 0; cuts < (1u << (n - 1)); ++cuts) {
    std::vector<std::vector<std::size_t>> part{{0}};
    for (std::size_t k = 1; k < n; ++k) {
      if (cuts & (1u << (k - 1))) part.push_back({});
      part.back().push_back(k);
    }
    bool good = true;
    for (auto& g : part) {
      std::size_t s = g.front(), e = g.back();
      if (g.size() == 1) {
        // a lone Einsum means no legal seed with its right neighbour
        if (can_start(in, base, s)) good = false;
      } else {
        if (!group_valid(in, base, s, e)) good = false;
        // greedy keeps going while the next one is admissible
        if (good && e + 1 < n && group_valid(in, base, s, e + 1)) good = false;
      }
      if (!good) break;
    }
    if (good) survivors.push_back(part);
  }
  if (survivors.size() != 1) return {}; // signals a broken reference
  auto groups = survivors.front();
  if (p != Pol::fully_fused) return groups;
  std::vector<std::vector<std::size_t>> merged;
  for (auto& g : groups) {
    if (!merged.empty()) {
      auto a = merged.back().back(), b = g.front();
      if (feeds(in[a], in[b]) && relation(in[a].space, in[b].space) == Rel::neither) {
        merged.back().insert(merged.back().end(), g.begin(), g.end());
        continue;
      }
    }
    merged.push_back(g);
  }
  return merged;
}

} // namespace oracle
