#pragma once

// Loop-tree construction shared by fusion and schedule generation.
//
// Einsums are inserted in cascade order. Each one descends the rightmost path
// of the tree as long as the loop there is over one of its ranks and sharing it
// is legal w.r.t. every producer already inside that loop; its remaining ranks
// become a fresh chain (non-reduction ranks, then reductions).

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ir.hpp"
#include "validate.hpp"

namespace einfuse {

enum class LoopKind { full, tile_outer, tile_inner };

struct Loop {
  std::string rank;
  LoopKind kind = LoopKind::full;
  std::int64_t end = 1;   // exclusive bound on the rank value
  std::int64_t step = 1;
  std::int64_t tile = 0;  // values per tile (tile loops only)
  int id = -1;

  // loop variable name; tile_outer gets its own variable
  std::string var() const { return kind == LoopKind::tile_outer ? rank + "'" : rank; }
  std::int64_t trips() const {
    std::int64_t span = kind == LoopKind::tile_outer ? tile * step : step;
    if (kind == LoopKind::tile_inner) return tile;
    return (end + span - 1) / span;
  }
};

struct Node {
  enum class Kind { loop, stmt, trigger } kind = Kind::loop;
  Loop loop;
  std::size_t einsum = 0;    // stmt: cascade index
  std::string tensor;        // trigger: watched tensor
  bool opens_chain = false;  // first loop created for an Einsum (printing only)
  std::size_t chain_owner = 0;
  std::vector<Node> body;
};

enum class ResidencyKind { unit, tile, backing, multipass };

struct Residency {
  ResidencyKind kind = ResidencyKind::unit;
  std::vector<std::int64_t> extents; // tile shape
  int passes = 1;                    // multipass
  bool operator==(const Residency&) const = default;
};

inline std::string to_string(const Residency& r) {
  switch (r.kind) {
  case ResidencyKind::unit: return "on-chip-unit";
  case ResidencyKind::backing: return "spilled";
  case ResidencyKind::multipass: return "multi-pass(" + std::to_string(r.passes) + ")";
  case ResidencyKind::tile: {
    std::string s = "on-chip-tile(";
    for (std::size_t k = 0; k < r.extents.size(); ++k) s += (k ? "x" : "") + std::to_string(r.extents[k]);
    return s + ")";
  }
  }
  return "?";
}

// a set of readers sharing one backing-store load of a tensor
struct ReadCluster {
  std::vector<std::size_t> readers;
};

struct BufferDecl {
  std::string tensor;
  Residency residency;
  bool produced_here = false;
  bool backing_write = false;          // producer writes the final values to the backing store
  std::vector<ReadCluster> backing_reads;
  std::vector<std::size_t> onchip_readers;
  std::vector<std::size_t> carried_readers; // recurrent reads kept on chip
  bool bridge = false;
};

struct TriggerSpec {
  std::string tensor;
  std::vector<std::int64_t> granularity; // extents of one fired tile (per tensor dim)
  std::int64_t fires = 1;                // expected count
  std::size_t consumer = 0;              // first downstream Einsum started
};

struct LoopNest {
  std::vector<Node> roots;
  std::vector<std::size_t> einsums;          // cascade indices in statement order
  std::vector<std::size_t> segment_of;       // per entry of einsums: fusion group index within the nest
  std::vector<std::string> stationary;       // outermost loops, in order
  std::map<std::string, BufferDecl> buffers;
  std::vector<TriggerSpec> triggers;
  std::vector<Diagnostic> diagnostics;
  bool forced = false;

  bool contains(std::size_t e) const { return std::find(einsums.begin(), einsums.end(), e) != einsums.end(); }
  std::size_t segment(std::size_t e) const {
    for (std::size_t k = 0; k < einsums.size(); ++k)
      if (einsums[k] == e) return segment_of[k];
    return 0;
  }
};

struct NestOptions {
  std::map<std::string, std::int64_t> tiles;   // rank -> tile size (values)
  std::vector<std::string> order;              // requested outer loop order for the first Einsum
  bool force = false;                          // accept an order that breaks stationarity
  bool share = true;                           // false: unfused, only recurrences co-iterate
  std::vector<std::size_t> segment_starts;     // positions in the member list where a new group begins
  std::set<std::string> spill;                 // tensors forced to the backing store
};

namespace detail {

// walk helpers ---------------------------------------------------------------

inline void visit(const std::vector<Node>& ns, std::vector<const Loop*>& path,
                  const std::function<void(const Node&, const std::vector<const Loop*>&)>& f) {
  for (auto& n : ns) {
    f(n, path);
    if (n.kind == Node::Kind::loop) {
      path.push_back(&n.loop);
      visit(n.body, path, f);
      path.pop_back();
    }
  }
}

inline void collect_stmts(const Node& n, std::vector<std::size_t>& out) {
  if (n.kind == Node::Kind::stmt) out.push_back(n.einsum);
  for (auto& c : n.body) collect_stmts(c, out);
}

// index reads only the current or earlier values of rank r
inline bool reads_current_or_past(const IndexExpr& ix, const std::string& r) {
  if (ix.terms.size() == 1) return ix.terms[0].rank == r && ix.terms[0].coeff == 1 && ix.offset <= 0;
  if (ix.is_window()) return ix.terms[0].rank == r && ix.offset <= 0;
  return false;
}

struct Builder {
  const Cascade& c;
  const std::vector<std::size_t>& members;
  const NestOptions& opt;
  LoopNest nest;
  int next_id = 0;
  std::vector<std::vector<std::string>> priority; // per segment
  std::map<std::size_t, std::size_t> seg_of;        // cascade index -> segment
  std::pair<std::size_t, std::size_t> span{1, 0}; // recurrence span (cascade positions), empty if first > second

  Builder(const Cascade& cc, const std::vector<std::size_t>& m, const NestOptions& o) : c(cc), members(m), opt(o) {
    std::size_t seg = 0;
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (k > 0 && std::find(opt.segment_starts.begin(), opt.segment_starts.end(), k) != opt.segment_starts.end()) ++seg;
      seg_of[members[k]] = seg;
    }
    for (std::size_t s = 0; s <= seg; ++s) {
      std::map<std::string, int> count;
      RankSet reduced;
      for (auto i : members) {
        if (seg_of[i] != s) continue;
        for (auto& r : rank_set(c.einsums[i])) ++count[r];
        for (auto& r : reduction_ranks(c.einsums[i])) reduced.insert(r);
      }
      std::vector<std::string> pr;
      for (auto& [r, n] : count) pr.push_back(r);
      // ranks nobody in the segment reduces lead, so they can stay stationary
      std::sort(pr.begin(), pr.end(), [&](auto& a, auto& b) {
        if (reduced.count(a) != reduced.count(b)) return reduced.count(a) < reduced.count(b);
        if (count[a] != count[b]) return count[a] > count[b];
        return c.rank_order(a) < c.rank_order(b);
      });
      priority.push_back(pr);
    }
  }

  int prio(std::size_t j, const std::string& r) const {
    auto& pr = priority[seg_of.at(j)];
    return static_cast<int>(std::find(pr.begin(), pr.end(), r) - pr.begin());
  }

  Loop make_loop(const std::string& r, LoopKind k) {
    auto& d = c.rank(r);
    Loop l{r, k, d.bound(), d.step, 0, next_id++};
    if (k != LoopKind::full) l.tile = opt.tiles.at(r);
    return l;
  }

  bool tiled(const std::string& r) const {
    auto it = opt.tiles.find(r);
    return it != opt.tiles.end() && it->second > 0 && it->second < c.rank(r).iterations();
  }

  // may Einsum j enter loop node n?
  bool legal(std::size_t j, const Node& n) const {
    const std::string& r = n.loop.rank;
    std::vector<std::size_t> inside;
    for (auto& ch : n.body) collect_stmts(ch, inside);
    auto& ej = c.einsums[j];
    for (auto p : inside) {
      auto& ep = c.einsums[p];
      RankSet red = reduction_ranks(ep);
      for (auto& a : ep.outputs) {
        auto& T = a.output.tensor;
        bool read = false;
        for (auto& x : normalized_reads(ej, c))
          if (x.tensor == T && !is_recurrent_read(c, j, x)) read = true;
        if (!read) continue;
        if (red.count(r)) return false;
        for (std::size_t k = 0; k < a.output.indices.size(); ++k) {
          if (!a.output.indices[k].uses(r)) continue;
          for (auto& x : normalized_reads(ej, c))
            if (x.tensor == T && !is_recurrent_read(c, j, x) && !reads_current_or_past(x.indices[k], r)) return false;
        }
      }
    }
    return true;
  }

  bool in_span(std::size_t j) const { return span.first <= span.second && j >= span.first && j <= span.second; }

  std::vector<std::string> own_order(std::size_t j, const RankSet& remaining) const {
    RankSet red = reduction_ranks(c.einsums[j]);
    std::vector<std::string> nonred, reds;
    for (auto& r : remaining) (red.count(r) ? reds : nonred).push_back(r);
    auto by = [&](auto& a, auto& b) {
      if (!opt.share) return c.rank_order(a) < c.rank_order(b);
      return prio(j, a) < prio(j, b);
    };
    std::sort(nonred.begin(), nonred.end(), by);
    std::sort(reds.begin(), reds.end(), by);
    // recurrences: the generational loop leads so reader and writer can co-iterate
    if (auto g = generational_rank(c.einsums[j], c); g && in_span(j)) {
      auto it = std::find(nonred.begin(), nonred.end(), *g);
      if (it != nonred.end()) {
        nonred.erase(it);
        nonred.insert(nonred.begin(), *g);
      }
    }
    nonred.insert(nonred.end(), reds.begin(), reds.end());
    return nonred;
  }

  void append_chain(std::vector<Node>* cur, std::size_t j, std::vector<std::string> order, const RankSet& tile_inner) {
    bool first = true;
    std::vector<std::string> inner;
    for (auto& r : tile_inner) inner.push_back(r);
    // tile_inner loops for ranks whose tile loop we share come first
    std::vector<std::pair<std::string, LoopKind>> seq;
    for (auto& r : inner) seq.push_back({r, LoopKind::tile_inner});
    RankSet red = reduction_ranks(c.einsums[j]);
    bool is_first_einsum = nest.einsums.empty();
    std::vector<std::string> pending_inner;
    for (std::size_t k = 0; k < order.size(); ++k) {
      auto& r = order[k];
      if (is_first_einsum && opt.share && tiled(r)) {
        seq.push_back({r, LoopKind::tile_outer});
        pending_inner.push_back(r);
      } else {
        seq.push_back({r, LoopKind::full});
      }
      // tile_inner loops after the last non-reduction rank
      bool last_nonred = !red.count(r) && (k + 1 == order.size() || red.count(order[k + 1]));
      if (last_nonred) {
        for (auto& q : pending_inner) seq.push_back({q, LoopKind::tile_inner});
        pending_inner.clear();
      }
    }
    for (auto& q : pending_inner) seq.push_back({q, LoopKind::tile_inner});
    for (auto& [r, kind] : seq) {
      Node n;
      n.kind = Node::Kind::loop;
      n.loop = make_loop(r, kind);
      n.opens_chain = first;
      n.chain_owner = j;
      first = false;
      cur->push_back(std::move(n));
      cur = &cur->back().body;
    }
    Node s;
    s.kind = Node::Kind::stmt;
    s.einsum = j;
    s.opens_chain = first;
    cur->push_back(std::move(s));
  }

  void insert(std::size_t j, std::size_t segment) {
    auto& e = c.einsums[j];
    RankSet remaining = rank_set(e);
    std::vector<Node>* cur = &nest.roots;
    RankSet tile_inner;
    std::vector<const Loop*> shared;
    if (!nest.einsums.empty()) {
      for (;;) {
        if (cur->empty() || cur->back().kind != Node::Kind::loop) break;
        Node& n = cur->back();
        if (n.loop.kind == LoopKind::tile_inner || !remaining.count(n.loop.rank)) break;
        bool can = opt.share || (in_span(j) && c.rank(n.loop.rank).generational());
        if (!can || !legal(j, n)) break;
        remaining.erase(n.loop.rank);
        if (n.loop.kind == LoopKind::tile_outer) tile_inner.insert(n.loop.rank);
        shared.push_back(&n.loop);
        cur = &n.body;
      }
    }
    // cross-group links inside one nest fire a trigger where the consumer starts
    if (!nest.einsums.empty()) {
      for (auto& x : normalized_reads(e, c)) {
        auto p = c.producer(x.tensor);
        if (!p || *p >= j || !nest.contains(*p) || nest.segment(*p) == segment) continue;
        bool seen = false;
        for (auto& t : nest.triggers)
          if (t.tensor == x.tensor) seen = true;
        if (seen) continue;
        Node t;
        t.kind = Node::Kind::trigger;
        t.tensor = x.tensor;
        t.einsum = j;
        TriggerSpec ts{x.tensor, {}, 1, j};
        auto& decl = c.tensor(x.tensor);
        for (auto& r : decl.ranks) {
          std::int64_t g = c.rank(r).extent;
          for (auto* l : shared)
            if (l->rank == r) g = l->kind == LoopKind::tile_outer ? l->tile : 1;
          ts.granularity.push_back(g);
        }
        for (auto* l : shared) ts.fires *= l->trips();
        nest.triggers.push_back(ts);
        cur->push_back(std::move(t));
      }
    }
    std::vector<std::string> order;
    if (nest.einsums.empty() && !opt.order.empty()) {
      order = opt.order;
      for (auto& r : own_order(j, remaining))
        if (std::find(order.begin(), order.end(), r) == order.end()) order.push_back(r);
    } else {
      order = own_order(j, remaining);
    }
    append_chain(cur, j, order, tile_inner);
    nest.einsums.push_back(j);
    nest.segment_of.push_back(segment);
  }

  void build() {
    // recurrence span: reader position .. writer position
    for (auto j : members)
      for (auto& x : normalized_reads(c.einsums[j], c))
        if (is_recurrent_read(c, j, x)) {
          auto p = *c.producer(x.tensor);
          if (span.first > span.second) span = {j, p};
          else span = {std::min(span.first, j), std::max(span.second, p)};
        }
    std::size_t seg = 0;
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (std::find(opt.segment_starts.begin(), opt.segment_starts.end(), k) != opt.segment_starts.end() && k > 0) ++seg;
      insert(members[k], seg);
    }
  }
};

struct StmtInfo {
  std::vector<const Loop*> path;
  std::size_t order = 0; // position in program order
};

inline std::map<std::size_t, StmtInfo> stmt_paths(const LoopNest& nest) {
  std::map<std::size_t, StmtInfo> m;
  std::vector<const Loop*> path;
  std::size_t k = 0;
  visit(nest.roots, path, [&](const Node& n, const std::vector<const Loop*>& p) {
    if (n.kind == Node::Kind::stmt) m[n.einsum] = {p, k++};
  });
  return m;
}

inline std::vector<const Loop*> common_loops(const StmtInfo& a, const StmtInfo& b) {
  std::vector<const Loop*> v;
  for (std::size_t k = 0; k < a.path.size() && k < b.path.size() && a.path[k]->id == b.path[k]->id; ++k)
    v.push_back(a.path[k]);
  return v;
}

enum class LinkKind { unit, tile, pass };

// how consumer j sees p's output T given the loops they share
inline LinkKind link_kind(const Cascade& c, const TensorAccess& out, const std::vector<TensorAccess>& accesses,
                          const std::vector<const Loop*>& common, std::vector<std::int64_t>* extents = nullptr) {
  LinkKind k = LinkKind::unit;
  auto& decl = c.tensor(out.tensor);
  if (extents) extents->assign(decl.ranks.size(), 1);
  for (std::size_t d = 0; d < out.indices.size(); ++d) {
    const std::string& v = out.indices[d].terms[0].rank;
    const Loop* l = nullptr;
    bool inner = false;
    for (auto* x : common)
      if (x->rank == v) {
        if (x->kind == LoopKind::tile_inner) inner = true;
        else l = x;
      }
    if (!l) return LinkKind::pass;
    std::int64_t ext = 1;
    if (l->kind == LoopKind::tile_outer && !inner) {
      ext = l->tile;
      k = LinkKind::tile;
    }
    for (auto& a : accesses) {
      auto& ix = a.indices[d];
      if (ix.is_plain() && ix.terms[0].rank == v) continue;
      if (!reads_current_or_past(ix, v)) return LinkKind::pass;
      k = LinkKind::tile;
      // a lag of up to (window extent - offset) values stays live
      std::int64_t lag = -ix.offset;
      if (ix.is_window()) lag += c.rank(ix.terms[1].rank).iterations() - 1;
      ext = std::max(ext, lag + 1);
    }
    if (extents) (*extents)[d] = ext;
  }
  return k;
}

// readers of one tensor that can share a single load
inline std::vector<ReadCluster> cluster_readers(const Cascade& c, const std::string& T, const std::vector<std::size_t>& readers,
                                                const std::map<std::size_t, StmtInfo>& paths) {
  std::vector<ReadCluster> out;
  std::vector<std::vector<TensorAccess>> acc;
  for (auto j : readers) {
    std::vector<TensorAccess> mine;
    for (auto& x : normalized_reads(c.einsums[j], c))
      if (x.tensor == T && !is_recurrent_read(c, j, x)) mine.push_back(x);
    bool placed = false;
    for (std::size_t k = 0; k < out.size() && !placed; ++k) {
      if (acc[k] != mine) continue;
      auto common = common_loops(paths.at(out[k].readers.front()), paths.at(j));
      RankSet vars;
      for (auto& a : mine) collect_ranks(a, vars);
      bool covered = true;
      for (auto& v : vars) {
        bool f = false;
        for (auto* l : common)
          if (l->rank == v && l->kind == LoopKind::full) f = true;
        if (!f) covered = false;
      }
      if (covered) {
        out[k].readers.push_back(j);
        placed = true;
      }
    }
    if (!placed) {
      out.push_back({{j}});
      acc.push_back(mine);
    }
  }
  return out;
}

inline void analyze(const Cascade& c, LoopNest& nest, const NestOptions& opt) {
  auto paths = stmt_paths(nest);
  auto last_of_segment = [&](std::size_t e) {
    for (std::size_t k = 0; k < nest.einsums.size(); ++k)
      if (nest.einsums[k] == e) return k + 1 == nest.einsums.size() || nest.segment_of[k + 1] != nest.segment_of[k];
    return false;
  };
  std::set<std::string> touched;
  for (auto j : nest.einsums) {
    for (auto& t : read_tensors(c.einsums[j])) touched.insert(t);
    for (auto& t : c.einsums[j].output_tensors()) touched.insert(t);
  }
  for (auto& T : touched) {
    BufferDecl b;
    b.tensor = T;
    auto p = c.producer(T);
    b.produced_here = p && nest.contains(*p);
    std::vector<std::size_t> readers;
    for (auto j : nest.einsums) {
      bool r = false, carried = false;
      for (auto& x : normalized_reads(c.einsums[j], c))
        if (x.tensor == T) (is_recurrent_read(c, j, x) ? carried : r) = true;
      if (carried) b.carried_readers.push_back(j);
      if (r) readers.push_back(j);
    }
    if (!b.produced_here) {
      b.residency.kind = ResidencyKind::backing;
      b.backing_reads = cluster_readers(c, T, readers, paths);
      nest.buffers[T] = b;
      continue;
    }
    auto& ep = c.einsums[*p];
    const TensorAccess* out = nullptr;
    for (auto& a : ep.outputs)
      if (a.output.tensor == T) out = &a.output;
    bool outside = false;
    for (auto q : consumers(c, T))
      if (!nest.contains(q)) outside = true;
    bool final_output = consumers(c, T).empty();
    std::vector<std::size_t> pass_readers;
    bool any_tile = false;
    std::vector<std::int64_t> tile_ext(c.tensor(T).ranks.size(), 1);
    for (auto j : readers) {
      std::vector<TensorAccess> mine;
      for (auto& x : normalized_reads(c.einsums[j], c))
        if (x.tensor == T && !is_recurrent_read(c, j, x)) mine.push_back(x);
      bool cross = nest.segment(j) != nest.segment(*p);
      std::vector<std::int64_t> ext;
      auto k = link_kind(c, *out, mine, common_loops(paths.at(*p), paths.at(j)), &ext);
      if (cross || opt.spill.count(T)) {
        // the boundary tensor between bridged groups is spilled with a trigger;
        // anything else read across the boundary is simply read again
        b.bridge = b.bridge || (cross && last_of_segment(*p));
        pass_readers.push_back(j);
      } else if (k == LinkKind::pass && !opt.force) {
        pass_readers.push_back(j);
      } else if (k == LinkKind::pass) {
        // a forced order keeps the whole unshared extent live on chip
        b.onchip_readers.push_back(j);
        any_tile = true;
        auto common = common_loops(paths.at(*p), paths.at(j));
        auto& decl = c.tensor(T);
        for (std::size_t d = 0; d < decl.ranks.size(); ++d) {
          bool shared = false;
          for (auto* l : common)
            if (l->rank == decl.ranks[d] && l->kind == LoopKind::full) shared = true;
          if (!shared) tile_ext[d] = std::max(tile_ext[d], c.rank(decl.ranks[d]).extent);
        }
      } else {
        b.onchip_readers.push_back(j);
        if (k == LinkKind::tile) {
          any_tile = true;
          for (std::size_t d = 0; d < ext.size(); ++d) tile_ext[d] = std::max(tile_ext[d], ext[d]);
        }
      }
    }
    // a carried state lives across generations: every value iterated inside the generational loop
    if (!b.carried_readers.empty()) {
      auto g = generational_rank(ep, c);
      auto& pp = paths.at(*p).path;
      std::size_t gpos = pp.size();
      for (std::size_t k = 0; k < pp.size(); ++k)
        if (g && pp[k]->rank == *g) {
          gpos = k;
          break;
        }
      auto& decl = c.tensor(T);
      std::vector<std::int64_t> ext(decl.ranks.size(), 1);
      bool inner_any = false;
      for (std::size_t d = 0; d < decl.ranks.size(); ++d) {
        if (g && decl.ranks[d] == *g) continue;
        bool outer = false;
        for (std::size_t k = 0; k < gpos; ++k)
          if (pp[k]->rank == decl.ranks[d]) outer = true;
        if (!outer) {
          ext[d] = c.rank(decl.ranks[d]).extent;
          inner_any = true;
        }
      }
      if (inner_any) {
        any_tile = true;
        for (std::size_t d = 0; d < ext.size(); ++d) tile_ext[d] = std::max(tile_ext[d], ext[d]);
      }
    }
    if (outside || b.bridge || final_output || opt.spill.count(T) || !opt.share) {
      b.residency.kind = ResidencyKind::backing;
      b.backing_write = true;
    } else if (!pass_readers.empty()) {
      b.residency.kind = ResidencyKind::multipass;
      b.backing_write = true;
    } else if (any_tile) {
      b.residency.kind = ResidencyKind::tile;
      b.residency.extents = tile_ext;
    }
    b.backing_reads = cluster_readers(c, T, pass_readers, paths);
    if (b.residency.kind == ResidencyKind::multipass)
      b.residency.passes = 1 + static_cast<int>(b.backing_reads.size());
    nest.buffers[T] = b;
  }
  // recurrences must co-iterate on the generational loop
  for (auto j : nest.einsums)
    for (auto& x : normalized_reads(c.einsums[j], c))
      if (is_recurrent_read(c, j, x)) {
        auto p = *c.producer(x.tensor);
        if (!nest.contains(p)) {
          nest.diagnostics.push_back({"recurrence-split", "recurrent tensor " + x.tensor + " is produced outside the nest",
                                      c.einsums[j].id});
          continue;
        }
        auto g = generational_rank(c.einsums[j], c);
        bool ok = false;
        for (auto* l : common_loops(paths.at(p), paths.at(j)))
          if (g && l->rank == *g) ok = true;
        if (!ok)
          nest.diagnostics.push_back({"recurrence-split", "reader and writer of " + x.tensor +
                                                              " do not share the generational loop", c.einsums[j].id});
      }
}

} // namespace detail

// outer loops of the first statement that every member iterates
inline std::vector<std::string> outer_shared_loops(const LoopNest& nest) {
  std::vector<std::string> v;
  const std::vector<Node>* cur = &nest.roots;
  while (cur->size() == 1 && cur->front().kind == Node::Kind::loop) {
    v.push_back(cur->front().loop.var());
    cur = &cur->front().body;
  }
  return v;
}

inline LoopNest build_nest(const Cascade& c, const std::vector<std::size_t>& members, const NestOptions& opt = {}) {
  detail::Builder b(c, members, opt);
  b.build();
  b.nest.forced = opt.force;
  detail::analyze(c, b.nest, opt);
  return std::move(b.nest);
}

} // namespace einfuse
