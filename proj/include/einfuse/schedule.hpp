#pragma once

// Lowering fusion groups to loop nests, the stationarity checker and the
// pseudocode printer.

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fusion.hpp"
#include "interpreter.hpp"
#include "ir.hpp"
#include "loop_nest.hpp"
#include "merge.hpp"
#include "text_format.hpp"
#include "validate.hpp"

namespace einfuse {

struct LowerOptions {
  std::map<std::string, std::int64_t> tiles;
  std::vector<std::string> order; // requested outer loop order
  bool force = false;             // build a requested order even when it breaks stationarity
  std::set<std::string> spill;
  std::int64_t buffer_elements = 0; // on-chip tile limit per intermediate, 0 = unchecked
};

struct Lowered {
  LoopNest nest;
  std::vector<Diagnostic> diagnostics;
  bool ok() const { return !has_errors(diagnostics); }
};

// static check of the dataflow constraints: for every on-chip link the
// producer finishes an element (or tile) before the consumer reads it inside
// shared loops, and the stationary ranks are the outermost loops.
inline std::vector<Diagnostic> check_stationarity(const LoopNest& nest, const Cascade& c,
                                                  const std::vector<std::vector<std::string>>& stationary = {}) {
  std::vector<Diagnostic> out;
  auto paths = detail::stmt_paths(nest);
  for (auto& [T, b] : nest.buffers) {
    if (!b.produced_here || b.residency.kind == ResidencyKind::backing || b.residency.kind == ResidencyKind::multipass)
      continue;
    auto p = *c.producer(T);
    auto& ep = c.einsums[p];
    const TensorAccess* out_acc = nullptr;
    for (auto& a : ep.outputs)
      if (a.output.tensor == T) out_acc = &a.output;
    RankSet red = reduction_ranks(ep);
    for (auto j : b.onchip_readers) {
      auto& pi = paths.at(p);
      auto& ji = paths.at(j);
      if (pi.order >= ji.order) {
        out.push_back({"order", "E" + c.einsums[j].label() + " reads " + T + " before it is produced", c.einsums[j].id});
        continue;
      }
      std::vector<const Loop*> common;
      for (std::size_t k = 0; k < pi.path.size() && k < ji.path.size() && pi.path[k]->id == ji.path[k]->id; ++k)
        common.push_back(pi.path[k]);
      for (auto* l : common)
        if (red.count(l->rank))
          out.push_back({"not-output-stationary", T + ": producer E" + ep.label() + " still reduces over " + l->rank +
                                                      " around its consumer", ep.id});
      for (std::size_t d = 0; d < out_acc->indices.size(); ++d) {
        auto& v = out_acc->indices[d].terms[0].rank;
        bool shared = false;
        for (auto* l : common)
          if (l->rank == v) shared = true;
        if (!shared)
          out.push_back({"not-input-stationary", T + ": rank " + v + " is not shared by E" + ep.label() + " and E" +
                                                     c.einsums[j].label(), c.einsums[j].id});
        for (auto& x : normalized_reads(c.einsums[j], c))
          if (x.tensor == T && !is_recurrent_read(c, j, x) && !x.indices[d].is_plain() &&
              !detail::reads_current_or_past(x.indices[d], v))
            out.push_back({"future-read", T + ": E" + c.einsums[j].label() + " reads ahead along " + v, c.einsums[j].id});
      }
    }
  }
  // stationary ranks lead every statement of their segment
  for (std::size_t k = 0; k < nest.einsums.size(); ++k) {
    auto seg = nest.segment_of[k];
    if (seg >= stationary.size()) continue;
    auto& want = stationary[seg];
    auto& info = paths.at(nest.einsums[k]);
    auto& path = info.path;
    // a bridged segment runs once per iteration of the loops it shares with
    // earlier segments; stationarity is judged below those
    std::size_t skip = 0;
    for (std::size_t q = 0; q < k; ++q)
      if (nest.segment_of[q] < seg) skip = std::max(skip, detail::common_loops(info, paths.at(nest.einsums[q])).size());
    std::set<std::string> lead;
    for (std::size_t q = 0; q < skip && q < path.size(); ++q) lead.insert(path[q]->rank);
    std::size_t budget = 0;
    for (std::size_t q = skip; q < path.size() && budget < want.size(); ++q) {
      if (path[q]->kind == LoopKind::tile_inner) continue;
      lead.insert(path[q]->rank);
      ++budget;
    }
    for (auto& r : want)
      if (!lead.count(r))
        out.push_back({"stationary-not-outermost", "rank " + r + " is not among the outermost loops of E" +
                                                       c.einsums[nest.einsums[k]].label(), c.einsums[nest.einsums[k]].id});
  }
  return out;
}


inline Lowered lower(const FusionGroup& g, const Cascade& c, LowerOptions opt = {}) {
  Lowered res;
  RankSet present;
  for (auto m : g.members)
    for (auto& r : rank_set(c.einsums[m])) present.insert(r);
  for (auto& [r, t] : opt.tiles) {
    if (!present.count(r)) res.diagnostics.push_back({"bad-tile", "tile given for rank " + r + " which the group does not iterate"});
    else if (t < 1) res.diagnostics.push_back({"bad-tile", "tile for rank " + r + " must be positive"});
  }
  if (has_errors(res.diagnostics)) return res;
  auto st = stationary_ranks(c, g);
  // sub-groups of a bridged group each have their own stationary set
  std::vector<std::vector<std::string>> seg_stationary;
  {
    auto starts = g.segment_starts;
    if (starts.empty()) starts.push_back(0);
    for (std::size_t s = 0; s < starts.size(); ++s) {
      FusionGroup sub;
      std::size_t a = starts[s], b = s + 1 < starts.size() ? starts[s + 1] : g.members.size();
      sub.members.assign(g.members.begin() + static_cast<std::ptrdiff_t>(a), g.members.begin() + static_cast<std::ptrdiff_t>(b));
      for (std::size_t k = 1; k < sub.members.size(); ++k)
        sub.chain.push_back(detail::intersect(rank_set(c.einsums[sub.members[k - 1]]), rank_set(c.einsums[sub.members[k]])));
      // a rank some member reduces over cannot lead that member's loops
      std::vector<std::string> want;
      for (auto& r : stationary_ranks(c, sub)) {
        bool reduced = false;
        for (auto m : sub.members)
          if (reduction_ranks(c.einsums[m]).count(r)) reduced = true;
        if (!reduced) want.push_back(r);
      }
      seg_stationary.push_back(want);
    }
  }
  // unit generational tiles put the recurrence innermost on purpose
  if (g.generational_tile && *g.generational_tile <= 1)
    for (auto m : g.members)
      if (auto gr = generational_rank(c.einsums[m], c))
        for (auto& w : seg_stationary) std::erase(w, *gr);
  if (opt.order.empty() && g.generational_tile) {
    auto m = detail::generational_mapping(c, g, *g.generational_tile);
    opt.order = m.order;
    for (auto& [r, t] : m.tiles) opt.tiles.emplace(r, t);
  }
  if (!opt.order.empty()) {
    // a requested order must start with the stationary ranks
    std::set<std::string> need(st.begin(), st.end());
    for (auto& r : opt.order) {
      if (need.empty()) break;
      if (need.count(r)) {
        need.erase(r);
        continue;
      }
      if (!present.count(r)) continue;
      std::string must;
      for (auto& s : st) must += s;
      Diagnostic d{"breaks-stationarity", "rank " + r + " ordered outside stationary rank(s) " + *need.begin() +
                                              "; the mapping must be " + must + "-stationary"};
      d.warning = opt.force;
      res.diagnostics.push_back(d);
      break;
    }
    if (!res.ok()) return res;
  }
  NestOptions no;
  no.tiles = opt.tiles;
  no.order = opt.order;
  no.force = opt.force;
  no.segment_starts = g.segment_starts;
  no.spill = opt.spill;
  res.nest = build_nest(c, g.members, no);
  if (!opt.force) {
    res.nest.stationary = st;
    auto diags = check_stationarity(res.nest, c, seg_stationary);
    for (auto& d : diags) res.diagnostics.push_back(d);
  } else {
    res.nest.stationary = outer_shared_loops(res.nest);
  }
  if (opt.buffer_elements > 0)
    for (auto& [t, b] : res.nest.buffers)
      if (b.residency.kind == ResidencyKind::tile) {
        std::int64_t n = 1;
        for (auto e : b.residency.extents) n *= e;
        if (n > opt.buffer_elements) {
          // name the rank whose tile blows the buffer
          auto& decl = c.tensor(t);
          std::string worst;
          std::int64_t big = 1;
          for (std::size_t d = 0; d < decl.ranks.size(); ++d)
            if (b.residency.extents[d] > big) big = b.residency.extents[d], worst = decl.ranks[d];
          res.diagnostics.push_back({"tile-exceeds-buffer", t + " keeps " + std::to_string(n) +
                                                                " elements live (rank " + worst + ")"});
        }
      }
  for (auto& d : res.nest.diagnostics) res.diagnostics.push_back(d);
  return res;
}

// several groups in one nest; the boundaries go through the backing store
// and the downstream group starts on a trigger
inline Lowered lower_fully_fused(const std::vector<FusionGroup>& groups, const Cascade& c, LowerOptions opt = {}) {
  if (groups.size() == 1) return lower(groups[0], c, opt);
  FusionGroup all;
  for (auto& g : groups) {
    std::size_t base = all.members.size();
    if (g.segment_starts.empty()) all.segment_starts.push_back(base);
    for (auto s : g.segment_starts) all.segment_starts.push_back(base + s);
    all.members.insert(all.members.end(), g.members.begin(), g.members.end());
    all.chain.insert(all.chain.end(), g.chain.begin(), g.chain.end());
  }
  return lower(all, c, opt);
}

// one nest per Einsum, whole tensors through the backing store; the members
// of a recurrence share only their generational loop
inline Schedule unfused_schedule(const Cascade& c) {
  Schedule s;
  NestOptions no;
  no.share = false;
  for (auto& g : greedy_stitch_groups(c, StitchPolicy::unfused)) s.push_back(build_nest(c, g.members, no));
  return s;
}

struct LoweredPlan {
  Schedule schedule;
  std::vector<Diagnostic> diagnostics;
  bool ok() const { return !has_errors(diagnostics); }
};

inline LoweredPlan lower_plan(const FusionPlan& plan, const Cascade& c, const LowerOptions& opt = {}) {
  LoweredPlan out;
  if (plan.policy == StitchPolicy::unfused) {
    out.schedule = unfused_schedule(c);
    return out;
  }
  for (auto& g : plan.groups) {
    auto l = lower(g, c, opt);
    for (auto& d : l.diagnostics) out.diagnostics.push_back(d);
    out.schedule.push_back(std::move(l.nest));
  }
  return out;
}

// pseudocode ------------------------------------------------------------------

struct PrintOptions {
  bool registers = false;       // unit-resident intermediates print as NAME_reg
  std::size_t first_group = 1;  // number of the nest's first group in headers
  bool group_headers = true;
};

namespace detail {

inline std::string loop_header(const Loop& l, const Cascade& c) {
  auto v = var_name(l.rank);
  auto& d = c.rank(l.rank);
  std::string bound = d.bound() == d.extent ? l.rank : std::to_string(d.bound());
  std::string step = l.step != 1 ? ", " + std::to_string(l.step) : "";
  switch (l.kind) {
  case LoopKind::full:
    if (l.step == 1) return "for " + v + " in range(" + bound + "):";
    return "for " + v + " in range(0, " + bound + step + "):";
  case LoopKind::tile_outer:
    return "for " + v + "0 in range(0, " + bound + ", " + std::to_string(l.tile * l.step) + "):";
  case LoopKind::tile_inner:
    return "for " + v + " in range(" + v + "0, min(" + v + "0 + " + std::to_string(l.tile * l.step) + ", " + bound + ")" +
           step + "):";
  }
  return "";
}

struct Printer {
  const Cascade& c;
  const LoopNest& nest;
  PrintOptions opt;
  std::ostringstream os;
  std::set<std::string> regs;
  std::size_t seg = static_cast<std::size_t>(-1);
  static constexpr std::size_t comment_col = 37;

  std::string fmt_expr(const ExprPtr& e) {
    if (regs.empty()) return format_expr(e);
    auto r = rename_expr(e, [&](TensorAccess& x) {
      if (regs.count(x.tensor)) {
        x.tensor += "_reg";
        x.indices.clear();
      }
    });
    auto s = format_expr(r);
    for (auto& t : regs) {
      std::string from = t + "_reg[]";
      for (auto p = s.find(from); p != std::string::npos; p = s.find(from)) s.replace(p, from.size(), t + "_reg");
    }
    return s;
  }
  std::string fmt_assign(const Assignment& a) {
    std::string lhs = regs.count(a.output.tensor) ? a.output.tensor + "_reg" : format_access(a.output);
    return lhs + (a.accumulate ? " += " : " = ") + fmt_expr(a.body);
  }

  void line(int depth, const std::string& text, const std::string& comment = "") {
    std::string s(static_cast<std::size_t>(depth) * 2, ' ');
    s += text;
    if (!comment.empty()) {
      if (s.size() + 1 < comment_col) s.resize(comment_col, ' ');
      else s += " ";
      s += "# " + comment;
    }
    os << s << "\n";
  }

  void header(std::size_t einsum) {
    if (!opt.group_headers) return;
    auto s = nest.segment(einsum);
    if (s == seg) return;
    seg = s;
    std::size_t a = 0, b = 0;
    bool first = true;
    for (std::size_t k = 0; k < nest.einsums.size(); ++k)
      if (nest.segment_of[k] == s) {
        if (first) a = nest.einsums[k], first = false;
        b = nest.einsums[k];
      }
    std::string ids = "E" + c.einsums[a].label() + (a == b ? "" : "-E" + c.einsums[b].label());
    os << "# Fusion Group " << opt.first_group + s << " (" << ids << ")\n";
  }

  std::size_t first_einsum(const Node& n) {
    if (n.kind == Node::Kind::stmt) return n.einsum;
    if (n.kind == Node::Kind::trigger) return n.einsum;
    for (auto& b : n.body) return first_einsum(b);
    return n.chain_owner;
  }

  std::string trigger_text(const Node& n) {
    const TriggerSpec* ts = nullptr;
    for (auto& t : nest.triggers)
      if (t.tensor == n.tensor) ts = &t;
    auto& decl = c.tensor(n.tensor);
    std::string what;
    bool partial = false;
    for (std::size_t d = 0; d < decl.ranks.size() && ts; ++d) {
      auto g = ts->granularity[d];
      if (g == c.rank(decl.ranks[d]).extent && g > 1) what += decl.ranks[d];
      else if (g > 1) partial = true;
    }
    std::string unit = partial ? "tile" : what.empty() ? "element" : what + "-fiber";
    if (partial && !what.empty()) unit = what + "-tile";
    return unit + " of " + n.tensor + " is ready here (transition to E" + c.einsums[n.einsum].label() + ")";
  }

  void stmt(const Node& n, int depth, bool comment) {
    auto& e = c.einsums[n.einsum];
    std::string label = comment ? "E" + e.label() : "";
    if (e.has_init()) {
      auto g = *generational_rank(e, c);
      line(depth, "if " + var_name(g) + " == 0:", label);
      for (auto& a : e.init) line(depth + 1, fmt_assign(a));
      line(depth, "else:");
      for (auto& a : e.outputs) line(depth + 1, fmt_assign(a));
      return;
    }
    for (std::size_t k = 0; k < e.outputs.size(); ++k) line(depth, fmt_assign(e.outputs[k]), k == 0 ? label : "");
  }

  void nodes(const std::vector<Node>& ns, int depth) {
    for (auto& n : ns) {
      if (depth == 0 || n.kind == Node::Kind::trigger) header(first_einsum(n));
      if (n.kind == Node::Kind::trigger) {
        line(depth, "# " + trigger_text(n));
        continue;
      }
      if (n.kind == Node::Kind::stmt) {
        header(n.einsum);
        stmt(n, depth, true);
        continue;
      }
      // the Einsum comment goes on the innermost loop it opened right above its statement
      bool tag = !n.body.empty() && n.body[0].kind == Node::Kind::stmt && n.chain_owner == n.body[0].einsum;
      if (tag) header(n.body[0].einsum);
      line(depth, loop_header(n.loop, c), tag ? "E" + c.einsums[n.body[0].einsum].label() : "");
      if (tag) {
        stmt(n.body[0], depth + 1, false);
        std::vector<Node> rest(n.body.begin() + 1, n.body.end());
        nodes(rest, depth + 1);
        continue;
      }
      nodes(n.body, depth + 1);
    }
  }
};

} // namespace detail

inline std::string to_pseudocode(const LoopNest& nest, const Cascade& c, const PrintOptions& opt = {}) {
  detail::Printer p{c, nest, opt, {}, {}};
  if (opt.registers)
    for (auto& [t, b] : nest.buffers)
      if (b.produced_here && b.residency.kind == ResidencyKind::unit) p.regs.insert(t);
  p.nodes(nest.roots, 0);
  return p.os.str();
}

inline std::string to_pseudocode(const Schedule& s, const Cascade& c, PrintOptions opt = {}) {
  std::string out;
  for (auto& n : s) {
    out += to_pseudocode(n, c, opt);
    std::set<std::size_t> segs(n.segment_of.begin(), n.segment_of.end());
    opt.first_group += segs.size();
  }
  return out;
}

} // namespace einfuse
