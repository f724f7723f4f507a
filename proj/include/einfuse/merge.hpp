#pragma once

// Shared-input merging: Einsums reading one common tensor become one Einsum.
//  - structurally identical bodies (GEMMs against different weights) are packed
//    into one larger Einsum whose output stacks the member outputs along a
//    fresh rank; consumers read slices of it.
//  - otherwise, members with identical iteration spaces become a single
//    multi-output Einsum.

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "ir.hpp"
#include "validate.hpp"

namespace einfuse {

struct MergeResult {
  Cascade cascade;
  std::vector<Diagnostic> diagnostics;
};

namespace detail {

inline ExprPtr rename_expr(const ExprPtr& e, const std::function<void(TensorAccess&)>& f) {
  if (!e) return e;
  auto n = std::make_shared<Expr>(*e);
  if (n->kind == Expr::Kind::access) f(n->access);
  n->lhs = rename_expr(e->lhs, f);
  n->rhs = rename_expr(e->rhs, f);
  return n;
}

// canonical form of a member body with its weight and private rank blanked out
inline std::optional<std::pair<std::string, std::string>> stack_key(const Cascade& c, const EinsumDecl& e,
                                                                   const std::string& shared, std::size_t& dim,
                                                                   std::string& weight, std::string& rank) {
  if (e.outputs.size() != 1 || e.has_init()) return std::nullopt;
  auto& a = e.outputs[0];
  auto* in = c.find_tensor(shared);
  if (!in) return std::nullopt;
  std::set<std::string> in_ranks(in->ranks.begin(), in->ranks.end());
  int found = 0;
  for (std::size_t k = 0; k < a.output.indices.size(); ++k) {
    auto& r = c.tensor(a.output.tensor).ranks[k];
    if (!in_ranks.count(r)) {
      dim = k;
      rank = r;
      ++found;
    }
  }
  if (found != 1) return std::nullopt;
  int wcount = 0;
  for_each_access(a.body, [&](const TensorAccess& x) {
    if (x.tensor != shared && std::any_of(x.indices.begin(), x.indices.end(), [&](auto& ix) { return ix.uses(rank); })) {
      weight = x.tensor;
      ++wcount;
    }
  });
  if (wcount != 1 || c.producer(weight)) return std::nullopt;
  auto blank = rename_expr(a.body, [&](TensorAccess& x) {
    if (x.tensor == weight) x.tensor = "$W";
    for (auto& ix : x.indices)
      for (auto& t : ix.terms)
        if (t.rank == rank) t.rank = "$F";
  });
  TensorAccess o = a.output;
  o.tensor = "$O";
  o.indices[dim] = IndexExpr::var("$F");
  // serialize cheaply for comparison
  std::string key;
  std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& x) {
    key += std::to_string(static_cast<int>(x->kind)) + ":";
    if (x->kind == Expr::Kind::access) {
      key += x->access.tensor + "[";
      for (auto& ix : x->access.indices) {
        for (auto& t : ix.terms) key += t.rank + "*" + std::to_string(t.coeff) + ",";
        key += std::to_string(ix.offset) + ";";
      }
      key += "]";
    } else if (x->kind == Expr::Kind::constant) {
      key += std::to_string(x->value);
    } else {
      key += std::to_string(static_cast<int>(x->kind == Expr::Kind::unary ? static_cast<int>(x->uop) : static_cast<int>(x->bop)));
      if (x->lhs) walk(x->lhs);
      if (x->rhs) walk(x->rhs);
    }
    key += ")";
  };
  walk(blank);
  std::string okey = std::to_string(dim) + (a.accumulate ? "+=" : "=");
  for (std::size_t k = 0; k < o.indices.size(); ++k)
    if (k != dim) okey += c.tensor(a.output.tensor).ranks[k] + ",";
  return std::pair{okey, key};
}

} // namespace detail

inline MergeResult merge_shared_inputs(const Cascade& in, const std::vector<std::vector<int>>& sets) {
  MergeResult res{in, {}};
  Cascade& c = res.cascade;
  for (auto& set : sets) {
    if (set.size() < 2) continue;
    std::vector<std::size_t> pos;
    bool missing = false;
    for (int id : set) {
      auto p = c.index_of(id);
      if (!p) missing = true;
      else pos.push_back(*p);
    }
    if (missing) {
      res.diagnostics.push_back({"merge-unknown-id", "merge set references an unknown Einsum"});
      continue;
    }
    std::sort(pos.begin(), pos.end());
    // common input tensor
    std::set<std::string> common = read_tensors(c.einsums[pos[0]]);
    for (auto p : pos) {
      std::set<std::string> r = read_tensors(c.einsums[p]), keep;
      for (auto& t : common)
        if (r.count(t)) keep.insert(t);
      common = keep;
    }
    // prefer an intermediate as the shared input (weights are never shared)
    std::string shared;
    for (auto& t : common)
      if (c.producer(t)) shared = t;
    if (shared.empty() && !common.empty()) shared = *common.begin();
    if (shared.empty()) {
      res.diagnostics.push_back({"merge-incompatible", "members share no input tensor", c.einsums[pos[0]].id});
      continue;
    }

    Cascade trial = c;
    std::vector<int> member_ids;
    for (auto p : pos) {
      auto& e = c.einsums[p];
      if (e.members.empty()) member_ids.push_back(e.id);
      else member_ids.insert(member_ids.end(), e.members.begin(), e.members.end());
    }

    // try the stacked form
    bool stacked = true;
    std::vector<std::size_t> dims(pos.size());
    std::vector<std::string> weights(pos.size()), ranks(pos.size());
    std::optional<std::pair<std::string, std::string>> key0;
    for (std::size_t k = 0; k < pos.size() && stacked; ++k) {
      auto key = detail::stack_key(c, c.einsums[pos[k]], shared, dims[k], weights[k], ranks[k]);
      if (!key || (key0 && *key != *key0)) stacked = false;
      if (!key0) key0 = key;
    }
    std::string suffix;
    for (int id : member_ids) suffix += (suffix.empty() ? "" : "_") + std::to_string(id);

    EinsumDecl merged;
    merged.id = c.einsums[pos[0]].id;
    merged.members = member_ids;
    if (stacked) {
      auto& first = c.einsums[pos[0]];
      std::string frank = "F" + suffix;
      std::int64_t total = 0;
      std::vector<std::int64_t> offsets;
      std::string outname, wname;
      for (std::size_t k = 0; k < pos.size(); ++k) {
        offsets.push_back(total);
        total += c.rank(ranks[k]).extent;
        outname += (k ? "_" : "") + c.einsums[pos[k]].outputs[0].output.tensor;
        wname += (k ? "_" : "") + weights[k];
      }
      trial.ranks.push_back({frank, total});
      TensorDecl wt = c.tensor(weights[0]);
      auto wdim = std::find(wt.ranks.begin(), wt.ranks.end(), ranks[0]) - wt.ranks.begin();
      wt.name = wname;
      wt.ranks[static_cast<std::size_t>(wdim)] = frank;
      TensorDecl ot = c.tensor(first.outputs[0].output.tensor);
      ot.name = outname;
      ot.ranks[dims[0]] = frank;
      trial.tensors.push_back(wt);
      trial.tensors.push_back(ot);
      trial.concats.push_back({wname, frank, weights});
      Assignment a = first.outputs[0];
      std::string r0 = ranks[0], w0 = weights[0];
      a.output.tensor = outname;
      a.output.indices[dims[0]] = IndexExpr::var(frank);
      a.body = detail::rename_expr(a.body, [&](TensorAccess& x) {
        if (x.tensor == w0) x.tensor = wname;
        for (auto& ix : x.indices)
          for (auto& t : ix.terms)
            if (t.rank == r0) t.rank = frank;
      });
      merged.outputs.push_back(a);
      // consumers read slices of the stacked output
      std::map<std::string, std::int64_t> slice;
      for (std::size_t k = 0; k < pos.size(); ++k) slice[c.einsums[pos[k]].outputs[0].output.tensor] = offsets[k];
      auto fix = [&](TensorAccess& x) {
        auto it = slice.find(x.tensor);
        if (it == slice.end()) return;
        x.tensor = outname;
        x.indices[dims[0]].offset += it->second;
      };
      for (auto& e : trial.einsums) {
        for (auto& as : e.outputs) as.body = detail::rename_expr(as.body, fix);
        for (auto& as : e.init) as.body = detail::rename_expr(as.body, fix);
      }
    } else {
      auto is0 = rank_set(c.einsums[pos[0]]);
      bool same = true;
      for (auto p : pos)
        if (rank_set(c.einsums[p]) != is0 || c.einsums[p].has_init()) same = false;
      if (!same) {
        res.diagnostics.push_back({"merge-incompatible", "members are neither structurally identical nor shape-compatible",
                                   c.einsums[pos[0]].id});
        continue;
      }
      for (auto p : pos)
        for (auto& a : c.einsums[p].outputs) merged.outputs.push_back(a);
    }
    // replace members (slice rewrites above were applied to trial's copies)
    std::vector<EinsumDecl> es;
    for (std::size_t i = 0; i < trial.einsums.size(); ++i) {
      if (i == pos[0]) es.push_back(merged);
      else if (std::find(pos.begin(), pos.end(), i) == pos.end()) es.push_back(trial.einsums[i]);
    }
    trial.einsums = std::move(es);
    if (stacked) {
      // member outputs no longer exist
      std::set<std::string> gone;
      for (auto p : pos) gone.insert(c.einsums[p].outputs[0].output.tensor);
      std::erase_if(trial.tensors, [&](const TensorDecl& t) { return gone.count(t.name) > 0; });
    }
    auto diags = validate(trial);
    if (has_errors(diags)) {
      res.diagnostics.push_back({"merge-invalid", "merged cascade fails validation: " + to_string(diags.front()),
                                 c.einsums[pos[0]].id});
      continue;
    }
    c = std::move(trial);
  }
  return res;
}

// the default grouping for the Mamba layer
inline std::vector<std::vector<int>> mamba1_merge_sets(bool merge_abar_bbar = true) {
  std::vector<std::vector<int>> v{{7, 8}, {11, 12, 13}};
  if (merge_abar_bbar) v.push_back({16, 17});
  return v;
}

} // namespace einfuse
