#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "ir.hpp"

namespace einfuse {

struct Diagnostic {
  std::string code;     // stable machine-readable tag
  std::string message;
  int einsum = -1;      // Einsum id, -1 if not tied to one
  int line = 0, column = 0;
  bool warning = false;
};

inline std::string to_string(const Diagnostic& d) {
  std::ostringstream os;
  if (d.line > 0) os << d.line << ":" << d.column << ": ";
  os << (d.warning ? "warning" : "error") << " [" << d.code << "] ";
  if (d.einsum >= 0) os << "einsum " << d.einsum << ": ";
  os << d.message;
  return os.str();
}

inline bool has_errors(const std::vector<Diagnostic>& ds) {
  for (auto& d : ds)
    if (!d.warning) return true;
  return false;
}

namespace detail {

struct Validator {
  const Cascade& c;
  std::vector<Diagnostic> out;

  void err(std::string code, std::string msg, int id = -1) { out.push_back({std::move(code), std::move(msg), id}); }

  void check_access(const TensorAccess& a, int id, bool is_output) {
    auto* t = c.find_tensor(a.tensor);
    if (!t) {
      err("undeclared-tensor", "tensor " + a.tensor + " is not declared", id);
      return;
    }
    if (t->ranks.size() != a.indices.size()) {
      err("arity-mismatch", a.tensor + " has " + std::to_string(t->ranks.size()) + " ranks but is indexed with " +
                                std::to_string(a.indices.size()), id);
      return;
    }
    for (std::size_t k = 0; k < a.indices.size(); ++k) {
      auto& ix = a.indices[k];
      for (auto& term : ix.terms)
        if (!c.find_rank(term.rank)) err("undeclared-rank", "rank " + term.rank + " is not declared", id);
      bool ok = ix.terms.size() <= 1 || ix.is_window();
      if (ok && ix.terms.size() == 1 && ix.terms[0].coeff == 0) ok = false;
      if (!ok) err("bad-index-form", "index " + std::to_string(k) + " of " + a.tensor + " is neither affine nor a window", id);
      if (is_output && !(ix.is_plain() && ix.terms[0].rank == t->ranks[k]))
        err("bad-output-index", "output " + a.tensor + " dimension " + std::to_string(k) + " must be indexed by its own rank " +
                                    var_name(t->ranks[k]), id);
    }
  }

  void run() {
    if (c.einsums.empty()) err("no-einsums", "cascade contains no Einsums");
    std::set<std::string> names;
    for (auto& r : c.ranks) {
      if (!names.insert(r.name).second) err("duplicate-rank", "rank " + r.name + " declared twice");
      if (r.extent < 1) err("bad-extent", "rank " + r.name + " has extent " + std::to_string(r.extent));
      if (r.step < 1) err("bad-step", "rank " + r.name + " has step " + std::to_string(r.step));
      if (r.generational() && r.stop < 0) err("bad-stop", "rank " + r.name + " has negative stop bound");
    }
    names.clear();
    for (auto& t : c.tensors) {
      if (!names.insert(t.name).second) err("duplicate-tensor", "tensor " + t.name + " declared twice");
      std::set<std::string> rs;
      for (auto& r : t.ranks) {
        if (!c.find_rank(r)) err("undeclared-rank", "tensor " + t.name + " uses undeclared rank " + r);
        if (!rs.insert(r).second) err("duplicate-rank-in-signature", "tensor " + t.name + " repeats rank " + r);
      }
    }
    for (auto& cc : c.concats) {
      auto* res = c.find_tensor(cc.result);
      if (!res || cc.parts.empty()) {
        err("bad-concat", "concat " + cc.result + " is malformed");
        continue;
      }
      auto pos = std::find(res->ranks.begin(), res->ranks.end(), cc.rank);
      if (pos == res->ranks.end()) {
        err("bad-concat", "concat " + cc.result + " does not have rank " + cc.rank);
        continue;
      }
      std::size_t k = static_cast<std::size_t>(pos - res->ranks.begin());
      std::int64_t total = 0;
      for (auto& p : cc.parts) {
        auto* pt = c.find_tensor(p);
        if (!pt || pt->ranks.size() != res->ranks.size()) {
          err("bad-concat", "concat part " + p + " does not match " + cc.result);
          continue;
        }
        for (std::size_t d = 0; d < pt->ranks.size(); ++d)
          if (d != k && pt->ranks[d] != res->ranks[d]) err("bad-concat", "concat part " + p + " differs off the stacked rank");
        if (auto* r = c.find_rank(pt->ranks[k])) total += r->extent;
      }
      if (auto* r = c.find_rank(cc.rank); r && r->extent != total)
        err("bad-concat", "concat " + cc.result + " extent " + std::to_string(r->extent) + " != sum of parts " +
                              std::to_string(total));
    }

    std::set<int> ids;
    std::map<std::string, int> producer;
    for (std::size_t i = 0; i < c.einsums.size(); ++i) {
      auto& e = c.einsums[i];
      if (!ids.insert(e.id).second) err("duplicate-id", "Einsum id used twice", e.id);
      if (e.outputs.empty()) err("no-output", "Einsum has no output", e.id);
      for (auto& a : e.outputs) {
        check_access(a.output, e.id, true);
        for_each_access(a.body, [&](const TensorAccess& x) { check_access(x, e.id, false); });
        auto [it, fresh] = producer.emplace(a.output.tensor, e.id);
        if (!fresh)
          err("multiple-producers", "tensor " + a.output.tensor + " is written by Einsums " + std::to_string(it->second) +
                                        " and " + std::to_string(e.id), e.id);
        if (c.find_concat(a.output.tensor)) err("multiple-producers", "tensor " + a.output.tensor + " is a concat result", e.id);
      }
      // every rank must be covered by the outputs unless summed
      RankSet iter = rank_set(e);
      for (auto& a : e.outputs) {
        RankSet o;
        collect_ranks(a.output, o);
        if (a.accumulate) continue;
        for (auto& r : iter)
          if (!o.count(r))
            err("unreduced-rank", "rank " + r + " appears only on the right-hand side of " + a.output.tensor +
                                      " without a reduction (use +=)", e.id);
      }
      int gens = 0;
      for (auto& r : iter)
        if (auto* d = c.find_rank(r); d && d->generational()) ++gens;
      if (gens > 1) err("multiple-generational-ranks", "more than one generational rank", e.id);

      // reads of tensors produced here or later are recurrences
      bool recurrent = false;
      for (auto& a : e.outputs)
        for_each_access(a.body, [&](const TensorAccess& x) {
          auto p = c.producer(x.tensor);
          if (!p || *p < i) return;
          bool carried = false;
          for (auto& ix : x.indices)
            if (ix.terms.size() == 1 && ix.terms[0].coeff == 1 && ix.offset < 0)
              if (auto* d = c.find_rank(ix.terms[0].rank); d && d->generational()) carried = true;
          if (!carried)
            err("read-before-produce", "reads " + x.tensor + " before it is produced (order is not topological)", e.id);
          else
            recurrent = true;
        });
      if (recurrent && !e.has_init()) err("missing-initialization", "recurrent read without an init clause", e.id);
      if (e.has_init()) {
        auto g = generational_rank(e, c);
        if (!g) err("bad-init", "init clause on an Einsum without a generational rank", e.id);
        for (auto& a : e.init) {
          if (!e.writes(a.output.tensor)) {
            err("bad-init", "init writes " + a.output.tensor + " which the Einsum does not produce", e.id);
            continue;
          }
          for_each_access(a.body, [&](const TensorAccess& x) { check_access(x, e.id, false); });
          auto* t = c.find_tensor(a.output.tensor);
          if (!t || t->ranks.size() != a.output.indices.size()) continue;
          for (std::size_t k = 0; k < t->ranks.size(); ++k) {
            auto& ix = a.output.indices[k];
            bool ok = g && t->ranks[k] == *g ? (ix.is_constant() && ix.offset == 0)
                                             : (ix.is_plain() && ix.terms[0].rank == t->ranks[k]);
            if (!ok) err("bad-init", "init output index " + std::to_string(k) + " must be 0 on the generational rank and plain elsewhere", e.id);
          }
        }
      }
    }
  }
};

} // namespace detail

inline std::vector<Diagnostic> validate(const Cascade& c) {
  detail::Validator v{c, {}};
  v.run();
  return v.out;
}

} // namespace einfuse
