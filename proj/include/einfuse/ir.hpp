#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "numerics.hpp"

namespace einfuse {

struct IrError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class RankKind { spatial, generational };

struct RankDecl {
  std::string name;
  std::int64_t extent = 1;
  RankKind kind = RankKind::spatial;
  std::int64_t step = 1;
  std::int64_t stop = 0; // generational: loop runs while value < stop; 0 = use extent

  bool generational() const { return kind == RankKind::generational; }
  std::int64_t bound() const { return generational() && stop > 0 ? stop : extent; }
  // number of loop iterations
  std::int64_t iterations() const { return (bound() + step - 1) / step; }
  bool operator==(const RankDecl&) const = default;
};

struct IndexTerm {
  std::string rank;
  std::int64_t coeff = 1;
  bool operator==(const IndexTerm&) const = default;
};

// a*v + b, or v - w (+ b) for sliding windows
struct IndexExpr {
  std::vector<IndexTerm> terms;
  std::int64_t offset = 0;

  static IndexExpr var(std::string r, std::int64_t off = 0) { return {{{std::move(r), 1}}, off}; }
  static IndexExpr constant(std::int64_t v) { return {{}, v}; }
  static IndexExpr affine(std::string r, std::int64_t a, std::int64_t b) { return {{{std::move(r), a}}, b}; }
  static IndexExpr window(std::string r, std::string w, std::int64_t off = 0) {
    return {{{std::move(r), 1}, {std::move(w), -1}}, off};
  }

  bool is_constant() const { return terms.empty(); }
  bool is_plain() const { return terms.size() == 1 && terms[0].coeff == 1 && offset == 0; }
  bool is_window() const {
    return terms.size() == 2 && terms[0].coeff == 1 && terms[1].coeff == -1;
  }
  // the rank a single-term expression moves with
  const std::string* lead() const { return terms.empty() ? nullptr : &terms[0].rank; }
  bool uses(const std::string& r) const {
    for (auto& t : terms)
      if (t.rank == r) return true;
    return false;
  }
  bool operator==(const IndexExpr&) const = default;
};

struct TensorDecl {
  std::string name;
  std::vector<std::string> ranks;
  bool operator==(const TensorDecl&) const = default;
};

struct TensorAccess {
  std::string tensor;
  std::vector<IndexExpr> indices;
  bool operator==(const TensorAccess&) const = default;
};

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { exp, log, sqrt, rsqrt, silu, sigmoid, softplus, square, negate };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { access, binary, unary, constant };
  Kind kind = Kind::constant;
  TensorAccess access;
  BinaryOp bop = BinaryOp::add;
  UnaryOp uop = UnaryOp::exp;
  double value = 0;
  ExprPtr lhs, rhs; // unary uses lhs
};

inline ExprPtr make_access(TensorAccess a) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::access;
  e->access = std::move(a);
  return e;
}
inline ExprPtr make_binary(BinaryOp op, ExprPtr l, ExprPtr r) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::binary;
  e->bop = op;
  e->lhs = std::move(l);
  e->rhs = std::move(r);
  return e;
}
inline ExprPtr make_unary(UnaryOp op, ExprPtr c) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::unary;
  e->uop = op;
  e->lhs = std::move(c);
  return e;
}
inline ExprPtr make_constant(double v) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::constant;
  e->value = v;
  return e;
}

inline bool expr_equal(const ExprPtr& a, const ExprPtr& b) {
  if (!a || !b) return a == b;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
  case Expr::Kind::access: return a->access == b->access;
  case Expr::Kind::constant: return a->value == b->value;
  case Expr::Kind::unary: return a->uop == b->uop && expr_equal(a->lhs, b->lhs);
  case Expr::Kind::binary:
    return a->bop == b->bop && expr_equal(a->lhs, b->lhs) && expr_equal(a->rhs, b->rhs);
  }
  return false;
}

template <class F>
void for_each_access(const ExprPtr& e, F&& f) {
  if (!e) return;
  if (e->kind == Expr::Kind::access) f(e->access);
  for_each_access(e->lhs, f);
  for_each_access(e->rhs, f);
}

inline double apply_unary(UnaryOp op, double x) {
  switch (op) {
  case UnaryOp::exp: return std::exp(x);
  case UnaryOp::log: return std::log(x);
  case UnaryOp::sqrt: return std::sqrt(x);
  case UnaryOp::rsqrt: return rsqrt(x);
  case UnaryOp::silu: return silu(x);
  case UnaryOp::sigmoid: return sigmoid(x);
  case UnaryOp::softplus: return softplus(x);
  case UnaryOp::square: return x * x;
  case UnaryOp::negate: return -x;
  }
  return x;
}

inline double apply_binary(BinaryOp op, double a, double b) {
  switch (op) {
  case BinaryOp::add: return a + b;
  case BinaryOp::sub: return a - b;
  case BinaryOp::mul: return a * b;
  case BinaryOp::div: return a / b;
  }
  return 0;
}

inline const char* unary_name(UnaryOp op) {
  switch (op) {
  case UnaryOp::exp: return "exp";
  case UnaryOp::log: return "log";
  case UnaryOp::sqrt: return "sqrt";
  case UnaryOp::rsqrt: return "rsqrt";
  case UnaryOp::silu: return "silu";
  case UnaryOp::sigmoid: return "sigmoid";
  case UnaryOp::softplus: return "softplus";
  case UnaryOp::square: return "square";
  case UnaryOp::negate: return "neg";
  }
  return "?";
}

inline std::optional<UnaryOp> unary_from_name(const std::string& s) {
  static const std::pair<const char*, UnaryOp> table[] = {
      {"exp", UnaryOp::exp},         {"log", UnaryOp::log},         {"sqrt", UnaryOp::sqrt},
      {"rsqrt", UnaryOp::rsqrt},     {"silu", UnaryOp::silu},       {"sigmoid", UnaryOp::sigmoid},
      {"softplus", UnaryOp::softplus}, {"square", UnaryOp::square}, {"neg", UnaryOp::negate}};
  for (auto& [n, op] : table)
    if (s == n) return op;
  return std::nullopt;
}

struct Assignment {
  TensorAccess output;
  ExprPtr body;
  bool accumulate = false; // "+=": sum over ranks not in the output
};

struct EinsumDecl {
  int id = 0;
  std::vector<int> members;          // original ids when several Einsums were merged
  std::vector<Assignment> outputs;   // more than one only for merged multi-output Einsums
  std::vector<Assignment> init;      // evaluated instead of outputs at generational index 0

  bool has_init() const { return !init.empty(); }
  std::string label() const {
    if (members.size() < 2) return std::to_string(id);
    std::string s;
    for (int m : members) s += (s.empty() ? "" : "+") + std::to_string(m);
    return s;
  }
  std::vector<std::string> output_tensors() const {
    std::vector<std::string> v;
    for (auto& a : outputs) v.push_back(a.output.tensor);
    return v;
  }
  bool writes(const std::string& t) const {
    for (auto& a : outputs)
      if (a.output.tensor == t) return true;
    return false;
  }
};

// a tensor assembled from parts stacked along one rank (shared-input merging)
struct ConcatSpec {
  std::string result;
  std::string rank;
  std::vector<std::string> parts;
  bool operator==(const ConcatSpec&) const = default;
};

struct Cascade {
  std::vector<RankDecl> ranks;
  std::vector<TensorDecl> tensors;
  std::vector<EinsumDecl> einsums;
  std::vector<ConcatSpec> concats;

  const RankDecl* find_rank(const std::string& n) const {
    for (auto& r : ranks)
      if (r.name == n) return &r;
    return nullptr;
  }
  const RankDecl& rank(const std::string& n) const {
    if (auto* r = find_rank(n)) return *r;
    throw IrError("undeclared rank " + n);
  }
  int rank_order(const std::string& n) const {
    for (std::size_t i = 0; i < ranks.size(); ++i)
      if (ranks[i].name == n) return static_cast<int>(i);
    return static_cast<int>(ranks.size());
  }
  const TensorDecl* find_tensor(const std::string& n) const {
    for (auto& t : tensors)
      if (t.name == n) return &t;
    return nullptr;
  }
  const TensorDecl& tensor(const std::string& n) const {
    if (auto* t = find_tensor(n)) return *t;
    throw IrError("undeclared tensor " + n);
  }
  std::int64_t tensor_size(const std::string& n) const {
    std::int64_t s = 1;
    for (auto& r : tensor(n).ranks) s *= rank(r).extent;
    return s;
  }
  std::vector<std::int64_t> tensor_shape(const std::string& n) const {
    std::vector<std::int64_t> s;
    for (auto& r : tensor(n).ranks) s.push_back(rank(r).extent);
    return s;
  }
  std::optional<std::size_t> index_of(int id) const {
    for (std::size_t i = 0; i < einsums.size(); ++i)
      if (einsums[i].id == id) return i;
    return std::nullopt;
  }
  // first Einsum writing t
  std::optional<std::size_t> producer(const std::string& t) const {
    for (std::size_t i = 0; i < einsums.size(); ++i)
      if (einsums[i].writes(t)) return i;
    return std::nullopt;
  }
  const ConcatSpec* find_concat(const std::string& t) const {
    for (auto& c : concats)
      if (c.result == t) return &c;
    return nullptr;
  }
};

// rank helpers ---------------------------------------------------------------

// variable spelling used in the text format: lower-case rank name
inline std::string var_name(const std::string& rank) {
  std::string s = rank;
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}
inline std::string rank_name(const std::string& var) {
  std::string s = var;
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

using RankSet = std::set<std::string>;

inline void collect_ranks(const TensorAccess& a, RankSet& out) {
  for (auto& ix : a.indices)
    for (auto& t : ix.terms) out.insert(t.rank);
}

inline RankSet output_ranks(const EinsumDecl& e) {
  RankSet s;
  for (auto& a : e.outputs) collect_ranks(a.output, s);
  return s;
}

inline RankSet body_ranks(const EinsumDecl& e) {
  RankSet s;
  for (auto& a : e.outputs) for_each_access(a.body, [&](const TensorAccess& x) { collect_ranks(x, s); });
  return s;
}

// ranks summed over: right-hand-side ranks absent from the outputs
inline RankSet reduction_ranks(const EinsumDecl& e) {
  RankSet out = output_ranks(e), red;
  for (auto& r : body_ranks(e))
    if (!out.count(r)) red.insert(r);
  return red;
}

inline RankSet rank_set(const EinsumDecl& e) {
  RankSet s = output_ranks(e);
  for (auto& r : body_ranks(e)) s.insert(r);
  return s;
}

struct RankExtent {
  std::string name;
  std::int64_t extent;
  bool operator==(const RankExtent&) const = default;
};

// ranks in cascade declaration order, with loop trip counts
inline std::vector<RankExtent> iteration_space(const EinsumDecl& e, const Cascade& c) {
  std::vector<RankExtent> v;
  for (auto& r : rank_set(e)) {
    auto* d = c.find_rank(r);
    if (!d) throw IrError("einsum " + std::to_string(e.id) + ": undeclared rank " + r);
    v.push_back({r, d->iterations()});
  }
  std::sort(v.begin(), v.end(), [&](auto& a, auto& b) { return c.rank_order(a.name) < c.rank_order(b.name); });
  return v;
}

inline std::vector<std::string> sorted_ranks(const RankSet& s, const Cascade& c) {
  std::vector<std::string> v(s.begin(), s.end());
  std::sort(v.begin(), v.end(), [&](auto& a, auto& b) {
    int oa = c.rank_order(a), ob = c.rank_order(b);
    return oa != ob ? oa < ob : a < b;
  });
  return v;
}

inline std::optional<std::string> generational_rank(const EinsumDecl& e, const Cascade& c) {
  for (auto& r : rank_set(e))
    if (auto* d = c.find_rank(r); d && d->generational()) return r;
  return std::nullopt;
}

inline std::vector<TensorAccess> reads(const EinsumDecl& e, bool with_init = true) {
  std::vector<TensorAccess> v;
  for (auto& a : e.outputs) for_each_access(a.body, [&](const TensorAccess& x) { v.push_back(x); });
  if (with_init)
    for (auto& a : e.init) for_each_access(a.body, [&](const TensorAccess& x) { v.push_back(x); });
  return v;
}

// reads with init-clause indices written relative to the generational rank
// (a literal 0 on the generational dimension is the current value there)
inline std::vector<TensorAccess> normalized_reads(const EinsumDecl& e, const Cascade& c) {
  std::vector<TensorAccess> v = reads(e, false);
  auto g = generational_rank(e, c);
  for (auto& a : e.init)
    for_each_access(a.body, [&](const TensorAccess& x) {
      TensorAccess y = x;
      if (g)
        if (auto* t = c.find_tensor(x.tensor))
          for (std::size_t k = 0; k < y.indices.size() && k < t->ranks.size(); ++k)
            if (t->ranks[k] == *g && y.indices[k].is_constant() && y.indices[k].offset == 0) y.indices[k] = IndexExpr::var(*g);
      v.push_back(y);
    });
  return v;
}

inline std::set<std::string> read_tensors(const EinsumDecl& e) {
  std::set<std::string> s;
  for (auto& a : reads(e)) s.insert(a.tensor);
  return s;
}

// a read of a tensor carried across generations (produced by this or a later Einsum)
inline bool is_recurrent_read(const Cascade& c, std::size_t reader, const TensorAccess& a) {
  auto p = c.producer(a.tensor);
  return p && *p >= reader;
}

// forward producer->consumer edges (u < v), recurrent back-edges excluded
inline std::vector<std::pair<std::size_t, std::size_t>> edges(const Cascade& c) {
  std::vector<std::pair<std::size_t, std::size_t>> v;
  for (std::size_t j = 0; j < c.einsums.size(); ++j) {
    std::set<std::size_t> seen;
    for (auto& t : read_tensors(c.einsums[j]))
      if (auto p = c.producer(t); p && *p < j && seen.insert(*p).second) v.push_back({*p, j});
  }
  std::sort(v.begin(), v.end());
  return v;
}

inline bool adjacent(const Cascade& c, std::size_t up, std::size_t dwn) {
  for (auto& t : read_tensors(c.einsums[dwn]))
    if (c.einsums[up].writes(t) && up < dwn) return true;
  return false;
}

// consumers (forward, in order) of tensor t
inline std::vector<std::size_t> consumers(const Cascade& c, const std::string& t) {
  std::vector<std::size_t> v;
  auto p = c.producer(t);
  for (std::size_t j = 0; j < c.einsums.size(); ++j)
    if ((!p || j > *p) && read_tensors(c.einsums[j]).count(t)) v.push_back(j);
  return v;
}

inline bool is_intermediate(const Cascade& c, const std::string& t) {
  return c.producer(t) && !consumers(c, t).empty();
}

inline bool is_cascade_input(const Cascade& c, const std::string& t) { return !c.producer(t); }

} // namespace einfuse
