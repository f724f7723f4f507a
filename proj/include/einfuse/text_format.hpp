#pragma once

// Line-oriented cascade description format.
//
//   rank I(8) generational step=1 stop=8
//   tensor A : I(8)
//   concat W : F(8) = W1 | W2
//   einsum 1: Z[i] = A[i-1] * Z[i-1]
//   init: Z[0] = A[0] * B
//
// Several assignments in one Einsum are separated by ';'.

#include <cctype>
#include <charconv>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ir.hpp"
#include "validate.hpp"

namespace einfuse {

struct ParseResult {
  std::optional<Cascade> cascade;
  std::vector<Diagnostic> diagnostics;
  bool ok() const { return cascade.has_value() && !has_errors(diagnostics); }
};

namespace detail {

struct SyntaxError {
  std::string message;
  int column;
};

struct LineParser {
  const std::string& s;
  std::size_t p = 0;

  [[noreturn]] void fail(const std::string& m) const { throw SyntaxError{m, static_cast<int>(p) + 1}; }
  void ws() {
    while (p < s.size() && std::isspace(static_cast<unsigned char>(s[p]))) ++p;
  }
  bool eof() {
    ws();
    return p >= s.size();
  }
  bool peek(char ch) {
    ws();
    return p < s.size() && s[p] == ch;
  }
  bool peek2(const char* t) {
    ws();
    return s.compare(p, 2, t) == 0;
  }
  bool accept(char ch) {
    if (!peek(ch)) return false;
    ++p;
    return true;
  }
  void expect(char ch) {
    if (!accept(ch)) fail(std::string("expected '") + ch + "'");
  }
  std::string ident() {
    ws();
    std::size_t b = p;
    if (p < s.size() && (std::isalpha(static_cast<unsigned char>(s[p])) || s[p] == '_'))
      while (p < s.size() && (std::isalnum(static_cast<unsigned char>(s[p])) || s[p] == '_')) ++p;
    if (b == p) fail("expected identifier");
    return s.substr(b, p - b);
  }
  bool at_ident() {
    ws();
    return p < s.size() && (std::isalpha(static_cast<unsigned char>(s[p])) || s[p] == '_');
  }
  bool at_number() {
    ws();
    return p < s.size() && (std::isdigit(static_cast<unsigned char>(s[p])) || s[p] == '.');
  }
  std::int64_t integer() {
    ws();
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data() + p, s.data() + s.size(), v);
    if (ec != std::errc()) fail("expected integer");
    p = static_cast<std::size_t>(ptr - s.data());
    return v;
  }
  double number() {
    ws();
    const char* b = s.c_str() + p;
    char* e = nullptr;
    double v = std::strtod(b, &e);
    if (e == b) fail("expected number");
    p += static_cast<std::size_t>(e - b);
    return v;
  }

  // index: sum of [int*]var and int terms
  IndexExpr index() {
    IndexExpr ix;
    int sign = 1;
    if (accept('-')) sign = -1;
    for (;;) {
      if (at_number()) {
        std::int64_t v = integer();
        if (accept('*')) {
          std::string r = rank_name(ident());
          ix.terms.push_back({r, sign * v});
        } else {
          ix.offset += sign * v;
        }
      } else if (at_ident()) {
        ix.terms.push_back({rank_name(ident()), sign});
      } else {
        fail("expected index term");
      }
      if (accept('+')) sign = 1;
      else if (accept('-')) sign = -1;
      else break;
    }
    return ix;
  }

  TensorAccess access_after(std::string name) {
    TensorAccess a{std::move(name), {}};
    if (accept('[')) {
      if (!accept(']')) {
        do a.indices.push_back(index());
        while (accept(','));
        expect(']');
      }
    }
    return a;
  }

  ExprPtr primary() {
    if (accept('(')) {
      auto e = expr();
      expect(')');
      return e;
    }
    if (at_number()) return make_constant(number());
    if (at_ident()) {
      std::string n = ident();
      if (peek('(')) {
        auto op = unary_from_name(n);
        if (!op) fail("unknown function " + n);
        expect('(');
        auto e = expr();
        expect(')');
        return make_unary(*op, e);
      }
      return make_access(access_after(n));
    }
    fail("expected expression");
  }
  ExprPtr unary() {
    if (accept('-')) {
      if (at_number()) return make_constant(-number());
      return make_unary(UnaryOp::negate, unary());
    }
    return primary();
  }
  ExprPtr term() {
    auto l = unary();
    for (;;) {
      if (accept('*')) l = make_binary(BinaryOp::mul, l, unary());
      else if (accept('/')) l = make_binary(BinaryOp::div, l, unary());
      else return l;
    }
  }
  ExprPtr expr() {
    auto l = term();
    for (;;) {
      if (peek2("+=")) return l;
      if (accept('+')) l = make_binary(BinaryOp::add, l, term());
      else if (accept('-')) l = make_binary(BinaryOp::sub, l, term());
      else return l;
    }
  }

  Assignment assignment() {
    Assignment a;
    a.output = access_after(ident());
    if (peek2("+=")) {
      p += 2;
      a.accumulate = true;
    } else {
      expect('=');
    }
    a.body = expr();
    return a;
  }
  std::vector<Assignment> assignments() {
    std::vector<Assignment> v;
    do v.push_back(assignment());
    while (accept(';'));
    if (!eof()) fail("unexpected trailing text");
    return v;
  }
};

inline void declare_rank(Cascade& c, const std::string& name, std::int64_t extent, int line, std::vector<Diagnostic>& diags) {
  for (auto& r : c.ranks)
    if (r.name == name) {
      if (r.extent != extent)
        diags.push_back({"extent-conflict", "rank " + name + " declared with extents " + std::to_string(r.extent) + " and " +
                                                std::to_string(extent), -1, line, 1});
      return;
    }
  c.ranks.push_back({name, extent});
}

} // namespace detail

inline ParseResult parse(const std::string& text) {
  ParseResult res;
  Cascade c;
  std::vector<int> einsum_lines;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw.substr(0, raw.find('#'));
    detail::LineParser lp{line};
    if (lp.eof()) continue;
    try {
      std::string kw = lp.ident();
      if (kw == "rank") {
        std::string name = lp.ident();
        std::int64_t extent = 0;
        if (lp.accept('(')) {
          extent = lp.integer();
          lp.expect(')');
        }
        RankDecl d{name, extent};
        if (lp.at_ident()) {
          if (lp.ident() != "generational") lp.fail("expected 'generational'");
          d.kind = RankKind::generational;
          while (lp.at_ident()) {
            std::string key = lp.ident();
            lp.expect('=');
            std::int64_t v = lp.integer();
            if (key == "step") d.step = v;
            else if (key == "stop") d.stop = v;
            else lp.fail("unknown rank attribute " + key);
          }
        }
        if (!lp.eof()) lp.fail("unexpected trailing text");
        if (c.find_rank(name)) {
          res.diagnostics.push_back({"duplicate-rank", "rank " + name + " declared twice", -1, lineno, 1});
          continue;
        }
        if (d.extent == 0 && d.generational() && d.stop > 0) d.extent = d.stop;
        c.ranks.push_back(d);
      } else if (kw == "tensor") {
        TensorDecl t{lp.ident(), {}};
        lp.expect(':');
        if (!lp.eof()) {
          do {
            std::string r = lp.ident();
            lp.expect('(');
            std::int64_t e = lp.integer();
            lp.expect(')');
            auto it = std::find_if(c.ranks.begin(), c.ranks.end(), [&](auto& d) { return d.name == r; });
            if (it != c.ranks.end() && it->extent == 0) it->extent = e;
            else detail::declare_rank(c, r, e, lineno, res.diagnostics);
            t.ranks.push_back(r);
          } while (lp.accept(','));
        }
        if (!lp.eof()) lp.fail("unexpected trailing text");
        c.tensors.push_back(t);
      } else if (kw == "concat") {
        ConcatSpec cs;
        cs.result = lp.ident();
        lp.expect(':');
        cs.rank = lp.ident();
        lp.expect('=');
        do cs.parts.push_back(lp.ident());
        while (lp.accept('|'));
        if (!lp.eof()) lp.fail("unexpected trailing text");
        c.concats.push_back(cs);
      } else if (kw == "einsum") {
        EinsumDecl e;
        e.id = static_cast<int>(lp.integer());
        while (lp.accept('+')) {
          if (e.members.empty()) e.members.push_back(e.id);
          e.members.push_back(static_cast<int>(lp.integer()));
        }
        lp.expect(':');
        e.outputs = lp.assignments();
        c.einsums.push_back(std::move(e));
        einsum_lines.push_back(lineno);
      } else if (kw == "init") {
        lp.expect(':');
        if (c.einsums.empty()) lp.fail("init clause before any einsum");
        auto v = lp.assignments();
        auto& init = c.einsums.back().init;
        init.insert(init.end(), v.begin(), v.end());
      } else {
        lp.p = 0;
        lp.fail("unknown declaration '" + kw + "'");
      }
    } catch (const detail::SyntaxError& e) {
      res.diagnostics.push_back({"syntax", e.message, -1, lineno, e.column});
    }
  }
  for (auto& r : c.ranks)
    if (r.extent == 0) {
      res.diagnostics.push_back({"bad-extent", "rank " + r.name + " has no extent", -1, 0, 0});
      r.extent = 1;
    }
  if (has_errors(res.diagnostics)) return res;
  for (auto d : validate(c)) {
    for (std::size_t i = 0; i < c.einsums.size(); ++i)
      if (c.einsums[i].id == d.einsum) d.line = einsum_lines[i], d.column = 1;
    res.diagnostics.push_back(d);
  }
  res.cascade = std::move(c);
  return res;
}

// printing -------------------------------------------------------------------

inline std::string format_index(const IndexExpr& ix) {
  std::string s;
  for (auto& t : ix.terms) {
    if (t.coeff < 0) s += s.empty() ? "-" : "-";
    else if (!s.empty()) s += "+";
    std::int64_t a = t.coeff < 0 ? -t.coeff : t.coeff;
    if (a != 1) s += std::to_string(a) + "*";
    s += var_name(t.rank);
  }
  if (ix.offset != 0 || s.empty()) {
    if (ix.offset < 0) s += "-" + std::to_string(-ix.offset);
    else if (!s.empty()) s += "+" + std::to_string(ix.offset);
    else s += std::to_string(ix.offset);
  }
  return s;
}

inline std::string format_access(const TensorAccess& a) {
  std::string s = a.tensor + "[";
  for (std::size_t k = 0; k < a.indices.size(); ++k) s += (k ? "," : "") + format_index(a.indices[k]);
  return s + "]";
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  // keep it a number token on re-parse
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

namespace detail {
inline int prec(const ExprPtr& e) {
  if (e->kind != Expr::Kind::binary) return 3;
  return (e->bop == BinaryOp::add || e->bop == BinaryOp::sub) ? 1 : 2;
}
} // namespace detail

inline std::string format_expr(const ExprPtr& e) {
  switch (e->kind) {
  case Expr::Kind::access: return format_access(e->access);
  case Expr::Kind::constant: {
    std::string s = format_number(e->value);
    return e->value < 0 ? "(" + s + ")" : s;
  }
  case Expr::Kind::unary:
    if (e->uop == UnaryOp::negate) return "-(" + format_expr(e->lhs) + ")";
    return std::string(unary_name(e->uop)) + "(" + format_expr(e->lhs) + ")";
  case Expr::Kind::binary: {
    int p = detail::prec(e);
    std::string l = format_expr(e->lhs), r = format_expr(e->rhs);
    if (detail::prec(e->lhs) < p) l = "(" + l + ")";
    if (detail::prec(e->rhs) <= p && e->rhs->kind == Expr::Kind::binary) r = "(" + r + ")";
    const char* op = e->bop == BinaryOp::add ? " + " : e->bop == BinaryOp::sub ? " - " : e->bop == BinaryOp::mul ? " * " : " / ";
    return l + op + r;
  }
  }
  return "";
}

inline std::string format_assignment(const Assignment& a) {
  return format_access(a.output) + (a.accumulate ? " += " : " = ") + format_expr(a.body);
}

inline std::string format_einsum(const EinsumDecl& e) {
  std::string s;
  for (std::size_t k = 0; k < e.outputs.size(); ++k) s += (k ? " ; " : "") + format_assignment(e.outputs[k]);
  return s;
}

inline std::string serialize(const Cascade& c) {
  std::ostringstream os;
  for (auto& r : c.ranks) {
    os << "rank " << r.name << "(" << r.extent << ")";
    if (r.generational()) os << " generational step=" << r.step << " stop=" << r.stop;
    os << "\n";
  }
  for (auto& t : c.tensors) {
    os << "tensor " << t.name << " :";
    for (std::size_t k = 0; k < t.ranks.size(); ++k)
      os << (k ? ", " : " ") << t.ranks[k] << "(" << c.rank(t.ranks[k]).extent << ")";
    os << "\n";
  }
  for (auto& cc : c.concats) {
    os << "concat " << cc.result << " : " << cc.rank << " =";
    for (std::size_t k = 0; k < cc.parts.size(); ++k) os << (k ? " | " : " ") << cc.parts[k];
    os << "\n";
  }
  for (auto& e : c.einsums) {
    os << "einsum " << e.label() << ": " << format_einsum(e) << "\n";
    if (e.has_init()) {
      os << "init: ";
      for (std::size_t k = 0; k < e.init.size(); ++k) os << (k ? " ; " : "") << format_assignment(e.init[k]);
      os << "\n";
    }
  }
  return os.str();
}

inline bool structurally_equal(const Cascade& a, const Cascade& b) {
  if (a.ranks != b.ranks || a.tensors != b.tensors || a.concats != b.concats) return false;
  if (a.einsums.size() != b.einsums.size()) return false;
  auto same = [](const std::vector<Assignment>& x, const std::vector<Assignment>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t k = 0; k < x.size(); ++k)
      if (!(x[k].output == y[k].output) || x[k].accumulate != y[k].accumulate || !expr_equal(x[k].body, y[k].body))
        return false;
    return true;
  };
  for (std::size_t i = 0; i < a.einsums.size(); ++i) {
    auto& x = a.einsums[i];
    auto& y = b.einsums[i];
    if (x.id != y.id || x.members != y.members || !same(x.outputs, y.outputs) || !same(x.init, y.init)) return false;
  }
  return true;
}

} // namespace einfuse
