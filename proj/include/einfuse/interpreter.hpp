#pragma once

// Reference interpreter for loop nests over dense double tensors.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ir.hpp"
#include "loop_nest.hpp"

namespace einfuse {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<std::int64_t> strides;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    strides.assign(shape.size(), 1);
    std::int64_t n = 1;
    for (std::size_t k = shape.size(); k-- > 0;) {
      strides[k] = n;
      n *= shape[k];
    }
    data.assign(static_cast<std::size_t>(n), 0.0);
  }
  std::size_t size() const { return data.size(); }
};

struct TensorStore {
  std::map<std::string, Tensor> tensors;
  std::uint64_t seed = 0;

  Tensor& at(const std::string& n) {
    auto it = tensors.find(n);
    if (it == tensors.end()) throw IrError("tensor " + n + " not in store");
    return it->second;
  }
  const Tensor& at(const std::string& n) const {
    auto it = tensors.find(n);
    if (it == tensors.end()) throw IrError("tensor " + n + " not in store");
    return it->second;
  }
};

struct InputRange {
  double lo = -1, hi = 1;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// uniform inputs, one independent stream per tensor name so results do not
// depend on declaration order
inline TensorStore synthesize_inputs(const Cascade& c, std::uint64_t seed,
                                     const std::map<std::string, InputRange>& ranges = {}) {
  TensorStore st;
  st.seed = seed;
  for (auto& t : c.tensors) {
    Tensor x(c.tensor_shape(t.name));
    if (is_cascade_input(c, t.name) && !c.find_concat(t.name)) {
      InputRange r;
      if (auto it = ranges.find(t.name); it != ranges.end()) r = it->second;
      std::mt19937_64 gen(seed ^ fnv1a(t.name));
      std::uniform_real_distribution<double> u(r.lo, r.hi);
      for (auto& v : x.data) v = u(gen);
    }
    st.tensors[t.name] = std::move(x);
  }
  for (auto& cc : c.concats) {
    auto& res = st.tensors[cc.result];
    auto& decl = c.tensor(cc.result);
    std::size_t axis = static_cast<std::size_t>(std::find(decl.ranks.begin(), decl.ranks.end(), cc.rank) - decl.ranks.begin());
    std::int64_t off = 0;
    for (auto& p : cc.parts) {
      auto& part = st.tensors.at(p);
      std::vector<std::int64_t> idx(part.shape.size(), 0);
      for (std::size_t flat = 0; flat < part.size(); ++flat) {
        std::int64_t rem = static_cast<std::int64_t>(flat), pos = 0;
        for (std::size_t k = 0; k < part.shape.size(); ++k) {
          idx[k] = rem / part.strides[k];
          rem %= part.strides[k];
          pos += (k == axis ? idx[k] + off : idx[k]) * res.strides[k];
        }
        res.data[static_cast<std::size_t>(pos)] = part.data[flat];
      }
      off += part.shape[axis];
    }
  }
  return st;
}

// Mamba inputs: A negative so exp(delta*A) decays, as in trained models
inline std::map<std::string, InputRange> mamba_input_ranges() { return {{"A", {-1.0, 0.0}}}; }

struct ExecutionTrace {
  std::map<std::string, std::int64_t> backing_reads;   // elements
  std::map<std::string, std::int64_t> backing_writes;
  std::map<std::string, std::int64_t> itf;             // max live elements
  std::map<std::string, std::int64_t> trigger_fires;
  std::map<std::string, std::int64_t> visits;          // by Einsum label
  std::map<std::string, std::int64_t> nonfinite;

  std::int64_t total_reads() const {
    std::int64_t s = 0;
    for (auto& [k, v] : backing_reads) s += v;
    return s;
  }
  std::int64_t total_writes() const {
    std::int64_t s = 0;
    for (auto& [k, v] : backing_writes) s += v;
    return s;
  }
};

namespace detail {

struct CAccess {
  Tensor* t = nullptr;
  std::string name;
  struct Dim {
    std::vector<std::pair<int, std::int64_t>> terms; // slot, coeff
    std::int64_t offset = 0;
    bool window = false;
  };
  std::vector<Dim> dims;
  bool recurrent = false;
  int counter = -1;  // backing-read bitset id, -1 if on chip
  int live = -1;     // liveness tracker id for on-chip reads
};

struct CExpr {
  Expr::Kind kind;
  BinaryOp bop;
  UnaryOp uop;
  double value = 0;
  int access = -1;
  int lhs = -1, rhs = -1;
};

struct CAssign {
  std::vector<CExpr> nodes;
  int root = -1;
  CAccess out;
  bool accumulate = false;
  int write_counter = -1;
  int live = -1;
  std::vector<CAccess> accesses;
};

struct CStmt {
  std::size_t einsum;
  std::vector<CAssign> main, init;
  int gen_slot = -1;
  std::int64_t visits = 0;
};

struct Bitset {
  std::string tensor;
  std::vector<bool> seen;
  std::int64_t count = 0;
  void mark(std::size_t k) {
    if (!seen[k]) {
      seen[k] = true;
      ++count;
    }
  }
};

struct Liveness {
  std::string tensor;
  std::vector<std::int64_t> first, last;
};

struct Machine {
  const Cascade& c;
  const LoopNest& nest;
  TensorStore& st;
  ExecutionTrace& tr;
  std::map<std::string, int> slot_of;
  std::vector<std::int64_t> slots;
  std::vector<Bitset> counters;
  std::vector<Liveness> lives;
  std::map<std::size_t, CStmt> stmts;
  std::int64_t epoch = 0;
  bool track_live = true;

  Machine(const Cascade& cc, const LoopNest& n, TensorStore& s, ExecutionTrace& t) : c(cc), nest(n), st(s), tr(t) {}

  int slot(const std::string& v) {
    auto [it, fresh] = slot_of.emplace(v, static_cast<int>(slots.size()));
    if (fresh) slots.push_back(0);
    return it->second;
  }

  int counter_for(const std::string& tensor, const std::string& key) {
    for (std::size_t k = 0; k < counters.size(); ++k)
      if (counters[k].tensor == key) return static_cast<int>(k);
    counters.push_back({key, std::vector<bool>(st.at(tensor).size(), false), 0});
    return static_cast<int>(counters.size() - 1);
  }

  int live_for(const std::string& tensor) {
    for (std::size_t k = 0; k < lives.size(); ++k)
      if (lives[k].tensor == tensor) return static_cast<int>(k);
    auto n = st.at(tensor).size();
    lives.push_back({tensor, std::vector<std::int64_t>(n, -1), std::vector<std::int64_t>(n, -1)});
    return static_cast<int>(lives.size() - 1);
  }

  CAccess compile_access(const TensorAccess& a, std::size_t j, bool is_init, bool is_output) {
    CAccess ca;
    ca.t = &st.at(a.tensor);
    ca.name = a.tensor;
    for (auto& ix : a.indices) {
      CAccess::Dim d;
      for (auto& t : ix.terms) d.terms.push_back({slot(t.rank), t.coeff});
      d.offset = ix.offset;
      d.window = ix.is_window();
      ca.dims.push_back(d);
    }
    if (is_output) return ca;
    ca.recurrent = is_recurrent_read(c, j, a);
    if (ca.recurrent) return ca;
    (void)is_init;
    auto it = nest.buffers.find(a.tensor);
    if (it == nest.buffers.end()) return ca;
    auto& b = it->second;
    for (std::size_t k = 0; k < b.backing_reads.size(); ++k)
      for (auto r : b.backing_reads[k].readers)
        if (r == j) ca.counter = counter_for(a.tensor, a.tensor + "#" + std::to_string(k));
    if (ca.counter < 0 && b.produced_here && track_live) ca.live = live_for(a.tensor);
    return ca;
  }

  int compile_expr(const ExprPtr& e, CAssign& as, std::size_t j, bool is_init) {
    CExpr n{e->kind, e->bop, e->uop, e->value};
    if (e->kind == Expr::Kind::access) {
      n.access = static_cast<int>(as.accesses.size());
      as.accesses.push_back(compile_access(e->access, j, is_init, false));
    }
    if (e->lhs) n.lhs = compile_expr(e->lhs, as, j, is_init);
    if (e->rhs) n.rhs = compile_expr(e->rhs, as, j, is_init);
    as.nodes.push_back(n);
    return static_cast<int>(as.nodes.size() - 1);
  }

  CAssign compile_assign(const Assignment& a, std::size_t j, bool is_init) {
    CAssign ca;
    ca.accumulate = a.accumulate;
    ca.out = compile_access(a.output, j, is_init, true);
    ca.root = compile_expr(a.body, ca, j, is_init);
    auto it = nest.buffers.find(a.output.tensor);
    if (it != nest.buffers.end()) {
      if (it->second.backing_write) ca.write_counter = counter_for(a.output.tensor, a.output.tensor + "#w");
      if (!it->second.onchip_readers.empty() && track_live) ca.live = live_for(a.output.tensor);
    }
    return ca;
  }

  void compile() {
    for (auto j : nest.einsums) {
      CStmt s;
      s.einsum = j;
      auto& e = c.einsums[j];
      for (auto& a : e.outputs) s.main.push_back(compile_assign(a, j, false));
      for (auto& a : e.init) s.init.push_back(compile_assign(a, j, true));
      if (auto g = generational_rank(e, c)) s.gen_slot = slot(*g);
      stmts[j] = std::move(s);
    }
  }

  // flat offset, or -1 for a zero-padded window position
  std::int64_t offset_of(const CAccess& a) const {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < a.dims.size(); ++k) {
      auto& d = a.dims[k];
      std::int64_t v = d.offset;
      for (auto& [s, coeff] : d.terms) v += coeff * slots[static_cast<std::size_t>(s)];
      if (v < 0 || v >= a.t->shape[k]) {
        if (d.window) return -1;
        throw IrError("index out of range on " + a.name + " dimension " + std::to_string(k) + ": " + std::to_string(v));
      }
      off += v * a.t->strides[k];
    }
    return off;
  }

  double eval(const CAssign& as, int n) {
    auto& x = as.nodes[static_cast<std::size_t>(n)];
    switch (x.kind) {
    case Expr::Kind::constant: return x.value;
    case Expr::Kind::unary: return apply_unary(x.uop, eval(as, x.lhs));
    case Expr::Kind::binary: {
      double l = eval(as, x.lhs);
      return apply_binary(x.bop, l, eval(as, x.rhs));
    }
    case Expr::Kind::access: {
      auto& a = as.accesses[static_cast<std::size_t>(x.access)];
      auto off = offset_of(a);
      if (off < 0) return 0.0;
      auto k = static_cast<std::size_t>(off);
      if (a.counter >= 0) counters[static_cast<std::size_t>(a.counter)].mark(k);
      if (a.live >= 0) lives[static_cast<std::size_t>(a.live)].last[k] = epoch;
      return a.t->data[k];
    }
    }
    return 0;
  }

  void exec(CStmt& s) {
    ++s.visits;
    bool first_gen = s.gen_slot >= 0 && !s.init.empty() && slots[static_cast<std::size_t>(s.gen_slot)] == 0;
    auto& list = first_gen ? s.init : s.main;
    for (auto& as : list) {
      double v = eval(as, as.root);
      // init outputs index the generational dimension with a literal 0
      auto off = static_cast<std::size_t>(offset_of(as.out));
      if (as.accumulate) as.out.t->data[off] += v;
      else as.out.t->data[off] = v;
      if (as.write_counter >= 0) counters[static_cast<std::size_t>(as.write_counter)].mark(off);
      if (as.live >= 0) {
        auto& l = lives[static_cast<std::size_t>(as.live)];
        if (l.first[off] < 0) l.first[off] = epoch;
      }
    }
    ++epoch;
  }

  void run_nodes(const std::vector<Node>& ns) {
    for (auto& n : ns) {
      if (n.kind == Node::Kind::stmt) {
        exec(stmts.at(n.einsum));
      } else if (n.kind == Node::Kind::trigger) {
        ++tr.trigger_fires[n.tensor];
      } else {
        auto& l = n.loop;
        auto s = static_cast<std::size_t>(slot(l.var()));
        std::int64_t lo = 0, hi = l.end, step = l.step;
        if (l.kind == LoopKind::tile_outer) step = l.tile * l.step;
        if (l.kind == LoopKind::tile_inner) {
          lo = slots[static_cast<std::size_t>(slot(l.rank + "'"))];
          hi = std::min(l.end, lo + l.tile * l.step);
        }
        for (std::int64_t v = lo; v < hi; v += step) {
          slots[s] = v;
          run_nodes(n.body);
        }
      }
    }
  }

  void finish() {
    for (auto& b : counters) {
      auto tensor = b.tensor.substr(0, b.tensor.rfind('#'));
      bool write = b.tensor.size() >= 2 && b.tensor.compare(b.tensor.size() - 2, 2, "#w") == 0;
      (write ? tr.backing_writes : tr.backing_reads)[tensor] += b.count;
    }
    for (auto& l : lives) {
      // sweep: +1 at first write, -1 after last read
      std::vector<std::pair<std::int64_t, int>> ev;
      for (std::size_t k = 0; k < l.first.size(); ++k)
        if (l.first[k] >= 0 && l.last[k] >= 0) {
          ev.push_back({l.first[k], +1});
          ev.push_back({l.last[k] + 1, -1});
        }
      std::sort(ev.begin(), ev.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first < b.first : a.second < b.second; });
      std::int64_t live = 0, best = 0;
      for (auto& [t, d] : ev) {
        live += d;
        best = std::max(best, live);
      }
      auto& cur = tr.itf[l.tensor];
      cur = std::max(cur, best);
    }
    for (auto& [j, s] : stmts) tr.visits[c.einsums[j].label()] += s.visits;
  }
};

} // namespace detail

// run one nest; produced tensors must have been zeroed (see run_schedule)
inline void run_nest(const LoopNest& nest, const Cascade& c, TensorStore& st, ExecutionTrace& tr) {
  detail::Machine m{c, nest, st, tr};
  m.compile();
  m.run_nodes(nest.roots);
  m.finish();
}

using Schedule = std::vector<LoopNest>;

inline ExecutionTrace run(const Schedule& s, const Cascade& c, TensorStore& st) {
  for (auto& e : c.einsums)
    for (auto& t : e.output_tensors()) std::fill(st.at(t).data.begin(), st.at(t).data.end(), 0.0);
  ExecutionTrace tr;
  for (auto& n : s) run_nest(n, c, st, tr);
  for (auto& e : c.einsums)
    for (auto& t : e.output_tensors()) {
      std::int64_t bad = 0;
      for (double v : st.at(t).data)
        if (!std::isfinite(v)) ++bad;
      if (bad) tr.nonfinite[t] = bad;
    }
  return tr;
}

inline ExecutionTrace run(const LoopNest& n, const Cascade& c, TensorStore& st) { return run(Schedule{n}, c, st); }

inline std::map<std::string, std::int64_t> measure_itf(const Schedule& s, const Cascade& c, std::uint64_t seed = 1) {
  auto st = synthesize_inputs(c, seed);
  return run(s, c, st).itf;
}

struct Comparison {
  double max_rel_err = 0;
  std::string worst_tensor;
  bool equivalent(double tol = 1e-10) const { return max_rel_err <= tol; }
};

inline Comparison compare_outputs(const Cascade& c, const TensorStore& a, const TensorStore& b) {
  Comparison r;
  for (auto& e : c.einsums)
    for (auto& t : e.output_tensors()) {
      auto& x = a.at(t).data;
      auto& y = b.at(t).data;
      for (std::size_t k = 0; k < x.size(); ++k) {
        double err = std::abs(x[k] - y[k]) / (std::abs(y[k]) + 1e-300);
        if (x[k] == y[k]) err = 0;
        if (!(err <= r.max_rel_err)) {
          r.max_rel_err = std::isnan(err) ? INFINITY : err;
          r.worst_tensor = t;
        }
      }
    }
  return r;
}

inline std::string trace_csv(const ExecutionTrace& tr) {
  std::ostringstream os;
  os << "counter,tensor,value\n";
  for (auto& [k, v] : tr.backing_reads) os << "backing_reads," << k << "," << v << "\n";
  for (auto& [k, v] : tr.backing_writes) os << "backing_writes," << k << "," << v << "\n";
  for (auto& [k, v] : tr.itf) os << "itf," << k << "," << v << "\n";
  for (auto& [k, v] : tr.trigger_fires) os << "trigger_fires," << k << "," << v << "\n";
  for (auto& [k, v] : tr.visits) os << "visits,E" << k << "," << v << "\n";
  for (auto& [k, v] : tr.nonfinite) os << "nonfinite," << k << "," << v << "\n";
  return os.str();
}

// raw dump: "EFT1", u32 name length, name, u32 rank count, i64 extents, f64 data (little endian host)
inline void write_tensor_raw(std::ostream& os, const std::string& name, const Tensor& t) {
  os.write("EFT1", 4);
  auto u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  u32(static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  u32(static_cast<std::uint32_t>(t.shape.size()));
  for (auto e : t.shape) os.write(reinterpret_cast<const char*>(&e), 8);
  os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
}

inline std::pair<std::string, Tensor> read_tensor_raw(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EFT1", 4) != 0) throw IrError("not a tensor dump");
  auto u32 = [&]() {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  std::string name(u32(), '\0');
  is.read(name.data(), static_cast<std::streamsize>(name.size()));
  std::vector<std::int64_t> shape(u32());
  for (auto& e : shape) is.read(reinterpret_cast<char*>(&e), 8);
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
  if (!is) throw IrError("truncated tensor dump");
  return {name, t};
}

} // namespace einfuse
