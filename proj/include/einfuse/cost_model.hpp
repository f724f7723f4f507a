#pragma once

// Analytical traffic + roofline latency of schedules, binding rules,
// baselines and end-to-end scenarios.

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "footprint.hpp"
#include "fusion.hpp"
#include "ir.hpp"
#include "mamba.hpp"
#include "merge.hpp"
#include "schedule.hpp"

namespace einfuse {

struct HardwareConfig {
  double bandwidth = 2039e9;  // bytes/s
  double clock = 1.75e9;      // Hz
  std::int64_t pe_2d = 65536; // 256 x 256
  std::int64_t pe_1d = 8192;  // 1D mode of the 2D array
  std::int64_t pe_small = 256;
  double ops_per_cycle = 2;   // per PE, multiply-accumulate
  std::int64_t global_buffer = 32ll << 20;
  std::int64_t register_file = 4352ll << 10; // 4.25 MiB
  std::int64_t element_bytes = 2;

  std::vector<std::string> problems() const {
    std::vector<std::string> v;
    if (!(bandwidth > 0)) v.push_back("bandwidth must be positive");
    if (!(clock > 0)) v.push_back("clock must be positive");
    if (pe_2d < 1 || pe_1d < 1 || pe_small < 1) v.push_back("PE counts must be positive");
    if (pe_1d > pe_2d) v.push_back("pe_1d must not exceed pe_2d");
    if (!(ops_per_cycle > 0)) v.push_back("ops_per_cycle must be positive");
    if (global_buffer < 1 || register_file < 1) v.push_back("buffer sizes must be positive");
    if (element_bytes < 1) v.push_back("element_bytes must be positive");
    return v;
  }

  // key=value lines, '#' comments
  static HardwareConfig parse(const std::string& text) {
    HardwareConfig h;
    std::istringstream is(text);
    std::string line;
    int no = 0;
    while (std::getline(is, line)) {
      ++no;
      if (auto p = line.find('#'); p != std::string::npos) line.resize(p);
      auto eq = line.find('=');
      auto trim = [](std::string s) {
        auto a = s.find_first_not_of(" \t\r");
        auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) throw IrError("hw config line " + std::to_string(no) + ": expected key=value");
      auto k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
      double x;
      try {
        std::size_t used = 0;
        x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw IrError("hw config line " + std::to_string(no) + ": bad number '" + v + "'");
      }
      auto i = static_cast<std::int64_t>(x);
      if (k == "bandwidth") h.bandwidth = x;
      else if (k == "clock") h.clock = x;
      else if (k == "pe_2d") h.pe_2d = i;
      else if (k == "pe_1d") h.pe_1d = i;
      else if (k == "pe_small") h.pe_small = i;
      else if (k == "ops_per_cycle") h.ops_per_cycle = x;
      else if (k == "global_buffer") h.global_buffer = i;
      else if (k == "register_file") h.register_file = i;
      else if (k == "element_bytes") h.element_bytes = i;
      else throw IrError("hw config line " + std::to_string(no) + ": unknown key " + k);
    }
    auto p = h.problems();
    if (!p.empty()) throw IrError("hw config: " + p.front());
    return h;
  }

  static HardwareConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IrError("cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "bandwidth=" << bandwidth << "\nclock=" << clock << "\npe_2d=" << pe_2d << "\npe_1d=" << pe_1d
       << "\npe_small=" << pe_small << "\nops_per_cycle=" << ops_per_cycle << "\nglobal_buffer=" << global_buffer
       << "\nregister_file=" << register_file << "\nelement_bytes=" << element_bytes << "\n";
    return os.str();
  }
};

enum class Resource { array_2d, mode_1d, small_1d };

inline const char* resource_name(Resource r) {
  switch (r) {
  case Resource::array_2d: return "2D";
  case Resource::mode_1d: return "1D";
  case Resource::small_1d: return "small-1D";
  }
  return "?";
}

inline std::int64_t pe_count(const HardwareConfig& h, Resource r) {
  return r == Resource::array_2d ? h.pe_2d : r == Resource::mode_1d ? h.pe_1d : h.pe_small;
}

// operation counts ------------------------------------------------------------

struct OpCount {
  double binary = 0, unary = 0;
};

namespace detail {
inline void count_ops(const ExprPtr& e, OpCount& n) {
  if (!e) return;
  if (e->kind == Expr::Kind::binary) n.binary += 1;
  if (e->kind == Expr::Kind::unary) n.unary += 1;
  count_ops(e->lhs, n);
  count_ops(e->rhs, n);
}
inline OpCount assignment_ops(const std::vector<Assignment>& as) {
  OpCount n;
  for (auto& a : as) {
    count_ops(a.body, n);
    if (a.accumulate) n.binary += 1;
  }
  return n;
}
} // namespace detail

struct EinsumWork {
  double points = 0, init_points = 0;
  OpCount ops, init_ops;
  double flops() const { return points * (ops.binary + ops.unary) + init_points * (init_ops.binary + init_ops.unary); }
  // binary ops pair up per cycle; unary ops take a cycle each
  double cycles(double ops_per_cycle) const {
    return points * (ops.binary / ops_per_cycle + ops.unary) + init_points * (init_ops.binary / ops_per_cycle + init_ops.unary);
  }
};

inline EinsumWork einsum_work(const Cascade& c, const EinsumDecl& e) {
  EinsumWork w;
  double all = 1, gen = 1;
  auto g = generational_rank(e, c);
  for (auto& r : rank_set(e)) {
    double it = static_cast<double>(c.rank(r).iterations());
    all *= it;
    if (g && r == *g) gen = it;
  }
  w.ops = detail::assignment_ops(e.outputs);
  if (e.has_init()) {
    w.init_points = all / gen;
    w.points = all - w.init_points;
    w.init_ops = detail::assignment_ops(e.init);
  } else {
    w.points = all;
  }
  return w;
}

// binding ---------------------------------------------------------------------

// a contraction of two operands that each carry an output rank the other lacks
inline bool is_gemm_like(const Cascade& c, const EinsumDecl& e) {
  (void)c;
  RankSet red = reduction_ranks(e), out = output_ranks(e);
  std::vector<TensorAccess> ops = reads(e, false);
  for (auto& r : red)
    for (std::size_t a = 0; a < ops.size(); ++a)
      for (std::size_t b = a + 1; b < ops.size(); ++b) {
        RankSet ra, rb;
        collect_ranks(ops[a], ra);
        collect_ranks(ops[b], rb);
        if (!ra.count(r) || !rb.count(r)) continue;
        bool a_own = false, b_own = false;
        for (auto& x : out) {
          if (ra.count(x) && !rb.count(x)) a_own = true;
          if (rb.count(x) && !ra.count(x)) b_own = true;
        }
        if (a_own && b_own) return true;
      }
  return false;
}

// a reduction against a weight (cascade input) along the reduced rank
inline bool is_weight_reduction(const Cascade& c, const EinsumDecl& e) {
  RankSet red = reduction_ranks(e);
  for (auto& x : reads(e, false)) {
    if (!is_cascade_input(c, x.tensor)) continue;
    RankSet rx;
    collect_ranks(x, rx);
    for (auto& r : red)
      if (rx.count(r)) return true;
  }
  return false;
}

struct GroupBinding {
  std::map<std::size_t, Resource> resource; // per member
  std::string rationale;
};

// GEMM groups: members ahead of the first weight reduction feed it from the
// small array, the rest run on the 2D array. Groups without a GEMM use 1D mode.
inline GroupBinding bind_group(const Cascade& c, const std::vector<std::size_t>& members) {
  GroupBinding b;
  bool gemm = false;
  for (auto m : members)
    if (is_gemm_like(c, c.einsums[m])) gemm = true;
  if (!gemm) {
    for (auto m : members) b.resource[m] = Resource::mode_1d;
    b.rationale = "elementwise-only";
    return b;
  }
  bool seen = false;
  for (auto m : members) {
    if (is_weight_reduction(c, c.einsums[m])) seen = true;
    b.resource[m] = seen ? Resource::array_2d : Resource::small_1d;
  }
  b.rationale = "gemm";
  return b;
}

// reports ---------------------------------------------------------------------

struct GroupCost {
  std::size_t group_id = 0;
  std::string einsum_ids;
  std::string binding;
  bool compute_bound = false;
  double flops = 0;
  double bytes_intra = 0, bytes_inter_read = 0, bytes_inter_write = 0;
  double bytes_intra_read = 0, bytes_intra_write = 0;
  double bytes_spill = 0; // inter bytes of tensors both produced and consumed in the group
  double t_compute = 0, t_memory = 0, t_start = 0, t_end = 0;

  double bytes() const { return bytes_intra + bytes_inter_read + bytes_inter_write; }
  double latency() const { return std::max(t_compute, t_memory); }
};

struct CostReport {
  std::string variant;
  Phase phase = Phase::prefill;
  std::vector<GroupCost> groups;
  double latency = 0;
  double ideal_latency = 0; // same groups, inter-Einsum bytes zeroed
  std::vector<Diagnostic> warnings;

  double inter_bytes() const {
    double s = 0;
    for (auto& g : groups) s += g.bytes_inter_read + g.bytes_inter_write;
    return s;
  }
  double intra_bytes() const {
    double s = 0;
    for (auto& g : groups) s += g.bytes_intra;
    return s;
  }
  double read_bytes() const {
    double s = 0;
    for (auto& g : groups) s += g.bytes_inter_read + g.bytes_intra_read;
    return s;
  }
  double write_bytes() const {
    double s = 0;
    for (auto& g : groups) s += g.bytes_inter_write + g.bytes_intra_write;
    return s;
  }
  double total_bytes() const { return inter_bytes() + intra_bytes(); }
};

// roofline of an already lowered schedule
inline CostReport roofline(const Schedule& s, const Cascade& c, const HardwareConfig& h, const std::string& variant,
                           Phase phase) {
  CostReport rep;
  rep.variant = variant;
  rep.phase = phase;
  double t = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    auto& nest = s[k];
    GroupCost g;
    g.group_id = k;
    for (auto j : nest.einsums) g.einsum_ids += (g.einsum_ids.empty() ? "" : " ") + c.einsums[j].label();
    auto bind = bind_group(c, nest.einsums);
    std::map<Resource, double> cyc;
    for (auto j : nest.einsums) {
      auto w = einsum_work(c, c.einsums[j]);
      g.flops += w.flops();
      cyc[bind.resource[j]] += w.cycles(h.ops_per_cycle);
    }
    std::string used;
    for (auto& [r, x] : cyc) {
      used += (used.empty() ? "" : "+") + std::string(resource_name(r));
      g.t_compute = std::max(g.t_compute, x / static_cast<double>(pe_count(h, r)) / h.clock);
    }
    g.binding = used;
    double eb = static_cast<double>(h.element_bytes);
    for (auto& [T, tr] : analytic_traffic(nest, c)) {
      if (is_intermediate(c, T)) {
        g.bytes_inter_read += static_cast<double>(tr.reads) * eb;
        g.bytes_inter_write += static_cast<double>(tr.writes) * eb;
        bool made = false, used = false;
        for (auto j : nest.einsums) {
          auto outs = c.einsums[j].output_tensors();
          if (std::find(outs.begin(), outs.end(), T) != outs.end()) made = true;
          else if (read_tensors(c.einsums[j]).count(T)) used = true;
        }
        if (made && used) g.bytes_spill += static_cast<double>(tr.reads + tr.writes) * eb;
      } else {
        g.bytes_intra_read += static_cast<double>(tr.reads) * eb;
        g.bytes_intra_write += static_cast<double>(tr.writes) * eb;
      }
    }
    g.bytes_intra = g.bytes_intra_read + g.bytes_intra_write;
    g.t_memory = g.bytes() / h.bandwidth;
    g.compute_bound = g.t_compute >= g.t_memory;
    g.t_start = t;
    t += g.latency();
    g.t_end = t;
    rep.ideal_latency += std::max(g.t_compute, g.bytes_intra / h.bandwidth);
    rep.groups.push_back(g);
  }
  rep.latency = t;
  return rep;
}

// variants ----------------------------------------------------------------------

struct VariantSchedule {
  FusionPlan plan;
  Schedule schedule;
  std::vector<Diagnostic> diagnostics;
};

namespace detail {

inline std::int64_t tile_bytes(const BufferDecl& b, const HardwareConfig& h) {
  std::int64_t n = 1;
  for (auto e : b.residency.extents) n *= e;
  return n * h.element_bytes;
}

// intermediates of a group that stay inside it
inline std::vector<std::string> internal_tensors(const Cascade& c, const FusionGroup& g) {
  std::vector<std::string> v;
  for (auto m : g.members)
    for (auto& t : c.einsums[m].output_tensors()) {
      auto cs = consumers(c, t);
      if (cs.empty()) continue;
      bool inside = true;
      for (auto q : cs)
        if (std::find(g.members.begin(), g.members.end(), q) == g.members.end()) inside = false;
      if (inside) v.push_back(t);
    }
  return v;
}

} // namespace detail

inline VariantSchedule schedule_variant(const Cascade& c, StitchPolicy p, const HardwareConfig& h) {
  VariantSchedule v;
  v.plan = greedy_stitch(c, p);
  for (auto& d : v.plan.diagnostics) v.diagnostics.push_back(d);
  if (p == StitchPolicy::unfused) {
    v.schedule = unfused_schedule(c);
    return v;
  }
  for (auto& g : v.plan.groups) {
    LowerOptions opt;
    bool region = g.members.size() > 1 && (p == StitchPolicy::marca || p == StitchPolicy::geens);
    if (region && p == StitchPolicy::geens) g = handle_generational(c, g, 1, &v.diagnostics);
    if (region && p == StitchPolicy::marca) {
      // whole intermediates live in the register file while it has room
      std::int64_t used = 0;
      for (auto& t : detail::internal_tensors(c, g)) {
        auto bytes = c.tensor_size(t) * h.element_bytes;
        if (used + bytes <= h.register_file) used += bytes;
        else opt.spill.insert(t);
      }
    }
    auto l = lower(g, c, opt);
    // on-chip tiles that do not fit the global buffer go to memory
    for (int round = 0; round < 4; ++round) {
      std::set<std::string> extra;
      for (auto& [t, b] : l.nest.buffers)
        if (b.produced_here && b.residency.kind == ResidencyKind::tile && detail::tile_bytes(b, h) > h.global_buffer)
          extra.insert(t);
      if (extra.empty()) break;
      for (auto& t : extra) {
        v.diagnostics.push_back({"capacity-spill", t + " tile exceeds the global buffer; spilled", -1, 0, 0, true});
        opt.spill.insert(t);
      }
      l = lower(g, c, opt);
    }
    for (auto& d : l.diagnostics) v.diagnostics.push_back(d);
    g.residency.clear();
    for (auto& [t, b] : l.nest.buffers)
      if (b.produced_here) g.residency[t] = b.residency;
    v.schedule.push_back(std::move(l.nest));
  }
  return v;
}

inline CostReport evaluate_variant(const Cascade& c, StitchPolicy p, const HardwareConfig& h, Phase phase) {
  auto v = schedule_variant(c, p, h);
  for (auto& d : v.diagnostics)
    if (!d.warning) throw IrError(std::string(policy_name(p)) + ": " + to_string(d));
  auto rep = roofline(v.schedule, c, h, policy_name(p), phase);
  rep.warnings = v.diagnostics;
  return rep;
}

// all inter-Einsum traffic removed from the unfused schedule
inline CostReport evaluate_ideal(const Cascade& c, const HardwareConfig& h, Phase phase) {
  auto rep = roofline(unfused_schedule(c), c, h, "ideal", phase);
  double t = 0;
  for (auto& g : rep.groups) {
    g.bytes_inter_read = g.bytes_inter_write = 0;
    g.t_memory = g.bytes() / h.bandwidth;
    g.compute_bound = g.t_compute >= g.t_memory;
    g.t_start = t;
    t += g.latency();
    g.t_end = t;
  }
  rep.latency = rep.ideal_latency = t;
  return rep;
}

// the Mamba layer the evaluation runs on
inline Cascade mamba_for_costing(const ParamSet& p) {
  auto r = merge_shared_inputs(build_mamba1(p), mamba1_merge_sets());
  return r.cascade;
}

inline const std::vector<StitchPolicy>& all_variants() {
  static const std::vector<StitchPolicy> v{StitchPolicy::unfused, StitchPolicy::marca, StitchPolicy::geens,
                                           StitchPolicy::ri, StitchPolicy::ri_rsb, StitchPolicy::ri_rsb_rsp,
                                           StitchPolicy::fully_fused};
  return v;
}

// end to end -------------------------------------------------------------------

struct Scenario {
  std::string name;
  std::int64_t prefill = 0;      // context length
  std::int64_t decode_steps = 0; // generated tokens
};

inline std::vector<Scenario> paper_scenarios() {
  return {{"small-context", 256, 4096}, {"medium-context", 2048, 2048}, {"large-context", 8192, 256}};
}

struct ScenarioResult {
  Scenario scenario;
  std::map<std::string, double> total; // variant -> seconds
};

struct EndToEnd {
  std::vector<ScenarioResult> scenarios;
  std::map<std::string, double> geomean_speedup; // vs unfused
};

inline EndToEnd end_to_end(const ParamSet& base, const std::vector<Scenario>& scs, const HardwareConfig& h,
                           const std::vector<StitchPolicy>& variants = all_variants()) {
  EndToEnd out;
  auto dec = mamba_for_costing(base.with_phase(Phase::decode));
  std::map<std::string, double> dec_lat;
  for (auto p : variants) dec_lat[policy_name(p)] = evaluate_variant(dec, p, h, Phase::decode).latency;
  for (auto& s : scs) {
    ScenarioResult r{s, {}};
    std::map<std::string, double> pre_lat;
    if (s.prefill > 0) {
      ParamSet pp = base.with_phase(Phase::prefill);
      pp.I = s.prefill;
      auto pre = mamba_for_costing(pp);
      for (auto p : variants) pre_lat[policy_name(p)] = evaluate_variant(pre, p, h, Phase::prefill).latency;
    }
    double L = static_cast<double>(base.L);
    for (auto p : variants) {
      std::string n = policy_name(p);
      r.total[n] = L * pre_lat[n] + static_cast<double>(s.decode_steps) * L * dec_lat[n];
    }
    out.scenarios.push_back(r);
  }
  for (auto p : variants) {
    std::string n = policy_name(p);
    double logsum = 0;
    int k = 0;
    for (auto& r : out.scenarios)
      if (r.total[n] > 0 && r.total["unfused"] > 0) {
        logsum += std::log(r.total["unfused"] / r.total[n]);
        ++k;
      }
    out.geomean_speedup[n] = k ? std::exp(logsum / k) : 0;
  }
  return out;
}

// CSV ----------------------------------------------------------------------------

inline std::string cost_csv_header() {
  return "variant,phase,group_id,einsum_ids,bound,flops,bytes_intra,bytes_inter_read,bytes_inter_write,t_compute_s,"
         "t_memory_s,t_start_s,t_end_s\n";
}

inline std::string cost_csv_rows(const CostReport& r) {
  std::ostringstream os;
  os.precision(10);
  for (auto& g : r.groups)
    os << r.variant << "," << phase_name(r.phase) << "," << g.group_id << "," << g.einsum_ids << ","
       << (g.compute_bound ? "compute" : "memory") << "," << g.flops << "," << g.bytes_intra << "," << g.bytes_inter_read
       << "," << g.bytes_inter_write << "," << g.t_compute << "," << g.t_memory << "," << g.t_start << "," << g.t_end << "\n";
  return os.str();
}

inline std::string utilization_csv_header() {
  return "variant,phase,group_id,einsum_ids,t_start_s,t_end_s,compute_util,bandwidth_util\n";
}

inline std::string utilization_csv_rows(const CostReport& r) {
  std::ostringstream os;
  os.precision(10);
  for (auto& g : r.groups) {
    double span = g.t_end - g.t_start;
    double cu = span > 0 ? g.t_compute / span : 0, bu = span > 0 ? g.t_memory / span : 0;
    os << r.variant << "," << phase_name(r.phase) << "," << g.group_id << "," << g.einsum_ids << "," << g.t_start << ","
       << g.t_end << "," << cu << "," << bu << "\n";
  }
  return os.str();
}

} // namespace einfuse
