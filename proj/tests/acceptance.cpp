// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failures (capped), so ctest marks the run failed if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

#include "einfuse/cost_model.hpp"
#include "einfuse/interpreter.hpp"
#include "einfuse/schedule.hpp"
#include "support/fixtures.hpp"
#include "support/mamba_oracle.hpp"
#include "support/random_cascade.hpp"

using namespace einfuse;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int n, const std::string& name, double limit_s, const std::function<Verdict()>& body) {
  auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (dt > limit_s) {
    v.pass = false;
    v.detail += " [over time limit " + std::to_string(limit_s) + " s]";
  }
  if (!v.pass) ++failures;
  std::printf("%s %2d %s: %s (%.2f s)\n", v.pass ? "PASS" : "FAIL", n, name.c_str(), v.detail.c_str(), dt);
  std::fflush(stdout);
}

std::string fmt(double x, int prec = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << x;
  return os.str();
}

std::vector<std::vector<std::string>> group_labels(const Cascade& c, const FusionPlan& p) {
  std::vector<std::vector<std::string>> v;
  for (auto& g : p.groups) {
    v.push_back({});
    for (auto m : g.members) v.back().push_back(c.einsums[m].label());
  }
  return v;
}

Schedule lowered(const Cascade& c, StitchPolicy p, bool& ok) {
  auto lp = lower_plan(greedy_stitch(c, p), c);
  ok = ok && lp.ok();
  return lp.schedule;
}

const std::vector<StitchPolicy> kAll{StitchPolicy::marca,  StitchPolicy::geens,      StitchPolicy::ri,
                                     StitchPolicy::ri_rsb, StitchPolicy::ri_rsb_rsp, StitchPolicy::fully_fused};

Verdict five_stage() {
  auto c = fixtures::sample("five_stage");
  auto plan = greedy_stitch(c, StitchPolicy::ri_rsb_rsp);
  auto got = group_labels(c, plan);
  bool groups = got == std::vector<std::vector<std::string>>{{"1", "2", "3"}, {"4", "5"}};
  bool chains = groups && plan.groups[0].chain == std::vector<RankSet>{{"M", "N"}, {"M", "N", "P"}} &&
                plan.groups[1].chain == std::vector<RankSet>{{"N"}};
  return {groups && chains, std::string("groups ") + (groups ? "{E1,E2,E3},{E4,E5}" : "wrong") + ", chains " +
                                (chains ? "[M,N],[M,N,P] / [N]" : "wrong")};
}

Verdict mamba_counts() {
  auto c = fixtures::merged_mamba();
  std::vector<std::size_t> want{12, 8, 3, 1}, got;
  for (auto p : fusion_policies()) got.push_back(greedy_stitch(c, p).groups.size());
  std::string d;
  for (std::size_t k = 0; k < got.size(); ++k) d += (k ? " / " : "") + std::to_string(got[k]);
  return {got == want, d + " groups (want 12 / 8 / 3 / 1)"};
}

Verdict itf_suite() {
  std::string d;
  bool pass = true;
  for (auto name : {"mul_then_reduce", "matvec_div", "scale_matmul", "two_matmuls"}) {
    auto c = fixtures::sample(name);
    auto p = std::string(name) == "two_matmuls" ? StitchPolicy::fully_fused : StitchPolicy::ri_rsb_rsp;
    bool ok = true;
    auto s = lowered(c, p, ok);
    auto itf = measure_itf(s, c);
    std::int64_t worst = 0;
    for (auto& [t, n] : itf)
      if (is_intermediate(c, t)) worst = std::max(worst, n);
    pass = pass && ok && worst == 1;
    d += std::string(name) + "=" + std::to_string(worst) + " ";
  }
  auto c = fixtures::sample("matvec_div");
  LowerOptions o;
  o.order = {"K", "M"};
  o.force = true;
  auto forced = lower(greedy_stitch(c, StitchPolicy::ri_rsb).groups.at(0), c, o);
  auto m = c.rank("M").extent;
  auto km = measure_itf(Schedule{forced.nest}, c).at("Z");
  pass = pass && km == m;
  return {pass, d + "forced KM=" + std::to_string(km) + " (M=" + std::to_string(m) + ")"};
}

Verdict oracle_equivalence() {
  auto p = ParamSet::preset("tiny");
  double worst_fused = 0, worst_oracle = 0;
  bool ok = true;
  for (bool merged : {true, false}) {
    auto c = merged ? fixtures::merged_mamba(p) : build_mamba1(p);
    auto ranges = mamba_input_ranges();
    auto base = synthesize_inputs(c, 1, ranges);
    run(lowered(c, StitchPolicy::unfused, ok), c, base);
    auto want = oracle::mamba1_reference(p, [&](const std::string& n) -> const std::vector<double>& {
      return base.at(n).data;
    });
    auto vs_oracle = [&](const TensorStore& st) {
      return std::max({oracle::max_rel_err(st.at("H").data, want.H), oracle::max_rel_err(st.at("S").data, want.S),
                       oracle::max_rel_err(st.at("Y").data, want.Y), oracle::max_rel_err(st.at("O").data, want.O)});
    };
    worst_oracle = std::max(worst_oracle, vs_oracle(base));
    for (auto pol : kAll) {
      auto st = synthesize_inputs(c, 1, ranges);
      run(lowered(c, pol, ok), c, st);
      worst_fused = std::max(worst_fused, compare_outputs(c, st, base).max_rel_err);
      worst_oracle = std::max(worst_oracle, vs_oracle(st));
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "max rel err fused/unfused %.3g, vs straight-line oracle %.3g (limit 1e-10)%s",
                worst_fused, worst_oracle, ok ? "" : ", lowering errors");
  return {ok && worst_fused <= 1e-10 && worst_oracle <= 1e-10, buf};
}

Verdict traffic_split() {
  auto c = mamba_for_costing(ParamSet::preset("mamba-370m"));
  auto r = evaluate_variant(c, StitchPolicy::unfused, HardwareConfig{}, Phase::prefill);
  double inter = 100 * r.inter_bytes() / r.total_bytes(), read = 100 * r.read_bytes() / r.total_bytes();
  bool a = std::abs(inter - 99.1) <= 1.5, b = std::abs(read - 47.3) <= 3.0;
  // sensitivity: without shared-input merging every projection rereads its input
  auto raw = build_mamba1(ParamSet::preset("mamba-370m"));
  auto ru = evaluate_variant(raw, StitchPolicy::unfused, HardwareConfig{}, Phase::prefill);
  return {a && b, "inter " + fmt(inter) + "% (want 99.1 +- 1.5" + (a ? "" : ", OUT") + "), read " + fmt(read) +
                      "% (want 47.3 +- 3" + (b ? "" : ", OUT") + "); unmerged cascade read " +
                      fmt(100 * ru.read_bytes() / ru.total_bytes()) + "%, weights are " +
                      fmt(100 * r.intra_bytes() / r.total_bytes()) + "% of bytes"};
}

Verdict ideal_bound() {
  HardwareConfig h;
  std::string d;
  bool pass = true;
  for (auto [phase, want] : {std::pair{Phase::prefill, 5.79}, std::pair{Phase::decode, 3.8}}) {
    auto c = mamba_for_costing(ParamSet::preset("mamba-370m").with_phase(phase));
    double x = evaluate_variant(c, StitchPolicy::unfused, h, phase).latency / evaluate_ideal(c, h, phase).latency;
    bool ok = std::abs(x / want - 1) <= 0.15;
    pass = pass && ok;
    d += std::string(phase_name(phase)) + " " + fmt(x) + "x (want " + fmt(want) + " +- 15%" + (ok ? "" : ", OUT") + ") ";
  }
  d.pop_back();
  return {pass, d};
}

Verdict variant_ordering() {
  auto c = mamba_for_costing(ParamSet::preset("mamba-370m"));
  HardwareConfig h;
  double u = evaluate_variant(c, StitchPolicy::unfused, h, Phase::prefill).latency;
  std::vector<double> want{2.72, 2.99, 3.35, 4.9}, got;
  for (auto p : fusion_policies()) got.push_back(u / evaluate_variant(c, p, h, Phase::prefill).latency);
  bool increasing = true;
  for (std::size_t k = 1; k < got.size(); ++k) increasing = increasing && got[k] > got[k - 1];
  std::string d = "speedups";
  int inside = 0;
  for (std::size_t k = 0; k < got.size(); ++k) {
    d += " " + fmt(got[k]) + "x";
    if (std::abs(got[k] / want[k] - 1) <= 0.2) ++inside;
  }
  d += increasing ? ", strictly increasing" : ", NOT increasing";
  d += "; soft band +-20% of (2.72, 2.99, 3.35, 4.90): " + std::to_string(inside) + "/4 inside (non-gating)";
  return {increasing, d};
}

Verdict baseline_deltas() {
  HardwareConfig h;
  auto pre = mamba_for_costing(ParamSet::preset("mamba-370m"));
  auto dec = mamba_for_costing(ParamSet::preset("mamba-370m").with_phase(Phase::decode));
  auto lat = [&](const Cascade& c, StitchPolicy p, Phase ph) { return evaluate_variant(c, p, h, ph).latency; };
  double ff = lat(pre, StitchPolicy::fully_fused, Phase::prefill);
  double vm = lat(pre, StitchPolicy::marca, Phase::prefill) / ff;
  double vg = lat(pre, StitchPolicy::geens, Phase::prefill) / ff;
  double dm = lat(dec, StitchPolicy::marca, Phase::decode) / lat(dec, StitchPolicy::fully_fused, Phase::decode);
  return {vm >= 4 && vg >= 1.3 && dm >= 1.5, "prefill vs MARCA-like " + fmt(vm) + "x (>= 4), vs Geens-like " + fmt(vg) +
                                                  "x (>= 1.3); decode vs MARCA-like " + fmt(dm) + "x (>= 1.5)"};
}

Verdict traffic_reduction() {
  HardwareConfig h;
  bool pass = true;
  std::string d;
  for (auto phase : {Phase::prefill, Phase::decode}) {
    auto c = mamba_for_costing(ParamSet::preset("mamba-370m").with_phase(phase));
    double u = evaluate_variant(c, StitchPolicy::unfused, h, phase).inter_bytes();
    double lo = INFINITY, hi = 0;
    for (auto p : fusion_policies()) {
      double x = u / evaluate_variant(c, p, h, phase).inter_bytes();
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    pass = pass && lo >= 4;
    d += std::string(phase_name(phase)) + " " + fmt(lo, 1) + "x..." + fmt(hi, 1) + "x ";
  }
  return {pass, d + "(each >= 4x)"};
}

Verdict property_corpus() {
  int mono = 0, nondet = 0, lower_err = 0, nests = 0, inequiv = 0, n = 1000;
  for (int s = 1; s <= n; ++s) {
    auto rc = oracle::random_cascade(static_cast<std::uint64_t>(s));
    auto& c = rc.cascade;
    std::size_t prev = c.einsums.size();
    for (auto p : fusion_policies()) {
      auto a = greedy_stitch(c, p), b = greedy_stitch(c, p);
      if (a.groups.size() > prev) ++mono;
      prev = a.groups.size();
      bool same = a.groups.size() == b.groups.size();
      for (std::size_t k = 0; same && k < a.groups.size(); ++k) same = a.groups[k].members == b.groups[k].members;
      if (!same) ++nondet;
      auto lp = lower_plan(a, c);
      nests += static_cast<int>(lp.schedule.size());
      if (!lp.ok()) {
        ++lower_err;
        continue;
      }
      if (s <= 50) {
        auto base = synthesize_inputs(c, 1), st = synthesize_inputs(c, 1);
        run(unfused_schedule(c), c, base);
        run(lp.schedule, c, st);
        if (!compare_outputs(c, st, base).equivalent()) ++inequiv;
      }
    }
  }
  bool pass = !mono && !nondet && !lower_err && !inequiv;
  return {pass, std::to_string(n) + " cascades, " + std::to_string(nests) + " nests: monotonicity violations " +
                    std::to_string(mono) + ", nondeterministic " + std::to_string(nondet) + ", checker errors " +
                    std::to_string(lower_err) + ", inequivalent (first 50) " + std::to_string(inequiv)};
}

} // namespace

int main() {
  criterion(1, "five-Einsum golden grouping", 1, five_stage);
  criterion(2, "Mamba group counts", 1, mamba_counts);
  criterion(3, "ITF suite", 10, itf_suite);
  criterion(4, "oracle equivalence (tiny Mamba, all policies)", 60, oracle_equivalence);
  criterion(5, "unfused traffic split", 5, traffic_split);
  criterion(6, "ideal-fusion bound", 5, ideal_bound);
  criterion(7, "variant ordering", 5, variant_ordering);
  criterion(8, "baseline deltas", 10, baseline_deltas);
  criterion(9, "inter-Einsum traffic reduction", 5, traffic_reduction);
  criterion(10, "random cascade properties", 300, property_corpus);
  std::printf("%d of 10 criteria failed\n", failures);
  return std::min(failures, 100);
}
