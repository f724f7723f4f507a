#include <gtest/gtest.h>

#include <sstream>

#include "einfuse/footprint.hpp"
#include "einfuse/interpreter.hpp"
#include "einfuse/schedule.hpp"
#include "support/fixtures.hpp"
#include "support/mamba_oracle.hpp"
#include "support/random_cascade.hpp"

using namespace einfuse;

namespace {

const std::vector<StitchPolicy> kPolicies{StitchPolicy::marca, StitchPolicy::geens,      StitchPolicy::ri,
                                          StitchPolicy::ri_rsb, StitchPolicy::ri_rsb_rsp, StitchPolicy::fully_fused};

struct Ran {
  TensorStore store;
  ExecutionTrace trace;
};

Ran execute(const Cascade& c, StitchPolicy p, std::uint64_t seed, const std::map<std::string, InputRange>& ranges = {}) {
  auto lp = lower_plan(greedy_stitch(c, p), c);
  EXPECT_TRUE(lp.ok()) << policy_name(p);
  Ran r{synthesize_inputs(c, seed, ranges), {}};
  r.trace = run(lp.schedule, c, r.store);
  return r;
}

void expect_matches_reference(const ParamSet& p, bool merged) {
  auto c = merged ? fixtures::merged_mamba(p) : build_mamba1(p);
  auto ranges = mamba_input_ranges();
  auto base = execute(c, StitchPolicy::unfused, 7, ranges);
  auto want = oracle::mamba1_reference(p, [&](const std::string& n) -> const std::vector<double>& {
    return base.store.at(n).data;
  });
  EXPECT_LE(oracle::max_rel_err(base.store.at("H").data, want.H), 1e-10);
  EXPECT_LE(oracle::max_rel_err(base.store.at("S").data, want.S), 1e-10);
  EXPECT_LE(oracle::max_rel_err(base.store.at("Y").data, want.Y), 1e-10);
  EXPECT_LE(oracle::max_rel_err(base.store.at("O").data, want.O), 1e-10);

  for (auto pol : kPolicies) {
    auto got = execute(c, pol, 7, ranges);
    auto cmp = compare_outputs(c, got.store, base.store);
    EXPECT_TRUE(cmp.equivalent()) << policy_name(pol) << " worst " << cmp.worst_tensor << " " << cmp.max_rel_err;
    EXPECT_LE(oracle::max_rel_err(got.store.at("O").data, want.O), 1e-10) << policy_name(pol);
    for (auto& [t, n] : got.trace.nonfinite) EXPECT_EQ(n, 0) << t;
  }
}

void expect_traffic_matches(const Cascade& c, StitchPolicy p, const std::string& what) {
  auto lp = lower_plan(greedy_stitch(c, p), c);
  ASSERT_TRUE(lp.ok());
  std::map<std::string, TensorTraffic> predicted;
  for (auto& n : lp.schedule)
    for (auto& [t, tt] : analytic_traffic(n, c)) {
      predicted[t].reads += tt.reads;
      predicted[t].writes += tt.writes;
    }
  auto st = synthesize_inputs(c, 3);
  auto tr = run(lp.schedule, c, st);
  std::set<std::string> names;
  for (auto& [t, v] : predicted) names.insert(t);
  for (auto& [t, v] : tr.backing_reads) names.insert(t);
  for (auto& [t, v] : tr.backing_writes) names.insert(t);
  for (auto& t : names) {
    auto r = tr.backing_reads.count(t) ? tr.backing_reads.at(t) : 0;
    auto w = tr.backing_writes.count(t) ? tr.backing_writes.at(t) : 0;
    EXPECT_EQ(predicted[t].reads, r) << what << " " << policy_name(p) << " reads of " << t;
    EXPECT_EQ(predicted[t].writes, w) << what << " " << policy_name(p) << " writes of " << t;
  }
}

} // namespace

TEST(Interpreter, TinyMambaMatchesReferenceMerged) { expect_matches_reference(ParamSet::preset("tiny"), true); }

TEST(Interpreter, TinyMambaMatchesReferenceUnmerged) { expect_matches_reference(ParamSet::preset("tiny"), false); }

TEST(Interpreter, TinyMambaDecode) {
  expect_matches_reference(ParamSet::preset("tiny").with_phase(Phase::decode), true);
}

TEST(Interpreter, OddShapes) {
  auto p = ParamSet::parse("preset=tiny,B=1,I=5,E=6,D=3,N=2,R=1,W=3");
  expect_matches_reference(p, true);
}

TEST(Interpreter, SamplesAllPoliciesEquivalent) {
  for (auto name : {"mul_then_reduce", "matvec_div", "scale_matmul", "two_matmuls", "five_stage"}) {
    auto c = fixtures::sample(name);
    auto base = execute(c, StitchPolicy::unfused, 11);
    for (auto pol : kPolicies) {
      auto got = execute(c, pol, 11);
      EXPECT_EQ(compare_outputs(c, got.store, base.store).max_rel_err, 0.0) << name << " " << policy_name(pol);
    }
  }
}

TEST(Interpreter, RandomCascadesEquivalent) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    auto rc = oracle::random_cascade(seed);
    auto base = execute(rc.cascade, StitchPolicy::unfused, seed);
    for (auto pol : fusion_policies()) {
      auto got = execute(rc.cascade, pol, seed);
      auto cmp = compare_outputs(rc.cascade, got.store, base.store);
      EXPECT_TRUE(cmp.equivalent()) << policy_name(pol) << " " << cmp.worst_tensor << "\n" << rc.text;
    }
  }
}

TEST(Interpreter, DeterministicInputs) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  auto a = synthesize_inputs(c, 5), b = synthesize_inputs(c, 5), d = synthesize_inputs(c, 6);
  EXPECT_EQ(a.at("WOUT").data, b.at("WOUT").data);
  EXPECT_NE(a.at("WOUT").data, d.at("WOUT").data);
}

TEST(Interpreter, TriggersFireAsDeclared) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  auto lp = lower_plan(greedy_stitch(c, StitchPolicy::fully_fused), c);
  auto st = synthesize_inputs(c, 1);
  auto tr = run(lp.schedule, c, st);
  ASSERT_FALSE(lp.schedule[0].triggers.empty());
  for (auto& t : lp.schedule[0].triggers) {
    ASSERT_TRUE(tr.trigger_fires.count(t.tensor)) << t.tensor;
    EXPECT_EQ(tr.trigger_fires.at(t.tensor), t.fires) << t.tensor;
  }
}

TEST(Traffic, AnalyticEqualsCounted) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  for (auto p : kPolicies) expect_traffic_matches(c, p, "mamba");
  expect_traffic_matches(c, StitchPolicy::unfused, "mamba");
  auto u = build_mamba1(ParamSet::preset("tiny"));
  for (auto p : kPolicies) expect_traffic_matches(u, p, "unmerged");
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    auto rc = oracle::random_cascade(seed);
    for (auto p : fusion_policies()) expect_traffic_matches(rc.cascade, p, "seed " + std::to_string(seed));
  }
}

TEST(Traffic, FusionRemovesIntermediateTraffic) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  auto inter = [&](StitchPolicy p) {
    auto r = execute(c, p, 1);
    std::int64_t s = 0;
    for (auto& [t, v] : r.trace.backing_reads)
      if (is_intermediate(c, t)) s += v;
    for (auto& [t, v] : r.trace.backing_writes)
      if (is_intermediate(c, t)) s += v;
    return s;
  };
  auto u = inter(StitchPolicy::unfused), ri = inter(StitchPolicy::ri), rsb = inter(StitchPolicy::ri_rsb),
       rsp = inter(StitchPolicy::ri_rsb_rsp), ff = inter(StitchPolicy::fully_fused);
  EXPECT_GT(u, ri);
  EXPECT_GT(ri, rsb);
  EXPECT_GT(rsb, rsp);
  // bridged tensors still go through the backing store
  EXPECT_GE(rsp, ff);
}

TEST(RawTensor, RoundTrip) {
  Tensor t({2, 3});
  for (std::size_t k = 0; k < t.size(); ++k) t.data[k] = 0.1 * static_cast<double>(k) - 0.25;
  std::stringstream ss;
  write_tensor_raw(ss, "T", t);
  auto [name, back] = read_tensor_raw(ss);
  EXPECT_EQ(name, "T");
  EXPECT_EQ(back.shape, t.shape);
  EXPECT_EQ(back.data, t.data);
}
