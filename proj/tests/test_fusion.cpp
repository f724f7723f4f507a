#include <gtest/gtest.h>

#include "einfuse/fusion.hpp"
#include "einfuse/mamba.hpp"
#include "support/alg1_oracle.hpp"
#include "support/fixtures.hpp"
#include "support/random_cascade.hpp"

using namespace einfuse;

namespace {

std::vector<std::vector<std::string>> labels(const Cascade& c, const FusionPlan& p) {
  std::vector<std::vector<std::string>> v;
  for (auto& g : p.groups) {
    v.push_back({});
    for (auto m : g.members) v.back().push_back(c.einsums[m].label());
  }
  return v;
}

oracle::Pol oracle_policy(StitchPolicy p) {
  switch (p) {
  case StitchPolicy::ri: return oracle::Pol::ri;
  case StitchPolicy::ri_rsb: return oracle::Pol::ri_rsb;
  case StitchPolicy::ri_rsb_rsp: return oracle::Pol::ri_rsb_rsp;
  default: return oracle::Pol::fully_fused;
  }
}

} // namespace

TEST(Classify, SampleCascades) {
  EXPECT_EQ(classify_pair(fixtures::sample("mul_then_reduce"), 0, 1), FusionClass::RI);
  EXPECT_EQ(classify_pair(fixtures::sample("matvec_div"), 0, 1), FusionClass::RSb);
  EXPECT_EQ(classify_pair(fixtures::sample("scale_matmul"), 0, 1), FusionClass::RSp);
  EXPECT_EQ(classify_pair(fixtures::sample("two_matmuls"), 0, 1), FusionClass::RD);
}

TEST(Classify, NotAdjacent) {
  auto r = parse("rank M(3)\ntensor A : M(3)\ntensor B : M(3)\ntensor Y : M(3)\ntensor Z : M(3)\n"
                 "einsum 1: Y[m] = A[m]\neinsum 2: Z[m] = B[m]\n");
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(classify_pair(*r.cascade, 0, 1), FusionClass::NotAdjacent);
  auto plan = greedy_stitch(*r.cascade, StitchPolicy::fully_fused);
  EXPECT_EQ(plan.groups.size(), 2u);
}

TEST(Classify, SwapSymmetry) {
  std::vector<RankSet> sets{{"M"}, {"M", "N"}, {"M", "N", "P"}, {"N", "P"}, {"K", "M"}, {"M", "N", "K"}};
  for (auto& a : sets)
    for (auto& b : sets) {
      auto f = compare_spaces(a, b), r = compare_spaces(b, a);
      if (f == FusionClass::RSb) {
        EXPECT_EQ(r, FusionClass::RSp);
      } else if (f == FusionClass::RSp) {
        EXPECT_EQ(r, FusionClass::RSb);
      } else {
        EXPECT_EQ(r, f);
      }
    }
}

TEST(Stitch, FiveStageGroupsAndChains) {
  auto c = fixtures::sample("five_stage");
  auto plan = greedy_stitch(c, StitchPolicy::ri_rsb_rsp);
  ASSERT_EQ(labels(c, plan), (std::vector<std::vector<std::string>>{{"1", "2", "3"}, {"4", "5"}}));
  EXPECT_EQ(plan.groups[0].chain, (std::vector<RankSet>{{"M", "N"}, {"M", "N", "P"}}));
  EXPECT_EQ(plan.groups[1].chain, (std::vector<RankSet>{{"N"}}));
  EXPECT_EQ(stationary_ranks(c, plan.groups[0]).size(), 2u);
  EXPECT_EQ(stationary_ranks(c, plan.groups[1]), (std::vector<std::string>{"N"}));
}

TEST(Stitch, SingletonStationaryIsOutputRanks) {
  auto c = fixtures::sample("matvec_div");
  FusionGroup g;
  g.members = {0};
  EXPECT_EQ(stationary_ranks(c, g), (std::vector<std::string>{"M"}));
}

TEST(Stitch, MambaGroupCounts) {
  auto c = fixtures::merged_mamba();
  EXPECT_EQ(greedy_stitch(c, StitchPolicy::ri).groups.size(), 12u);
  EXPECT_EQ(greedy_stitch(c, StitchPolicy::ri_rsb).groups.size(), 8u);
  EXPECT_EQ(greedy_stitch(c, StitchPolicy::ri_rsb_rsp).groups.size(), 3u);
  EXPECT_EQ(greedy_stitch(c, StitchPolicy::fully_fused).groups.size(), 1u);
}

TEST(Stitch, MambaRecurrenceNeverSplit) {
  auto c = fixtures::merged_mamba();
  for (auto p : fusion_policies())
    for (auto& g : greedy_stitch(c, p).groups) {
      bool has19 = false, has20 = false;
      for (auto m : g.members) {
        has19 = has19 || c.einsums[m].label() == "19";
        has20 = has20 || c.einsums[m].label() == "20";
      }
      EXPECT_EQ(has19, has20) << policy_name(p);
    }
}

TEST(Stitch, BaselineRegion) {
  auto c = fixtures::merged_mamba();
  for (auto p : {StitchPolicy::marca, StitchPolicy::geens}) {
    auto plan = greedy_stitch(c, p);
    EXPECT_EQ(plan.groups.size(), 16u);
    std::vector<std::string> region;
    for (auto& g : labels(c, plan))
      if (g.size() > 1) region = g;
    EXPECT_EQ(region, (std::vector<std::string>{"16+17", "18", "19", "20", "21"}));
  }
}

TEST(Stitch, FullyFusedMultiPassTensors) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  auto plan = greedy_stitch(c, StitchPolicy::fully_fused);
  ASSERT_EQ(plan.groups.size(), 1u);
  auto& res = plan.groups[0].residency;
  ASSERT_TRUE(res.count("X") && res.count("LEX"));
  EXPECT_EQ(res.at("X").kind, ResidencyKind::multipass);
  EXPECT_EQ(res.at("X").passes, 2);
  EXPECT_EQ(res.at("LEX").kind, ResidencyKind::multipass);
  EXPECT_EQ(res.at("LEX").passes, 2);
}

TEST(Stitch, InGroupIntermediatesStayOnChip) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  for (auto p : {StitchPolicy::ri, StitchPolicy::ri_rsb, StitchPolicy::ri_rsb_rsp}) {
    for (auto& g : greedy_stitch(c, p).groups)
      for (auto& [t, r] : g.residency) {
        auto cs = consumers(c, t);
        bool inside = !cs.empty();
        for (auto q : cs)
          if (std::find(g.members.begin(), g.members.end(), q) == g.members.end()) inside = false;
        if (inside) {
          EXPECT_NE(r.kind, ResidencyKind::backing) << policy_name(p) << " " << t;
        }
      }
  }
}

TEST(Stitch, SpillOptionClosesGroup) {
  auto c = fixtures::sample("mul_then_reduce");
  EXPECT_EQ(greedy_stitch(c, StitchPolicy::ri).groups.size(), 1u);
  StitchOptions o;
  o.spill.insert("Z");
  EXPECT_EQ(greedy_stitch(c, StitchPolicy::ri, o).groups.size(), 2u);
}

TEST(Stitch, FanInNotes) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  auto plan = greedy_stitch(c, StitchPolicy::ri_rsb_rsp);
  bool noted = false;
  for (auto& g : plan.groups)
    for (auto& n : g.notes)
      if (n.find("from memory") != std::string::npos) noted = true;
  EXPECT_TRUE(noted);
}

TEST(Generational, StateResidency) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  auto plan = greedy_stitch(c, StitchPolicy::geens);
  const FusionGroup* region = nullptr;
  for (auto& g : plan.groups)
    if (g.members.size() > 1) region = &g;
  ASSERT_NE(region, nullptr);
  auto p = ParamSet::preset("tiny");

  auto unit = handle_generational(c, *region, 1);
  EXPECT_EQ(unit.residency.at("H").kind, ResidencyKind::unit);
  EXPECT_EQ(unit.state_elements, 1);

  auto whole = handle_generational(c, *region, p.I);
  EXPECT_EQ(whole.residency.at("H").kind, ResidencyKind::tile);
  EXPECT_EQ(whole.state_elements, p.B * p.D * p.N);

  std::vector<Diagnostic> d;
  auto clamped = handle_generational(c, *region, p.I * 10, &d);
  EXPECT_EQ(*clamped.generational_tile, p.I);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].code, "tile-clamped");
  EXPECT_TRUE(d[0].warning);

  auto dc = fixtures::merged_mamba(p.with_phase(Phase::decode));
  for (auto& g : greedy_stitch(dc, StitchPolicy::geens).groups)
    if (g.members.size() > 1) {
      EXPECT_EQ(handle_generational(dc, g, 1).residency.at("H").kind, ResidencyKind::unit);
    }
}

TEST(Properties, BruteForceAgreesOnSmallCascades) {
  int checked = 0;
  for (std::uint64_t s = 1; checked < 300; ++s) {
    auto rc = oracle::random_cascade(s, 6, 5);
    for (auto p : fusion_policies()) {
      auto want = oracle::alg1_groups(rc.cascade, oracle_policy(p));
      ASSERT_FALSE(want.empty()) << "reference found no unique partition\n" << rc.text;
      std::vector<std::vector<std::size_t>> got;
      for (auto& g : greedy_stitch(rc.cascade, p).groups) got.push_back(g.members);
      EXPECT_EQ(got, want) << policy_name(p) << "\n" << rc.text;
    }
    ++checked;
  }
}

TEST(Properties, NestingAndDeterminism) {
  for (std::uint64_t s = 1; s <= 200; ++s) {
    auto rc = oracle::random_cascade(s);
    std::size_t prev = rc.cascade.einsums.size();
    for (auto p : fusion_policies()) {
      auto a = greedy_stitch(rc.cascade, p), b = greedy_stitch(rc.cascade, p);
      EXPECT_LE(a.groups.size(), prev) << policy_name(p) << "\n" << rc.text;
      prev = a.groups.size();
      ASSERT_EQ(a.groups.size(), b.groups.size());
      for (std::size_t k = 0; k < a.groups.size(); ++k) EXPECT_EQ(a.groups[k].members, b.groups[k].members);
    }
  }
}
