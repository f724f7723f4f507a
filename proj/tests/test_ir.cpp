#include <gtest/gtest.h>

#include "einfuse/ir.hpp"
#include "einfuse/mamba.hpp"
#include "einfuse/merge.hpp"
#include "einfuse/text_format.hpp"
#include "einfuse/validate.hpp"
#include "support/fixtures.hpp"

using namespace einfuse;

namespace {

bool has_code(const std::vector<Diagnostic>& ds, const std::string& code) {
  for (auto& d : ds)
    if (d.code == code) return true;
  return false;
}

std::vector<Diagnostic> check(const std::string& text) {
  auto r = parse(text);
  if (!r.cascade) return r.diagnostics;
  auto v = validate(*r.cascade);
  r.diagnostics.insert(r.diagnostics.end(), v.begin(), v.end());
  return r.diagnostics;
}

const char* kScan = R"(rank T(6) generational step=1 stop=6
rank K(3)
tensor X : T(6), K(3)
tensor S0 : K(3)
tensor S : T(6), K(3)
einsum 1: S[t,k] = S[t-1,k] * 0.5 + X[t,k]
init: S[0,k] = S0[k] * 0.5 + X[0,k]
)";

} // namespace

TEST(TextFormat, MambaRoundTrips) {
  auto p = ParamSet::preset("tiny");
  auto c = build_mamba1(p);
  auto again = parse(serialize(c));
  ASSERT_TRUE(again.ok());
  EXPECT_TRUE(structurally_equal(c, *again.cascade));
  EXPECT_EQ(c.einsums.size(), 24u);
}

TEST(TextFormat, SamplesRoundTrip) {
  for (auto name : {"mul_then_reduce", "matvec_div", "scale_matmul", "two_matmuls", "five_stage"}) {
    auto c = fixtures::sample(name);
    auto again = parse(serialize(c));
    ASSERT_TRUE(again.ok()) << name;
    EXPECT_TRUE(structurally_equal(c, *again.cascade)) << name;
  }
}

TEST(TextFormat, MergedCascadeRoundTrips) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  auto again = parse(serialize(c));
  ASSERT_TRUE(again.ok()) << serialize(c);
  EXPECT_TRUE(structurally_equal(c, *again.cascade));
}

TEST(TextFormat, SyntaxErrorHasLine) {
  auto r = parse("rank M(4)\ntensor A : M(4)\neinsum 1: A[m] = = 3\n");
  EXPECT_FALSE(r.ok());
  ASSERT_FALSE(r.diagnostics.empty());
  EXPECT_EQ(r.diagnostics.front().line, 3);
}

TEST(Validate, GenerationalScanIsValid) {
  auto ds = check(kScan);
  EXPECT_FALSE(has_errors(ds));
}

TEST(Validate, Errors) {
  EXPECT_TRUE(has_code(check("rank M(4)\ntensor Z : M(4)\neinsum 1: Z[m] = Q[m]\n"), "undeclared-tensor"));
  EXPECT_TRUE(has_code(check("rank M(4)\nrank N(2)\ntensor A : M(4), N(2)\ntensor Z : M(4)\neinsum 1: Z[m] = A[m]\n"),
                       "arity-mismatch"));
  EXPECT_TRUE(has_code(check("rank M(4)\nrank N(2)\ntensor A : M(4), N(2)\ntensor Z : M(4)\neinsum 1: Z[m] = A[m,n]\n"),
                       "unreduced-rank"));
  EXPECT_TRUE(has_code(check("rank M(4)\ntensor A : M(4)\ntensor Y : M(4)\ntensor Z : M(4)\n"
                             "einsum 1: Y[m] = Z[m]\neinsum 2: Z[m] = A[m]\n"),
                       "read-before-produce"));
  EXPECT_TRUE(has_code(check("rank M(4)\ntensor A : M(4)\ntensor Z : M(4)\n"
                             "einsum 1: Z[m] = A[m]\neinsum 2: Z[m] = A[m] * 2\n"),
                       "multiple-producers"));
  EXPECT_TRUE(has_code(check("rank M(4)\nrank M(3)\ntensor A : M(4)\neinsum 1: A[m] = 1\n"), "duplicate-rank"));
  std::string no_init = kScan;
  no_init.erase(no_init.find("init:"));
  EXPECT_TRUE(has_code(check(no_init), "missing-initialization"));
}

TEST(Ranks, MambaHelpers) {
  auto c = build_mamba1(ParamSet::preset("tiny"));
  auto e = [&](int id) -> const EinsumDecl& { return c.einsums[*c.index_of(id)]; };
  EXPECT_EQ(reduction_ranks(e(9)), (RankSet{"W"}));
  EXPECT_EQ(rank_set(e(9)), (RankSet{"B", "D", "I", "W"}));
  EXPECT_EQ(reduction_ranks(e(3)), (RankSet{"E"}));
  EXPECT_EQ(rank_set(e(21)), (RankSet{"B", "D", "I", "N"}));
  EXPECT_EQ(generational_rank(e(19), c), std::optional<std::string>("I"));
  EXPECT_EQ(generational_rank(e(3), c), std::optional<std::string>("I")); // I is generational everywhere
  auto mv = fixtures::sample("matvec_div");
  EXPECT_FALSE(generational_rank(mv.einsums[0], mv).has_value());
  EXPECT_TRUE(adjacent(c, *c.index_of(7), *c.index_of(9)));
  EXPECT_FALSE(adjacent(c, *c.index_of(8), *c.index_of(9)));
  EXPECT_TRUE(is_intermediate(c, "LEX"));
  EXPECT_TRUE(is_cascade_input(c, "WIN"));
  EXPECT_EQ(consumers(c, "LEX").size(), 5u); // three x-projections, B*x, skip
}

TEST(Ranks, GenerationalStop) {
  auto r = parse("rank T(10) generational step=2 stop=7\ntensor A : T(10)\ntensor Z : T(10)\neinsum 1: Z[t] = A[t]\n");
  ASSERT_TRUE(r.ok());
  auto& t = r.cascade->rank("T");
  EXPECT_TRUE(t.generational());
  EXPECT_EQ(t.iterations(), 4); // 0 2 4 6
}

TEST(Merge, MambaSharedInputs) {
  auto c = fixtures::merged_mamba(ParamSet::preset("tiny"));
  ASSERT_EQ(c.einsums.size(), 20u);
  std::vector<std::string> labels;
  for (auto& e : c.einsums) labels.push_back(e.label());
  std::vector<std::string> want{"1", "2", "3", "4", "5", "6", "7+8", "9", "10", "11+12+13",
                                "14", "15", "16+17", "18", "19", "20", "21", "22", "23", "24"};
  EXPECT_EQ(labels, want);
  EXPECT_FALSE(c.concats.empty());
  EXPECT_FALSE(has_errors(validate(c)));
}

TEST(Merge, RejectsUnknownIds) {
  auto c = build_mamba1(ParamSet::preset("tiny"));
  auto r = merge_shared_inputs(c, {{7, 99}});
  EXPECT_TRUE(has_code(r.diagnostics, "merge-unknown-id"));
}

TEST(Params, ParseAndPhase) {
  auto p = ParamSet::parse("preset=tiny,B=3");
  EXPECT_EQ(p.B, 3);
  EXPECT_EQ(p.E, 8);
  EXPECT_EQ(ParamSet::parse("phase=decode").I, 1);
  EXPECT_EQ(ParamSet{}.with_phase(Phase::decode).I, 1);
  EXPECT_THROW(ParamSet::parse("Q=3"), IrError);
  EXPECT_THROW(ParamSet::parse("preset=huge"), IrError);
}
