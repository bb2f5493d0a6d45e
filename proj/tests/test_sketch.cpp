#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <doctest.h>

#include "joinsense/errors.hpp"
#include "joinsense/exact.hpp"
#include "joinsense/gen.hpp"
#include "joinsense/query.hpp"
#include "joinsense/sketch.hpp"
#include "joinsense/smooth.hpp"
#include "test_util.hpp"

using namespace joinsense;

namespace {

// Chain2 with one heavy join value so local sensitivity is pinned at 3
// (insert an R2 row matching the x-degree-3 column of R1).
void fill_skewed_chain2(Dataset& ds) {
  jt::add_rel(ds, "R1", {"A", "B"},
              {{"a", "x"}, {"b", "x"}, {"c", "x"}, {"d", "y"}, {"e", "z"}, {"f", "w"}});
  jt::add_rel(ds, "R2", {"B", "C"}, {{"x", "1"}, {"x", "2"}, {"y", "1"}, {"y", "2"}, {"q", "3"}});
}

}  // namespace

TEST_CASE("sign families are deterministic four-wise hashes") {
  XiFamily f(42, 3, 7, 1);
  XiFamily g(42, 3, 7, 1);
  Rng rng = Rng::stream(1, {1});
  bool sawPlus = false, sawMinus = false;
  for (int i = 0; i < 200; ++i) {
    const std::uint64_t h = rng.next_u64() % kMersenne61;
    const int v = f(h);
    CHECK((v == 1 || v == -1));
    CHECK(v == g(h));
    sawPlus = sawPlus || v == 1;
    sawMinus = sawMinus || v == -1;
  }
  CHECK(sawPlus);
  CHECK(sawMinus);

  // Distinct cells or predicates give distinct families.
  XiFamily other(42, 3, 7, 2);
  bool differs = false;
  Rng rng2 = Rng::stream(1, {1});
  for (int i = 0; i < 200 && !differs; ++i) {
    const std::uint64_t h = rng2.next_u64() % kMersenne61;
    differs = f(h) != other(h);
  }
  CHECK(differs);
}

TEST_CASE("sign families are balanced and pairwise independent") {
  // One family over many inputs: the sum is a +-1 random walk.
  XiFamily f(7, 0, 0, 0);
  std::int64_t sum = 0;
  for (std::uint64_t i = 1; i <= 10000; ++i) sum += f(i * 2654435761u % kMersenne61);
  CHECK(std::abs(sum) <= 3 * 100);  // 3 sigma of sqrt(10000)

  // Across families, products of two fixed inputs are independent signs.
  std::int64_t pairSum = 0;
  for (std::uint64_t fam = 0; fam < 1000; ++fam) {
    XiFamily h(11, 0, fam, 4);
    pairSum += h(123456) * h(987654);
  }
  CHECK(std::abs(pairSum) <= 3 * 32);  // 3 sigma of sqrt(1000), rounded up
}

TEST_CASE("counters sum signed row products") {
  Dataset ds;
  jt::add_rel(ds, "R1", {"from", "to"}, {{"a", "x"}, {"b", "x"}, {"c", "y"}});
  jt::add_rel(ds, "R2", {"from", "to"}, {{"x", "p"}, {"y", "q"}, {"y", "r"}});
  jt::add_rel(ds, "R3", {"from", "to"}, {{"p", "1"}, {"q", "2"}, {"r", "3"}});
  BoundQuery q(ds, jt::chain3_spec());
  SketchParams params;
  params.s1 = 4;
  params.s2 = 3;
  const std::uint64_t seed = 97;

  // R1 touches only predicate 0 through its "to" column.
  const AgmsSketch s1 = build_sketch(q, "R1", params, seed, false);
  CHECK(s1.relationName == "R1");
  CHECK(s1.masterSeed == seed);
  for (std::uint64_t t = 0; t < params.s2; ++t)
    for (std::uint64_t s = 0; s < params.s1; ++s) {
      XiFamily xi(seed, t, s, 0);
      std::int64_t expect = 0;
      for (const std::string tok : {"x", "x", "y"}) expect += xi(hash_token(tok));
      CHECK(s1.counter(t, s) == expect);
    }

  // R2 touches predicate 0 on "from" and predicate 1 on "to": per-row product.
  const AgmsSketch s2 = build_sketch(q, "R2", params, seed, false);
  for (std::uint64_t t = 0; t < params.s2; ++t)
    for (std::uint64_t s = 0; s < params.s1; ++s) {
      XiFamily xi0(seed, t, s, 0);
      XiFamily xi1(seed, t, s, 1);
      std::int64_t expect = 0;
      for (const auto& [from, to] : std::vector<std::pair<std::string, std::string>>{
               {"x", "p"}, {"y", "q"}, {"y", "r"}})
        expect += xi0(hash_token(from)) * xi1(hash_token(to));
      CHECK(s2.counter(t, s) == expect);
    }

  CHECK_THROWS_AS(build_sketch(q, "R9", params, seed), SchemaError);
}

TEST_CASE("join estimates hit degenerate cases exactly") {
  // A single relation with no predicates: the estimate is its row count.
  {
    Dataset ds;
    jt::add_rel(ds, "R1", {"A", "B"}, {{"a", "x"}, {"b", "y"}, {"c", "z"}});
    BoundQuery q(ds, jt::make_spec({"R1"}, {}, {"R1"}));
    SketchParams params;
    params.s1 = 8;
    const auto sketches = build_all_sketches(q, params, 5);
    CHECK(estimate_join(sketches) == 3.0);
  }
  // All rows share one join value: products collapse to n1*n2 in every cell.
  {
    Dataset ds;
    jt::add_rel(ds, "R1", {"A", "B"}, {{"a", "x"}, {"b", "x"}, {"c", "x"}});
    jt::add_rel(ds, "R2", {"B", "C"}, {{"x", "1"}, {"x", "2"}, {"x", "3"}, {"x", "4"}});
    BoundQuery q(ds, jt::chain2_spec());
    SketchParams params;
    params.s1 = 16;
    params.s2 = 3;
    const auto sketches = build_all_sketches(q, params, 7);
    CHECK(estimate_join(sketches) == 12.0);
  }
  // An empty relation zeroes every estimate.
  {
    Dataset ds;
    jt::add_rel(ds, "R1", {"A", "B"}, {});
    jt::add_rel(ds, "R2", {"B", "C"}, {{"x", "1"}, {"y", "2"}});
    BoundQuery q(ds, jt::chain2_spec());
    const auto sketches = build_all_sketches(q, SketchParams{}, 9);
    CHECK(estimate_join(sketches) == 0.0);
  }
}

TEST_CASE("disjoint join keys estimate near zero") {
  Dataset ds;
  std::vector<std::vector<std::string>> r1, r2;
  for (int i = 0; i < 24; ++i) {
    r1.push_back({"a" + std::to_string(i), "left" + std::to_string(i)});
    r2.push_back({"right" + std::to_string(i), "c" + std::to_string(i)});
  }
  jt::add_rel(ds, "R1", {"A", "B"}, r1);
  jt::add_rel(ds, "R2", {"B", "C"}, r2);
  BoundQuery q(ds, jt::chain2_spec());
  SketchParams params;
  params.s1 = 64;
  const auto sketches = build_all_sketches(q, params, 3);
  CHECK(std::abs(estimate_join(sketches)) <= 24.0 * 24.0 * 3.0 / 8.0);
}

TEST_CASE("join estimates are unbiased across master seeds") {
  Dataset ds;
  jt::fill_chain2(ds);  // true join count 4
  BoundQuery q(ds, jt::chain2_spec());
  SketchParams params;
  params.s1 = 16;
  const int n = 1000;
  std::vector<double> est(n);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    est[i] = estimate_join(build_all_sketches(q, params, 1000 + i));
    mean += est[i];
  }
  mean /= n;
  double var = 0.0;
  for (double e : est) var += (e - mean) * (e - mean);
  const double sd = std::sqrt(var / (n - 1));
  CHECK(std::abs(mean - 4.0) <= 4.0 * sd / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("sketches serialize byte-stably and reject foreign data") {
  Dataset ds;
  jt::fill_chain2(ds);
  BoundQuery q(ds, jt::chain2_spec());
  SketchParams params;
  params.s1 = 8;
  params.s2 = 3;
  const AgmsSketch a = build_sketch(q, "R1", params, 11);
  const std::string text = a.to_json_text();
  const AgmsSketch back = AgmsSketch::from_json_text(text);
  CHECK(back.to_json_text() == text);
  CHECK(back.counters == a.counters);
  CHECK(back.relationName == a.relationName);
  CHECK(back.queryFingerprint == a.queryFingerprint);
  CHECK_NOTHROW(check_sketch_matches(back, q));

  CHECK_THROWS_AS(AgmsSketch::from_json_text("{"), DataError);
  CHECK_THROWS_AS(AgmsSketch::from_json_text(R"({"surprise": 1})"), DataError);

  AgmsSketch foreign = a;
  foreign.queryFingerprint = "0123456789abcdef";
  CHECK_THROWS_AS(check_sketch_matches(foreign, q), DataError);

  // Mixed seeds, fingerprints, or shapes never combine into an estimate.
  const AgmsSketch b = build_sketch(q, "R2", params, 11);
  AgmsSketch wrongSeed = b;
  wrongSeed.masterSeed = 12;
  CHECK_THROWS_AS(estimate_join({a, wrongSeed}), DataError);
  AgmsSketch wrongQuery = b;
  wrongQuery.queryFingerprint = "0123456789abcdef";
  CHECK_THROWS_AS(estimate_join({a, wrongQuery}), DataError);
  AgmsSketch wrongShape = b;
  wrongShape.params.s1 = 4;
  CHECK_THROWS_AS(estimate_join({a, wrongShape}), DataError);
  CHECK_THROWS_AS(estimate_join({}), UsageError);
  // Query-aligned consumers also need exactly one sketch per relation.
  CHECK_THROWS_AS(sks_ls_at_k({a}, q, 0, {0, 0}, 0.05), DataError);
}

TEST_CASE("width advisor scales by its accuracy terms") {
  const std::vector<double> self{100.0};
  const std::vector<double> dom{16.0};
  const std::uint64_t base = sketch_size_advisor(10.0, self, 0.1, 0.05, dom);
  const std::uint64_t doubledL = sketch_size_advisor(20.0, self, 0.1, 0.05, dom);
  const std::uint64_t halvedTau = sketch_size_advisor(10.0, self, 0.05, 0.05, dom);
  CHECK(static_cast<double>(base) / static_cast<double>(doubledL) ==
        doctest::Approx(4.0).epsilon(0.01));
  CHECK(static_cast<double>(halvedTau) / static_cast<double>(base) ==
        doctest::Approx(4.0).epsilon(0.01));
  CHECK_THROWS_AS(sketch_size_advisor(0.0, self, 0.1, 0.05, dom), UsageError);
  CHECK_THROWS_AS(sketch_size_advisor(10.0, self, 1.0, 0.05, dom), ConfigError);
  CHECK_THROWS_AS(sketch_size_advisor(10.0, self, 0.1, 0.0, dom), ConfigError);
}

TEST_CASE("perturbed counter bound collapses exactly on uniform data") {
  Dataset ds;
  jt::add_rel(ds, "R1", {"A", "B"}, {{"a", "x"}, {"b", "x"}, {"c", "x"}});
  jt::add_rel(ds, "R2", {"B", "C"}, {{"x", "1"}, {"x", "2"}, {"x", "3"}, {"x", "4"}});
  BoundQuery q(ds, jt::chain2_spec());  // both private
  SketchParams params;
  params.s1 = 8;
  params.s2 = 3;
  const auto sketches = build_all_sketches(q, params, 13);

  // Every R2 counter is +-4, so the absolute product for pivot R1 is exactly
  // 4; with tau = 0.2 the bound is (4 + k) / 0.8 for k extra R2 tuples.
  const double tau = 0.2;
  CHECK(sks_ls_at_k(sketches, q, 0, {0, 0}, tau) == doctest::Approx(4.0 / 0.8));
  CHECK(sks_ls_at_k(sketches, q, 0, {0, 3}, tau) == doctest::Approx(7.0 / 0.8));
  CHECK(sks_ls_at_k(sketches, q, 1, {2, 0}, tau) == doctest::Approx(5.0 / 0.8));

  CHECK_THROWS_AS(sks_ls_at_k(sketches, q, 0, {0, 0}, 1.0), ConfigError);
  CHECK_THROWS_AS(sks_ls_at_k(sketches, q, 0, {0, 0}, -0.1), ConfigError);
  CHECK_THROWS_AS(sks_ls_at_k(sketches, q, 0, {1, 0}, tau), UsageError);  // on the pivot
  CHECK_THROWS_AS(sks_ls_at_k(sketches, q, 0, {0}, tau), UsageError);     // wrong arity
  CHECK_THROWS_AS(sks_ls_at_k(sketches, q, 2, {0, 0}, tau), UsageError);  // no such pivot
}

TEST_CASE("pivot must be private for the perturbed bound") {
  Dataset ds;
  jt::fill_chain2(ds);
  BoundQuery q(ds, jt::chain2_spec({"R1"}));
  const auto sketches = build_all_sketches(q, SketchParams{}, 5);
  CHECK_THROWS_AS(sks_ls_at_k(sketches, q, 1, {0, 0}, 0.05), UsageError);
  CHECK_NOTHROW(sks_ls_at_k(sketches, q, 0, {0, 0}, 0.05));
}

TEST_CASE("conservative perturbation dominates the literal form") {
  GenSpec spec;
  spec.rows = 400;
  spec.relations = 3;
  spec.skew = 1.3;
  spec.seed = 6;
  Dataset ds;
  generate_dataset(spec, ds);
  BoundQuery q(ds, jt::chain3_spec());
  SketchParams params;
  params.s1 = 64;
  params.s2 = 3;
  const auto sketches = build_all_sketches(q, params, 19);
  // Partitions place inserted tuples only on private non-pivot relations;
  // chain3 keeps R1 and R3 private, so mass goes to index 2.
  for (const std::vector<std::uint64_t> part :
       {std::vector<std::uint64_t>{0, 0, 0}, {0, 0, 2}, {0, 0, 5}}) {
    const double cons = sks_ls_at_k(sketches, q, 0, part, 0.05, true);
    const double lit = sks_ls_at_k(sketches, q, 0, part, 0.05, false);
    CHECK(cons >= lit - 1e-9);
  }
}

TEST_CASE("envelope tables grow monotonically and gate the scan") {
  Dataset ds;
  fill_skewed_chain2(ds);
  BoundQuery q(ds, jt::chain2_spec());
  SketchParams params;
  params.s1 = 128;
  const auto sketches = build_all_sketches(q, params, 23);

  const SksTables tables = build_sks_tables(sketches, q, 40, params.tau);
  REQUIRE(tables.envelope.size() == 41);
  CHECK(tables.privateCount == 2);
  for (std::size_t k = 0; k + 1 < tables.envelope.size(); ++k)
    CHECK(tables.envelope[k] <= tables.envelope[k + 1] + 1e-12);

  // beta = 0.025 needs ceil(1/0.025)+1 = 41 entries beyond index 0.
  SmoothingParams tight = SmoothingParams::laplace(1.0, 1e-6);
  tight.beta = 0.02;  // needs index up to 51: too short
  CHECK_THROWS_AS(sketching_sensitivity(tables, tight), UsageError);
  tight.beta = 0.05;  // needs up to 21: fits
  const SensitivityReport rep = sketching_sensitivity(tables, tight);
  CHECK(rep.method == Method::SketchSE);
  CHECK(rep.converged);
  CHECK(rep.value > 0.0);

  CHECK(sks_table_size(2, 0.1) == 11);
  CHECK(sks_table_size(1, 0.5) == 1);
  CHECK(sks_table_size(0, 0.5) == 1);
  CHECK(sks_table_size(3, 0.25) == 9);
  CHECK_THROWS_AS(sks_table_size(2, 0.0), ConfigError);
}

TEST_CASE("sketched sensitivity covers local sensitivity with high probability") {
  Dataset ds;
  fill_skewed_chain2(ds);
  BoundQuery q(ds, jt::chain2_spec());
  const std::uint64_t truth = local_sensitivity_oracle(q);
  REQUIRE(truth == 3);

  const SmoothingParams params = SmoothingParams::laplace(1.0, 1e-6);
  SketchParams sparams;
  sparams.s1 = 1024;
  sparams.s2 = 5;
  int failures = 0;
  const int trials = 100;
  for (int i = 0; i < trials; ++i) {
    const auto sketches = build_all_sketches(q, sparams, 5000 + i);
    const SensitivityReport rep = sketching_sensitivity(sketches, q, params, sparams);
    if (rep.value < static_cast<double>(truth)) ++failures;
  }
  // eta*trials plus three binomial sigmas plus one: 5 + 6.6 + 1.
  CHECK(failures <= 12);
}
