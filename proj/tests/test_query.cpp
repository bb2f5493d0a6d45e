#include <algorithm>
#include <set>

#include <doctest.h>

#include "joinsense/errors.hpp"
#include "joinsense/query.hpp"
#include "test_util.hpp"

using namespace joinsense;

namespace {

Dataset chain3_data() {
  Dataset ds;
  jt::add_rel(ds, "R1", {"from", "to"}, {{"a", "x"}});
  jt::add_rel(ds, "R2", {"from", "to"}, {{"x", "y"}});
  jt::add_rel(ds, "R3", {"from", "to"}, {{"y", "z"}});
  return ds;
}

Dataset chain4_data() {
  Dataset ds;
  jt::add_rel(ds, "R1", {"from", "to"}, {{"a", "x"}});
  jt::add_rel(ds, "R2", {"from", "to"}, {{"x", "y"}});
  jt::add_rel(ds, "R3", {"from", "to"}, {{"y", "z"}});
  jt::add_rel(ds, "R4", {"from", "to"}, {{"z", "w"}});
  return ds;
}

}  // namespace

TEST_CASE("query spec json round-trips and fingerprints canonically") {
  const std::string text = R"({
    "id": "q1",
    "relations": ["R1", "R2"],
    "predicates": [{"left": "R1.B", "right": "R2.B"}],
    "private": ["R1"]
  })";
  QuerySpec spec = QuerySpec::from_json_text(text, "fallback");
  CHECK(spec.id == "q1");
  CHECK(spec.relations.size() == 2);
  CHECK(spec.predicates.size() == 1);
  CHECK(spec.privateRelations == std::vector<std::string>{"R1"});

  QuerySpec again = QuerySpec::from_json_text(spec.to_json_text(), "x");
  CHECK(again.fingerprint() == spec.fingerprint());

  // Reordering predicates or private lists does not change the fingerprint.
  QuerySpec a = jt::make_spec({"R1", "R2", "R3"}, {{"R1.to", "R2.from"}, {"R2.to", "R3.from"}},
                              {"R1", "R3"});
  QuerySpec b = jt::make_spec({"R1", "R2", "R3"}, {{"R2.to", "R3.from"}, {"R1.to", "R2.from"}},
                              {"R3", "R1"});
  CHECK(a.fingerprint() == b.fingerprint());

  QuerySpec c = jt::make_spec({"R1", "R2", "R3"}, {{"R1.to", "R2.from"}, {"R2.to", "R3.from"}},
                              {"R1"});
  CHECK(c.fingerprint() != a.fingerprint());

  CHECK(spec.fingerprint().size() == 16);
  CHECK_THROWS_AS(QuerySpec::from_json_text("{", "f"), DataError);
  CHECK_THROWS_AS(QuerySpec::from_json_text("{}", "f"), DataError);
}

TEST_CASE("binding validates the schema") {
  Dataset ds = chain3_data();
  CHECK_THROWS_AS(BoundQuery(ds, jt::make_spec({}, {}, {})), SchemaError);
  CHECK_THROWS_AS(BoundQuery(ds, jt::make_spec({"R1", "R1"}, {}, {})), SchemaError);
  CHECK_THROWS_AS(
      BoundQuery(ds, jt::make_spec({"R1", "R2"}, {{"R1.to", "R9.from"}}, {})), SchemaError);
  CHECK_THROWS_AS(BoundQuery(ds, jt::make_spec({"R1", "R2"}, {{"R1.to", "R1.from"}}, {})),
                  SchemaError);
  CHECK_THROWS_AS(BoundQuery(ds, jt::make_spec({"R1"}, {}, {"R9"})), SchemaError);

  BoundQuery q(ds, jt::chain3_spec());
  CHECK(q.n() == 3);
  CHECK(q.full_mask() == 0b111);
  CHECK(q.private_mask() == 0b101);
  CHECK(q.private_count() == 2);
  CHECK(q.is_private(0));
  CHECK_FALSE(q.is_private(1));
}

TEST_CASE("graph classification") {
  {
    Dataset ds = chain3_data();
    BoundQuery q(ds, jt::chain3_spec());
    const QuerySummary s = validate(q);
    CHECK(s.kind == GraphKind::Chain);
    CHECK(s.connected);
    CHECK(s.relationCount == 3);
    CHECK(s.predicateCount == 2);
  }
  {
    Dataset ds = chain3_data();
    BoundQuery q(ds, jt::triangle_spec());
    CHECK(validate(q).kind == GraphKind::Cyclic);
  }
  {
    Dataset ds = chain4_data();
    QuerySpec star = jt::make_spec(
        {"R1", "R2", "R3", "R4"},
        {{"R1.from", "R2.from"}, {"R1.from", "R3.to"}, {"R1.to", "R4.from"}}, {"R2", "R3"});
    BoundQuery q(ds, star);
    CHECK(validate(q).kind == GraphKind::Acyclic);
  }
  {
    Dataset ds = chain3_data();
    QuerySpec disc = jt::make_spec({"R1", "R2", "R3"}, {{"R1.to", "R2.from"}}, {"R1"});
    BoundQuery q(ds, disc);
    CHECK_FALSE(validate(q).connected);
  }
}

TEST_CASE("residual set lists every subset missing a private relation") {
  Dataset ds = chain3_data();
  BoundQuery q(ds, jt::chain3_spec());  // private {R1, R3} = bits 0 and 2
  const auto residuals = residual_set(q);
  const std::set<Mask> got(residuals.begin(), residuals.end());
  // Excluded: sets containing both private relations ({0,2} and {0,1,2}).
  const std::set<Mask> want = {0b000, 0b001, 0b010, 0b100, 0b011, 0b110};
  CHECK(got == want);
  CHECK(std::is_sorted(residuals.begin(), residuals.end()));

  // No private relations -> nothing to enumerate.
  BoundQuery qp(ds, jt::chain3_spec({}));
  CHECK(residual_set(qp).empty());
}

TEST_CASE("boundary attributes and components") {
  Dataset ds = chain3_data();
  BoundQuery q(ds, jt::chain3_spec());

  // E = {R2}: both predicates cross the boundary.
  const auto b1 = boundary_attributes(q, 0b010);
  REQUIRE(b1.size() == 2);
  CHECK(b1[0].rel == 1);
  CHECK(q.relation(1).attributes()[b1[0].attr] == "from");
  CHECK(q.relation(1).attributes()[b1[1].attr] == "to");

  // E = {R1, R2}: only R2.to crosses.
  const auto b2 = boundary_attributes(q, 0b011);
  REQUIRE(b2.size() == 1);
  CHECK(b2[0].rel == 1);
  CHECK(q.relation(1).attributes()[b2[0].attr] == "to");

  // Full set: nothing crosses.
  CHECK(boundary_attributes(q, 0b111).empty());

  CHECK(components(q, 0b111) == std::vector<Mask>{0b111});
  CHECK(components(q, 0b101) == std::vector<Mask>{0b001, 0b100});
  CHECK(components(q, 0b011) == std::vector<Mask>{0b011});

  const ResidualQuery r = residual_query(q, 0b101);
  CHECK(r.e == 0b101);
  CHECK(r.comps.size() == 2);
  CHECK(r.boundary.size() == 2);
}

TEST_CASE("walk plans traverse the component") {
  Dataset ds = chain3_data();
  {
    BoundQuery q(ds, jt::chain3_spec());
    const WalkPlan plan = walk_plan(q, 0b111, 0);
    CHECK(plan.order == std::vector<std::size_t>{0, 1, 2});
    REQUIRE(plan.steps.size() == 2);
    CHECK(plan.steps[0].newRel == 1);
    CHECK(plan.steps[0].boundRel == 0);
    CHECK(plan.steps[1].newRel == 2);
    CHECK(plan.checks.empty());
    CHECK(plan.isPath);

    const WalkPlan mid = walk_plan(q, 0b111, 1);
    CHECK(mid.order[0] == 1);
    CHECK_FALSE(mid.isPath);  // branches from the middle, not a simple path

    CHECK_THROWS_AS(walk_plan(q, 0b101, 0), SchemaError);  // disconnected set
  }
  {
    BoundQuery q(ds, jt::triangle_spec());
    const WalkPlan plan = walk_plan(q, 0b111, 0);
    CHECK(plan.order.size() == 3);
    REQUIRE(plan.checks.size() == 1);  // the cycle-closing predicate
    CHECK(plan.checks[0].readyStep == 2);
    CHECK_FALSE(plan.isPath);
  }
}

TEST_CASE("chain4 composite residual boundary") {
  Dataset ds = chain4_data();
  BoundQuery q(ds, jt::chain4_spec());
  // E = {R2, R3}: boundary holds R2.from and R3.to, one connected component.
  const auto boundary = boundary_attributes(q, 0b0110);
  REQUIRE(boundary.size() == 2);
  CHECK(boundary[0].rel == 1);
  CHECK(q.relation(1).attributes()[boundary[0].attr] == "from");
  CHECK(boundary[1].rel == 2);
  CHECK(q.relation(2).attributes()[boundary[1].attr] == "to");
  CHECK(components(q, 0b0110) == std::vector<Mask>{0b0110});
}

TEST_CASE("attribute reference parsing") {
  const AttributeRef ref = AttributeRef::parse("R1.from");
  CHECK(ref.relation == "R1");
  CHECK(ref.attribute == "from");
  CHECK(ref.dotted() == "R1.from");
  CHECK_THROWS_AS(AttributeRef::parse("nodot"), DataError);
}
