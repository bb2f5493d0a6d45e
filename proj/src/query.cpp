#include "joinsense/query.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "joinsense/rng.hpp"

namespace joinsense {

namespace {

std::string stem_of(const std::string& path) {
  auto slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  auto dot = base.find_last_of('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

}  // namespace

QuerySpec QuerySpec::from_json_text(const std::string& text, const std::string& fallbackId) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("query spec is not valid JSON: ") + e.what());
  }
  QuerySpec spec;
  spec.id = j.value("id", fallbackId);
  if (!j.contains("relations") || !j["relations"].is_array())
    throw DataError("query spec must list \"relations\"");
  for (const auto& r : j["relations"]) spec.relations.push_back(r.get<std::string>());
  for (const auto& p : j.value("predicates", nlohmann::json::array())) {
    spec.predicates.push_back(JoinPredicate{AttributeRef::parse(p.at("left").get<std::string>()),
                                            AttributeRef::parse(p.at("right").get<std::string>())});
  }
  for (const auto& r : j.value("private", nlohmann::json::array()))
    spec.privateRelations.push_back(r.get<std::string>());
  for (const auto& k : j.value("keys", nlohmann::json::array()))
    spec.keys.push_back(AttributeRef::parse(k.get<std::string>()));
  return spec;
}

QuerySpec QuerySpec::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open query spec '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str(), stem_of(path));
}

std::string QuerySpec::to_json_text() const {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["relations"] = relations;
  auto preds = nlohmann::ordered_json::array();
  for (const auto& p : predicates)
    preds.push_back({{"left", p.left.dotted()}, {"right", p.right.dotted()}});
  j["predicates"] = preds;
  j["private"] = privateRelations;
  if (!keys.empty()) {
    auto ks = nlohmann::ordered_json::array();
    for (const auto& k : keys) ks.push_back(k.dotted());
    j["keys"] = ks;
  }
  return j.dump(2);
}

std::string QuerySpec::canonical_text() const {
  std::vector<std::string> preds;
  for (const auto& p : predicates) {
    std::string a = p.left.dotted(), b = p.right.dotted();
    if (b < a) std::swap(a, b);
    preds.push_back(a + "=" + b);
  }
  std::sort(preds.begin(), preds.end());
  std::vector<std::string> privates = privateRelations;
  std::sort(privates.begin(), privates.end());
  std::vector<std::string> keyRefs;
  for (const auto& k : keys) keyRefs.push_back(k.dotted());
  std::sort(keyRefs.begin(), keyRefs.end());

  nlohmann::ordered_json j;
  j["relations"] = relations;
  j["predicates"] = preds;
  j["private"] = privates;
  j["keys"] = keyRefs;
  return j.dump();
}

std::string QuerySpec::fingerprint() const {
  std::uint64_t h = fnv1a(canonical_text());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

BoundQuery::BoundQuery(const Dataset& dataset, QuerySpec spec)
    : spec_(std::move(spec)), dict_(&dataset.dict()) {
  if (spec_.relations.empty()) throw SchemaError("query lists no relations");
  if (spec_.relations.size() > 30)
    throw SchemaError("queries over more than 30 relations are not supported");

  for (const auto& name : spec_.relations) {
    for (const auto& other : relations_)
      if (other->name() == name) throw SchemaError("relation '" + name + "' listed twice");
    relations_.push_back(&dataset.relation(name));
  }

  auto relIndex = [this](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < relations_.size(); ++i)
      if (relations_[i]->name() == name) return i;
    throw SchemaError("predicate references relation '" + name + "' not listed in the query");
  };

  incident_.resize(relations_.size());
  for (const auto& p : spec_.predicates) {
    if (p.left.relation == p.right.relation)
      throw SchemaError("predicate joins relation '" + p.left.relation + "' with itself");
    BoundPredicate bp;
    bp.relA = relIndex(p.left.relation);
    bp.attrA = relations_[bp.relA]->attribute_index(p.left.attribute);
    bp.relB = relIndex(p.right.relation);
    bp.attrB = relations_[bp.relB]->attribute_index(p.right.attribute);
    incident_[bp.relA].push_back(predicates_.size());
    incident_[bp.relB].push_back(predicates_.size());
    predicates_.push_back(bp);
  }

  for (const auto& name : spec_.privateRelations) privateMask_ |= Mask{1} << relIndex(name);
  for (const auto& k : spec_.keys) {
    const std::size_t r = relIndex(k.relation);
    (void)relations_[r]->attribute_index(k.attribute);  // must resolve
  }
}

std::vector<std::size_t> BoundQuery::link_attrs(std::size_t j, std::size_t p) const {
  std::vector<std::size_t> attrs;
  for (const auto& bp : predicates_) {
    if (bp.relA == j && bp.relB == p) attrs.push_back(bp.attrA);
    if (bp.relB == j && bp.relA == p) attrs.push_back(bp.attrB);
  }
  std::sort(attrs.begin(), attrs.end());
  attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
  return attrs;
}

std::vector<std::size_t> BoundQuery::join_attrs(std::size_t j) const {
  std::vector<std::size_t> attrs;
  for (const auto& bp : predicates_) {
    if (bp.relA == j) attrs.push_back(bp.attrA);
    if (bp.relB == j) attrs.push_back(bp.attrB);
  }
  std::sort(attrs.begin(), attrs.end());
  attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
  return attrs;
}

std::vector<std::size_t> BoundQuery::declared_keys(std::size_t j) const {
  std::vector<std::size_t> attrs;
  for (const auto& k : spec_.keys)
    if (k.relation == relations_[j]->name()) attrs.push_back(relations_[j]->attribute_index(k.attribute));
  std::sort(attrs.begin(), attrs.end());
  attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
  return attrs;
}

std::vector<std::string> BoundQuery::attr_names(std::size_t rel,
                                                const std::vector<std::size_t>& attrIdx) const {
  std::vector<std::string> names;
  names.reserve(attrIdx.size());
  for (std::size_t a : attrIdx) names.push_back(relation(rel).attributes().at(a));
  return names;
}

namespace {

// Connected components of `mask` using predicates internal to `mask`.
std::vector<Mask> component_masks(const BoundQuery& q, Mask mask) {
  std::vector<Mask> comps;
  Mask seen = 0;
  for (std::size_t start = 0; start < q.n(); ++start) {
    const Mask bit = Mask{1} << start;
    if (!(mask & bit) || (seen & bit)) continue;
    Mask comp = bit;
    std::vector<std::size_t> frontier{start};
    while (!frontier.empty()) {
      const std::size_t cur = frontier.back();
      frontier.pop_back();
      for (std::size_t pi : q.incident(cur)) {
        const auto& bp = q.predicates()[pi];
        const std::size_t other = bp.relA == cur ? bp.relB : bp.relA;
        const Mask obit = Mask{1} << other;
        if ((mask & obit) && !(comp & obit)) {
          comp |= obit;
          frontier.push_back(other);
        }
      }
    }
    seen |= comp;
    comps.push_back(comp);
  }
  return comps;
}

}  // namespace

QuerySummary validate(const BoundQuery& query) {
  QuerySummary s;
  s.relationCount = query.n();
  s.predicateCount = query.predicates().size();

  const auto comps = component_masks(query, query.full_mask());
  s.connected = comps.size() <= 1;

  // A connected component with as many internal predicates (multigraph edges)
  // as relations or more contains a cycle.
  bool cyclic = false;
  for (Mask comp : comps) {
    std::size_t nodes = static_cast<std::size_t>(__builtin_popcount(comp));
    std::size_t edges = 0;
    for (const auto& bp : query.predicates())
      if ((comp >> bp.relA) & 1u) ++edges;  // both endpoints share a component
    if (edges >= nodes) cyclic = true;
  }

  if (cyclic) {
    s.kind = GraphKind::Cyclic;
    return s;
  }

  // Chain: connected, acyclic, every relation within ≤ 2 predicates.
  bool chain = s.connected;
  for (std::size_t i = 0; i < query.n() && chain; ++i)
    if (query.incident(i).size() > 2) chain = false;
  s.kind = chain ? GraphKind::Chain : GraphKind::Acyclic;
  return s;
}

std::vector<Mask> residual_set(const BoundQuery& query) {
  std::vector<Mask> result;
  const Mask p = query.private_mask();
  if (p == 0) return result;
  if (query.n() > 20)
    throw BudgetError("residual enumeration over " + std::to_string(query.n()) +
                      " relations exceeds the subset budget");
  const Mask full = query.full_mask();
  for (Mask e = 0;; ++e) {
    // E is needed iff some private pivot lies outside E.
    if ((p & ~e) != 0) result.push_back(e);
    if (e == full) break;
  }
  return result;
}

std::vector<BoundaryAttr> boundary_attributes(const BoundQuery& query, Mask e) {
  std::vector<BoundaryAttr> attrs;
  for (const auto& bp : query.predicates()) {
    const bool aIn = (e >> bp.relA) & 1u;
    const bool bIn = (e >> bp.relB) & 1u;
    if (aIn && !bIn) attrs.push_back({bp.relA, bp.attrA});
    if (bIn && !aIn) attrs.push_back({bp.relB, bp.attrB});
  }
  std::sort(attrs.begin(), attrs.end());
  attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
  return attrs;
}

std::vector<Mask> components(const BoundQuery& query, Mask e) {
  return component_masks(query, e);
}

ResidualQuery residual_query(const BoundQuery& query, Mask e) {
  ResidualQuery rq;
  rq.e = e;
  rq.boundary = boundary_attributes(query, e);
  rq.comps = component_masks(query, e);
  return rq;
}

WalkPlan walk_plan(const BoundQuery& query, Mask component, std::size_t startRel) {
  if (!((component >> startRel) & 1u))
    throw SchemaError("walk start relation is not part of the component");

  WalkPlan plan;
  plan.order.push_back(startRel);
  std::vector<std::size_t> stepOf(query.n(), SIZE_MAX);
  stepOf[startRel] = 0;
  std::vector<bool> predUsed(query.predicates().size(), false);

  // BFS with predicate-index tie-breaks: scan settled relations in order and
  // their incident predicates in index order.
  std::size_t cursor = 0;
  while (cursor < plan.order.size()) {
    const std::size_t cur = plan.order[cursor];
    for (std::size_t pi : query.incident(cur)) {
      const auto& bp = query.predicates()[pi];
      const std::size_t other = bp.relA == cur ? bp.relB : bp.relA;
      if (!((component >> other) & 1u)) continue;
      if (stepOf[other] != SIZE_MAX) continue;
      predUsed[pi] = true;
      WalkStep step;
      step.newRel = other;
      step.newAttr = bp.relA == cur ? bp.attrB : bp.attrA;
      step.boundRel = cur;
      step.boundAttr = bp.relA == cur ? bp.attrA : bp.attrB;
      stepOf[other] = plan.order.size();
      plan.order.push_back(other);
      plan.steps.push_back(step);
    }
    ++cursor;
  }

  const std::size_t compSize = static_cast<std::size_t>(__builtin_popcount(component));
  if (plan.order.size() != compSize)
    throw SchemaError("component is not connected from the chosen start relation");

  for (std::size_t pi = 0; pi < query.predicates().size(); ++pi) {
    const auto& bp = query.predicates()[pi];
    const bool internal = ((component >> bp.relA) & 1u) && ((component >> bp.relB) & 1u);
    if (!internal || predUsed[pi]) continue;
    plan.checks.push_back({pi, std::max(stepOf[bp.relA], stepOf[bp.relB])});
  }

  bool path = plan.checks.empty();
  for (std::size_t i = 0; i < plan.steps.size() && path; ++i)
    if (plan.steps[i].boundRel != plan.order[i]) path = false;
  plan.isPath = path;
  return plan;
}

std::string mask_to_string(const BoundQuery& query, Mask e) {
  std::string out = "{";
  bool first = true;
  for (std::size_t i = 0; i < query.n(); ++i) {
    if (!((e >> i) & 1u)) continue;
    if (!first) out += ",";
    out += query.relation(i).name();
    first = false;
  }
  return out + "}";
}

}  // namespace joinsense
