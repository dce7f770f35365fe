#include <doctest.h>

#include <algorithm>
#include <map>
#include <queue>
#include <random>
#include <set>

#include <json.hpp>

#include "eem/feeder.hpp"

using namespace eem;

namespace {

std::string two_bus_json() {
  return R"({"v_base_kv": 12, "s_base_mva": 1,
    "buses": [{"id": 0, "root": true}, {"id": 1, "peak_load_mva": 0.1}],
    "lines": [{"from": 0, "to": 1, "r_ohm": 0.01, "x_ohm": 0.01}]})";
}

std::string feeder_json(const std::string& buses, const std::string& lines) {
  return R"({"v_base_kv": 12, "s_base_mva": 1, "buses": )" + buses + R"(, "lines": )" + lines +
         "}";
}

std::string error_of(const std::string& text) {
  try {
    parse_feeder(text);
  } catch (const FeederError& e) {
    return e.what();
  }
  return {};
}

// Depth by plain FIFO traversal, then sort by (depth, id).
std::vector<int> oracle_order(const nlohmann::json& doc, int root) {
  std::map<int, std::vector<int>> adj;
  for (const auto& l : doc["lines"]) {
    adj[l["from"].get<int>()].push_back(l["to"].get<int>());
    adj[l["to"].get<int>()].push_back(l["from"].get<int>());
  }
  std::map<int, int> depth{{root, 0}};
  std::queue<int> q;
  q.push(root);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int w : adj[u]) {
      if (depth.contains(w)) continue;
      depth[w] = depth[u] + 1;
      q.push(w);
    }
  }
  std::vector<std::pair<int, int>> keyed;
  for (const auto& [id, d] : depth) keyed.emplace_back(d, id);
  std::sort(keyed.begin(), keyed.end());
  std::vector<int> out;
  for (const auto& [d, id] : keyed) out.push_back(id);
  return out;
}

}  // namespace

TEST_CASE("two-bus feeder") {
  const auto tree = parse_feeder(two_bus_json());
  CHECK(tree.num_buses() == 2);
  CHECK(tree.num_lines() == 1);
  CHECK(tree.parent(1) == 0);
  CHECK(tree.r(1) == doctest::Approx(0.01 / 144.0).epsilon(1e-14));
  CHECK(topological_order(tree) == std::vector<int>{0, 1});
}

TEST_CASE("path ordering") {
  const std::vector<int> ids{2, 0, 1};
  const std::vector<LineSpec> lines{{1, 2, 0.1, 0.1}, {0, 1, 0.1, 0.1}};
  CHECK(topological_order(ids, lines, 0) == std::vector<int>{0, 1, 2});
}

TEST_CASE("equal depth ties broken by ascending id") {
  const std::vector<int> ids{10, 7, 3, 5, 9};
  const std::vector<LineSpec> lines{{10, 7, 1, 1}, {10, 3, 1, 1}, {7, 5, 1, 1}, {3, 9, 1, 1}};
  CHECK(topological_order(ids, lines, 10) == std::vector<int>{10, 3, 7, 5, 9});
}

TEST_CASE("validation errors") {
  const std::string two = R"([{"id": 1, "root": true}, {"id": 2}])";
  const std::string three = R"([{"id": 1, "root": true}, {"id": 2}, {"id": 3}])";

  SUBCASE("duplicate edge in both directions") {
    const auto msg = error_of(feeder_json(
        two, R"([{"from":1,"to":2,"r_ohm":1,"x_ohm":1},{"from":2,"to":1,"r_ohm":1,"x_ohm":1}])"));
    CHECK(msg.find("duplicate edge") != std::string::npos);
  }
  SUBCASE("cycle names the closing edge") {
    const auto msg = error_of(feeder_json(three, R"([{"from":1,"to":2,"r_ohm":1,"x_ohm":1},
        {"from":2,"to":3,"r_ohm":1,"x_ohm":1},{"from":3,"to":1,"r_ohm":1,"x_ohm":1}])"));
    CHECK(msg.find("cycle") != std::string::npos);
    CHECK(msg.find("(3,1)") != std::string::npos);
  }
  SUBCASE("disconnected bus") {
    const auto msg = error_of(feeder_json(three, R"([{"from":1,"to":2,"r_ohm":1,"x_ohm":1}])"));
    CHECK(msg.find("disconnected bus 3") != std::string::npos);
  }
  SUBCASE("missing root") {
    const auto msg = error_of(
        feeder_json(R"([{"id": 1}, {"id": 2}])", R"([{"from":1,"to":2,"r_ohm":1,"x_ohm":1}])"));
    CHECK(msg.find("missing root") != std::string::npos);
  }
  SUBCASE("negative impedance") {
    const auto msg = error_of(feeder_json(two, R"([{"from":1,"to":2,"r_ohm":-1,"x_ohm":1}])"));
    CHECK(msg.find("negative impedance") != std::string::npos);
  }
  SUBCASE("overload rating below nameplate names the bus") {
    const auto msg = error_of(feeder_json(
        R"([{"id": 1, "root": true}, {"id": 2, "pv_mw": 1, "s_mva": 1, "s_bar_mva": 0.9}])",
        R"([{"from":1,"to":2,"r_ohm":1,"x_ohm":1}])"));
    CHECK(msg.find("bus 2") != std::string::npos);
  }
  SUBCASE("self loop") {
    const auto msg = error_of(feeder_json(two, R"([{"from":1,"to":2,"r_ohm":1,"x_ohm":1},
        {"from":2,"to":2,"r_ohm":1,"x_ohm":1}])"));
    CHECK(msg.find("self-loop") != std::string::npos);
  }
  SUBCASE("unknown bus") {
    const auto msg = error_of(feeder_json(two, R"([{"from":1,"to":4,"r_ohm":1,"x_ohm":1}])"));
    CHECK(msg.find("unknown bus") != std::string::npos);
  }
  SUBCASE("malformed json") { CHECK(!error_of("{").empty()); }
}

TEST_CASE("bundled SCE-56 feeder") {
  const auto tree = builtin_sce56();
  REQUIRE(tree.num_buses() == 56);
  CHECK(tree.num_lines() == 55);
  CHECK(tree.v_base_kv() == 12.0);
  CHECK(tree.s_base_mva() == 1.0);
  CHECK(tree.z_base_ohm() == 144.0);
  CHECK(tree.label(0) == 1);

  const auto n2 = *tree.index_of(2);
  CHECK(tree.parent(n2) == 0);
  CHECK(tree.r(n2) == doctest::Approx(0.160 / 144).epsilon(1e-14));
  CHECK(tree.x(n2) == doctest::Approx(0.388 / 144).epsilon(1e-14));

  CHECK(tree.bus(*tree.index_of(5)).peak_load_mva == 0.67);
  CHECK(tree.peak_p_pu(*tree.index_of(5)) == doctest::Approx(0.67 * 0.8));
  const auto& b45 = tree.bus(*tree.index_of(45));
  CHECK(b45.pv_mw == 6.0);
  CHECK(b45.s_mva == 6.0);
  CHECK(b45.s_bar_mva == doctest::Approx(7.8));

  std::set<int> caps, pvs;
  for (auto n : tree.capacitor_buses()) caps.insert(tree.label(n));
  for (auto n : tree.inverter_buses()) pvs.insert(tree.label(n));
  CHECK(caps == std::set<int>{19, 21, 30, 53});
  CHECK(pvs == std::set<int>{19, 45});
  for (auto n : tree.capacitor_buses()) CHECK(tree.shunt_pu(n) == doctest::Approx(0.6));

  for (std::size_t n = 1; n < tree.num_buses(); ++n) CHECK(tree.parent(n) < n);
  for (std::size_t n = 0; n < tree.num_buses(); ++n)
    CHECK(tree.bus(n).power_factor == doctest::Approx(tree.bus(n).peak_load_mva > 0 ? 0.8 : 1.0));
}

TEST_CASE("SCE-56 ordering matches an independent breadth-first scan") {
  const auto doc = nlohmann::json::parse(builtin_sce56_json());
  CHECK(topological_order(builtin_sce56()) == oracle_order(doc, 1));
}

TEST_CASE("SCE-56 per-unit round trip") {
  const auto doc = nlohmann::json::parse(builtin_sce56_json());
  const auto tree = builtin_sce56();
  for (const auto& l : doc["lines"]) {
    const auto n = *tree.index_of(l["to"].get<int>());
    REQUIRE(tree.label(tree.parent(n)) == l["from"].get<int>());
    const double r = l["r_ohm"].get<double>(), x = l["x_ohm"].get<double>();
    CHECK(std::abs(tree.r(n) * tree.z_base_ohm() - r) <= 1e-12 * r);
    CHECK(std::abs(tree.x(n) * tree.z_base_ohm() - x) <= 1e-12 * x);
  }
}

TEST_CASE("suspect rows and overrides") {
  const auto fixed = builtin_sce56();
  const auto raw = builtin_sce56({.apply_overrides = false});
  const auto b3 = *fixed.index_of(3);
  CHECK(fixed.bus(b3).suspect);
  CHECK(fixed.bus(b3).overridden);
  CHECK(fixed.bus(b3).peak_load_mva == doctest::Approx(0.30));
  CHECK(raw.bus(*raw.index_of(3)).peak_load_mva == 30.0);
  CHECK(!raw.bus(*raw.index_of(3)).overridden);
  CHECK(fixed.bus(*fixed.index_of(33)).suspect);
}

TEST_CASE("random trees: ordering is a permutation with parents first") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 40);
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = 100 + i * 3;
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<LineSpec> lines;
    for (int i = 1; i < n; ++i) {
      const int p = static_cast<int>(rng() % i);
      if (rng() % 2) lines.push_back({ids[p], ids[i], 0.1, 0.2});
      else lines.push_back({ids[i], ids[p], 0.1, 0.2});
    }
    std::shuffle(lines.begin(), lines.end(), rng);
    std::vector<BusSpec> buses;
    for (int i = 0; i < n; ++i) buses.push_back({.id = ids[i], .root = i == 0});
    const auto tree = FeederTree::build(4.16, 1.0, buses, lines);
    auto order = topological_order(tree);
    CHECK(order == topological_order(ids, lines, ids[0]));
    std::map<int, std::size_t> pos;
    for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = k;
    CHECK(pos.size() == static_cast<std::size_t>(n));
    for (const auto& l : lines) {
      const auto child = std::max(pos[l.from], pos[l.to]);
      CHECK(tree.parent(child) == std::min(pos[l.from], pos[l.to]));
    }
    std::sort(order.begin(), order.end());
    auto sorted_ids = ids;
    std::sort(sorted_ids.begin(), sorted_ids.end());
    CHECK(order == sorted_ids);
  }
}
