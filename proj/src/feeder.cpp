#include "eem/feeder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace eem {

namespace {

using nlohmann::json;

std::string edge_name(const LineSpec& l) {
  return "(" + std::to_string(l.from) + "," + std::to_string(l.to) + ")";
}

void validate_bus(const BusSpec& b) {
  const auto fail = [&](const std::string& what) {
    throw FeederError("bus " + std::to_string(b.id) + ": " + what);
  };
  if (!(b.peak_load_mva >= 0.0)) fail("negative peak load");
  if (!(b.power_factor > 0.0 && b.power_factor <= 1.0))
    fail("power factor outside (0, 1]");
  if (!(b.shunt_mvar >= 0.0)) fail("negative shunt capacitor rating");
  if (!(b.pv_mw >= 0.0)) fail("negative PV nameplate");
  if (!(b.s_mva >= 0.0)) fail("negative inverter rating");
  if (b.s_bar_mva < b.s_mva)
    fail("overload rating s_bar " + std::to_string(b.s_bar_mva) +
         " below inverter rating s " + std::to_string(b.s_mva));
  if (b.pv_mw > 0.0 && b.s_mva <= 0.0) fail("PV installed without an inverter rating");
}

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
  std::vector<std::size_t> parent;
};

/// Checks tree structure over positions 0..n-1 and returns, for each
/// position, its adjacency list of (neighbor position, line index).
std::vector<std::vector<std::pair<std::size_t, std::size_t>>> check_tree(
    std::span<const int> ids, std::span<const LineSpec> lines, int root) {
  std::map<int, std::size_t> pos;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!pos.emplace(ids[i], i).second)
      throw FeederError("duplicate bus id " + std::to_string(ids[i]));
  }
  if (!pos.contains(root)) throw FeederError("missing root bus");

  std::set<std::pair<int, int>> seen;
  for (const auto& l : lines) {
    if (l.from == l.to) throw FeederError("self-loop on bus " + std::to_string(l.from));
    if (!pos.contains(l.from) || !pos.contains(l.to))
      throw FeederError("line " + edge_name(l) + " references an unknown bus");
    if (l.r_ohm < 0.0 || l.x_ohm < 0.0)
      throw FeederError("negative impedance on line " + edge_name(l));
    if (!std::isfinite(l.r_ohm) || !std::isfinite(l.x_ohm))
      throw FeederError("non-finite impedance on line " + edge_name(l));
    const auto key = std::minmax(l.from, l.to);
    if (!seen.insert(key).second) throw FeederError("duplicate edge " + edge_name(l));
  }

  DisjointSets sets(ids.size());
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(ids.size());
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto a = pos.at(lines[k].from);
    const auto b = pos.at(lines[k].to);
    if (!sets.unite(a, b)) throw FeederError("cycle detected at edge " + edge_name(lines[k]));
    adj[a].emplace_back(b, k);
    adj[b].emplace_back(a, k);
  }
  const auto root_set = sets.find(pos.at(root));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (sets.find(i) != root_set)
      throw FeederError("disconnected bus " + std::to_string(ids[i]));
  }
  return adj;
}

struct Traversal {
  std::vector<std::size_t> order;   // positions in canonical order
  std::vector<std::size_t> parent;  // by position
  std::vector<std::size_t> line;    // line feeding each position
};

Traversal breadth_first(std::span<const int> ids, std::span<const LineSpec> lines, int root) {
  const auto adj = check_tree(ids, lines, root);
  const std::size_t n = ids.size();
  const auto root_pos = static_cast<std::size_t>(
      std::find(ids.begin(), ids.end(), root) - ids.begin());
  Traversal t;
  t.parent.assign(n, n);
  t.line.assign(n, lines.size());
  std::vector<bool> visited(n, false);
  std::vector<std::size_t> level{root_pos};
  visited[root_pos] = true;
  while (!level.empty()) {
    std::sort(level.begin(), level.end(),
              [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    std::vector<std::size_t> next;
    for (const auto u : level) {
      t.order.push_back(u);
      for (const auto& [w, k] : adj[u]) {
        if (visited[w]) continue;
        visited[w] = true;
        t.parent[w] = u;
        t.line[w] = k;
        next.push_back(w);
      }
    }
    level = std::move(next);
  }
  return t;
}

double get_or(const json& j, const char* key, double fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_number()) throw FeederError(std::string("field '") + key + "' must be a number");
  return it->get<double>();
}

void apply_fields(const json& j, BusSpec& b) {
  b.peak_load_mva = get_or(j, "peak_load_mva", b.peak_load_mva);
  b.power_factor = get_or(j, "power_factor", b.power_factor);
  b.shunt_mvar = get_or(j, "shunt_mvar", b.shunt_mvar);
  b.pv_mw = get_or(j, "pv_mw", b.pv_mw);
  b.s_mva = get_or(j, "s_mva", b.s_mva);
  b.s_bar_mva = get_or(j, "s_bar_mva", b.s_bar_mva);
}

}  // namespace

FeederTree FeederTree::build(double v_base_kv, double s_base_mva, std::vector<BusSpec> buses,
                             const std::vector<LineSpec>& lines) {
  if (!(v_base_kv > 0.0) || !(s_base_mva > 0.0))
    throw FeederError("base voltage and power must be positive");
  if (buses.empty()) throw FeederError("feeder has no buses");

  int root = 0;
  int roots = 0;
  for (const auto& b : buses) {
    if (b.root) {
      root = b.id;
      ++roots;
    }
  }
  if (roots == 0) throw FeederError("missing root bus");
  if (roots > 1) throw FeederError("more than one root bus");
  for (const auto& b : buses) validate_bus(b);

  std::vector<int> ids;
  ids.reserve(buses.size());
  for (const auto& b : buses) ids.push_back(b.id);
  const auto trav = breadth_first(ids, lines, root);

  const std::size_t n = buses.size();
  std::vector<std::size_t> canon(n);
  for (std::size_t i = 0; i < n; ++i) canon[trav.order[i]] = i;

  FeederTree tree;
  tree.v_base_kv_ = v_base_kv;
  tree.s_base_mva_ = s_base_mva;
  tree.parent_.assign(n, 0);
  tree.children_.assign(n, {});
  tree.r_pu_.assign(n, 0.0);
  tree.x_pu_.assign(n, 0.0);
  tree.buses_.resize(n);
  const double zb = tree.z_base_ohm();
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = trav.order[i];
    tree.buses_[i] = buses[p];
    if (i == 0) continue;
    const auto par = canon[trav.parent[p]];
    tree.parent_[i] = par;
    tree.children_[par].push_back(i);
    const auto& l = lines[trav.line[p]];
    tree.r_pu_[i] = l.r_ohm / zb;
    tree.x_pu_[i] = l.x_ohm / zb;
  }
  return tree;
}

std::optional<std::size_t> FeederTree::index_of(int label) const {
  for (std::size_t i = 0; i < buses_.size(); ++i) {
    if (buses_[i].id == label) return i;
  }
  return std::nullopt;
}

double FeederTree::peak_p_pu(std::size_t n) const {
  const auto& b = bus(n);
  return b.peak_load_mva * b.power_factor / s_base_mva_;
}

double FeederTree::peak_q_pu(std::size_t n) const {
  const auto& b = bus(n);
  return peak_p_pu(n) * std::tan(std::acos(b.power_factor));
}

double FeederTree::shunt_pu(std::size_t n) const { return bus(n).shunt_mvar / s_base_mva_; }
double FeederTree::pv_pu(std::size_t n) const { return bus(n).pv_mw / s_base_mva_; }
double FeederTree::s_pu(std::size_t n) const { return bus(n).s_mva / s_base_mva_; }
double FeederTree::s_bar_pu(std::size_t n) const { return bus(n).s_bar_mva / s_base_mva_; }

std::vector<std::size_t> FeederTree::inverter_buses() const {
  std::vector<std::size_t> out;
  for (std::size_t n = 1; n < num_buses(); ++n)
    if (has_inverter(n)) out.push_back(n);
  return out;
}

std::vector<std::size_t> FeederTree::capacitor_buses() const {
  std::vector<std::size_t> out;
  for (std::size_t n = 1; n < num_buses(); ++n)
    if (bus(n).shunt_mvar > 0.0) out.push_back(n);
  return out;
}

std::vector<std::size_t> FeederTree::load_buses() const {
  std::vector<std::size_t> out;
  for (std::size_t n = 1; n < num_buses(); ++n)
    if (bus(n).peak_load_mva > 0.0) out.push_back(n);
  return out;
}

FeederTree parse_feeder(std::string_view json_text, const FeederLoadOptions& options) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FeederError(std::string("malformed feeder JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FeederError("feeder JSON must be an object");
  for (const char* key : {"v_base_kv", "s_base_mva", "buses", "lines"}) {
    if (!doc.contains(key)) throw FeederError(std::string("feeder JSON lacks '") + key + "'");
  }
  if (!doc["buses"].is_array() || !doc["lines"].is_array())
    throw FeederError("'buses' and 'lines' must be arrays");

  std::vector<BusSpec> buses;
  for (const auto& jb : doc["buses"]) {
    if (!jb.contains("id") || !jb["id"].is_number_integer())
      throw FeederError("every bus needs an integer 'id'");
    BusSpec b;
    b.id = jb["id"].get<int>();
    apply_fields(jb, b);
    if (!jb.contains("s_bar_mva")) b.s_bar_mva = b.s_mva;
    b.root = jb.value("root", false);
    b.suspect = jb.value("suspect", false);
    b.note = jb.value("note", std::string{});
    if (options.apply_overrides && jb.contains("override")) {
      apply_fields(jb["override"], b);
      b.overridden = true;
    }
    buses.push_back(std::move(b));
  }
  std::vector<LineSpec> lines;
  for (const auto& jl : doc["lines"]) {
    LineSpec l;
    try {
      l.from = jl.at("from").get<int>();
      l.to = jl.at("to").get<int>();
      l.r_ohm = jl.at("r_ohm").get<double>();
      l.x_ohm = jl.at("x_ohm").get<double>();
    } catch (const json::exception& e) {
      throw FeederError(std::string("malformed line entry: ") + e.what());
    }
    lines.push_back(l);
  }
  return FeederTree::build(get_or(doc, "v_base_kv", 0.0), get_or(doc, "s_base_mva", 0.0),
                           std::move(buses), lines);
}

FeederTree load_feeder(const std::filesystem::path& path, const FeederLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw FeederError("cannot open feeder file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_feeder(ss.str(), options);
}

FeederTree builtin_sce56(const FeederLoadOptions& options) {
  return parse_feeder(builtin_sce56_json(), options);
}

std::vector<int> topological_order(const FeederTree& tree) {
  std::vector<int> out;
  out.reserve(tree.num_buses());
  for (std::size_t n = 0; n < tree.num_buses(); ++n) out.push_back(tree.label(n));
  return out;
}

std::vector<int> topological_order(std::span<const int> bus_ids, std::span<const LineSpec> lines,
                                   int root) {
  const auto trav = breadth_first(bus_ids, lines, root);
  std::vector<int> out;
  out.reserve(trav.order.size());
  for (const auto p : trav.order) out.push_back(bus_ids[p]);
  return out;
}

}  // namespace eem
