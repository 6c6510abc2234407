#pragma once

// Static cluster description: nodes and devices, LeafGroup/Spine/Superspine
// tree, scale-up domains (HBDs), GPU-type node pools and the inference zone.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gcsim/core.hpp"

namespace gcsim {

struct GpuDevice {
  std::uint32_t device_id = 0;
  int nvlink_group = 0;
  int numa_domain = 0;
  int pcie_switch = 0;
  std::string nic_id;
  bool healthy = true;
};

struct Node {
  std::string id;
  std::string gpu_type;
  GpuTypeIdx type = kNoIndex;
  std::vector<GpuDevice> devices;
  GroupIdx group = kNoIndex;
  std::uint32_t spine = kNoIndex;
  std::uint32_t superspine = kNoIndex;
  std::uint32_t hbd = kNoIndex;
  bool in_inference_zone = false;

  int device_count() const { return static_cast<int>(devices.size()); }
  int healthy_count() const {
    return static_cast<int>(std::count_if(devices.begin(), devices.end(),
                                          [](const GpuDevice& d) { return d.healthy; }));
  }
};

/// One LeafGroup: the unit of group-level preselection.
struct NodeNetGroup {
  std::string id;
  std::vector<NodeIdx> nodes;
  std::uint32_t spine = kNoIndex;
  std::uint32_t superspine = kNoIndex;
};

struct Hbd {
  std::string id;
  std::vector<NodeIdx> nodes;
};

/// 0 = same leaf, 1 = same spine, 2 = same superspine, 3 = beyond.
enum class CommTier : int { kLeaf = 0, kSpine = 1, kSuperspine = 2, kBeyond = 3 };

/// Immutable after construction. Nodes, groups and pools are addressed by
/// dense indices; string ids are kept for I/O.
class ClusterTopology {
 public:
  std::vector<Node> nodes;
  std::vector<NodeNetGroup> groups;
  std::vector<std::string> spine_ids;
  std::vector<std::string> superspine_ids;
  std::vector<std::string> gpu_types;
  std::vector<std::vector<NodeIdx>> node_pools;  // indexed by GpuTypeIdx
  std::vector<Hbd> hbds;
  std::vector<NodeIdx> inference_zone;

  std::optional<NodeIdx> find_node(const std::string& id) const {
    auto it = node_index_.find(id);
    if (it == node_index_.end()) return std::nullopt;
    return it->second;
  }

  NodeIdx node_index(const std::string& id) const {
    auto idx = find_node(id);
    if (!idx) throw InputError("unknown node id '" + id + "'");
    return *idx;
  }

  std::optional<GpuTypeIdx> find_gpu_type(const std::string& name) const {
    for (GpuTypeIdx t = 0; t < gpu_types.size(); ++t) {
      if (gpu_types[t] == name) return t;
    }
    return std::nullopt;
  }

  std::size_t node_count() const { return nodes.size(); }

  int total_devices() const {
    int n = 0;
    for (const auto& node : nodes) n += node.device_count();
    return n;
  }

  int total_healthy_devices() const {
    int n = 0;
    for (const auto& node : nodes) n += node.healthy_count();
    return n;
  }

  /// Largest per-node device count in a pool (the "full node" size).
  int pool_node_capacity(GpuTypeIdx type) const {
    int cap = 0;
    for (NodeIdx n : node_pools.at(type)) cap = std::max(cap, nodes[n].device_count());
    return cap;
  }

  /// Largest number of pool nodes sharing one LeafGroup.
  int pool_max_group_nodes(GpuTypeIdx type) const {
    std::map<GroupIdx, int> counts;
    for (NodeIdx n : node_pools.at(type)) ++counts[nodes[n].group];
    int best = 0;
    for (const auto& [g, c] : counts) best = std::max(best, c);
    return best;
  }

  void rebuild_index() {
    node_index_.clear();
    for (NodeIdx i = 0; i < nodes.size(); ++i) node_index_.emplace(nodes[i].id, i);
  }

 private:
  std::unordered_map<std::string, NodeIdx> node_index_;
};

inline CommTier node_comm_tier(const ClusterTopology& topo, NodeIdx a, NodeIdx b) {
  if (a >= topo.nodes.size() || b >= topo.nodes.size()) {
    throw InputError("node_comm_tier: unknown node index");
  }
  const Node& na = topo.nodes[a];
  const Node& nb = topo.nodes[b];
  if (a == b || na.group == nb.group) return CommTier::kLeaf;
  if (na.spine == nb.spine) return CommTier::kSpine;
  if (na.superspine == nb.superspine) return CommTier::kSuperspine;
  return CommTier::kBeyond;
}

inline CommTier node_comm_tier(const ClusterTopology& topo, const std::string& a,
                               const std::string& b) {
  return node_comm_tier(topo, topo.node_index(a), topo.node_index(b));
}

/// Default 8-GPU shape: two NVLink quads that coincide with the two NUMA
/// halves, one PCIe switch per GPU pair and one NIC per NVLink quad. Other
/// counts split the same way.
inline std::vector<GpuDevice> make_default_devices(int count) {
  std::vector<GpuDevice> devs;
  devs.reserve(static_cast<std::size_t>(std::max(count, 0)));
  const int half = std::max(1, count / 2);
  for (int i = 0; i < count; ++i) {
    GpuDevice d;
    d.device_id = static_cast<std::uint32_t>(i);
    d.nvlink_group = i / half;
    d.numa_domain = i / half;
    d.pcie_switch = i / 2;
    d.nic_id = "nic" + std::to_string(i / half);
    devs.push_back(std::move(d));
  }
  return devs;
}

namespace detail {

inline std::uint32_t intern(std::vector<std::string>& table, const std::string& key) {
  for (std::uint32_t i = 0; i < table.size(); ++i) {
    if (table[i] == key) return i;
  }
  table.push_back(key);
  return static_cast<std::uint32_t>(table.size() - 1);
}

}  // namespace detail

/// Cross-references and invariants: partition, tree, pools, HBDs, zone.
/// Called by every constructor path.
inline void finalize_topology(ClusterTopology& topo) {
  topo.rebuild_index();
  if (topo.nodes.empty()) throw InputError("topology has no nodes");

  std::set<std::string> group_ids;
  for (const auto& g : topo.groups) {
    if (!group_ids.insert(g.id).second) throw InputError("duplicate group id '" + g.id + "'");
  }

  topo.gpu_types.clear();
  for (NodeIdx i = 0; i < topo.nodes.size(); ++i) {
    Node& n = topo.nodes[i];
    if (n.devices.empty()) throw InputError("node '" + n.id + "' has zero devices");
    std::set<std::uint32_t> ids;
    for (const auto& d : n.devices) {
      if (!ids.insert(d.device_id).second) {
        throw InputError("node '" + n.id + "' has duplicate device id " + std::to_string(d.device_id));
      }
    }
    if (n.group == kNoIndex) throw InputError("node '" + n.id + "' belongs to no group");
    const auto& g = topo.groups.at(n.group);
    n.spine = g.spine;
    n.superspine = g.superspine;
    n.type = detail::intern(topo.gpu_types, n.gpu_type);
  }

  topo.node_pools.assign(topo.gpu_types.size(), {});
  for (NodeIdx i = 0; i < topo.nodes.size(); ++i) {
    topo.node_pools[topo.nodes[i].type].push_back(i);
  }

  for (auto& h : topo.hbds) std::sort(h.nodes.begin(), h.nodes.end());
  std::sort(topo.inference_zone.begin(), topo.inference_zone.end());
  topo.inference_zone.erase(std::unique(topo.inference_zone.begin(), topo.inference_zone.end()),
                            topo.inference_zone.end());
  for (NodeIdx z : topo.inference_zone) topo.nodes[z].in_inference_zone = true;
}

/// Parses the JSON topology document. Groups may list their member nodes,
/// nodes may name their group, or both; either way membership must form a
/// partition.
inline ClusterTopology load_topology(const nlohmann::json& doc) {
  using nlohmann::json;
  if (!doc.is_object()) throw InputError("topology must be a JSON object");
  if (!doc.contains("nodes") || !doc["nodes"].is_array()) {
    throw InputError("topology: missing 'nodes' array");
  }
  if (!doc.contains("groups") || !doc["groups"].is_array()) {
    throw InputError("topology: missing 'groups' array");
  }

  ClusterTopology topo;
  std::map<std::string, GroupIdx> group_by_id;
  std::map<std::string, std::uint32_t> spine_parent;  // spine id -> superspine idx
  for (const auto& g : doc["groups"]) {
    NodeNetGroup group;
    group.id = g.at("id").get<std::string>();
    const std::string spine = g.value("spine", std::string("spine0"));
    const std::string superspine = g.value("superspine", std::string("superspine0"));
    group.superspine = detail::intern(topo.superspine_ids, superspine);
    group.spine = detail::intern(topo.spine_ids, spine);
    auto [it, fresh] = spine_parent.emplace(spine, group.superspine);
    if (!fresh && it->second != group.superspine) {
      throw InputError("spine '" + spine + "' appears under two superspines");
    }
    if (!group_by_id.emplace(group.id, static_cast<GroupIdx>(topo.groups.size())).second) {
      throw InputError("duplicate group id '" + group.id + "'");
    }
    topo.groups.push_back(std::move(group));
  }

  std::set<std::string> seen;
  for (const auto& jn : doc["nodes"]) {
    Node node;
    node.id = jn.at("id").get<std::string>();
    if (!seen.insert(node.id).second) throw InputError("duplicate node id '" + node.id + "'");
    node.gpu_type = jn.at("gpu_type").get<std::string>();
    if (jn.contains("devices")) {
      std::uint32_t next_id = 0;
      for (const auto& jd : jn["devices"]) {
        GpuDevice d;
        d.device_id = jd.value("device_id", next_id);
        next_id = d.device_id + 1;
        d.nvlink_group = jd.value("nvlink_group", 0);
        d.numa_domain = jd.value("numa_domain", 0);
        d.pcie_switch = jd.value("pcie_switch", 0);
        d.nic_id = jd.value("nic_id", std::string("nic0"));
        d.healthy = jd.value("healthy", true);
        node.devices.push_back(std::move(d));
      }
    } else {
      node.devices = make_default_devices(jn.value("gpus", 8));
    }
    if (jn.contains("unhealthy")) {
      for (const auto& u : jn["unhealthy"]) {
        auto dev = u.get<std::uint32_t>();
        auto it = std::find_if(node.devices.begin(), node.devices.end(),
                               [&](const GpuDevice& d) { return d.device_id == dev; });
        if (it == node.devices.end()) {
          throw InputError("node '" + node.id + "': unhealthy device " + std::to_string(dev) +
                           " does not exist");
        }
        it->healthy = false;
      }
    }
    if (jn.contains("group")) {
      const auto gid = jn["group"].get<std::string>();
      auto it = group_by_id.find(gid);
      if (it == group_by_id.end()) {
        throw InputError("node '" + node.id + "' references unknown group '" + gid + "'");
      }
      node.group = it->second;
    }
    topo.nodes.push_back(std::move(node));
  }
  topo.rebuild_index();

  // Member lists on groups must agree with per-node group fields.
  std::size_t gi = 0;
  for (const auto& g : doc["groups"]) {
    if (g.contains("nodes")) {
      for (const auto& m : g["nodes"]) {
        const auto nid = m.get<std::string>();
        auto idx = topo.find_node(nid);
        if (!idx) throw InputError("group '" + topo.groups[gi].id + "' lists unknown node '" + nid + "'");
        Node& n = topo.nodes[*idx];
        if (n.group != kNoIndex && n.group != gi) {
          throw InputError("non-partition grouping: node '" + nid + "' is in groups '" +
                           topo.groups[n.group].id + "' and '" + topo.groups[gi].id + "'");
        }
        n.group = static_cast<GroupIdx>(gi);
      }
    }
    ++gi;
  }
  for (auto& g : topo.groups) g.nodes.clear();
  for (NodeIdx i = 0; i < topo.nodes.size(); ++i) {
    if (topo.nodes[i].group == kNoIndex) {
      throw InputError("non-partition grouping: node '" + topo.nodes[i].id + "' is in no group");
    }
    topo.groups[topo.nodes[i].group].nodes.push_back(i);
  }

  if (doc.contains("hbds")) {
    const auto& jh = doc["hbds"];
    auto add_hbd = [&](const std::string& id, const nlohmann::json& members) {
      Hbd h;
      h.id = id;
      const auto hidx = static_cast<std::uint32_t>(topo.hbds.size());
      for (const auto& m : members) {
        const auto nid = m.get<std::string>();
        auto idx = topo.find_node(nid);
        if (!idx) throw InputError("hbd '" + id + "' lists unknown node '" + nid + "'");
        if (topo.nodes[*idx].hbd != kNoIndex) {
          throw InputError("node '" + nid + "' is in more than one hbd");
        }
        topo.nodes[*idx].hbd = hidx;
        h.nodes.push_back(*idx);
      }
      topo.hbds.push_back(std::move(h));
    };
    if (jh.is_object()) {
      for (auto it = jh.begin(); it != jh.end(); ++it) add_hbd(it.key(), it.value());
    } else {
      for (const auto& h : jh) add_hbd(h.at("id").get<std::string>(), h.at("nodes"));
    }
  }

  if (doc.contains("inference_zone")) {
    for (const auto& z : doc["inference_zone"]) {
      const auto nid = z.get<std::string>();
      auto idx = topo.find_node(nid);
      if (!idx) throw InputError("inference_zone lists unknown node '" + nid + "'");
      topo.inference_zone.push_back(*idx);
    }
  }

  finalize_topology(topo);
  return topo;
}

inline ClusterTopology load_topology_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open topology file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("topology file '" + path + "': " + e.what());
  }
  return load_topology(doc);
}

inline nlohmann::json topology_to_json(const ClusterTopology& topo) {
  using nlohmann::json;
  json doc;
  doc["schema"] = "gcsim.topology/1";
  json groups = json::array();
  for (const auto& g : topo.groups) {
    json members = json::array();
    for (NodeIdx n : g.nodes) members.push_back(topo.nodes[n].id);
    groups.push_back({{"id", g.id},
                      {"spine", topo.spine_ids[g.spine]},
                      {"superspine", topo.superspine_ids[g.superspine]},
                      {"nodes", members}});
  }
  doc["groups"] = groups;
  json nodes = json::array();
  for (const auto& n : topo.nodes) {
    json jn = {{"id", n.id}, {"gpu_type", n.gpu_type}};
    const auto defaults = make_default_devices(n.device_count());
    bool default_shape = true;
    json unhealthy = json::array();
    for (std::size_t i = 0; i < n.devices.size(); ++i) {
      const auto& d = n.devices[i];
      const auto& e = defaults[i];
      if (d.device_id != e.device_id || d.nvlink_group != e.nvlink_group ||
          d.numa_domain != e.numa_domain || d.pcie_switch != e.pcie_switch || d.nic_id != e.nic_id) {
        default_shape = false;
      }
      if (!d.healthy) unhealthy.push_back(d.device_id);
    }
    if (default_shape) {
      jn["gpus"] = n.device_count();
      if (!unhealthy.empty()) jn["unhealthy"] = unhealthy;
    } else {
      json devs = json::array();
      for (const auto& d : n.devices) {
        devs.push_back({{"device_id", d.device_id},
                        {"nvlink_group", d.nvlink_group},
                        {"numa_domain", d.numa_domain},
                        {"pcie_switch", d.pcie_switch},
                        {"nic_id", d.nic_id},
                        {"healthy", d.healthy}});
      }
      jn["devices"] = devs;
    }
    nodes.push_back(std::move(jn));
  }
  doc["nodes"] = nodes;
  json hbds = json::object();
  for (const auto& h : topo.hbds) {
    json members = json::array();
    for (NodeIdx n : h.nodes) members.push_back(topo.nodes[n].id);
    hbds[h.id] = members;
  }
  doc["hbds"] = hbds;
  json zone = json::array();
  for (NodeIdx z : topo.inference_zone) zone.push_back(topo.nodes[z].id);
  doc["inference_zone"] = zone;
  return doc;
}

/// One homogeneous block of nodes in a synthetic fat tree.
struct PoolShape {
  std::string gpu_type = "L";
  int node_count = 16;
  int gpus_per_node = 8;
};

struct FatTreeParams {
  std::vector<PoolShape> pools = {PoolShape{}};
  int nodes_per_group = 4;
  int groups_per_spine = 2;
  int spines_per_superspine = 2;
  /// Consecutive nodes of a pool grouped into scale-up domains; 0 disables.
  int hbd_size = 0;
  /// Fraction of each pool's nodes (taken from the tail) forming the inference zone.
  double inference_zone_fraction = 0.0;
};

/// Builds a strict tree: pools are laid out one after another, each filling
/// whole LeafGroups so no group mixes GPU models.
inline ClusterTopology build_fat_tree(const FatTreeParams& p) {
  if (p.nodes_per_group <= 0 || p.groups_per_spine <= 0 || p.spines_per_superspine <= 0) {
    throw InputError("fat tree: fan-out parameters must be positive");
  }
  ClusterTopology topo;
  int node_counter = 0;
  int hbd_counter = 0;
  for (const auto& pool : p.pools) {
    if (pool.node_count <= 0 || pool.gpus_per_node <= 0) {
      throw InputError("fat tree: pool '" + pool.gpu_type + "' must have nodes and gpus");
    }
    const int zone_nodes =
        static_cast<int>(static_cast<double>(pool.node_count) * p.inference_zone_fraction + 0.5);
    for (int i = 0; i < pool.node_count; ++i) {
      if (i % p.nodes_per_group == 0) {
        NodeNetGroup g;
        const auto gidx = static_cast<int>(topo.groups.size());
        g.id = "g" + std::to_string(gidx);
        const int spine = gidx / p.groups_per_spine;
        const int superspine = spine / p.spines_per_superspine;
        g.superspine = detail::intern(topo.superspine_ids, "ss" + std::to_string(superspine));
        g.spine = detail::intern(topo.spine_ids, "s" + std::to_string(spine));
        topo.groups.push_back(std::move(g));
      }
      Node n;
      n.id = "n" + std::to_string(node_counter++);
      n.gpu_type = pool.gpu_type;
      n.devices = make_default_devices(pool.gpus_per_node);
      n.group = static_cast<GroupIdx>(topo.groups.size() - 1);
      const auto idx = static_cast<NodeIdx>(topo.nodes.size());
      topo.groups.back().nodes.push_back(idx);
      if (p.hbd_size > 0) {
        if (i % p.hbd_size == 0) {
          topo.hbds.push_back(Hbd{"h" + std::to_string(hbd_counter++), {}});
        }
        n.hbd = static_cast<std::uint32_t>(topo.hbds.size() - 1);
        topo.hbds.back().nodes.push_back(idx);
      }
      if (i >= pool.node_count - zone_nodes) topo.inference_zone.push_back(idx);
      topo.nodes.push_back(std::move(n));
    }
  }
  finalize_topology(topo);
  return topo;
}

}  // namespace gcsim
