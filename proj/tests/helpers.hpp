#pragma once

// Builders and oracles shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gcsim/gcsim.hpp"

namespace gcsim::testing {

/// Nodes named n0..n{N-1}; `group_of[i]` names node i's LeafGroup, groups
/// map to spines by `spine_of`, spines to superspines by `superspine_of`.
inline ClusterTopology make_topology(const std::vector<int>& group_of, int groups_per_spine = 2,
                                     int spines_per_superspine = 2, int gpus = 8,
                                     const std::string& type = "L") {
  nlohmann::json doc;
  int n_groups = 0;
  for (int g : group_of) n_groups = std::max(n_groups, g + 1);
  doc["groups"] = nlohmann::json::array();
  for (int g = 0; g < n_groups; ++g) {
    const int spine = g / groups_per_spine;
    doc["groups"].push_back({{"id", "g" + std::to_string(g)},
                             {"spine", "s" + std::to_string(spine)},
                             {"superspine", "ss" + std::to_string(spine / spines_per_superspine)}});
  }
  doc["nodes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    doc["nodes"].push_back({{"id", "n" + std::to_string(i)},
                            {"gpu_type", type},
                            {"gpus", gpus},
                            {"group", "g" + std::to_string(group_of[i])}});
  }
  return load_topology(doc);
}

/// `nodes` nodes, `per_group` to a LeafGroup.
inline ClusterTopology uniform_topology(int nodes, int per_group, int groups_per_spine = 2,
                                        int spines_per_superspine = 2, int gpus = 8) {
  std::vector<int> g;
  for (int i = 0; i < nodes; ++i) g.push_back(i / per_group);
  return make_topology(g, groups_per_spine, spines_per_superspine, gpus);
}

/// Occupies the first `k` healthy free slots of node `n` with a filler pod.
inline ResourceSnapshot occupy(const ClusterTopology& topo, const ResourceSnapshot& snap, NodeIdx n, int k,
                               JobIdx filler_job = 900000) {
  std::vector<AllocationChange> ch;
  const auto& st = snap.node(n);
  for (std::uint32_t s = 0; s < topo.nodes[n].devices.size() && static_cast<int>(ch.size()) < k; ++s) {
    if (topo.nodes[n].devices[s].healthy && st.used[s] == 0) {
      ch.push_back(AllocationChange::allocate(n, s, PodRef{filler_job, n * 64 + s}, kMilliPerGpu, 0));
    }
  }
  return advance_snapshot(topo, snap, ch);
}

/// Snapshot with each node's used-device count drawn uniformly from 0..cap.
inline ResourceSnapshot random_occupancy(const ClusterTopology& topo, std::mt19937_64& rng) {
  auto snap = ResourceSnapshot::empty(topo);
  for (NodeIdx n = 0; n < topo.nodes.size(); ++n) {
    std::uniform_int_distribution<int> d(0, topo.nodes[n].device_count());
    snap = occupy(topo, snap, n, d(rng));
  }
  return snap;
}

/// Free whole devices per node under `snap`.
inline std::vector<int> free_counts(const ClusterTopology& topo, const ResourceSnapshot& snap) {
  std::vector<int> out;
  for (NodeIdx n = 0; n < topo.nodes.size(); ++n) out.push_back(snap.node(n).free_whole);
  return out;
}

/// Feasibility of a decision against the snapshot it was made on: pods on
/// matching pools, devices healthy, free and disjoint, NICs paired.
inline std::string decision_violation(const ClusterTopology& topo, const ResourceSnapshot& snap,
                                      const PlacementRequest& req, const PlacementDecision& d) {
  std::set<std::pair<NodeIdx, std::uint32_t>> whole;
  std::map<std::pair<NodeIdx, std::uint32_t>, Milli> shared;
  std::set<std::uint32_t> seen_pods;
  for (const auto& p : d.pods) {
    if (!seen_pods.insert(p.pod).second) return "pod placed twice";
    auto it = std::find_if(req.pods.begin(), req.pods.end(), [&](const PodRequest& r) { return r.pod == p.pod; });
    if (it == req.pods.end()) return "unknown pod";
    const Node& node = topo.nodes[p.node];
    if (node.type != it->type) return "pool mismatch";
    if (p.nics.size() != p.slots.size()) return "nic count";
    const int want = it->milli >= kMilliPerGpu ? static_cast<int>(it->milli / kMilliPerGpu) : 1;
    if (static_cast<int>(p.slots.size()) != want) return "device count";
    for (std::size_t i = 0; i < p.slots.size(); ++i) {
      const auto s = p.slots[i];
      if (!node.devices[s].healthy) return "unhealthy device";
      if (p.nics[i] != node.devices[s].nic_id) return "nic pairing";
      const Milli used = snap.node(p.node).used[s];
      if (it->milli >= kMilliPerGpu) {
        if (used != 0) return "device already in use";
        if (!whole.insert({p.node, s}).second) return "device shared by two pods";
      } else {
        auto& acc = shared[{p.node, s}];
        acc += it->milli;
        if (used + acc > kMilliPerGpu) return "fractional oversubscription";
      }
    }
  }
  for (const auto& [key, m] : shared) {
    if (whole.count(key)) return "device shared by whole and fractional pod";
  }
  if (req.gang && !d.success && !d.pods.empty()) return "failed gang left pods placed";
  if (req.gang && d.success && d.pods.size() != req.pods.size()) return "gang partially placed";
  return {};
}

}  // namespace gcsim::testing
