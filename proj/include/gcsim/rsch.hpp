#pragma once

// Resource-aware placement: group-level preselection, per-node policy
// scoring, topology-tier ranking, gang atomicity and device assignment.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gcsim/core.hpp"
#include "gcsim/devices.hpp"
#include "gcsim/snapshot.hpp"
#include "gcsim/topology.hpp"

namespace gcsim {

enum class PlacementPolicy { kBinpack, kEBinpack, kSpread, kESpread };

inline const char* to_string(PlacementPolicy p) {
  switch (p) {
    case PlacementPolicy::kBinpack: return "binpack";
    case PlacementPolicy::kEBinpack: return "e-binpack";
    case PlacementPolicy::kSpread: return "spread";
    case PlacementPolicy::kESpread: return "e-spread";
  }
  return "binpack";
}

inline std::optional<PlacementPolicy> parse_placement_policy(const std::string& s) {
  if (s == "binpack") return PlacementPolicy::kBinpack;
  if (s == "e-binpack" || s == "e_binpack") return PlacementPolicy::kEBinpack;
  if (s == "spread") return PlacementPolicy::kSpread;
  if (s == "e-spread" || s == "e_spread") return PlacementPolicy::kESpread;
  return std::nullopt;
}

struct PodRequest {
  std::uint32_t pod = 0;  // index within the job
  GpuTypeIdx type = 0;
  Milli milli = kMilliPerGpu;
};

struct PlacementRequest {
  JobIdx job = 0;
  std::vector<PodRequest> pods;
  bool gang = true;
  PlacementPolicy policy = PlacementPolicy::kEBinpack;
  bool needs_hbd = false;
};

struct PodPlacement {
  std::uint32_t pod = 0;
  NodeIdx node = 0;
  Milli milli = 0;
  std::vector<std::uint32_t> slots;
  std::vector<std::string> nics;
  bool overflow = false;  // e-spread replica placed outside the inference zone
};

struct PlacementDecision {
  bool success = false;  // every requested pod placed
  std::vector<PodPlacement> pods;
  std::vector<GroupIdx> groups;
  std::string reason;

  std::vector<AllocationChange> changes(JobIdx job, TenantIdx tenant) const {
    std::vector<AllocationChange> out;
    for (const auto& p : pods) {
      const Milli per_slot = p.milli >= kMilliPerGpu ? kMilliPerGpu : p.milli;
      for (auto s : p.slots) out.push_back(AllocationChange::allocate(p.node, s, PodRef{job, p.pod}, per_slot, tenant));
    }
    return out;
  }

  std::size_t node_count() const {
    std::set<NodeIdx> n;
    for (const auto& p : pods) n.insert(p.node);
    return n.size();
  }
};

struct PlacementOptions {
  /// Group-level consolidation plus leaf/spine/superspine ranking.
  bool topology_aware = true;
};

/// Policy score; larger `key` is better, lower node index breaks ties.
struct NodeScore {
  NodeIdx node = 0;
  bool feasible = false;
  std::array<std::int64_t, 5> key{};

  bool better_than(const NodeScore& o) const {
    if (key != o.key) return key > o.key;
    return node < o.node;
  }
};

/// Pods of the same job placed so far in this decision.
struct JobContext {
  std::map<NodeIdx, int> pods_on_node;
  std::map<GroupIdx, int> pods_in_group;
  std::vector<NodeIdx> chosen_nodes;  // distinct, in choice order
  /// Unplaced pods of the scored pod's type as (milli, count), largest
  /// first, including the pod being scored. Empty means just that pod.
  std::vector<std::pair<Milli, int>> remaining;
  bool topology_aware = true;
  bool fit_first = false;  // e-binpack variant ranking pods-that-fit above group consolidation
};

/// Tentative allocations layered over an immutable snapshot.
class ScratchState {
 public:
  ScratchState(const ClusterTopology& topo, const ResourceSnapshot& snap) : topo_(&topo), snap_(&snap) {}

  const NodeState& node(NodeIdx n) const {
    auto it = overlay_.find(n);
    return it == overlay_.end() ? snap_->node(n) : it->second;
  }

  Milli group_used(GroupIdx g) const {
    auto it = group_used_.find(g);
    if (it != group_used_.end()) return it->second;
    Milli m = 0;
    for (NodeIdx n : topo_->groups[g].nodes) m += node(n).used_total;
    group_used_[g] = m;
    return m;
  }

  void allocate(NodeIdx n, const std::vector<std::uint32_t>& slots, Milli per_slot, PodRef pod) {
    (void)group_used(topo_->nodes[n].group);
    auto it = overlay_.find(n);
    if (it == overlay_.end()) it = overlay_.emplace(n, snap_->node(n)).first;
    Milli pool = 0;
    std::map<TenantTypeKey, Milli> tenants;
    for (auto s : slots) {
      detail::apply_change(*topo_, it->second, pool, tenants, AllocationChange::allocate(n, s, pod, per_slot, 0));
      group_used_[topo_->nodes[n].group] += per_slot;
    }
  }

 private:
  const ClusterTopology* topo_;
  const ResourceSnapshot* snap_;
  std::map<NodeIdx, NodeState> overlay_;
  mutable std::map<GroupIdx, Milli> group_used_;
};

namespace detail {

/// How much of the job's remaining demand this node could take, packing
/// first-fit largest first: whole pods on free devices, fractional pods
/// best-fit on shared devices.
inline Milli absorbable(const Node& node, const NodeState& st, const std::vector<std::pair<Milli, int>>& remaining) {
  int free = st.free_whole;
  std::vector<Milli> room;  // spare share on partially used devices
  for (std::uint32_t s = 0; s < node.devices.size(); ++s) {
    if (node.devices[s].healthy && st.used[s] > 0 && st.used[s] < kMilliPerGpu) room.push_back(kMilliPerGpu - st.used[s]);
  }
  Milli total = 0;
  for (const auto& [milli, count] : remaining) {
    if (milli >= kMilliPerGpu) {
      const int k = static_cast<int>(milli / kMilliPerGpu);
      const int take = std::min(count, free / k);
      free -= take * k;
      total += take * milli;
      continue;
    }
    for (int c = 0; c < count; ++c) {
      auto best = room.end();
      for (auto it = room.begin(); it != room.end(); ++it) {
        if (*it >= milli && (best == room.end() || *it < *best)) best = it;
      }
      if (best == room.end()) {
        if (free == 0) break;
        --free;
        room.push_back(kMilliPerGpu);
        best = room.end() - 1;
      }
      *best -= milli;
      total += milli;
    }
  }
  return total;
}

inline NodeScore score_node_state(const ClusterTopology& topo, NodeIdx n, const NodeState& st,
                                  const PodRequest& pod, PlacementPolicy policy, const ScratchState& state,
                                  const JobContext& ctx) {
  NodeScore sc;
  sc.node = n;
  const Node& node = topo.nodes[n];
  sc.feasible = node.type == pod.type && pod_fits(node, st, pod.milli);
  if (!sc.feasible) return sc;
  auto on_node = ctx.pods_on_node.find(n);
  const int colocated = on_node == ctx.pods_on_node.end() ? 0 : on_node->second;
  switch (policy) {
    case PlacementPolicy::kBinpack:
      sc.key = {st.used_total, 0, 0, 0, 0};
      break;
    case PlacementPolicy::kEBinpack: {
      const Milli fit = ctx.remaining.empty() ? absorbable(node, st, {{pod.milli, 1}}) : absorbable(node, st, ctx.remaining);
      std::int64_t in_group = 0, group_fullness = 0;
      if (ctx.topology_aware) {
        auto g = ctx.pods_in_group.find(node.group);
        in_group = g == ctx.pods_in_group.end() ? 0 : g->second;
        group_fullness = state.group_used(node.group);
      }
      sc.key = ctx.fit_first ? std::array<std::int64_t, 5>{colocated, fit, in_group, group_fullness, st.used_total}
                             : std::array<std::int64_t, 5>{colocated, in_group, fit, group_fullness, st.used_total};
      break;
    }
    case PlacementPolicy::kSpread:
    case PlacementPolicy::kESpread:
      sc.key = {-colocated, st.free_milli, 0, 0, 0};
      break;
  }
  return sc;
}

}  // namespace detail

/// Scores one node for one pod against the snapshot plus whatever this
/// decision has already placed.
inline NodeScore score_node(const ClusterTopology& topo, NodeIdx n, const PodRequest& pod, PlacementPolicy policy,
                            const ScratchState& state, const JobContext& ctx) {
  return detail::score_node_state(topo, n, state.node(n), pod, policy, state, ctx);
}

inline NodeScore score_node(const ClusterTopology& topo, NodeIdx n, const PodRequest& pod, PlacementPolicy policy,
                            const ResourceSnapshot& snap, const JobContext& ctx = {}) {
  ScratchState state(topo, snap);
  return score_node(topo, n, pod, policy, state, ctx);
}

/// Stable reorder by the worst communication tier to nodes already chosen
/// for the job; the incoming order (policy score) breaks ties.
inline std::vector<NodeIdx> topology_rank(const ClusterTopology& topo, std::vector<NodeIdx> ranked,
                                          const std::vector<NodeIdx>& chosen) {
  if (chosen.empty()) return ranked;
  std::vector<std::pair<int, std::size_t>> keys;
  keys.reserve(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    int worst = 0;
    for (NodeIdx c : chosen) worst = std::max(worst, static_cast<int>(node_comm_tier(topo, ranked[i], c)));
    keys.emplace_back(worst, i);
  }
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<NodeIdx> out;
  out.reserve(ranked.size());
  for (const auto& k : keys) out.push_back(ranked[k.second]);
  return out;
}

namespace detail {

/// Demand per GPU type and the smallest pod size per type.
struct DemandShape {
  std::map<GpuTypeIdx, Milli> total;
  std::map<GpuTypeIdx, Milli> min_pod;
};

inline DemandShape demand_shape(const PlacementRequest& req) {
  DemandShape d;
  for (const auto& p : req.pods) {
    d.total[p.type] += p.milli;
    auto it = d.min_pod.find(p.type);
    if (it == d.min_pod.end() || p.milli < it->second) d.min_pod[p.type] = p.milli;
  }
  return d;
}

/// Capacity a node can offer to pods of at least `min_pod`.
inline Milli usable_capacity(const NodeState& st, Milli min_pod) {
  if (min_pod >= kMilliPerGpu) {
    const Milli k = min_pod / kMilliPerGpu;
    return (st.free_whole / k) * k * kMilliPerGpu;
  }
  return st.free_milli;
}

inline std::map<GpuTypeIdx, Milli> capacity_of(const ClusterTopology& topo, const ResourceSnapshot& snap,
                                               const std::vector<NodeIdx>& nodes, const DemandShape& d) {
  std::map<GpuTypeIdx, Milli> cap;
  for (NodeIdx n : nodes) {
    auto it = d.min_pod.find(topo.nodes[n].type);
    if (it == d.min_pod.end()) continue;
    cap[it->first] += usable_capacity(snap.node(n), it->second);
  }
  return cap;
}

inline bool covers(const std::map<GpuTypeIdx, Milli>& cap, const DemandShape& d) {
  for (const auto& [t, need] : d.total) {
    auto it = cap.find(t);
    if (it == cap.end() || it->second < need) return false;
  }
  return true;
}

inline Milli capped_sum(const std::map<GpuTypeIdx, Milli>& cap, const DemandShape& d) {
  Milli s = 0;
  for (const auto& [t, need] : d.total) {
    auto it = cap.find(t);
    if (it != cap.end()) s += std::min(it->second, need);
  }
  return s;
}

}  // namespace detail

/// Group-level preselection. Only groups that can contribute are returned.
/// e-binpack: groups able to host the whole job alone, fullest first; if
/// none can, a cover with the fewest groups. Spread variants: emptiest
/// first. Binpack: fullest first. Empty when the pool cannot hold the job.
inline std::vector<GroupIdx> preselect_groups(const PlacementRequest& req, const ResourceSnapshot& snap,
                                              const ClusterTopology& topo) {
  const auto demand = detail::demand_shape(req);
  struct Cand {
    GroupIdx g;
    Milli contrib;
    bool fits;
  };
  std::vector<Cand> cands;
  std::map<GpuTypeIdx, Milli> total;
  for (GroupIdx g = 0; g < topo.groups.size(); ++g) {
    const auto cap = detail::capacity_of(topo, snap, topo.groups[g].nodes, demand);
    const Milli contrib = detail::capped_sum(cap, demand);
    if (contrib <= 0) continue;
    for (const auto& [t, m] : cap) total[t] += m;
    cands.push_back({g, contrib, detail::covers(cap, demand)});
  }
  if (!detail::covers(total, demand)) return {};

  std::vector<GroupIdx> out;
  auto by_contrib_asc = [](const Cand& a, const Cand& b) {
    return a.contrib != b.contrib ? a.contrib < b.contrib : a.g < b.g;
  };
  auto by_contrib_desc = [](const Cand& a, const Cand& b) {
    return a.contrib != b.contrib ? a.contrib > b.contrib : a.g < b.g;
  };
  switch (req.policy) {
    case PlacementPolicy::kEBinpack: {
      std::vector<Cand> fitting;
      for (const auto& c : cands) {
        if (c.fits) fitting.push_back(c);
      }
      if (!fitting.empty()) {
        std::sort(fitting.begin(), fitting.end(), by_contrib_asc);
        for (const auto& c : fitting) out.push_back(c.g);
        return out;
      }
      std::sort(cands.begin(), cands.end(), by_contrib_desc);
      std::map<GpuTypeIdx, Milli> acc;
      for (const auto& c : cands) {
        out.push_back(c.g);
        for (const auto& [t, m] : detail::capacity_of(topo, snap, topo.groups[c.g].nodes, demand)) acc[t] += m;
        if (detail::covers(acc, demand)) break;
      }
      return out;
    }
    case PlacementPolicy::kSpread:
    case PlacementPolicy::kESpread:
      std::sort(cands.begin(), cands.end(), by_contrib_desc);
      break;
    case PlacementPolicy::kBinpack:
      std::sort(cands.begin(), cands.end(), by_contrib_asc);
      break;
  }
  for (const auto& c : cands) out.push_back(c.g);
  return out;
}

namespace detail {

inline std::vector<PodRequest> pods_largest_first(const PlacementRequest& req) {
  auto pods = req.pods;
  std::stable_sort(pods.begin(), pods.end(), [](const PodRequest& a, const PodRequest& b) { return a.milli > b.milli; });
  return pods;
}

/// Greedy pod-by-pod placement restricted to `nodes`. Gang requests return
/// nothing unless every pod fits.
inline std::optional<std::vector<PodPlacement>> greedy_place(const ClusterTopology& topo, const ResourceSnapshot& snap,
                                                             const PlacementRequest& req,
                                                             const std::vector<NodeIdx>& nodes,
                                                             PlacementPolicy policy, const PlacementOptions& opt,
                                                             bool fit_first = false) {
  ScratchState state(topo, snap);
  JobContext ctx;
  ctx.topology_aware = opt.topology_aware;
  ctx.fit_first = fit_first;
  const auto pods = pods_largest_first(req);
  std::vector<PodPlacement> placed;
  for (std::size_t i = 0; i < pods.size(); ++i) {
    const auto& pod = pods[i];
    ctx.remaining.clear();
    for (std::size_t j = i; j < pods.size(); ++j) {
      if (pods[j].type != pod.type) continue;
      if (ctx.remaining.empty() || ctx.remaining.back().first != pods[j].milli) ctx.remaining.emplace_back(pods[j].milli, 0);
      ++ctx.remaining.back().second;
    }
    std::vector<NodeScore> scores;
    for (NodeIdx n : nodes) {
      auto sc = score_node(topo, n, pod, policy, state, ctx);
      if (sc.feasible) scores.push_back(sc);
    }
    if (scores.empty()) {
      if (req.gang) return std::nullopt;
      continue;
    }
    std::sort(scores.begin(), scores.end(), [](const NodeScore& a, const NodeScore& b) { return a.better_than(b); });
    std::vector<NodeIdx> ranked;
    ranked.reserve(scores.size());
    for (const auto& s : scores) ranked.push_back(s.node);
    // The fit-first pass runs inside one locality alternative, which already bounds the tier.
    if (opt.topology_aware && !fit_first) ranked = topology_rank(topo, std::move(ranked), ctx.chosen_nodes);
    const NodeIdx n = ranked.front();
    const NodeState& st = state.node(n);
    DeviceSelection sel = pod.milli >= kMilliPerGpu
                              ? select_intra_node_devices(topo.nodes[n], st, static_cast<int>(pod.milli / kMilliPerGpu))
                              : select_fractional_device(topo.nodes[n], st, pod.milli);
    const Milli per_slot = pod.milli >= kMilliPerGpu ? kMilliPerGpu : pod.milli;
    state.allocate(n, sel.slots, per_slot, PodRef{req.job, pod.pod});
    if (ctx.pods_on_node[n]++ == 0) ctx.chosen_nodes.push_back(n);
    ++ctx.pods_in_group[topo.nodes[n].group];
    placed.push_back(PodPlacement{pod.pod, n, pod.milli, std::move(sel.slots), std::move(sel.nics), false});
  }
  return placed;
}

inline int max_tier(const ClusterTopology& topo, const std::vector<PodPlacement>& pods) {
  int worst = 0;
  for (std::size_t i = 0; i < pods.size(); ++i) {
    for (std::size_t j = i + 1; j < pods.size(); ++j) {
      worst = std::max(worst, static_cast<int>(node_comm_tier(topo, pods[i].node, pods[j].node)));
    }
  }
  return worst;
}

inline std::size_t distinct_nodes(const std::vector<PodPlacement>& pods) {
  std::set<NodeIdx> s;
  for (const auto& p : pods) s.insert(p.node);
  return s.size();
}

inline PlacementDecision finish_decision(const ClusterTopology& topo, std::vector<PodPlacement> pods,
                                         std::size_t requested) {
  PlacementDecision d;
  std::sort(pods.begin(), pods.end(), [](const PodPlacement& a, const PodPlacement& b) { return a.pod < b.pod; });
  std::set<GroupIdx> groups;
  for (const auto& p : pods) groups.insert(topo.nodes[p.node].group);
  d.groups.assign(groups.begin(), groups.end());
  d.success = pods.size() == requested;
  d.pods = std::move(pods);
  if (!d.success) d.reason = d.pods.empty() ? "no feasible node" : "partially placed";
  return d;
}

/// Among alternatives (node subsets) in one locality class, the placement
/// on the fewest nodes wins; earlier alternatives win ties. A multi-node
/// result is retried with the fit-first ranking, which can need fewer nodes.
inline std::optional<std::vector<PodPlacement>> best_of(const ClusterTopology& topo, const ResourceSnapshot& snap,
                                                        const PlacementRequest& req,
                                                        const std::vector<std::vector<NodeIdx>>& alternatives,
                                                        PlacementPolicy policy, const PlacementOptions& opt) {
  std::optional<std::vector<PodPlacement>> best;
  std::pair<int, std::size_t> best_key{0, 0};
  for (const auto& nodes : alternatives) {
    for (bool fit_first : {false, true}) {
      auto r = greedy_place(topo, snap, req, nodes, policy, opt, fit_first);
      if (!r) continue;
      std::pair<int, std::size_t> key{max_tier(topo, *r), distinct_nodes(*r)};
      if (!best || key < best_key) {
        best = std::move(r);
        best_key = key;
      }
      if (key.second <= 1) break;
    }
  }
  return best;
}

inline std::vector<NodeIdx> pool_nodes_of(const ClusterTopology& topo, const PlacementRequest& req,
                                          const std::vector<NodeIdx>& nodes) {
  std::set<GpuTypeIdx> types;
  for (const auto& p : req.pods) types.insert(p.type);
  std::vector<NodeIdx> out;
  for (NodeIdx n : nodes) {
    if (types.count(topo.nodes[n].type)) out.push_back(n);
  }
  return out;
}

}  // namespace detail

/// Places a request against `snap` without modifying it. Gang requests
/// either place every pod or report failure with no pods; non-gang requests
/// may place a subset.
inline PlacementDecision place(const PlacementRequest& req, const ResourceSnapshot& snap,
                               const ClusterTopology& topo, const PlacementOptions& opt = {}) {
  PlacementDecision fail;
  if (req.pods.empty()) {
    fail.reason = "empty request";
    return fail;
  }
  for (const auto& p : req.pods) {
    if (p.type >= topo.gpu_types.size()) {
      fail.reason = "unknown gpu type";
      return fail;
    }
  }
  const PlacementPolicy policy = req.policy == PlacementPolicy::kESpread ? PlacementPolicy::kEBinpack : req.policy;
  const auto demand = detail::demand_shape(req);

  if (req.needs_hbd) {
    std::vector<std::vector<NodeIdx>> alts;
    for (const auto& h : topo.hbds) {
      auto nodes = detail::pool_nodes_of(topo, req, h.nodes);
      if (detail::covers(detail::capacity_of(topo, snap, nodes, demand), demand)) alts.push_back(std::move(nodes));
    }
    auto r = detail::best_of(topo, snap, req, alts, policy, opt);
    if (!r) {
      fail.reason = "no single hbd can host the job";
      return fail;
    }
    return detail::finish_decision(topo, std::move(*r), req.pods.size());
  }

  PlacementRequest ordered = req;
  ordered.policy = policy;
  const auto groups = preselect_groups(ordered, snap, topo);
  // Preselection demands room for the whole job; non-gang requests may still
  // place a subset, so they fall back to the whole pool.
  if (groups.empty() && req.gang) {
    fail.reason = "insufficient free capacity";
    return fail;
  }

  if (policy == PlacementPolicy::kEBinpack && opt.topology_aware && req.gang) {
    // Locality classes: one LeafGroup, then one spine, one superspine, any.
    std::vector<std::vector<std::vector<NodeIdx>>> classes(4);
    auto consider = [&](std::size_t cls, std::vector<NodeIdx> nodes) {
      nodes = detail::pool_nodes_of(topo, req, nodes);
      if (detail::covers(detail::capacity_of(topo, snap, nodes, demand), demand)) classes[cls].push_back(std::move(nodes));
    };
    for (GroupIdx g : groups) consider(0, topo.groups[g].nodes);
    std::map<std::uint32_t, std::vector<NodeIdx>> spines, superspines;
    for (GroupIdx g = 0; g < topo.groups.size(); ++g) {
      auto& sp = spines[topo.groups[g].spine];
      auto& ss = superspines[topo.groups[g].superspine];
      sp.insert(sp.end(), topo.groups[g].nodes.begin(), topo.groups[g].nodes.end());
      ss.insert(ss.end(), topo.groups[g].nodes.begin(), topo.groups[g].nodes.end());
    }
    for (auto& [id, nodes] : spines) consider(1, nodes);
    for (auto& [id, nodes] : superspines) consider(2, nodes);
    // The cover is sized by the smallest pod, so the last class is the whole pool.
    std::vector<NodeIdx> all(topo.nodes.size());
    std::iota(all.begin(), all.end(), NodeIdx{0});
    consider(3, all);
    for (const auto& alts : classes) {
      if (alts.empty()) continue;
      auto r = detail::best_of(topo, snap, req, alts, policy, opt);
      if (r) return detail::finish_decision(topo, std::move(*r), req.pods.size());
    }
    fail.reason = "fragmented: no node combination fits";
    return fail;
  }

  // Without topology awareness there is no group-level stage: every node of
  // the pool competes on its node score alone.
  std::vector<NodeIdx> nodes;
  if (opt.topology_aware && !groups.empty()) {
    for (GroupIdx g : groups) nodes.insert(nodes.end(), topo.groups[g].nodes.begin(), topo.groups[g].nodes.end());
  } else {
    for (NodeIdx n = 0; n < topo.nodes.size(); ++n) nodes.push_back(n);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes = detail::pool_nodes_of(topo, req, nodes);
  auto r = detail::greedy_place(topo, snap, req, nodes, policy, opt);
  if ((!r || r->empty()) && opt.topology_aware && !groups.empty()) {
    std::vector<NodeIdx> all(topo.nodes.size());
    std::iota(all.begin(), all.end(), NodeIdx{0});
    r = detail::greedy_place(topo, snap, req, detail::pool_nodes_of(topo, req, all), policy, opt);
  }
  if (!r || r->empty()) {
    fail.reason = groups.empty() ? "insufficient free capacity" : "fragmented: no node combination fits";
    return fail;
  }
  auto d = detail::finish_decision(topo, std::move(*r), req.pods.size());
  return d;
}

/// Inference dedicated zone: sub-node replicas spread over zone nodes while
/// they fit; the rest (and whole-node replicas) go through e-binpack on the
/// general pool.
inline PlacementDecision place_e_spread(const PlacementRequest& req, const ResourceSnapshot& snap,
                                        const ClusterTopology& topo, const PlacementOptions& opt = {}) {
  std::vector<NodeIdx> zone, general;
  for (NodeIdx n = 0; n < topo.nodes.size(); ++n) {
    (topo.nodes[n].in_inference_zone ? zone : general).push_back(n);
  }
  ScratchState state(topo, snap);
  JobContext zone_ctx;
  zone_ctx.topology_aware = opt.topology_aware;
  std::vector<PodPlacement> placed;
  std::vector<PodRequest> overflow;
  for (const auto& pod : detail::pods_largest_first(req)) {
    const bool eligible = pod.milli < gpus_to_milli(static_cast<std::int64_t>(topo.pool_node_capacity(pod.type)));
    std::optional<NodeScore> best;
    if (eligible) {
      for (NodeIdx n : zone) {
        auto sc = score_node(topo, n, pod, PlacementPolicy::kSpread, state, zone_ctx);
        if (sc.feasible && (!best || sc.better_than(*best))) best = sc;
      }
    }
    if (!best) {
      overflow.push_back(pod);
      continue;
    }
    const NodeIdx n = best->node;
    const NodeState& st = state.node(n);
    DeviceSelection sel = pod.milli >= kMilliPerGpu
                              ? select_intra_node_devices(topo.nodes[n], st, static_cast<int>(pod.milli / kMilliPerGpu))
                              : select_fractional_device(topo.nodes[n], st, pod.milli);
    const Milli per_slot = pod.milli >= kMilliPerGpu ? kMilliPerGpu : pod.milli;
    state.allocate(n, sel.slots, per_slot, PodRef{req.job, pod.pod});
    ++zone_ctx.pods_on_node[n];
    placed.push_back(PodPlacement{pod.pod, n, pod.milli, std::move(sel.slots), std::move(sel.nics), false});
  }
  if (!overflow.empty()) {
    // Overflow sees the zone placements through a snapshot that includes them.
    ResourceSnapshot with_zone = snap;
    if (!placed.empty()) {
      PlacementDecision tmp;
      tmp.pods = placed;
      with_zone = advance_snapshot(topo, snap, tmp.changes(req.job, 0));
    }
    PlacementRequest rest = req;
    rest.pods = overflow;
    rest.policy = PlacementPolicy::kEBinpack;
    auto r = detail::greedy_place(topo, with_zone, rest, general, PlacementPolicy::kEBinpack, opt);
    if (r) {
      for (auto& p : *r) {
        p.overflow = true;
        placed.push_back(std::move(p));
      }
    }
  }
  return detail::finish_decision(topo, std::move(placed), req.pods.size());
}

}  // namespace gcsim
