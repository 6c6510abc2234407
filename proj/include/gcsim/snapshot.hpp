#pragma once

// Dynamic resource state. A snapshot is a value: nodes are held through
// shared pointers to immutable NodeState, so advancing a generation clones
// only the nodes a change batch touches.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcsim/core.hpp"
#include "gcsim/topology.hpp"

namespace gcsim {

struct DeviceHolder {
  PodRef pod;
  Milli milli = 0;

  friend bool operator==(const DeviceHolder&, const DeviceHolder&) = default;
};

/// Allocation state of one node. Devices are addressed by slot (position in
/// Node::devices), not by device_id.
struct NodeState {
  std::vector<Milli> used;                         // per slot
  std::vector<std::vector<DeviceHolder>> holders;  // per slot, sorted by pod
  Milli used_total = 0;
  int allocated_devices = 0;  // slots with any share held
  int free_whole = 0;         // healthy slots with nothing held
  Milli free_milli = 0;       // healthy unallocated capacity

  friend bool operator==(const NodeState&, const NodeState&) = default;
};

inline NodeState make_idle_node_state(const Node& node) {
  NodeState s;
  s.used.assign(node.devices.size(), 0);
  s.holders.assign(node.devices.size(), {});
  s.free_whole = node.healthy_count();
  s.free_milli = gpus_to_milli(static_cast<std::int64_t>(s.free_whole));
  return s;
}

struct AllocationChange {
  enum class Op { kAllocate, kRelease };
  Op op = Op::kAllocate;
  NodeIdx node = 0;
  std::uint32_t slot = 0;
  PodRef pod;
  Milli milli = kMilliPerGpu;
  TenantIdx tenant = 0;

  static AllocationChange allocate(NodeIdx n, std::uint32_t slot, PodRef pod, Milli m,
                                   TenantIdx tenant) {
    return {Op::kAllocate, n, slot, pod, m, tenant};
  }
  static AllocationChange release(NodeIdx n, std::uint32_t slot, PodRef pod, Milli m,
                                  TenantIdx tenant) {
    return {Op::kRelease, n, slot, pod, m, tenant};
  }
};

using TenantTypeKey = std::pair<TenantIdx, GpuTypeIdx>;

class ResourceSnapshot {
 public:
  std::uint64_t generation = 0;
  std::vector<std::shared_ptr<const NodeState>> nodes;
  std::map<TenantTypeKey, Milli> tenant_used;
  std::vector<Milli> pool_free;     // healthy free milli per GPU type
  std::vector<NodeIdx> dirty;       // nodes changed relative to generation - 1
  std::size_t cloned_nodes = 0;     // node copies made by the last advance

  static ResourceSnapshot empty(const ClusterTopology& topo) {
    ResourceSnapshot s;
    s.nodes.reserve(topo.nodes.size());
    s.pool_free.assign(topo.gpu_types.size(), 0);
    for (const auto& n : topo.nodes) {
      auto st = std::make_shared<NodeState>(make_idle_node_state(n));
      s.pool_free[n.type] += st->free_milli;
      s.nodes.push_back(std::move(st));
    }
    return s;
  }

  const NodeState& node(NodeIdx n) const { return *nodes.at(n); }

  Milli tenant_usage(TenantIdx t, GpuTypeIdx g) const {
    auto it = tenant_used.find({t, g});
    return it == tenant_used.end() ? 0 : it->second;
  }

  /// State equality: everything except generation bookkeeping.
  bool same_state(const ResourceSnapshot& other) const {
    if (nodes.size() != other.nodes.size()) return false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] != other.nodes[i] && !(*nodes[i] == *other.nodes[i])) return false;
    }
    return tenant_used == other.tenant_used && pool_free == other.pool_free;
  }
};

namespace detail {

inline void apply_change(const ClusterTopology& topo, NodeState& st, Milli& pool_free,
                         std::map<TenantTypeKey, Milli>& tenant_used, const AllocationChange& c) {
  const Node& node = topo.nodes[c.node];
  if (c.slot >= node.devices.size()) {
    throw StateError("node '" + node.id + "' has no device slot " + std::to_string(c.slot));
  }
  if (c.milli <= 0 || c.milli > kMilliPerGpu) {
    throw StateError("allocation share must be in (0, 1000] milli-GPU");
  }
  const bool healthy = node.devices[c.slot].healthy;
  auto& holders = st.holders[c.slot];
  auto pos = std::lower_bound(holders.begin(), holders.end(), c.pod,
                              [](const DeviceHolder& h, const PodRef& p) { return h.pod < p; });
  const bool held = pos != holders.end() && pos->pod == c.pod;
  const Milli before = st.used[c.slot];
  const std::string where = "device " + std::to_string(node.devices[c.slot].device_id) +
                            " on node '" + node.id + "'";

  if (c.op == AllocationChange::Op::kAllocate) {
    if (!healthy) throw StateError("allocating unhealthy " + where);
    if (held) throw StateError("pod already holds " + where);
    if (before + c.milli > kMilliPerGpu) throw StateError("allocating already-allocated " + where);
    holders.insert(pos, DeviceHolder{c.pod, c.milli});
    st.used[c.slot] = before + c.milli;
    st.used_total += c.milli;
    st.free_milli -= c.milli;
    pool_free -= c.milli;
    if (before == 0) {
      ++st.allocated_devices;
      --st.free_whole;
    }
    tenant_used[{c.tenant, node.type}] += c.milli;
  } else {
    if (!held || pos->milli != c.milli) throw StateError("releasing unallocated " + where);
    holders.erase(pos);
    st.used[c.slot] = before - c.milli;
    st.used_total -= c.milli;
    st.free_milli += c.milli;
    pool_free += c.milli;
    if (st.used[c.slot] == 0) {
      --st.allocated_devices;
      ++st.free_whole;
    }
    auto it = tenant_used.find({c.tenant, node.type});
    if (it == tenant_used.end() || it->second < c.milli) {
      throw StateError("tenant usage underflow while releasing " + where);
    }
    it->second -= c.milli;
    if (it->second == 0) tenant_used.erase(it);
  }
}

}  // namespace detail

/// Applies one change batch and returns generation + 1. Only nodes named by
/// the batch are copied; all others are shared with `prev`. Throws
/// StateError on double allocation or releasing an unallocated share, in
/// which case `prev` is untouched.
inline ResourceSnapshot advance_snapshot(const ClusterTopology& topo, const ResourceSnapshot& prev,
                                         std::span<const AllocationChange> changes) {
  ResourceSnapshot next;
  next.generation = prev.generation + 1;
  next.nodes = prev.nodes;
  next.tenant_used = prev.tenant_used;
  next.pool_free = prev.pool_free;

  std::map<NodeIdx, std::shared_ptr<NodeState>> touched;
  for (const auto& c : changes) {
    if (c.node >= topo.nodes.size()) throw StateError("change references unknown node index");
    auto it = touched.find(c.node);
    if (it == touched.end()) {
      it = touched.emplace(c.node, std::make_shared<NodeState>(*prev.nodes[c.node])).first;
    }
    detail::apply_change(topo, *it->second, next.pool_free[topo.nodes[c.node].type],
                         next.tenant_used, c);
  }
  next.dirty.reserve(touched.size());
  for (auto& [n, st] : touched) {
    next.dirty.push_back(n);
    next.nodes[n] = std::move(st);
  }
  next.cloned_nodes = touched.size();
  return next;
}

inline ResourceSnapshot advance_snapshot(const ClusterTopology& topo, const ResourceSnapshot& prev,
                                         const std::vector<AllocationChange>& changes) {
  return advance_snapshot(topo, prev, std::span<const AllocationChange>(changes));
}

/// Deep rebuild from the complete set of live allocations. The reference
/// path the incremental update must be indistinguishable from.
inline ResourceSnapshot rebuild_snapshot(const ClusterTopology& topo,
                                         std::span<const AllocationChange> live,
                                         std::uint64_t generation) {
  std::vector<NodeState> states;
  states.reserve(topo.nodes.size());
  for (const auto& n : topo.nodes) states.push_back(make_idle_node_state(n));
  ResourceSnapshot s;
  s.generation = generation;
  s.pool_free.assign(topo.gpu_types.size(), 0);
  for (std::size_t i = 0; i < topo.nodes.size(); ++i) {
    s.pool_free[topo.nodes[i].type] += states[i].free_milli;
  }
  for (const auto& c : live) {
    if (c.op != AllocationChange::Op::kAllocate) {
      throw StateError("rebuild expects allocation records only");
    }
    detail::apply_change(topo, states.at(c.node), s.pool_free[topo.nodes[c.node].type],
                         s.tenant_used, c);
  }
  s.nodes.reserve(states.size());
  for (auto& st : states) s.nodes.push_back(std::make_shared<NodeState>(std::move(st)));
  s.cloned_nodes = states.size();
  return s;
}

}  // namespace gcsim
