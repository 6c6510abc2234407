#pragma once

// Device-level assignment inside one node: choose the GPU combination with
// the best interconnect and pair each GPU with the NIC on its PCIe path.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gcsim/core.hpp"
#include "gcsim/snapshot.hpp"
#include "gcsim/topology.hpp"

namespace gcsim {

/// Pair counts per medium, compared lexicographically: NVLink beats PCIe
/// beats NUMA.
struct LinkScore {
  int nvlink_pairs = 0;
  int pcie_pairs = 0;
  int numa_pairs = 0;

  friend auto operator<=>(const LinkScore&, const LinkScore&) = default;
};

inline LinkScore link_score(const Node& node, std::span<const std::uint32_t> slots) {
  LinkScore s;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& a = node.devices[slots[i]];
    for (std::size_t j = i + 1; j < slots.size(); ++j) {
      const auto& b = node.devices[slots[j]];
      if (a.nvlink_group == b.nvlink_group) ++s.nvlink_pairs;
      if (a.pcie_switch == b.pcie_switch) ++s.pcie_pairs;
      if (a.numa_domain == b.numa_domain) ++s.numa_pairs;
    }
  }
  return s;
}

struct DeviceSelection {
  std::vector<std::uint32_t> slots;  // ascending
  std::vector<std::string> nics;     // one per slot
  LinkScore score;
};

namespace detail {

inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > (1ULL << 40)) return r;
  }
  return r;
}

// Beyond this many combinations the search grows one NVLink group at a time.
inline constexpr std::uint64_t kExhaustiveCombinationLimit = 200000;

inline std::vector<std::uint32_t> greedy_link_set(const Node& node,
                                                  const std::vector<std::uint32_t>& free, int k) {
  std::vector<std::uint32_t> chosen;
  std::vector<bool> used(free.size(), false);
  while (static_cast<int>(chosen.size()) < k) {
    std::size_t best = free.size();
    LinkScore best_score{-1, -1, -1};
    for (std::size_t i = 0; i < free.size(); ++i) {
      if (used[i]) continue;
      auto trial = chosen;
      trial.push_back(free[i]);
      auto sc = link_score(node, trial);
      if (sc > best_score) {
        best_score = sc;
        best = i;
      }
    }
    used[best] = true;
    chosen.push_back(free[best]);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace detail

/// Picks `k` whole, healthy, unallocated devices maximizing LinkScore. Ties
/// go to the lexicographically smallest slot set. Throws StateError when
/// fewer than `k` such devices exist.
inline DeviceSelection select_intra_node_devices(const Node& node, const NodeState& state, int k) {
  std::vector<std::uint32_t> free;
  for (std::uint32_t s = 0; s < node.devices.size(); ++s) {
    if (node.devices[s].healthy && state.used[s] == 0) free.push_back(s);
  }
  if (k <= 0 || static_cast<int>(free.size()) < k) {
    throw StateError("node '" + node.id + "' has " + std::to_string(free.size()) +
                     " healthy free devices, " + std::to_string(k) + " requested");
  }

  DeviceSelection out;
  const auto n = free.size();
  if (detail::binomial(n, static_cast<std::uint64_t>(k)) > detail::kExhaustiveCombinationLimit) {
    out.slots = detail::greedy_link_set(node, free, k);
    out.score = link_score(node, out.slots);
  } else {
    // Lexicographic enumeration; only a strictly better score replaces the
    // incumbent, so the first optimum (smallest set) wins.
    std::vector<std::size_t> idx(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<std::uint32_t> trial(idx.size());
    bool first = true;
    while (true) {
      for (std::size_t i = 0; i < idx.size(); ++i) trial[i] = free[idx[i]];
      auto sc = link_score(node, trial);
      if (first || sc > out.score) {
        out.score = sc;
        out.slots = trial;
        first = false;
      }
      std::size_t i = idx.size();
      while (i > 0 && idx[i - 1] == n - idx.size() + (i - 1)) --i;
      if (i == 0) break;
      ++idx[i - 1];
      for (std::size_t j = i; j < idx.size(); ++j) idx[j] = idx[j - 1] + 1;
    }
  }
  for (auto s : out.slots) out.nics.push_back(node.devices[s].nic_id);
  return out;
}

/// Fractional share on a single device: the fullest healthy device that
/// still has room, lowest slot on ties.
inline DeviceSelection select_fractional_device(const Node& node, const NodeState& state,
                                                Milli milli) {
  std::uint32_t best = kNoIndex;
  for (std::uint32_t s = 0; s < node.devices.size(); ++s) {
    if (!node.devices[s].healthy || state.used[s] + milli > kMilliPerGpu) continue;
    if (best == kNoIndex || state.used[s] > state.used[best]) best = s;
  }
  if (best == kNoIndex) {
    throw StateError("node '" + node.id + "' has no device with " + std::to_string(milli) +
                     " milli-GPU free");
  }
  DeviceSelection out;
  out.slots = {best};
  out.nics = {node.devices[best].nic_id};
  return out;
}

/// True if a pod of `milli` (whole GPUs when >= 1000) fits on the node now.
inline bool pod_fits(const Node& node, const NodeState& state, Milli milli) {
  if (milli >= kMilliPerGpu) return state.free_whole >= milli / kMilliPerGpu;
  for (std::uint32_t s = 0; s < node.devices.size(); ++s) {
    if (node.devices[s].healthy && state.used[s] + milli <= kMilliPerGpu) return true;
  }
  return false;
}

}  // namespace gcsim
