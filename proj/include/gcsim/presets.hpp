#pragma once

// Named experiment setups: a topology, a workload generator configuration
// and simulation defaults that together make one runnable scenario.

#include <optional>
#include <string>
#include <vector>

#include "gcsim/engine.hpp"
#include "gcsim/quota.hpp"
#include "gcsim/topology.hpp"
#include "gcsim/workload.hpp"

namespace gcsim {

struct Preset {
  std::string name;
  std::string description;
  FatTreeParams topology;
  GeneratorParams workload;
  SimConfig sim;
};

namespace detail {

inline std::vector<TenantQuotaConfig> even_quotas(int tenants, const std::vector<std::pair<std::string, int>>& pools,
                                                  QuotaMode mode) {
  std::vector<TenantQuotaConfig> out;
  for (int t = 0; t < tenants; ++t) {
    TenantQuotaConfig q;
    q.tenant_id = "t" + std::to_string(t);
    q.mode = mode;
    for (const auto& [type, gpus] : pools) q.quotas[type] = gpus / tenants;
    out.push_back(std::move(q));
  }
  return out;
}

inline Preset paper_training() {
  Preset p;
  p.name = "paper-training";
  p.description = "homogeneous 1024-GPU training cluster under sustained contention, jobs of 1-1024 GPUs";
  p.topology.pools = {PoolShape{"L", 128, 8}};
  p.topology.nodes_per_group = 8;
  p.topology.groups_per_spine = 4;
  p.topology.spines_per_superspine = 2;
  auto& w = p.workload;
  w.job_count = 1400;
  w.seed = 7;
  w.tenant_count = 4;
  w.arrival_rate_per_hour = 30.0;
  w.sizes = {{1, 0.55, 3600.0},   {2, 0.20, 3600.0},    {4, 0.17, 3600.0},    {8, 0.030, 7200.0},
             {16, 0.015, 7200.0}, {32, 0.010, 7200.0},  {64, 0.008, 7200.0},  {128, 0.005, 10800.0},
             {256, 0.005, 14400.0}, {512, 0.004, 14400.0}, {1024, 0.003, 14400.0}};
  w.priority_levels = 1;
  w.require_workload_shape = false;
  p.sim.queue_policy = QueuePolicy::kBackfill;
  p.sim.placement_policy = PlacementPolicy::kEBinpack;
  p.sim.horizon = 48LL * 3600;
  p.sim.backfill_timeout = 600;
  p.sim.priority_preemption = false;
  return p;
}

inline Preset tiny_training() {
  Preset p;
  p.name = "tiny-training";
  p.description = "128-GPU training cluster for fast checks; gang and non-gang mix";
  p.topology.pools = {PoolShape{"L", 16, 8}};
  p.topology.nodes_per_group = 4;
  p.topology.groups_per_spine = 2;
  p.topology.spines_per_superspine = 2;
  auto& w = p.workload;
  w.job_count = 600;
  w.seed = 11;
  w.tenant_count = 3;
  w.arrival_rate_per_hour = 60.0;
  w.sizes = {{1, 0.45, 900.0}, {2, 0.20, 900.0}, {4, 0.15, 900.0}, {8, 0.08, 1800.0},
             {16, 0.06, 1800.0}, {32, 0.04, 2700.0}, {64, 0.02, 2700.0}};
  w.require_workload_shape = false;
  p.sim.horizon = 10LL * 3600;
  p.sim.backfill_timeout = 300;
  return p;
}

inline Preset paper_inference() {
  Preset p;
  p.name = "paper-inference";
  p.description = "heterogeneous 768-GPU inference cluster (pools L and A), four tenants with quotas, inference zone";
  p.topology.pools = {PoolShape{"L", 64, 8}, PoolShape{"A", 32, 8}};
  p.topology.nodes_per_group = 8;
  p.topology.groups_per_spine = 2;
  p.topology.spines_per_superspine = 2;
  p.topology.inference_zone_fraction = 0.1;
  auto& w = p.workload;
  w.job_count = 1900;
  w.seed = 21;
  w.tenant_count = 4;
  w.arrival_rate_per_hour = 120.0;
  w.gpu_types = {{"L", 2.0}, {"A", 1.0}};
  w.sizes = {{1, 0.40, 3600.0}, {2, 0.25, 3600.0}, {4, 0.15, 3600.0}, {8, 0.10, 7200.0},
             {16, 0.06, 7200.0}, {32, 0.04, 7200.0}};
  w.small_inference_fraction = 0.6;
  w.small_debug_fraction = 0.2;
  w.service_fraction = 0.5;
  w.require_workload_shape = false;
  p.sim.placement_policy = PlacementPolicy::kESpread;
  p.sim.horizon = 16LL * 3600;
  p.sim.quotas = even_quotas(4, {{"L", 512}, {"A", 256}}, QuotaMode::kShared);
  p.sim.quotas[3].mode = QuotaMode::kIsolated;
  return p;
}

inline Preset tiny_inference() {
  Preset p = paper_inference();
  p.name = "tiny-inference";
  p.description = "small heterogeneous inference cluster (pools L and A) with quotas, for fast checks";
  p.topology.pools = {PoolShape{"L", 8, 8}, PoolShape{"A", 4, 8}};
  p.topology.nodes_per_group = 4;
  p.topology.inference_zone_fraction = 0.25;
  p.workload.job_count = 400;
  p.workload.arrival_rate_per_hour = 120.0;
  p.workload.sizes = {{1, 0.45, 1800.0}, {2, 0.25, 1800.0}, {4, 0.15, 1800.0}, {8, 0.10, 3600.0},
                      {16, 0.05, 3600.0}};
  p.sim.horizon = 6LL * 3600;
  p.sim.quotas = even_quotas(4, {{"L", 64}, {"A", 32}}, QuotaMode::kShared);
  p.sim.quotas[3].mode = QuotaMode::kIsolated;
  return p;
}

inline Preset churn() {
  Preset p;
  p.name = "churn";
  p.description = "256-GPU cluster with steady arrivals and departures of multi-replica services and node-sized jobs";
  p.topology.pools = {PoolShape{"L", 32, 8}};
  p.topology.nodes_per_group = 4;
  p.topology.groups_per_spine = 2;
  p.topology.spines_per_superspine = 2;
  auto& w = p.workload;
  w.job_count = 560;
  w.seed = 5;
  w.tenant_count = 2;
  w.arrival_rate_per_hour = 20.0;
  w.sizes = {{8, 0.6, 3600.0}, {16, 0.3, 3600.0}, {32, 0.1, 3600.0}};
  w.service_fraction = 0.7;
  w.priority_levels = 1;
  w.require_workload_shape = false;
  p.sim.queue_policy = QueuePolicy::kBestEffort;
  p.sim.horizon = 30LL * 3600;
  return p;
}

inline Preset topology_check() {
  Preset p;
  p.name = "topology";
  p.description = "lightly loaded 512-GPU cluster of gang jobs up to one LeafGroup, for placement-locality checks";
  p.topology.pools = {PoolShape{"L", 64, 8}};
  p.topology.nodes_per_group = 4;
  p.topology.groups_per_spine = 4;
  p.topology.spines_per_superspine = 2;
  auto& w = p.workload;
  w.job_count = 300;
  w.seed = 3;
  w.tenant_count = 2;
  w.arrival_rate_per_hour = 25.0;
  w.sizes = {{1, 0.30, 3600.0}, {2, 0.15, 3600.0}, {4, 0.15, 3600.0}, {8, 0.15, 3600.0},
             {16, 0.15, 3600.0}, {32, 0.10, 3600.0}};
  w.small_inference_fraction = 0.0;
  w.small_debug_fraction = 0.0;
  w.priority_levels = 1;
  w.require_workload_shape = false;
  p.sim.horizon = 14LL * 3600;
  return p;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"paper-training", "paper-inference", "tiny-training", "tiny-inference", "churn", "topology"};
}

inline std::optional<Preset> find_preset(const std::string& name) {
  if (name == "paper-training") return detail::paper_training();
  if (name == "paper-inference") return detail::paper_inference();
  if (name == "tiny-training") return detail::tiny_training();
  if (name == "tiny-inference") return detail::tiny_inference();
  if (name == "churn") return detail::churn();
  if (name == "topology") return detail::topology_check();
  return std::nullopt;
}

}  // namespace gcsim
