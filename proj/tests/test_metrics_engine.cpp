#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "helpers.hpp"

using namespace gcsim;
using gcsim::testing::occupy;
using gcsim::testing::uniform_topology;
using nlohmann::json;

namespace {

Job make_job(const std::string& id, int gpus_per_pod, int pods, SimTime submit, SimTime duration, int priority = 0,
             JobKind kind = JobKind::kGang, const std::string& tenant = "t0") {
  Job j;
  j.job_id = id;
  j.tenant_id = tenant;
  j.priority = priority;
  j.kind = kind;
  j.pod_specs = {PodSpec{"L", gpus_per_pod * kMilliPerGpu, pods}};
  j.submit_time = submit;
  j.duration = duration;
  return j;
}

Trace trace_of(std::vector<Job> jobs) {
  Trace t;
  t.jobs = std::move(jobs);
  return t;
}

std::vector<json> parse_log(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

std::vector<json> events_of(const std::vector<json>& log, const std::string& ev, const std::string& job = "") {
  std::vector<json> out;
  for (const auto& e : log) {
    if (e["ev"] == ev && (job.empty() || e["job"] == job)) out.push_back(e);
  }
  return out;
}

/// Naive GAR: every device slot scanned.
double naive_gar(const ClusterTopology& topo, const ResourceSnapshot& snap) {
  double used = 0, total = 0;
  for (NodeIdx n = 0; n < topo.nodes.size(); ++n) {
    for (std::size_t s = 0; s < topo.nodes[n].devices.size(); ++s) {
      used += static_cast<double>(snap.node(n).used[s]) / kMilliPerGpu;
      total += 1;
    }
  }
  return used / total;
}

double naive_gfr(const ClusterTopology& topo, const ResourceSnapshot& snap) {
  int frag = 0;
  for (NodeIdx n = 0; n < topo.nodes.size(); ++n) {
    int busy = 0, healthy = 0;
    for (std::size_t s = 0; s < topo.nodes[n].devices.size(); ++s) {
      if (!topo.nodes[n].devices[s].healthy) continue;
      ++healthy;
      busy += snap.node(n).used[s] > 0;
    }
    frag += busy > 0 && busy < healthy;
  }
  return static_cast<double>(frag) / static_cast<double>(topo.nodes.size());
}

}  // namespace

// Cluster metrics -------------------------------------------------------------

TEST(Gar, ZeroAndExactRatio) {
  auto topo = uniform_topology(125, 5);
  auto snap = ResourceSnapshot::empty(topo);
  EXPECT_EQ(gar(snap, topo), 0.0);
  for (NodeIdx n = 0; n < 116; ++n) snap = occupy(topo, snap, n, 8);
  snap = occupy(topo, snap, 116, 2);
  EXPECT_EQ(allocated_milli(snap), 930 * kMilliPerGpu);
  EXPECT_DOUBLE_EQ(gar(snap, topo), 0.93);
}

TEST(Gfr, ClassificationExample) {
  auto topo = uniform_topology(4, 4);
  auto snap = ResourceSnapshot::empty(topo);
  EXPECT_EQ(gfr(snap, topo), 0.0);
  snap = occupy(topo, snap, 0, 8);
  snap = occupy(topo, snap, 2, 3);
  snap = occupy(topo, snap, 3, 5);
  EXPECT_DOUBLE_EQ(gfr(snap, topo), 0.5);
}

TEST(ClusterMetrics, MatchNaiveScanOnRandomSnapshots) {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 300; ++trial) {
    auto topo = uniform_topology(std::uniform_int_distribution<int>(1, 24)(rng), 4);
    auto snap = gcsim::testing::random_occupancy(topo, rng);
    // Add a few fractional shares.
    std::vector<AllocationChange> ch;
    for (NodeIdx n = 0; n < topo.nodes.size(); ++n) {
      for (std::uint32_t s = 0; s < 8; ++s) {
        if (snap.node(n).used[s] == 0 && std::uniform_int_distribution<int>(0, 9)(rng) == 0) {
          ch.push_back(AllocationChange::allocate(n, s, PodRef{7, n * 8 + s}, 250, 0));
        }
      }
    }
    snap = advance_snapshot(topo, snap, ch);
    const double g = gar(snap, topo), f = gfr(snap, topo);
    ASSERT_NEAR(g, naive_gar(topo, snap), 1e-12);
    ASSERT_NEAR(f, naive_gfr(topo, snap), 1e-12);
    ASSERT_GE(g, 0.0);
    ASSERT_LE(g, 1.0);
    ASSERT_GE(f, 0.0);
    ASSERT_LE(f, 1.0);
  }
}

TEST(Gfr, ZeroWhenNodesIdleOrFull) {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 100; ++trial) {
    auto topo = uniform_topology(12, 4);
    auto snap = ResourceSnapshot::empty(topo);
    for (NodeIdx n = 0; n < 12; ++n) {
      if (std::uniform_int_distribution<int>(0, 1)(rng)) snap = occupy(topo, snap, n, 8);
    }
    ASSERT_EQ(gfr(snap, topo), 0.0);
  }
}

TEST(Gar, HealthyOnlyDenominator) {
  auto topo = uniform_topology(1, 1);
  topo.nodes[0].devices[7].healthy = false;
  auto snap = occupy(topo, ResourceSnapshot::empty(topo), 0, 7);
  EXPECT_DOUBLE_EQ(gar(snap, topo), 7.0 / 8.0);
  EXPECT_DOUBLE_EQ(gar(snap, topo, true), 1.0);
}

TEST(FragmentationDegree, FormulaAndMonotonicity) {
  EXPECT_DOUBLE_EQ(fragmentation_degree(8, 1), 0.875);
  EXPECT_DOUBLE_EQ(fragmentation_degree(8, 7), 0.125);
  EXPECT_GT(fragmentation_degree(8, 4), fragmentation_degree(8, 6));
  for (int a = 1; a < 7; ++a) EXPECT_GT(fragmentation_degree(8, a), fragmentation_degree(8, a + 1));
  EXPECT_THROW(fragmentation_degree(8, 0), StateError);
  EXPECT_THROW(fragmentation_degree(8, 8), StateError);
}

// Accumulator -----------------------------------------------------------------

TEST(Sor, DirectArithmetic) {
  MetricsAccumulator acc;
  acc.update_sor(3600, 4 * kMilliPerGpu, 10 * kMilliPerGpu);
  acc.update_sor(3600, 0, 10 * kMilliPerGpu);
  EXPECT_DOUBLE_EQ(acc.sor(), 0.2);
  EXPECT_EQ(MetricsAccumulator().sor(), 0.0);
  EXPECT_THROW(acc.update_sor(-1, 0, 1), InputError);
}

TEST(RecordWait, Examples) {
  MetricsAccumulator acc;
  auto small = make_job("a", 1, 1, 0, 10);
  acc.record_wait(small, 0, 0);
  auto big = make_job("b", 8, 16, 10, 10);
  acc.record_wait(big, 70, 10);
  ASSERT_EQ(acc.waits.size(), 2u);
  EXPECT_EQ(acc.waits[0].wait, 0);
  EXPECT_EQ(acc.waits[0].bucket, 0u);
  EXPECT_EQ(acc.waits[1].wait, 60);
  EXPECT_EQ(acc.waits[1].bucket, 2u);
  EXPECT_THROW(acc.record_wait(small, 5, 6), InputError);
}

TEST(Jtted, OptimalAndDeviatingPlacements) {
  auto topo = uniform_topology(20, 4);
  auto decision = [](std::vector<NodeIdx> nodes) {
    PlacementDecision d;
    d.success = true;
    for (std::uint32_t i = 0; i < nodes.size(); ++i) d.pods.push_back(PodPlacement{i, nodes[i], 0, {}, {}, false});
    return d;
  };
  auto two = make_job("a", 8, 2, 0, 1);
  auto r = jtted(two, decision({0, 1}), topo);
  EXPECT_EQ(r.node_ratio(), 1.0);
  EXPECT_EQ(r.group_ratio(), 1.0);

  Job mixed = make_job("b", 8, 1, 0, 1);
  mixed.pod_specs.push_back(PodSpec{"L", 4 * kMilliPerGpu, 2});
  r = jtted(mixed, decision({0, 1, 2}), topo);
  EXPECT_DOUBLE_EQ(r.node_ratio(), 1.5);
  EXPECT_EQ(r.group_ratio(), 1.0);

  auto wide = make_job("c", 8, 16, 0, 1);
  r = jtted(wide, decision({0, 1, 2, 4, 5, 6, 8, 9, 10, 12, 13, 14, 16, 17, 18, 19}), topo);
  EXPECT_EQ(r.optimal_groups, 4);
  EXPECT_DOUBLE_EQ(r.group_ratio(), 1.25);
  EXPECT_EQ(r.node_ratio(), 1.0);

  EXPECT_THROW(jtted(make_job("s", 1, 2, 0, 1, 0, JobKind::kNonGang), decision({0, 1}), topo), InputError);
}

TEST(Jtted, RatiosAtLeastOneForPlacedJobs) {
  std::mt19937_64 rng(79);
  for (int trial = 0; trial < 200; ++trial) {
    auto topo = uniform_topology(16, 4);
    auto snap = gcsim::testing::random_occupancy(topo, rng);
    const int pods = std::uniform_int_distribution<int>(1, 6)(rng);
    const int g = 1 << std::uniform_int_distribution<int>(0, 3)(rng);
    auto job = make_job("j", g, pods, 0, 1);
    PlacementRequest req;
    for (int i = 0; i < pods; ++i) req.pods.push_back(PodRequest{static_cast<std::uint32_t>(i), 0, g * kMilliPerGpu});
    auto d = place(req, snap, topo);
    if (!d.success) continue;
    auto r = jtted(job, d, topo);
    ASSERT_GE(r.node_ratio(), 1.0);
    ASSERT_GE(r.group_ratio(), 1.0);
  }
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_EQ(percentile({}, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 0.95), 4.8);
}

// Reports ---------------------------------------------------------------------

TEST(Report, EmptyRun) {
  MetricsAccumulator acc;
  auto r = finalize_report(acc, 0, 0, {});
  EXPECT_EQ(r.sor, 0.0);
  EXPECT_TRUE(r.gar_series.empty());
  EXPECT_EQ(r.jwtd.size(), kBucketLabels.size());
}

TEST(Report, JsonRoundTripAndCompare) {
  auto p = *find_preset("tiny-training");
  auto topo = build_fat_tree(p.topology);
  auto trace = generate_trace(p.workload);
  auto a = run(p.sim, topo, trace);
  auto ja = report_to_json(a);
  auto back = report_to_json(report_from_json(ja));
  back["gar_samples"] = ja["gar_samples"];  // series are not stored
  EXPECT_EQ(back.dump(), ja.dump());

  auto cfg = p.sim;
  cfg.placement_policy = PlacementPolicy::kSpread;
  auto jb = report_to_json(run(cfg, topo, trace));
  ja["provenance"] = {{"trace_digest", "x"}, {"topology_digest", "y"}};
  jb["provenance"] = ja["provenance"];
  auto cmp = compare_reports(ja, jb);
  EXPECT_DOUBLE_EQ(cmp["sor"]["abs"].get<double>(), jb["sor"].get<double>() - ja["sor"].get<double>());
  EXPECT_FALSE(compare_table(cmp).empty());
  auto self = compare_reports(ja, ja);
  EXPECT_EQ(self["gar_mean"]["abs"].get<double>(), 0.0);

  jb["provenance"]["trace_digest"] = "other";
  EXPECT_THROW(compare_reports(ja, jb), InputError);
  EXPECT_THROW(report_from_json(json{{"schema", "nope"}}), InputError);
  EXPECT_THROW(report_from_json(json{{"schema", "gcsim.report/1"}}), InputError);
}

// Engine ----------------------------------------------------------------------

TEST(Engine, EmptyTrace) {
  auto topo = uniform_topology(4, 2);
  auto r = run(SimConfig{}, topo, Trace{});
  EXPECT_EQ(r.sor, 0.0);
  for (const auto& [t, v] : r.gar_series) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.jobs.submitted, 0u);
}

TEST(Engine, OneJobFillingTheCluster) {
  auto topo = uniform_topology(2, 2);
  auto r = run(SimConfig{}, topo, trace_of({make_job("full", 8, 2, 0, 1000)}));
  EXPECT_EQ(r.jobs.finished, 1u);
  EXPECT_EQ(r.end, 1000);
  EXPECT_DOUBLE_EQ(r.sor, 1.0);
  bool hit = false;
  for (const auto& [t, v] : r.gar_series) hit |= (t < 1000 && v == 1.0);
  EXPECT_TRUE(hit);
  for (const auto& [t, v] : r.gfr_series) EXPECT_EQ(v, 0.0);
}

TEST(Engine, DeterministicEventLogAndReport) {
  auto p = *find_preset("tiny-inference");
  auto topo = build_fat_tree(p.topology);
  auto trace = generate_trace(p.workload);
  std::ostringstream l1, l2;
  auto r1 = run(p.sim, topo, trace, &l1);
  auto r2 = run(p.sim, topo, trace, &l2);
  EXPECT_FALSE(l1.str().empty());
  EXPECT_EQ(l1.str(), l2.str());
  EXPECT_EQ(report_to_json(r1).dump(), report_to_json(r2).dump());
}

TEST(Engine, PreemptionDispatchesBeneficiarySameCycle) {
  auto topo = uniform_topology(1, 1);
  SimConfig cfg;
  cfg.preemption_overhead = 0;
  std::ostringstream log;
  auto r = run(cfg, topo, trace_of({make_job("low", 8, 1, 0, 1000, 0), make_job("high", 8, 1, 100, 500, 5)}), &log);
  auto ev = parse_log(log.str());
  auto pre = events_of(ev, "preemption_executed", "low");
  ASSERT_EQ(pre.size(), 1u);
  EXPECT_EQ(pre[0]["beneficiary"], "high");
  auto hd = events_of(ev, "job_dispatch", "high");
  ASSERT_EQ(hd.size(), 1u);
  EXPECT_EQ(hd[0]["t"], pre[0]["t"]);
  EXPECT_EQ(events_of(ev, "job_dispatch", "low").size(), 2u);
  EXPECT_EQ(r.jobs.finished, 2u);
  EXPECT_EQ(r.jobs.preemptions, 1u);
}

TEST(Engine, GpuSecondsOnlyForHeldIntervals) {
  // Oracle: integrate held GPUs from the event log and compare with SOR.
  auto topo = uniform_topology(2, 2);
  std::vector<Job> jobs = {make_job("low", 8, 2, 0, 1000, 0), make_job("high", 8, 1, 200, 300, 3),
                           make_job("mid", 4, 1, 250, 400, 1)};
  std::map<std::string, double> gpus;
  for (const auto& j : jobs) gpus[j.job_id] = j.total_gpus();
  std::ostringstream log;
  auto r = run(SimConfig{}, topo, trace_of(jobs), &log);
  std::map<std::string, SimTime> since;
  double held = 0;
  for (const auto& e : parse_log(log.str())) {
    const std::string ev = e["ev"];
    if (ev == "job_dispatch") since[e["job"]] = e["t"].get<SimTime>();
    if (ev == "job_finish" || ev == "preemption_executed") {
      const std::string id = e["job"];
      held += gpus[id] * static_cast<double>(e["t"].get<SimTime>() - since.at(id));
      since.erase(id);
    }
  }
  EXPECT_TRUE(since.empty());
  EXPECT_GE(r.jobs.preemptions, 1u);
  const double capacity = 16.0 * static_cast<double>(r.end - r.start);
  EXPECT_NEAR(r.sor, held / capacity, 1e-12);
}

TEST(Engine, StalePlanAbortsWithoutRelease) {
  auto topo = uniform_topology(1, 1);
  Simulator sim(SimConfig{}, topo, trace_of({make_job("a", 8, 1, 0, 10), make_job("b", 8, 1, 0, 10, 4)}));
  std::ostringstream log;
  sim.set_event_log(&log);
  PreemptionPlan plan;
  plan.kind = PreemptionKind::kPriority;
  plan.beneficiary = 1;
  VictimCandidate v;
  v.job = 0;
  v.id = "a";
  v.freed = Demand{{0, 8 * kMilliPerGpu}};
  plan.victims = {v};
  plan.freed = v.freed;
  EXPECT_FALSE(sim.handle_preemption(plan));
  EXPECT_NE(log.str().find("preemption_aborted"), std::string::npos);
  EXPECT_EQ(allocated_milli(sim.snapshot()), 0);
}

TEST(Engine, ConservationCausalityAndNoLostJobs) {
  for (const char* name : {"tiny-training", "tiny-inference"}) {
    auto p = *find_preset(name);
    auto topo = build_fat_tree(p.topology);
    auto trace = generate_trace(p.workload);
    Simulator sim(p.sim, topo, trace);
    std::ostringstream log;
    sim.set_event_log(&log);
    std::size_t checks = 0;
    std::string violation;
    sim.set_observer([&](const Simulator& s, SimTime) {
      ++checks;
      Milli held = 0;
      std::map<std::pair<NodeIdx, std::uint32_t>, Milli> per_device;
      for (const auto& [k, u] : s.running()) {
        for (const auto& pod : u.pods) {
          const Milli per_slot = pod.milli >= kMilliPerGpu ? kMilliPerGpu : pod.milli;
          for (auto slot : pod.slots) {
            held += per_slot;
            per_device[{pod.node, slot}] += per_slot;
          }
        }
      }
      if (held != allocated_milli(s.snapshot()) && violation.empty()) violation = "allocated != held";
      for (const auto& [key, m] : per_device) {
        if (s.snapshot().node(key.first).used[key.second] != m && violation.empty()) violation = "device mismatch";
      }
    });
    auto r = sim.run();
    EXPECT_EQ(violation, "") << name;
    EXPECT_GT(checks, 100u);
    const auto arrived = std::count_if(trace.jobs.begin(), trace.jobs.end(),
                                       [&](const Job& j) { return j.submit_time <= p.sim.horizon; });
    EXPECT_EQ(r.jobs.submitted, static_cast<std::size_t>(arrived));
    EXPECT_EQ(r.jobs.finished + r.jobs.failed + r.jobs.queued_at_end + r.jobs.running_at_end, r.jobs.submitted)
        << name;

    std::map<std::string, const Job*> by_id;
    for (const auto& j : trace.jobs) by_id[j.job_id] = &j;
    std::map<std::pair<std::string, std::string>, SimTime> started;
    for (const auto& e : parse_log(log.str())) {
      const std::string ev = e["ev"];
      if (ev == "job_dispatch") {
        ASSERT_GE(e["t"].get<SimTime>(), by_id.at(e["job"])->submit_time) << name;
      } else if (ev == "job_start") {
        started[{e["job"], e["pod"].dump()}] = e["t"].get<SimTime>();
      } else if (ev == "job_finish") {
        auto it = started.find({e["job"], e["pod"].dump()});
        ASSERT_NE(it, started.end());
        ASSERT_EQ(e["t"].get<SimTime>() - it->second, by_id.at(e["job"])->duration) << name;
      }
    }
  }
}

TEST(Engine, SorEqualsTimeWeightedGar) {
  auto p = *find_preset("tiny-training");
  auto topo = build_fat_tree(p.topology);
  auto r = run(p.sim, topo, generate_trace(p.workload));
  EXPECT_NEAR(r.sor, time_weighted_mean(r.gar_series, r.end), 1e-9);
  EXPECT_GT(r.sor, 0.0);
  EXPECT_LE(r.sor, 1.0);
}

TEST(Engine, ConfigValidation) {
  auto topo = uniform_topology(1, 1);
  SimConfig bad;
  bad.cycle_period = 0;
  EXPECT_THROW(Simulator(bad, topo, Trace{}), InputError);
  SimConfig c;
  EXPECT_THROW(apply_sim_config_json(c, json{{"cycle_perod", 5}}), InputError);
  EXPECT_THROW(apply_sim_config_json(c, json{{"queue_policy", "lifo"}}), InputError);
  apply_sim_config_json(c, json{{"queue_policy", "strict-fifo"}, {"requeue_limit", 3}});
  EXPECT_EQ(c.queue_policy, QueuePolicy::kStrictFifo);
  EXPECT_EQ(c.requeue_limit, 3);
  SimConfig again;
  apply_sim_config_json(again, sim_config_to_json(c));
  EXPECT_EQ(sim_config_to_json(again).dump(), sim_config_to_json(c).dump());
}

TEST(Engine, UnknownGpuTypeRejected) {
  auto topo = uniform_topology(1, 1);
  auto j = make_job("x", 1, 1, 0, 10);
  j.pod_specs[0].gpu_type = "H";
  EXPECT_THROW(Simulator(SimConfig{}, topo, trace_of({j})), InputError);
}

TEST(Engine, RequeueLimitFailsJob) {
  auto topo = uniform_topology(1, 1);
  SimConfig cfg;
  cfg.requeue_limit = 0;
  std::ostringstream log;
  auto r = run(cfg, topo, trace_of({make_job("low", 8, 1, 0, 1000, 0), make_job("high", 8, 1, 100, 500, 5)}), &log);
  EXPECT_EQ(r.jobs.failed, 1u);
  EXPECT_EQ(r.jobs.finished, 1u);
  EXPECT_EQ(events_of(parse_log(log.str()), "job_failed", "low").size(), 1u);
}

TEST(Engine, ReleaseVisibleToCycleAtSameInstant) {
  auto topo = uniform_topology(1, 1);
  std::ostringstream log;
  run(SimConfig{}, topo, trace_of({make_job("a", 8, 1, 0, 100), make_job("b", 8, 1, 100, 10)}), &log);
  auto ev = parse_log(log.str());
  std::vector<std::string> at100;
  for (const auto& e : ev) {
    if (e["t"] == 100 && e["ev"] != "schedule_cycle" && e["ev"] != "job_start") at100.push_back(e["ev"]);
  }
  EXPECT_EQ(at100, (std::vector<std::string>{"job_finish", "job_arrival", "job_dispatch"}));
}

TEST(Engine, WaitInvariantUnderTenantRelabeling) {
  auto p = *find_preset("tiny-training");
  p.workload.job_count = 200;
  auto topo = build_fat_tree(p.topology);
  auto trace = generate_trace(p.workload);
  auto renamed = trace;
  for (auto& j : renamed.jobs) j.tenant_id = "renamed-" + j.tenant_id;
  auto a = run(p.sim, topo, trace), b = run(p.sim, topo, renamed);
  for (std::size_t k = 0; k < a.jwtd.size(); ++k) {
    EXPECT_EQ(a.jwtd[k].mean, b.jwtd[k].mean);
    EXPECT_GE(a.jwtd[k].mean, 0.0);
  }
}
