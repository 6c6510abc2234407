#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "helpers.hpp"

using namespace gcsim;
using nlohmann::json;

namespace {

std::string job_line(const std::string& id, SimTime submit, SimTime duration, int gpus = 1) {
  json j = {{"job_id", id},
            {"tenant_id", "t0"},
            {"priority", 1},
            {"kind", "gang"},
            {"pod_specs", json::array({{{"gpu_type", "L"}, {"gpus_per_pod", gpus}, {"pods", 1}}})},
            {"submit_time", submit},
            {"duration", duration}};
  return j.dump() + "\n";
}

}  // namespace

// Trace I/O -------------------------------------------------------------------

TEST(ParseTrace, EmptyStream) {
  EXPECT_TRUE(parse_trace(std::string()).jobs.empty());
}

TEST(ParseTrace, OutOfOrderIsSortedWithWarning) {
  auto t = parse_trace(job_line("b", 50, 10) + job_line("a", 5, 10));
  ASSERT_EQ(t.jobs.size(), 2u);
  EXPECT_EQ(t.jobs[0].job_id, "a");
  EXPECT_EQ(t.warnings.size(), 1u);
}

TEST(ParseTrace, ZeroDurationNamesJob) {
  try {
    parse_trace(job_line("job-zero", 0, 0));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("job-zero"), std::string::npos);
  }
  EXPECT_THROW(parse_trace(job_line("neg", 0, -5)), InputError);
  EXPECT_THROW(parse_trace(std::string("{not json}\n")), InputError);
  EXPECT_THROW(parse_trace(std::string("{\"job_id\":\"x\"}\n")), InputError);
}

TEST(ParseTrace, RoundTripPreservesJobs) {
  GeneratorParams p;
  p.job_count = 300;
  p.seed = 3;
  auto t = generate_trace(p);
  std::ostringstream s;
  write_trace(s, t);
  auto back = parse_trace(s.str());
  EXPECT_EQ(back.jobs, t.jobs);
  EXPECT_TRUE(back.warnings.empty());
}

// Generator ---------------------------------------------------------------------

TEST(GenerateTrace, Deterministic) {
  GeneratorParams p;
  p.job_count = 10000;
  p.seed = 42;
  std::ostringstream a, b;
  write_trace(a, generate_trace(p));
  write_trace(b, generate_trace(p));
  EXPECT_EQ(a.str(), b.str());
  p.seed = 43;
  std::ostringstream c;
  write_trace(c, generate_trace(p));
  EXPECT_NE(a.str(), c.str());
}

TEST(GenerateTrace, DefaultShape) {
  GeneratorParams p;
  p.job_count = 10000;
  auto t = generate_trace(p);
  ASSERT_EQ(t.jobs.size(), 10000u);
  auto shape = measure_workload_shape(t);
  EXPECT_GT(shape.small_job_fraction, 0.9);
  EXPECT_GT(shape.large_gpu_time_share, 0.5);
  double lo = 1e9, hi = 0;
  for (const auto& j : t.jobs) {
    lo = std::min(lo, j.total_gpus());
    hi = std::max(hi, j.total_gpus());
  }
  EXPECT_EQ(lo, 1.0);
  EXPECT_EQ(hi, 2048.0);
  EXPECT_TRUE(std::is_sorted(t.jobs.begin(), t.jobs.end(),
                             [](const Job& a, const Job& b) { return a.submit_time < b.submit_time; }));
}

TEST(GenerateTrace, ShapeHoldsAcrossSeeds) {
  for (std::uint64_t seed : {1, 2, 3}) {
    GeneratorParams p;
    p.job_count = 5000;
    p.seed = seed;
    auto shape = measure_workload_shape(generate_trace(p));
    EXPECT_GT(shape.small_job_fraction, 0.9) << seed;
    EXPECT_GT(shape.large_gpu_time_share, 0.5) << seed;
  }
}

TEST(GenerateTrace, RejectsInfeasibleParameters) {
  GeneratorParams p;
  p.sizes = {{1, 1.0, 3600.0}};  // nothing large: GPU-time share can never reach one half
  EXPECT_THROW(generate_trace(p), InputError);
  p.require_workload_shape = false;
  EXPECT_NO_THROW(generate_trace(p));
  GeneratorParams bad;
  bad.arrival_rate_per_hour = 0;
  EXPECT_THROW(generate_trace(bad), InputError);
  GeneratorParams unknown;
  EXPECT_THROW(apply_generator_params_json(unknown, json{{"jobz", 1}}), InputError);
}

TEST(JobSizeBucket, Examples) {
  Job j;
  j.pod_specs = {PodSpec{"L", kMilliPerGpu, 1}};
  EXPECT_EQ(job_size_bucket(j), "1-7");
  j.pod_specs = {PodSpec{"L", 8 * kMilliPerGpu, 8}};
  EXPECT_EQ(job_size_bucket(j), "64-255");
  j.pod_specs = {PodSpec{"L", 8 * kMilliPerGpu, 256}};
  EXPECT_EQ(job_size_bucket(j), ">=2048");
}

TEST(JobSizeBucket, TotalAndMatchesRangeOracle) {
  const std::vector<std::pair<int, int>> ranges = {{1, 7}, {8, 63}, {64, 255}, {256, 1023}, {1024, 2047}, {2048, 1 << 30}};
  for (int g = 1; g <= 5000; ++g) {
    int hits = 0;
    std::size_t which = 0;
    for (std::size_t b = 0; b < ranges.size(); ++b) {
      if (g >= ranges[b].first && g <= ranges[b].second) {
        ++hits;
        which = b;
      }
    }
    ASSERT_EQ(hits, 1);
    ASSERT_EQ(bucket_index_for_gpus(g), which) << g;
  }
}

// Quota -----------------------------------------------------------------------

namespace {

ClusterTopology one_pool(int nodes = 4) { return gcsim::testing::uniform_topology(nodes, 2); }

QuotaLedger ledger(QuotaMode mode0, int q0, int q1, const ClusterTopology& topo) {
  std::vector<TenantQuotaConfig> cfg = {{"a", mode0, {{"L", q0}}}, {"b", QuotaMode::kShared, {{"L", q1}}}};
  return QuotaLedger(cfg, topo);
}

Demand gpus(Milli g) { return Demand{{0, g * kMilliPerGpu}}; }

}  // namespace

TEST(StaticQuota, IsolatedOverQuotaFails) {
  auto topo = one_pool();
  auto q = ledger(QuotaMode::kIsolated, 16, 8, topo);
  q.commit(0, q.static_quota_admit(0, gpus(10)));
  auto g = q.static_quota_admit(0, gpus(8));
  EXPECT_FALSE(g.pass);
}

TEST(StaticQuota, SharedBorrowsUnusedQuota) {
  auto topo = one_pool();
  auto q = ledger(QuotaMode::kShared, 16, 8, topo);
  q.commit(0, q.static_quota_admit(0, gpus(10)));
  auto g = q.static_quota_admit(0, gpus(8));
  ASSERT_TRUE(g.pass);
  EXPECT_EQ(g.borrowed_from(1, 0), 8 * kMilliPerGpu);
  q.commit(0, g);
  EXPECT_EQ(q.check_invariants(), "");
  EXPECT_EQ(q.lent_out(1, 0), 8 * kMilliPerGpu);
  q.release(0, g);
  EXPECT_EQ(q.lent_out(1, 0), 0);
}

TEST(StaticQuota, ZeroDemandPassesAndUnknownTenantThrows) {
  auto topo = one_pool();
  auto q = ledger(QuotaMode::kIsolated, 0, 0, topo);
  EXPECT_TRUE(q.static_quota_admit(0, {}).pass);
  EXPECT_THROW(q.static_quota_admit(7, gpus(1)), InputError);
}

TEST(StaticQuota, GpuTypeWithoutEntryHasZeroQuota) {
  auto topo = load_topology(json{{"groups", {{{"id", "g"}}}},
                                 {"nodes", {{{"id", "x"}, {"gpu_type", "L"}, {"group", "g"}},
                                            {{"id", "y"}, {"gpu_type", "A"}, {"group", "g"}}}}});
  QuotaLedger q({{"a", QuotaMode::kIsolated, {{"L", 8}}}}, topo);
  const auto a = *topo.find_gpu_type("A");
  EXPECT_FALSE(q.static_quota_admit(0, Demand{{a, kMilliPerGpu}}).pass);
}

TEST(StaticQuota, ConservationUnderRandomOperations) {
  auto topo = one_pool();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TenantQuotaConfig> cfg;
    for (int t = 0; t < 4; ++t) {
      cfg.push_back({"t" + std::to_string(t), t == 3 ? QuotaMode::kIsolated : QuotaMode::kShared,
                     {{"L", std::uniform_int_distribution<int>(0, 16)(rng)}}});
    }
    QuotaLedger q(cfg, topo);
    std::vector<std::pair<TenantIdx, QuotaGrant>> live;
    for (int step = 0; step < 200; ++step) {
      if (!live.empty() && std::uniform_int_distribution<int>(0, 2)(rng) == 0) {
        auto k = std::uniform_int_distribution<std::size_t>(0, live.size() - 1)(rng);
        q.release(live[k].first, live[k].second);
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
      } else {
        const TenantIdx t = std::uniform_int_distribution<TenantIdx>(0, 3)(rng);
        auto g = q.static_quota_admit(t, gpus(std::uniform_int_distribution<int>(1, 6)(rng)));
        if (g.pass) {
          q.commit(t, g);
          live.emplace_back(t, g);
        }
      }
      ASSERT_EQ(q.check_invariants(), "");
      Milli lent = 0, borrowed = 0;
      for (TenantIdx t = 0; t < 4; ++t) {
        lent += q.lent_out(t, 0);
        borrowed += q.borrowed_in(t, 0);
        if (q.mode(t) == QuotaMode::kIsolated) {
          ASSERT_LE(q.used(t, 0), q.quota(t, 0));
        }
      }
      ASSERT_EQ(lent, borrowed);
    }
  }
}

// Dynamic admission --------------------------------------------------------------

TEST(DynamicAdmit, CapacityAndJointCheck) {
  EXPECT_TRUE(dynamic_resource_admit(Demand{{0, 8000}}, std::vector<Milli>{12000}));
  EXPECT_FALSE(dynamic_resource_admit(Demand{{0, 8000}, {1, 4000}}, std::vector<Milli>{8000, 2000}));
  EXPECT_TRUE(dynamic_resource_admit(Demand{}, std::vector<Milli>{0}));
}

TEST(DynamicAdmit, CapacityPassButFragmentedPlacementFails) {
  auto topo = gcsim::testing::uniform_topology(2, 2);
  auto snap = ResourceSnapshot::empty(topo);
  snap = gcsim::testing::occupy(topo, snap, 0, 4);
  snap = gcsim::testing::occupy(topo, snap, 1, 4);
  EXPECT_TRUE(dynamic_resource_admit(Demand{{0, 8000}}, snap));
  PlacementRequest req;
  req.pods = {PodRequest{0, 0, 8000}};
  req.gang = true;
  EXPECT_FALSE(place(req, snap, topo).success);
}

// Queues ----------------------------------------------------------------------

namespace {

QueueEntry entry(JobIdx j, int prio, SimTime submit, Milli gpus_needed, TenantIdx tenant = 0) {
  QueueEntry e;
  e.job = j;
  e.job_id = "j" + std::to_string(100 + j);
  e.tenant = tenant;
  e.priority = prio;
  e.submit = submit;
  e.demand = gpus(gpus_needed);
  return e;
}

}  // namespace

TEST(TenantQueue, OrderMatchesKeyForEveryInsertionOrder) {
  std::vector<QueueEntry> es = {entry(0, 1, 10, 4), entry(1, 2, 20, 8), entry(2, 1, 10, 2), entry(3, 1, 5, 16),
                                entry(4, 1, 10, 2)};
  std::vector<JobIdx> expect = {1, 3, 2, 4, 0};
  std::vector<std::size_t> perm = {0, 1, 2, 3, 4};
  do {
    TenantQueue q("t");
    for (auto i : perm) q.push(es[i]);
    std::vector<JobIdx> got;
    for (const auto& e : q.entries()) got.push_back(e.job);
    ASSERT_EQ(got, expect);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST(TenantQueue, RequeuedJobKeepsSeniority) {
  TenantQueue q("t");
  q.push(entry(0, 1, 10, 8));
  q.push(entry(1, 1, 20, 1));
  q.push(entry(2, 1, 30, 1));
  ASSERT_TRUE(q.remove(0));
  q.push(entry(0, 1, 10, 8));  // re-enters with its original submit time
  EXPECT_EQ(q.entries().front().job, 0u);
}

TEST(MergeQueues, GlobalKeyAndRoundRobin) {
  TenantQueue a("a"), b("b");
  a.push(entry(0, 1, 1, 1, 0));
  a.push(entry(1, 1, 2, 1, 0));
  b.push(entry(2, 1, 3, 1, 1));
  std::vector<JobIdx> got;
  for (const auto& e : merge_queues({a, b})) got.push_back(e.job);
  EXPECT_EQ(got, (std::vector<JobIdx>{0, 1, 2}));
  got.clear();
  for (const auto& e : merge_queues({a, b}, true)) got.push_back(e.job);
  EXPECT_EQ(got, (std::vector<JobIdx>{0, 2, 1}));
}

namespace {

ResourceSnapshot pool_with_free(Milli free_gpus) {
  ResourceSnapshot s;
  s.pool_free = {free_gpus * kMilliPerGpu};
  return s;
}

}  // namespace

TEST(SelectCandidates, HeadOfLineBlockingVersusBypass) {
  TenantQueue q("t");
  q.push(entry(1, 1, 0, 8));
  q.push(entry(2, 1, 1, 2));
  auto snap = pool_with_free(4);
  EXPECT_TRUE(select_candidates({q}, snap, QueuePolicy::kStrictFifo, 100, 5).dispatch.empty());
  auto be = select_candidates({q}, snap, QueuePolicy::kBestEffort, 100, 5);
  EXPECT_EQ(be.dispatch, std::vector<JobIdx>{2});
  EXPECT_TRUE(be.backfilled.empty());
  auto bf = select_candidates({q}, snap, QueuePolicy::kBackfill, 100, 5);
  EXPECT_EQ(bf.dispatch, std::vector<JobIdx>{2});
  EXPECT_EQ(bf.backfilled, std::vector<JobIdx>{2});
  EXPECT_FALSE(bf.plan.has_value());
}

TEST(SelectCandidates, TimedOutHeadGetsPlanOverBackfilledJobs) {
  TenantQueue q("t");
  q.push(entry(1, 1, 0, 8));
  auto snap = pool_with_free(2);
  std::vector<VictimCandidate> backfilled;
  for (JobIdx j : {5, 6, 7}) {
    VictimCandidate v;
    v.job = j;
    v.id = "b" + std::to_string(j);
    v.priority = 1;
    v.start = j;
    v.freed = gpus(2);
    backfilled.push_back(v);
  }
  auto r = select_candidates({q}, snap, QueuePolicy::kBackfill, 100, 100, backfilled);
  ASSERT_TRUE(r.plan.has_value());
  EXPECT_EQ(r.plan->kind, PreemptionKind::kBackfillTimeout);
  EXPECT_GE(r.plan->freed.at(0), 6 * kMilliPerGpu);
  EXPECT_GE(r.plan->freed.at(0) + snap.pool_free[0], 8 * kMilliPerGpu);
  EXPECT_EQ(r.plan->victims.size(), 3u);
  auto early = select_candidates({q}, snap, QueuePolicy::kBackfill, 100, 99, backfilled);
  EXPECT_FALSE(early.plan.has_value());
}

TEST(SelectCandidates, EmptyQueue) {
  auto r = select_candidates({TenantQueue("t")}, pool_with_free(8), QueuePolicy::kBackfill, 10, 0);
  EXPECT_TRUE(r.dispatch.empty());
  EXPECT_FALSE(r.plan.has_value());
}

TEST(SelectCandidates, StrictPrefixAndBypassSoundnessOnRandomQueues) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<TenantQueue> qs(3);
    JobIdx next = 0;
    for (auto& q : qs) {
      const int n = std::uniform_int_distribution<int>(0, 6)(rng);
      for (int i = 0; i < n; ++i) {
        q.push(entry(next++, std::uniform_int_distribution<int>(0, 2)(rng), std::uniform_int_distribution<int>(0, 50)(rng),
                     std::uniform_int_distribution<int>(1, 16)(rng)));
      }
    }
    const Milli free = std::uniform_int_distribution<int>(0, 40)(rng);
    const auto merged = merge_queues(qs);
    for (auto policy : {QueuePolicy::kStrictFifo, QueuePolicy::kBestEffort, QueuePolicy::kBackfill}) {
      auto r = select_candidates(qs, pool_with_free(free), policy, 1000, 0);
      // Replay in merged order: each dispatched job must fit what is left.
      Milli left = free * kMilliPerGpu;
      std::size_t di = 0;
      bool blocked = false;
      for (const auto& e : merged) {
        const bool fits = demand_total(e.demand) <= left;
        const bool dispatched = di < r.dispatch.size() && r.dispatch[di] == e.job;
        if (dispatched) {
          ASSERT_TRUE(fits);
          ASSERT_FALSE(blocked && policy == QueuePolicy::kStrictFifo);
          left -= demand_total(e.demand);
          ++di;
        } else {
          ASSERT_FALSE(fits && !(blocked && policy == QueuePolicy::kStrictFifo));
          blocked = true;
        }
      }
      ASSERT_EQ(di, r.dispatch.size());
    }
  }
}

// Preemption planning -------------------------------------------------------------

namespace {

VictimCandidate victim(JobIdx j, int prio, SimTime start, Milli g, std::optional<std::uint32_t> pod = std::nullopt) {
  VictimCandidate v;
  v.job = j;
  v.pod = pod;
  v.id = "v" + std::to_string(j) + (pod ? "/" + std::to_string(*pod) : "");
  v.priority = prio;
  v.start = start;
  v.freed = gpus(g);
  return v;
}

bool covers(const std::vector<VictimCandidate>& vs, const std::vector<std::size_t>& idx, Milli need) {
  Milli s = 0;
  for (auto i : idx) s += demand_total(vs[i].freed);
  return s >= need;
}

}  // namespace

TEST(PreemptionPlan, FewestVictims) {
  std::vector<VictimCandidate> vs = {victim(1, 0, 10, 2, 0), victim(1, 0, 11, 2, 1), victim(1, 0, 12, 2, 2)};
  auto plan = build_preemption_plan(PreemptionKind::kPriority, 9, 2, gpus(4), vs);
  ASSERT_TRUE(plan.has_value());
  EXPECT_EQ(plan->victims.size(), 2u);
  EXPECT_EQ(demand_total(plan->freed), 4 * kMilliPerGpu);
  for (const auto& v : plan->victims) EXPECT_TRUE(v.pod.has_value());
}

TEST(PreemptionPlan, NoEligibleVictims) {
  std::vector<VictimCandidate> vs = {victim(1, 2, 0, 8), victim(2, 3, 0, 8)};
  EXPECT_FALSE(build_preemption_plan(PreemptionKind::kPriority, 9, 2, gpus(4), vs).has_value());
  EXPECT_FALSE(build_preemption_plan(PreemptionKind::kPriority, 9, 5, gpus(40), vs).has_value());
}

TEST(PreemptionPlan, QuotaReclaimAgainstBorrower) {
  // Lender lent 8 to tenant b, whose two jobs borrowed 4 + 4; the lender needs 6 back.
  std::vector<VictimCandidate> vs = {victim(1, 1, 0, 4), victim(2, 1, 5, 4)};
  auto plan = build_preemption_plan(PreemptionKind::kQuotaReclaim, 9, 1, gpus(6), vs);
  ASSERT_TRUE(plan.has_value());
  EXPECT_GE(demand_total(plan->freed), 6 * kMilliPerGpu);
  EXPECT_EQ(plan->victims.size(), 2u);
}

TEST(PreemptionPlan, VictimOrderLowestPriorityThenLatestStart) {
  std::vector<VictimCandidate> vs = {victim(1, 1, 5, 2), victim(2, 0, 1, 2), victim(3, 0, 9, 2)};
  order_victims(vs, gpus(2));
  EXPECT_EQ(vs[0].job, 3u);
  EXPECT_EQ(vs[1].job, 2u);
  EXPECT_EQ(vs[2].job, 1u);
}

TEST(PreemptionPlan, MinimalByEnumerationOnRandomSets) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = std::uniform_int_distribution<int>(0, 10)(rng);
    std::vector<VictimCandidate> vs;
    for (int i = 0; i < n; ++i) {
      vs.push_back(victim(static_cast<JobIdx>(i), std::uniform_int_distribution<int>(0, 3)(rng),
                          std::uniform_int_distribution<int>(0, 100)(rng), std::uniform_int_distribution<int>(1, 8)(rng)));
    }
    const int bprio = std::uniform_int_distribution<int>(0, 4)(rng);
    const Milli need = std::uniform_int_distribution<int>(1, 30)(rng) * kMilliPerGpu;
    const auto kind = trial % 2 ? PreemptionKind::kPriority : PreemptionKind::kBackfillTimeout;
    auto plan = build_preemption_plan(kind, 99, bprio, Demand{{0, need}}, vs);

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      if (kind != PreemptionKind::kPriority || vs[i].priority < bprio) eligible.push_back(i);
    }
    // Oracle: smallest covering subset size, then lowest aggregate priority.
    std::optional<std::pair<std::size_t, long>> best;
    for (std::uint32_t mask = 0; mask < (1u << eligible.size()); ++mask) {
      std::vector<std::size_t> idx;
      long prio = 0;
      for (std::size_t b = 0; b < eligible.size(); ++b) {
        if (mask & (1u << b)) {
          idx.push_back(eligible[b]);
          prio += vs[eligible[b]].priority;
        }
      }
      if (!covers(vs, idx, need)) continue;
      std::pair<std::size_t, long> key{idx.size(), prio};
      if (!best || key < *best) best = key;
    }
    ASSERT_EQ(plan.has_value(), best.has_value()) << "trial " << trial;
    if (!plan) continue;
    long prio = 0;
    for (const auto& v : plan->victims) {
      prio += v.priority;
      if (kind == PreemptionKind::kPriority) {
        ASSERT_LT(v.priority, bprio);
      }
    }
    ASSERT_EQ(plan->victims.size(), best->first);
    ASSERT_EQ(prio, best->second);
    ASSERT_GE(demand_total(plan->freed), need);
    // No strict subset covers (removing any one victim breaks coverage).
    for (std::size_t drop = 0; drop < plan->victims.size(); ++drop) {
      ASSERT_LT(demand_total(plan->freed) - demand_total(plan->victims[drop].freed), need);
    }
  }
}

TEST(PreemptionPlan, GreedyPathStillInclusionMinimal) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<VictimCandidate> vs;
    for (int i = 0; i < 30; ++i) {
      vs.push_back(victim(static_cast<JobIdx>(i), 0, i, std::uniform_int_distribution<int>(1, 8)(rng)));
    }
    const Milli need = std::uniform_int_distribution<int>(1, 60)(rng) * kMilliPerGpu;
    auto plan = build_preemption_plan(PreemptionKind::kBackfillTimeout, 99, 5, Demand{{0, need}}, vs);
    ASSERT_TRUE(plan.has_value());
    for (std::size_t drop = 0; drop < plan->victims.size(); ++drop) {
      ASSERT_LT(demand_total(plan->freed) - demand_total(plan->victims[drop].freed), need);
    }
  }
}

TEST(Requeue, LimitContract) {
  EXPECT_TRUE(requeue_allowed(1000, std::nullopt));
  EXPECT_TRUE(requeue_allowed(2, 2));
  EXPECT_FALSE(requeue_allowed(3, 2));
}
