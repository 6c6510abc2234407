#pragma once

// Discrete-event simulation loop: arrivals, scheduling cycles (admission,
// queue policy, placement, preemption), job lifecycles and metric
// accounting. Single-threaded and deterministic.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gcsim/core.hpp"
#include "gcsim/metrics.hpp"
#include "gcsim/qsch.hpp"
#include "gcsim/quota.hpp"
#include "gcsim/rsch.hpp"
#include "gcsim/snapshot.hpp"
#include "gcsim/topology.hpp"
#include "gcsim/workload.hpp"

namespace gcsim {

struct SimConfig {
  SimTime cycle_period = 10;
  QueuePolicy queue_policy = QueuePolicy::kBackfill;
  PlacementPolicy placement_policy = PlacementPolicy::kEBinpack;
  SimTime backfill_timeout = -1;      // -1: ten cycle periods
  SimTime startup_latency = 0;
  SimTime preemption_overhead = -1;   // -1: one cycle period
  bool topology_aware = true;
  std::uint64_t seed = 42;
  SimTime horizon = 365LL * 24 * 3600;
  bool priority_preemption = true;
  int exempt_cycles = 5;
  std::optional<int> requeue_limit;
  bool full_rebuild = false;          // rebuild snapshots instead of advancing them
  bool gar_healthy_only = false;
  bool wait_includes_requeue = true;
  SimTime sample_tick = 60;
  bool round_robin = false;
  std::vector<TenantQuotaConfig> quotas;  // empty: quotas disabled

  SimTime effective_backfill_timeout() const { return backfill_timeout >= 0 ? backfill_timeout : 10 * cycle_period; }
  SimTime effective_preemption_overhead() const {
    return preemption_overhead >= 0 ? preemption_overhead : cycle_period;
  }

  void validate() const {
    if (cycle_period <= 0) throw InputError("config: cycle_period must be > 0");
    if (horizon <= 0) throw InputError("config: horizon must be > 0");
    if (startup_latency < 0) throw InputError("config: startup_latency must be >= 0");
    if (sample_tick <= 0) throw InputError("config: sample_tick must be > 0");
    if (exempt_cycles < 0) throw InputError("config: exempt_cycles must be >= 0");
    if (requeue_limit && *requeue_limit < 0) throw InputError("config: requeue_limit must be >= 0");
  }
};

inline nlohmann::json sim_config_to_json(const SimConfig& c) {
  nlohmann::json j;
  j["cycle_period"] = c.cycle_period;
  j["queue_policy"] = to_string(c.queue_policy);
  j["placement_policy"] = to_string(c.placement_policy);
  j["backfill_timeout"] = c.effective_backfill_timeout();
  j["startup_latency"] = c.startup_latency;
  j["preemption_overhead"] = c.effective_preemption_overhead();
  j["topology_aware"] = c.topology_aware;
  j["seed"] = c.seed;
  j["horizon"] = c.horizon;
  j["priority_preemption"] = c.priority_preemption;
  j["exempt_cycles"] = c.exempt_cycles;
  j["requeue_limit"] = c.requeue_limit ? nlohmann::json(*c.requeue_limit) : nlohmann::json(nullptr);
  j["full_rebuild"] = c.full_rebuild;
  j["gar_healthy_only"] = c.gar_healthy_only;
  j["wait_includes_requeue"] = c.wait_includes_requeue;
  j["sample_tick"] = c.sample_tick;
  j["round_robin"] = c.round_robin;
  j["quotas"] = quota_config_to_json(c.quotas)["tenants"];
  return j;
}

/// Applies the keys present in `j` on top of `c`. Unknown keys are errors so
/// typos do not silently fall back to defaults.
inline void apply_sim_config_json(SimConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("config: expected an object");
  static const std::set<std::string> known = {
      "cycle_period", "queue_policy",  "placement_policy", "backfill_timeout", "startup_latency",
      "preemption_overhead", "topology_aware", "seed", "horizon", "priority_preemption",
      "exempt_cycles", "requeue_limit", "full_rebuild", "gar_healthy_only", "wait_includes_requeue",
      "sample_tick", "round_robin", "quotas"};
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!known.count(it.key())) throw InputError("config: unknown key '" + it.key() + "'");
    }
    if (j.contains("cycle_period")) c.cycle_period = j["cycle_period"].get<SimTime>();
    if (j.contains("queue_policy")) {
      auto p = parse_queue_policy(j["queue_policy"].get<std::string>());
      if (!p) throw InputError("config: unknown queue_policy (valid: strict-fifo, best-effort, backfill)");
      c.queue_policy = *p;
    }
    if (j.contains("placement_policy")) {
      auto p = parse_placement_policy(j["placement_policy"].get<std::string>());
      if (!p) throw InputError("config: unknown placement_policy (valid: binpack, e-binpack, spread, e-spread)");
      c.placement_policy = *p;
    }
    if (j.contains("backfill_timeout")) c.backfill_timeout = j["backfill_timeout"].get<SimTime>();
    if (j.contains("startup_latency")) c.startup_latency = j["startup_latency"].get<SimTime>();
    if (j.contains("preemption_overhead")) c.preemption_overhead = j["preemption_overhead"].get<SimTime>();
    if (j.contains("topology_aware")) c.topology_aware = j["topology_aware"].get<bool>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("horizon")) c.horizon = j["horizon"].get<SimTime>();
    if (j.contains("priority_preemption")) c.priority_preemption = j["priority_preemption"].get<bool>();
    if (j.contains("exempt_cycles")) c.exempt_cycles = j["exempt_cycles"].get<int>();
    if (j.contains("requeue_limit")) {
      c.requeue_limit = j["requeue_limit"].is_null() ? std::nullopt : std::optional<int>(j["requeue_limit"].get<int>());
    }
    if (j.contains("full_rebuild")) c.full_rebuild = j["full_rebuild"].get<bool>();
    if (j.contains("gar_healthy_only")) c.gar_healthy_only = j["gar_healthy_only"].get<bool>();
    if (j.contains("wait_includes_requeue")) c.wait_includes_requeue = j["wait_includes_requeue"].get<bool>();
    if (j.contains("sample_tick")) c.sample_tick = j["sample_tick"].get<SimTime>();
    if (j.contains("round_robin")) c.round_robin = j["round_robin"].get<bool>();
    if (j.contains("quotas")) c.quotas = parse_quota_config(j["quotas"]);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
}

enum class EventKind { kJobFinish = 0, kPreemption = 1, kJobStart = 2, kJobArrival = 3, kRequeue = 4, kScheduleCycle = 5 };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::kJobFinish: return "job_finish";
    case EventKind::kPreemption: return "preemption_executed";
    case EventKind::kJobStart: return "job_start";
    case EventKind::kJobArrival: return "job_arrival";
    case EventKind::kRequeue: return "requeue";
    case EventKind::kScheduleCycle: return "schedule_cycle";
  }
  return "schedule_cycle";
}

/// Processed in (time, kind, seq) order.
struct Event {
  SimTime time = 0;
  EventKind kind = EventKind::kScheduleCycle;
  std::uint64_t seq = 0;
  JobIdx job = 0;
  std::uint32_t pod = kNoIndex;
  std::uint64_t epoch = 0;

  bool operator>(const Event& o) const {
    if (time != o.time) return time > o.time;
    if (kind != o.kind) return kind > o.kind;
    return seq > o.seq;
  }
};

/// A gang job as a whole (pod == kNoIndex) or one pod of a non-gang job.
struct UnitKey {
  JobIdx job = 0;
  std::uint32_t pod = kNoIndex;

  friend auto operator<=>(const UnitKey&, const UnitKey&) = default;
};

struct RunningUnit {
  UnitKey key;
  TenantIdx tenant = 0;
  int priority = 0;
  std::vector<PodPlacement> pods;
  QuotaGrant grant;
  Demand demand;
  SimTime dispatch = 0;
  SimTime start = 0;
  SimTime finish = 0;
  std::uint64_t epoch = 0;
  bool backfilled = false;
  bool started = false;
};

struct JobRuntime {
  TenantIdx tenant = 0;
  std::vector<GpuTypeIdx> pod_type;  // per flattened pod
  std::vector<Milli> pod_milli;
  std::set<std::uint32_t> pending;   // pods waiting for placement
  JobState state = JobState::kQueued;
  bool arrived = false;
  bool queued = false;
  std::size_t finished_pods = 0;
  SimTime first_full_dispatch = kNever;
  SimTime queued_since = 0;
  SimTime exempt_until = 0;
  int requeues = 0;
  int preemptions = 0;
  std::uint64_t epochs = 0;
};

class Simulator {
 public:
  using Observer = std::function<void(const Simulator&, SimTime)>;

  Simulator(SimConfig cfg, const ClusterTopology& topo, const Trace& trace)
      : cfg_(std::move(cfg)), topo_(&topo), jobs_(trace.jobs) {
    cfg_.validate();
    if (!cfg_.quotas.empty()) quota_ = QuotaLedger(cfg_.quotas, topo);
    // Tenants: quota config order first, then first appearance in the trace.
    for (const auto& q : cfg_.quotas) tenant_ids_.push_back(q.tenant_id);
    runtime_.resize(jobs_.size());
    for (JobIdx j = 0; j < jobs_.size(); ++j) {
      auto& job = jobs_[j];
      auto& rt = runtime_[j];
      auto t = std::find(tenant_ids_.begin(), tenant_ids_.end(), job.tenant_id);
      if (t == tenant_ids_.end()) {
        if (quota_.enabled()) throw InputError("job '" + job.job_id + "': tenant '" + job.tenant_id + "' has no quota entry");
        tenant_ids_.push_back(job.tenant_id);
        t = tenant_ids_.end() - 1;
      }
      rt.tenant = static_cast<TenantIdx>(t - tenant_ids_.begin());
      for (std::uint32_t p = 0; p < static_cast<std::uint32_t>(job.pod_count()); ++p) {
        const auto& spec = job.pod_spec(p);
        auto type = topo.find_gpu_type(spec.gpu_type);
        if (!type) throw InputError("job '" + job.job_id + "': unknown gpu_type '" + spec.gpu_type + "'");
        rt.pod_type.push_back(*type);
        rt.pod_milli.push_back(spec.milli);
      }
      job.state = JobState::kQueued;
    }
    for (const auto& id : tenant_ids_) queues_.emplace_back(id);
    snap_ = ResourceSnapshot::empty(topo);
  }

  void set_event_log(std::ostream* out) { log_ = out; }
  void set_observer(Observer obs) { observer_ = std::move(obs); }

  const SimConfig& config() const { return cfg_; }
  const ClusterTopology& topology() const { return *topo_; }
  const ResourceSnapshot& snapshot() const { return snap_; }
  const QuotaLedger& quota() const { return quota_; }
  const std::vector<Job>& jobs() const { return jobs_; }
  const std::vector<JobRuntime>& runtime() const { return runtime_; }
  const std::map<UnitKey, RunningUnit>& running() const { return running_; }
  const MetricsAccumulator& metrics() const { return acc_; }
  SimTime now() const { return now_; }
  std::size_t cycles_executed() const { return cycles_; }
  std::size_t cloned_nodes_total() const { return cloned_total_; }

  MetricsReport run() {
    if (ran_) throw StateError("Simulator::run called twice");
    ran_ = true;
    start_ = jobs_.empty() ? 0 : std::min<SimTime>(0, jobs_.front().submit_time);
    for (const auto& j : jobs_) start_ = std::min(start_, j.submit_time);
    now_ = start_;
    last_tick_ = start_;
    for (JobIdx j = 0; j < jobs_.size(); ++j) push(jobs_[j].submit_time, EventKind::kJobArrival, j);
    refresh_metrics_values();
    acc_.sample(now_, cur_gar_, cur_gfr_);

    while (!events_.empty()) {
      const SimTime t = events_.top().time;
      if (t > cfg_.horizon) break;
      advance_time(t);
      bool changed = false;
      while (!events_.empty() && events_.top().time == t) {
        Event e = events_.top();
        events_.pop();
        changed |= handle(e);
      }
      if (changed) {
        refresh_metrics_values();
        acc_.sample(now_, cur_gar_, cur_gfr_);
      }
      if (observer_) observer_(*this, now_);
    }
    const SimTime end = events_.empty() ? now_ : cfg_.horizon;
    advance_time(end);
    return finish_report(end);
  }

  /// Releases the plan's victims and dispatches the beneficiary. Aborts,
  /// changing nothing, if a victim is no longer running as planned or the
  /// beneficiary cannot be placed even after adding the extra candidates.
  bool handle_preemption(const PreemptionPlan& plan, const std::vector<VictimCandidate>& extra = {}) {
    std::vector<VictimCandidate> victims = plan.victims;
    for (const auto& v : victims) {
      if (!running_.count(unit_of(v))) {
        log_line({{"t", now_}, {"ev", "preemption_aborted"}, {"job", jobs_[plan.beneficiary].job_id},
                  {"reason", "stale plan"}});
        return false;
      }
    }
    const JobIdx b = plan.beneficiary;
    const auto& brt = runtime_[b];
    const Demand demand = pending_demand(b);
    std::size_t next_extra = 0;
    while (true) {
      QuotaLedger ledger = quota_;
      std::vector<AllocationChange> releases;
      std::set<UnitKey> seen;
      for (const auto& v : victims) {
        const UnitKey k = unit_of(v);
        if (!seen.insert(k).second) continue;
        const auto& u = running_.at(k);
        ledger.release(u.tenant, u.grant);
        auto rel = release_changes(u);
        releases.insert(releases.end(), rel.begin(), rel.end());
      }
      const auto grant = ledger.static_quota_admit(brt.tenant, demand);
      if (grant.pass) {
        const auto hypo = advance_snapshot(*topo_, snap_, releases);
        auto decision = place_job(b, hypo);
        if (decision.success) {
          for (const auto& k : seen) preempt_unit(k, plan.kind, b);
          auto real = place_job(b, snap_);
          if (!real.success) throw StateError("preemption: beneficiary placement diverged from validation");
          commit_gang_or_pods(b, real, grant, false, cfg_.effective_preemption_overhead());
          ++preemption_plans_;
          return true;
        }
      }
      while (next_extra < extra.size() && seen.count(unit_of(extra[next_extra]))) ++next_extra;
      if (next_extra >= extra.size()) {
        log_line({{"t", now_}, {"ev", "preemption_aborted"}, {"job", jobs_[b].job_id},
                  {"kind", to_string(plan.kind)}, {"reason", "beneficiary still unplaceable"}});
        return false;
      }
      victims.push_back(extra[next_extra++]);
    }
  }

  /// Candidate victims for a plan of `kind` on behalf of job `b`.
  std::vector<VictimCandidate> victim_candidates(PreemptionKind kind, JobIdx b) const {
    std::vector<VictimCandidate> out;
    const auto& brt = runtime_[b];
    const Demand demand = pending_demand(b);
    for (const auto& [key, u] : running_) {
      if (key.job == b) continue;
      if (runtime_[key.job].exempt_until > now_) continue;
      VictimCandidate c;
      c.job = key.job;
      if (key.pod != kNoIndex) c.pod = key.pod;
      c.id = jobs_[key.job].job_id + (key.pod == kNoIndex ? "" : "/" + std::to_string(key.pod));
      c.priority = u.priority;
      c.start = u.dispatch;
      switch (kind) {
        case PreemptionKind::kPriority:
          if (u.priority >= jobs_[b].priority) continue;
          c.freed = u.demand;
          break;
        case PreemptionKind::kBackfillTimeout:
          if (!u.backfilled) continue;
          c.freed = u.demand;
          break;
        case PreemptionKind::kQuotaReclaim:
          for (const auto& [t, m] : demand) {
            const Milli amt = u.grant.borrowed_from(brt.tenant, t);
            if (amt > 0) c.freed[t] = amt;
          }
          break;
      }
      bool relevant = false;
      for (const auto& [t, m] : c.freed) relevant = relevant || (m > 0 && demand.count(t));
      if (relevant) out.push_back(std::move(c));
    }
    return out;
  }

  Demand pending_demand(JobIdx j) const {
    Demand d;
    const auto& rt = runtime_[j];
    for (auto p : rt.pending) d[rt.pod_type[p]] += rt.pod_milli[p];
    return d;
  }

  PlacementRequest make_request(JobIdx j) const {
    const auto& job = jobs_[j];
    const auto& rt = runtime_[j];
    PlacementRequest req;
    req.job = j;
    req.gang = job.kind == JobKind::kGang;
    req.needs_hbd = job.needs_hbd;
    req.policy = cfg_.placement_policy;
    for (auto p : rt.pending) req.pods.push_back(PodRequest{p, rt.pod_type[p], rt.pod_milli[p]});
    return req;
  }

  PlacementDecision place_job(JobIdx j, const ResourceSnapshot& snap) const {
    auto req = make_request(j);
    const PlacementOptions opt{cfg_.topology_aware};
    if (req.policy == PlacementPolicy::kESpread) {
      if (!req.gang && jobs_[j].task == "inference" && !req.needs_hbd) return place_e_spread(req, snap, *topo_, opt);
      req.policy = PlacementPolicy::kEBinpack;
    }
    return place(req, snap, *topo_, opt);
  }

  /// Every live device allocation, in unit order.
  std::vector<AllocationChange> live_allocations() const {
    std::vector<AllocationChange> out;
    for (const auto& [k, u] : running_) {
      PlacementDecision d;
      d.pods = u.pods;
      auto c = d.changes(k.job, u.tenant);
      out.insert(out.end(), c.begin(), c.end());
    }
    return out;
  }

 private:
  SimConfig cfg_;
  const ClusterTopology* topo_;
  std::vector<Job> jobs_;
  std::vector<JobRuntime> runtime_;
  std::vector<std::string> tenant_ids_;
  std::vector<TenantQueue> queues_;
  QuotaLedger quota_;
  ResourceSnapshot snap_;
  std::map<UnitKey, RunningUnit> running_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::uint64_t seq_ = 0;
  SimTime now_ = 0, start_ = 0, last_tick_ = 0;
  SimTime cycle_at_ = kNever;  // time of the pending cycle event
  bool dirty_ = true;
  SimTime next_trigger_ = kNever;
  std::multiset<SimTime> exempt_times_;
  MetricsAccumulator acc_;
  double cur_gar_ = 0, cur_gfr_ = 0;
  Milli cur_alloc_ = 0;
  std::ostream* log_ = nullptr;
  Observer observer_;
  bool ran_ = false;
  std::size_t cycles_ = 0, cloned_total_ = 0;
  std::size_t preemptions_ = 0, requeues_ = 0, placement_failures_ = 0, preemption_plans_ = 0;

  void push(SimTime t, EventKind k, JobIdx job = 0, std::uint32_t pod = kNoIndex, std::uint64_t epoch = 0) {
    events_.push(Event{t, k, seq_++, job, pod, epoch});
  }

  void log_line(const nlohmann::json& j) {
    if (log_) *log_ << j.dump() << '\n';
  }

  static UnitKey unit_of(const VictimCandidate& v) { return UnitKey{v.job, v.pod ? *v.pod : kNoIndex}; }

  void schedule_cycle(SimTime at_or_after) {
    const SimTime p = cfg_.cycle_period;
    SimTime t = at_or_after <= 0 ? -((-at_or_after) / p) * p : ((at_or_after + p - 1) / p) * p;
    if (t < now_) t = now_;
    if (t >= cycle_at_) return;
    cycle_at_ = t;
    push(t, EventKind::kScheduleCycle);
  }

  void refresh_metrics_values() {
    cur_alloc_ = allocated_milli(snap_);
    cur_gar_ = gar(snap_, *topo_, cfg_.gar_healthy_only);
    cur_gfr_ = gfr(snap_, *topo_);
  }

  void advance_time(SimTime t) {
    if (t <= now_) return;
    acc_.update_sor(t - now_, cur_alloc_, capacity_milli(*topo_, cfg_.gar_healthy_only));
    acc_.add_gfr_time(t - now_, cur_gfr_);
    const SimTime tick = cfg_.sample_tick;
    for (SimTime k = (now_ / tick + 1) * tick; k < t; k += tick) acc_.sample(k, cur_gar_, cur_gfr_);
    now_ = t;
  }

  void apply_batch(const std::vector<AllocationChange>& changes) {
    if (changes.empty()) return;
    if (cfg_.full_rebuild) {
      // running_ already reflects the batch.
      const auto live = live_allocations();
      snap_ = rebuild_snapshot(*topo_, live, snap_.generation + 1);
    } else {
      snap_ = advance_snapshot(*topo_, snap_, changes);
    }
    cloned_total_ += snap_.cloned_nodes;
  }

  std::vector<AllocationChange> release_changes(const RunningUnit& u) const {
    std::vector<AllocationChange> out;
    for (const auto& p : u.pods) {
      const Milli per_slot = p.milli >= kMilliPerGpu ? kMilliPerGpu : p.milli;
      for (auto s : p.slots) out.push_back(AllocationChange::release(p.node, s, PodRef{u.key.job, p.pod}, per_slot, u.tenant));
    }
    return out;
  }

  void enqueue(JobIdx j) {
    auto& rt = runtime_[j];
    if (rt.queued || rt.pending.empty()) return;
    QueueEntry e;
    e.job = j;
    e.job_id = jobs_[j].job_id;
    e.tenant = rt.tenant;
    e.priority = jobs_[j].priority;
    e.submit = jobs_[j].submit_time;
    e.demand = pending_demand(j);
    queues_[rt.tenant].push(std::move(e));
    rt.queued = true;
    rt.queued_since = now_;
  }

  void dequeue(JobIdx j) {
    auto& rt = runtime_[j];
    if (!rt.queued) return;
    queues_[rt.tenant].remove(j);
    rt.queued = false;
  }

  /// Re-keys a queued job after its pending pod set changed.
  void requeue_entry(JobIdx j) {
    dequeue(j);
    enqueue(j);
  }

  bool handle(const Event& e) {
    switch (e.kind) {
      case EventKind::kJobArrival: {
        auto& rt = runtime_[e.job];
        rt.arrived = true;
        for (std::uint32_t p = 0; p < rt.pod_type.size(); ++p) rt.pending.insert(p);
        log_line({{"t", now_}, {"ev", "job_arrival"}, {"job", jobs_[e.job].job_id}});
        enqueue(e.job);
        dirty_ = true;
        schedule_cycle(now_);
        return false;
      }
      case EventKind::kJobStart: {
        auto it = running_.find(UnitKey{e.job, e.pod});
        if (it == running_.end() || it->second.epoch != e.epoch) return false;
        it->second.started = true;
        if (jobs_[e.job].state != JobState::kFinished) jobs_[e.job].state = JobState::kRunning;
        log_line({{"t", now_}, {"ev", "job_start"}, {"job", jobs_[e.job].job_id}, {"pod", pod_label(e.pod)}});
        return false;
      }
      case EventKind::kJobFinish: {
        const UnitKey k{e.job, e.pod};
        auto it = running_.find(k);
        if (it == running_.end() || it->second.epoch != e.epoch) return false;  // preempted meanwhile
        RunningUnit u = std::move(it->second);
        running_.erase(it);
        quota_.release(u.tenant, u.grant);
        apply_batch(release_changes(u));
        auto& rt = runtime_[e.job];
        rt.finished_pods += u.pods.size();
        log_line({{"t", now_}, {"ev", "job_finish"}, {"job", jobs_[e.job].job_id}, {"pod", pod_label(e.pod)}});
        if (rt.finished_pods == rt.pod_type.size()) jobs_[e.job].state = JobState::kFinished;
        dirty_ = true;
        if (has_queued()) schedule_cycle(now_);
        return true;
      }
      case EventKind::kScheduleCycle: {
        if (e.time != cycle_at_) return false;  // superseded
        cycle_at_ = kNever;
        return run_cycle();
      }
      case EventKind::kPreemption:
      case EventKind::kRequeue:
        return false;
    }
    return false;
  }

  static nlohmann::json pod_label(std::uint32_t pod) {
    return pod == kNoIndex ? nlohmann::json(nullptr) : nlohmann::json(pod);
  }

  bool has_queued() const {
    for (const auto& q : queues_) {
      if (!q.empty()) return true;
    }
    return false;
  }

  std::size_t queued_count() const {
    std::size_t n = 0;
    for (const auto& q : queues_) n += q.size();
    return n;
  }

  /// Records a unit as running and schedules its start and finish.
  void add_unit(JobIdx j, std::uint32_t pod, std::vector<PodPlacement> pods, QuotaGrant grant, bool backfilled,
                SimTime extra_delay) {
    auto& rt = runtime_[j];
    RunningUnit u;
    u.key = UnitKey{j, pod};
    u.tenant = rt.tenant;
    u.priority = jobs_[j].priority;
    for (const auto& p : pods) u.demand[rt.pod_type[p.pod]] += p.milli;
    u.pods = std::move(pods);
    u.grant = std::move(grant);
    u.dispatch = now_;
    u.start = now_ + cfg_.startup_latency + extra_delay;
    u.finish = u.start + jobs_[j].duration;
    u.epoch = ++rt.epochs;
    u.backfilled = backfilled;
    push(u.start, EventKind::kJobStart, j, pod, u.epoch);
    push(u.finish, EventKind::kJobFinish, j, pod, u.epoch);
    running_.emplace(u.key, std::move(u));
  }

  /// Commits a placement: gang jobs as one unit under `gang_grant`, non-gang
  /// pods one unit each with its own quota grant. Returns pods committed.
  std::size_t commit_gang_or_pods(JobIdx j, const PlacementDecision& d, const QuotaGrant& gang_grant, bool backfilled,
                                  SimTime extra_delay) {
    auto& rt = runtime_[j];
    const auto& job = jobs_[j];
    std::vector<AllocationChange> changes;
    std::vector<PodPlacement> kept;
    if (job.kind == JobKind::kGang) {
      if (!d.success) return 0;
      quota_.commit(rt.tenant, gang_grant);
      kept = d.pods;
      for (const auto& p : kept) rt.pending.erase(p.pod);
      auto c = d.changes(j, rt.tenant);
      changes.insert(changes.end(), c.begin(), c.end());
      add_unit(j, kNoIndex, kept, gang_grant, backfilled, extra_delay);
      if (job.kind == JobKind::kGang) acc_.record_deviation(jtted(job, d, *topo_));
    } else {
      for (const auto& p : d.pods) {
        auto g = quota_.static_quota_admit(rt.tenant, Demand{{rt.pod_type[p.pod], p.milli}});
        if (!g.pass) continue;
        quota_.commit(rt.tenant, g);
        rt.pending.erase(p.pod);
        PlacementDecision one;
        one.pods = {p};
        auto c = one.changes(j, rt.tenant);
        changes.insert(changes.end(), c.begin(), c.end());
        kept.push_back(p);
        add_unit(j, p.pod, {p}, g, backfilled, extra_delay);
      }
    }
    if (kept.empty()) return 0;
    apply_batch(changes);
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& p : kept) nodes.push_back(topo_->nodes[p.node].id);
    log_line({{"t", now_}, {"ev", "job_dispatch"}, {"job", job.job_id}, {"pods", kept.size()}, {"nodes", nodes},
              {"backfilled", backfilled}});
    if (rt.pending.empty()) {
      dequeue(j);
      if (jobs_[j].state == JobState::kQueued || jobs_[j].state == JobState::kPreempted) {
        jobs_[j].state = JobState::kScheduled;
      }
      if (rt.first_full_dispatch == kNever) {
        rt.first_full_dispatch = now_;
        const SimTime from = cfg_.wait_includes_requeue ? job.submit_time : rt.queued_since;
        acc_.record_wait(job, now_, from);
      }
    } else {
      requeue_entry(j);
    }
    return kept.size();
  }

  void preempt_unit(const UnitKey& k, PreemptionKind kind, JobIdx beneficiary) {
    auto it = running_.find(k);
    if (it == running_.end()) throw StateError("preempting a unit that is not running");
    RunningUnit u = std::move(it->second);
    running_.erase(it);
    quota_.release(u.tenant, u.grant);
    apply_batch(release_changes(u));
    auto& rt = runtime_[k.job];
    for (const auto& p : u.pods) rt.pending.insert(p.pod);
    ++rt.preemptions;
    ++preemptions_;
    rt.exempt_until = now_ + static_cast<SimTime>(cfg_.exempt_cycles) * cfg_.cycle_period;
    exempt_times_.insert(rt.exempt_until);
    log_line({{"t", now_}, {"ev", "preemption_executed"}, {"kind", to_string(kind)}, {"job", jobs_[k.job].job_id},
              {"pod", pod_label(k.pod)}, {"beneficiary", jobs_[beneficiary].job_id}});
    requeue(k.job, "preempted");
  }

  /// Puts a job with pending pods back into its tenant queue, keeping its
  /// submit time; past the requeue limit the job fails instead.
  void requeue(JobIdx j, const std::string& reason) {
    auto& rt = runtime_[j];
    if (jobs_[j].state == JobState::kFinished) throw StateError("requeue of a finished job");
    ++rt.requeues;
    ++requeues_;
    if (!requeue_allowed(rt.requeues, cfg_.requeue_limit)) {
      dequeue(j);
      // Release whatever the job still holds (non-gang pods).
      std::vector<UnitKey> held;
      for (const auto& [k, u] : running_) {
        if (k.job == j) held.push_back(k);
      }
      for (const auto& k : held) {
        RunningUnit u = std::move(running_.at(k));
        running_.erase(k);
        quota_.release(u.tenant, u.grant);
        apply_batch(release_changes(u));
      }
      jobs_[j].state = JobState::kFailed;
      rt.pending.clear();
      log_line({{"t", now_}, {"ev", "job_failed"}, {"job", jobs_[j].job_id}, {"reason", "requeue limit exceeded"}});
      return;
    }
    if (reason == "preempted" && rt.pending.size() == rt.pod_type.size()) jobs_[j].state = JobState::kPreempted;
    log_line({{"t", now_}, {"ev", "requeue"}, {"job", jobs_[j].job_id}, {"reason", reason}});
    requeue_entry(j);
    runtime_[j].queued_since = now_;
  }

  /// One scheduling cycle. Skipped (and not logged) when nothing changed
  /// since the previous one and no timer is due, since the outcome would be
  /// identical.
  bool run_cycle() {
    if (!has_queued()) return false;
    if (!dirty_ && now_ < next_trigger_) {
      if (next_trigger_ != kNever) schedule_cycle(next_trigger_);
      return false;
    }
    dirty_ = false;
    next_trigger_ = kNever;
    ++cycles_;
    const std::uint64_t gen_before = snap_.generation;
    const auto merged = merge_queues(queues_, cfg_.round_robin);
    std::size_t dispatched = 0;
    std::vector<QueueEntry> quota_blocked;

    PassParams params{cfg_.queue_policy, now_, cfg_.effective_backfill_timeout()};
    bool blocked_ahead = false;
    auto attempt = [&](const QueueEntry& e) {
      const JobIdx j = e.job;
      const auto& rt = runtime_[j];
      if (rt.pending.empty() || !rt.queued) return DispatchOutcome::kDispatched;
      const Demand demand = pending_demand(j);
      const auto grant = quota_.static_quota_admit(rt.tenant, demand);
      if (!grant.pass) {
        quota_blocked.push_back(e);
        return DispatchOutcome::kQuotaBlocked;
      }
      if (!dynamic_resource_admit(demand, snap_)) return DispatchOutcome::kResourceBlocked;
      const auto d = place_job(j, snap_);
      if (d.pods.empty() || (jobs_[j].kind == JobKind::kGang && !d.success)) {
        // Admitted but unplaceable (fragmentation): the job goes back to
        // its queue position.
        ++placement_failures_;
        log_line({{"t", now_}, {"ev", "placement_failed"}, {"job", jobs_[j].job_id}, {"reason", d.reason}});
        requeue(j, "placement failed");
        return DispatchOutcome::kResourceBlocked;
      }
      const bool bypass = blocked_ahead && cfg_.queue_policy == QueuePolicy::kBackfill;
      dispatched += commit_gang_or_pods(j, d, grant, bypass, 0);
      return runtime_[j].pending.empty() ? DispatchOutcome::kDispatched : DispatchOutcome::kResourceBlocked;
    };
    auto result = run_queue_pass(merged, params, [&](const QueueEntry& e) {
      const auto out = attempt(e);
      if (out == DispatchOutcome::kResourceBlocked) blocked_ahead = true;
      return out;
    });

    std::size_t plans = 0;
    // Backfill timeout: free the head by preempting backfilled jobs.
    if (result.blocked_head && cfg_.queue_policy == QueuePolicy::kBackfill) {
      const auto& head = *result.blocked_head;
      if (result.head_timed_out) {
        if (runtime_[head.job].queued && try_plan(PreemptionKind::kBackfillTimeout, head.job)) ++plans;
      } else {
        next_trigger_ = std::min(next_trigger_, head.submit + cfg_.effective_backfill_timeout());
      }
    }
    // Priority preemption for the first blocked job that has lower-priority
    // victims available.
    if (cfg_.priority_preemption && plans == 0) {
      int lowest = 0;
      bool any = false;
      for (const auto& [k, u] : running_) {
        lowest = any ? std::min(lowest, u.priority) : u.priority;
        any = true;
      }
      std::size_t tried = 0;
      for (const auto& e : result.resource_blocked) {
        if (!any || tried >= 8) break;
        if (e.priority <= lowest || !runtime_[e.job].queued) continue;
        ++tried;
        if (try_plan(PreemptionKind::kPriority, e.job)) {
          ++plans;
          break;
        }
      }
    }
    // Quota reclamation for the first lender blocked by its own loans.
    if (quota_.enabled()) {
      for (const auto& e : quota_blocked) {
        if (!runtime_[e.job].queued) continue;
        if (reclaim_need(e.job).empty()) continue;
        if (try_plan(PreemptionKind::kQuotaReclaim, e.job)) {
          ++plans;
          break;
        }
      }
    }
    // Exempt victims become available again later.
    while (!exempt_times_.empty() && *exempt_times_.begin() <= now_) exempt_times_.erase(exempt_times_.begin());
    if (!exempt_times_.empty() && (plans > 0 || !result.resource_blocked.empty() || !quota_blocked.empty())) {
      next_trigger_ = std::min(next_trigger_, *exempt_times_.begin());
    }

    log_line({{"t", now_}, {"ev", "schedule_cycle"}, {"queued", queued_count()}, {"dispatched", dispatched},
              {"plans", plans}});
    const bool changed = snap_.generation != gen_before;
    if (changed || plans > 0) dirty_ = true;
    if (has_queued()) {
      if (dirty_) {
        schedule_cycle(now_ + cfg_.cycle_period);
      } else if (next_trigger_ != kNever) {
        schedule_cycle(std::max(next_trigger_, now_ + cfg_.cycle_period));
      }
    }
    return changed;
  }

  Demand reclaim_need(JobIdx j) const {
    const auto& rt = runtime_[j];
    if (quota_.mode(rt.tenant) != QuotaMode::kShared) return {};
    Demand need;
    for (const auto& [t, m] : pending_demand(j)) {
      if (m <= quota_.own_free(rt.tenant, t)) continue;
      const Milli r = quota_.reclaim_needed(rt.tenant, t, m);
      if (r <= 0) return {};
      need[t] = r;
    }
    return need;
  }

  bool try_plan(PreemptionKind kind, JobIdx b) {
    auto candidates = victim_candidates(kind, b);
    if (candidates.empty()) return false;
    Demand need;
    if (kind == PreemptionKind::kQuotaReclaim) {
      need = reclaim_need(b);
    } else {
      need = unmet_demand(pending_demand(b), snap_.pool_free);
    }
    auto plan = build_preemption_plan(kind, b, jobs_[b].priority, need, candidates);
    if (!plan) return false;
    // Any remaining candidates, in victim order, extend the plan when
    // fragmentation keeps the beneficiary unplaceable.
    order_victims(candidates, need);
    return handle_preemption(*plan, candidates);
  }

  MetricsReport finish_report(SimTime end) {
    JobCounts counts;
    for (JobIdx j = 0; j < jobs_.size(); ++j) {
      const auto& rt = runtime_[j];
      if (!rt.arrived) continue;
      ++counts.submitted;
      switch (jobs_[j].state) {
        case JobState::kFinished: ++counts.finished; break;
        case JobState::kFailed: ++counts.failed; break;
        default:
          if (rt.first_full_dispatch == kNever) {
            ++counts.queued_at_end;
            acc_.record_censored_wait(jobs_[j], end);
          } else {
            ++counts.running_at_end;
          }
      }
    }
    counts.preemptions = preemptions_;
    counts.requeues = requeues_;
    counts.placement_failures = placement_failures_;
    auto report = finalize_report(acc_, start_, end, counts);
    report.provenance["config"] = sim_config_to_json(cfg_);
    return report;
  }
};

/// Convenience wrapper: run and optionally capture the event log.
inline MetricsReport run(const SimConfig& cfg, const ClusterTopology& topo, const Trace& trace,
                         std::ostream* event_log = nullptr) {
  Simulator sim(cfg, topo, trace);
  sim.set_event_log(event_log);
  return sim.run();
}

}  // namespace gcsim
