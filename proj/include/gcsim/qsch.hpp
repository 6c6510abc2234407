#pragma once

// Queue-side scheduling: tenant queues and their ordering, the resource
// readiness check, queueing policies, and preemption planning.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gcsim/core.hpp"
#include "gcsim/snapshot.hpp"

namespace gcsim {

using Demand = std::map<GpuTypeIdx, Milli>;

inline Milli demand_total(const Demand& d) {
  Milli m = 0;
  for (const auto& [t, v] : d) m += v;
  return m;
}

struct QueueEntry {
  JobIdx job = 0;
  std::string job_id;
  TenantIdx tenant = 0;
  int priority = 0;
  SimTime submit = 0;
  Demand demand;
};

/// Queue order: priority desc, submit asc, total demand asc, job id asc.
inline bool queue_before(const QueueEntry& a, const QueueEntry& b) {
  if (a.priority != b.priority) return a.priority > b.priority;
  if (a.submit != b.submit) return a.submit < b.submit;
  const Milli da = demand_total(a.demand), db = demand_total(b.demand);
  if (da != db) return da < db;
  return a.job_id < b.job_id;
}

class TenantQueue {
 public:
  TenantQueue() = default;
  explicit TenantQueue(std::string tenant_id) : tenant_id_(std::move(tenant_id)) {}

  const std::string& tenant_id() const { return tenant_id_; }
  const std::vector<QueueEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  void push(QueueEntry e) {
    auto pos = std::upper_bound(entries_.begin(), entries_.end(), e, queue_before);
    entries_.insert(pos, std::move(e));
  }

  bool remove(JobIdx job) {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const QueueEntry& e) { return e.job == job; });
    if (it == entries_.end()) return false;
    entries_.erase(it);
    return true;
  }

  bool contains(JobIdx job) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const QueueEntry& e) { return e.job == job; });
  }

 private:
  std::string tenant_id_;
  std::vector<QueueEntry> entries_;
};

/// Cross-tenant order. By default the per-tenant key is applied globally;
/// round robin takes one job per tenant per turn, tenants in index order.
inline std::vector<QueueEntry> merge_queues(const std::vector<TenantQueue>& queues, bool round_robin = false) {
  std::vector<QueueEntry> out;
  if (!round_robin) {
    for (const auto& q : queues) out.insert(out.end(), q.entries().begin(), q.entries().end());
    std::stable_sort(out.begin(), out.end(), queue_before);
    return out;
  }
  std::size_t depth = 0;
  bool more = true;
  while (more) {
    more = false;
    for (const auto& q : queues) {
      if (depth < q.size()) {
        out.push_back(q.entries()[depth]);
        more = true;
      }
    }
    ++depth;
  }
  return out;
}

struct AdmissionDecision {
  std::string job_id;
  bool static_pass = false;
  bool dynamic_pass = false;
  std::string reason;

  bool admitted() const { return static_pass && dynamic_pass; }
};

/// Resource readiness: every requested pool has at least the demanded free
/// healthy capacity at the same time. Capacity only, not a placement.
inline bool dynamic_resource_admit(const Demand& demand, const std::vector<Milli>& pool_free) {
  for (const auto& [t, need] : demand) {
    if (need <= 0) continue;
    if (t >= pool_free.size() || pool_free[t] < need) return false;
  }
  return true;
}

inline bool dynamic_resource_admit(const Demand& demand, const ResourceSnapshot& snap) {
  return dynamic_resource_admit(demand, snap.pool_free);
}

enum class QueuePolicy { kStrictFifo, kBestEffort, kBackfill };

inline const char* to_string(QueuePolicy p) {
  switch (p) {
    case QueuePolicy::kStrictFifo: return "strict-fifo";
    case QueuePolicy::kBestEffort: return "best-effort";
    case QueuePolicy::kBackfill: return "backfill";
  }
  return "strict-fifo";
}

inline std::optional<QueuePolicy> parse_queue_policy(const std::string& s) {
  if (s == "strict-fifo" || s == "strict_fifo" || s == "strict") return QueuePolicy::kStrictFifo;
  if (s == "best-effort" || s == "best_effort") return QueuePolicy::kBestEffort;
  if (s == "backfill") return QueuePolicy::kBackfill;
  return std::nullopt;
}

enum class DispatchOutcome { kDispatched, kQuotaBlocked, kResourceBlocked };

struct PassResult {
  struct Dispatched {
    JobIdx job = 0;
    bool backfilled = false;
  };
  std::vector<Dispatched> dispatched;
  std::optional<QueueEntry> blocked_head;  // first job blocked by resources
  bool head_timed_out = false;
  std::vector<QueueEntry> resource_blocked;  // in queue order
};

struct PassParams {
  QueuePolicy policy = QueuePolicy::kBackfill;
  SimTime now = 0;
  SimTime backfill_timeout = 100;
};

/// One pass over the merged queue. `try_dispatch` attempts admission and
/// placement for a job and reports the outcome. A quota-blocked job never
/// blocks the jobs behind it. Strict FIFO stops at the first resource
/// failure; the bypassing policies continue. Under backfill, jobs dispatched
/// past a blocked head are tagged, and the head is flagged once it has
/// waited `backfill_timeout`.
inline PassResult run_queue_pass(const std::vector<QueueEntry>& merged, const PassParams& params,
                                 const std::function<DispatchOutcome(const QueueEntry&)>& try_dispatch) {
  PassResult r;
  for (const auto& e : merged) {
    switch (try_dispatch(e)) {
      case DispatchOutcome::kDispatched:
        r.dispatched.push_back({e.job, r.blocked_head.has_value() && params.policy == QueuePolicy::kBackfill});
        break;
      case DispatchOutcome::kQuotaBlocked:
        break;
      case DispatchOutcome::kResourceBlocked:
        r.resource_blocked.push_back(e);
        if (!r.blocked_head) {
          r.blocked_head = e;
          r.head_timed_out =
              params.policy == QueuePolicy::kBackfill && params.now - e.submit >= params.backfill_timeout;
        }
        if (params.policy == QueuePolicy::kStrictFifo) return r;
        break;
    }
  }
  return r;
}

// Preemption ------------------------------------------------------------------

enum class PreemptionKind { kPriority, kQuotaReclaim, kBackfillTimeout };

inline const char* to_string(PreemptionKind k) {
  switch (k) {
    case PreemptionKind::kPriority: return "priority";
    case PreemptionKind::kQuotaReclaim: return "quota_reclaim";
    case PreemptionKind::kBackfillTimeout: return "backfill_timeout";
  }
  return "priority";
}

/// A running unit that could be preempted: a whole gang job, or one pod of
/// a non-gang job. `freed` is what preempting it contributes toward the
/// plan's need (GPU capacity, or reclaimed quota for quota_reclaim).
struct VictimCandidate {
  JobIdx job = 0;
  std::optional<std::uint32_t> pod;  // nullopt: the whole job
  std::string id;
  int priority = 0;
  SimTime start = 0;
  Demand freed;
};

struct PreemptionPlan {
  PreemptionKind kind = PreemptionKind::kPriority;
  JobIdx beneficiary = 0;
  std::vector<VictimCandidate> victims;
  Demand freed;
};

namespace detail {

inline bool covers_need(const Demand& freed, const Demand& need) {
  for (const auto& [t, m] : need) {
    if (m <= 0) continue;
    auto it = freed.find(t);
    if (it == freed.end() || it->second < m) return false;
  }
  return true;
}

inline Milli useful(const Demand& freed, const Demand& need) {
  Milli s = 0;
  for (const auto& [t, m] : freed) {
    if (need.count(t)) s += m;
  }
  return s;
}

inline void add_demand(Demand& into, const Demand& d) {
  for (const auto& [t, m] : d) into[t] += m;
}

// Exhaustive search is used up to this many eligible victims.
inline constexpr std::size_t kExactVictimLimit = 16;

}  // namespace detail

/// Preferred victims first: lowest priority, latest start, smallest surplus
/// over the need, then id.
inline void order_victims(std::vector<VictimCandidate>& v, const Demand& need) {
  const Milli need_total = demand_total(need);
  std::stable_sort(v.begin(), v.end(), [&](const VictimCandidate& a, const VictimCandidate& b) {
    if (a.priority != b.priority) return a.priority < b.priority;
    if (a.start != b.start) return a.start > b.start;
    const Milli sa = detail::useful(a.freed, need) - need_total, sb = detail::useful(b.freed, need) - need_total;
    const Milli aa = sa < 0 ? -sa : sa, ab = sb < 0 ? -sb : sb;
    if (aa != ab) return aa < ab;
    return a.id < b.id;
  });
}

/// Picks the smallest victim set covering `need` (per GPU type); among equal
/// counts the lowest aggregate priority, then the earliest in victim order.
/// Priority plans only consider victims strictly below the beneficiary's
/// priority. Returns nullopt if all eligible victims together fall short.
inline std::optional<PreemptionPlan> build_preemption_plan(PreemptionKind kind, JobIdx beneficiary,
                                                           int beneficiary_priority, const Demand& need,
                                                           std::vector<VictimCandidate> candidates) {
  std::vector<VictimCandidate> eligible;
  for (auto& c : candidates) {
    if (kind == PreemptionKind::kPriority && c.priority >= beneficiary_priority) continue;
    if (detail::useful(c.freed, need) <= 0) continue;
    eligible.push_back(std::move(c));
  }
  order_victims(eligible, need);
  Demand all;
  for (const auto& c : eligible) detail::add_demand(all, c.freed);
  if (!detail::covers_need(all, need)) return std::nullopt;

  std::vector<std::size_t> chosen;
  if (demand_total(need) <= 0) {
    // nothing to free
  } else if (eligible.size() <= detail::kExactVictimLimit) {
    const std::size_t n = eligible.size();
    for (std::size_t k = 1; k <= n && chosen.empty(); ++k) {
      std::vector<std::size_t> idx(k);
      for (std::size_t i = 0; i < k; ++i) idx[i] = i;
      long best_prio = 0;
      while (true) {
        Demand freed;
        long prio = 0;
        for (auto i : idx) {
          detail::add_demand(freed, eligible[i].freed);
          prio += eligible[i].priority;
        }
        if (detail::covers_need(freed, need) && (chosen.empty() || prio < best_prio)) {
          chosen = idx;
          best_prio = prio;
        }
        std::size_t i = k;
        while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
        if (i == 0) break;
        ++idx[i - 1];
        for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
      }
    }
  } else {
    // Greedy in victim order, then drop any victim the rest can do without,
    // least preferred first.
    Demand freed;
    for (std::size_t i = 0; i < eligible.size() && !detail::covers_need(freed, need); ++i) {
      chosen.push_back(i);
      detail::add_demand(freed, eligible[i].freed);
    }
    for (std::size_t pos = chosen.size(); pos-- > 0;) {
      Demand without;
      for (std::size_t j = 0; j < chosen.size(); ++j) {
        if (j != pos) detail::add_demand(without, eligible[chosen[j]].freed);
      }
      if (detail::covers_need(without, need)) chosen.erase(chosen.begin() + static_cast<std::ptrdiff_t>(pos));
    }
  }

  PreemptionPlan plan;
  plan.kind = kind;
  plan.beneficiary = beneficiary;
  for (auto i : chosen) {
    detail::add_demand(plan.freed, eligible[i].freed);
    plan.victims.push_back(eligible[i]);
  }
  return plan;
}

/// Unmet demand: what `demand` needs beyond the currently free pool capacity.
inline Demand unmet_demand(const Demand& demand, const std::vector<Milli>& pool_free) {
  Demand out;
  for (const auto& [t, m] : demand) {
    const Milli free = t < pool_free.size() ? pool_free[t] : 0;
    if (m > free) out[t] = m - free;
  }
  return out;
}

// Capacity-only selection -----------------------------------------------------

struct CandidateSelection {
  std::vector<JobIdx> dispatch;
  std::vector<JobIdx> backfilled;
  std::optional<PreemptionPlan> plan;
};

/// Queue policy applied with dynamic admission alone: each admitted job
/// consumes its demand from a working copy of the pool capacity. Under
/// backfill, a head that has waited `backfill_timeout` yields a plan over
/// `backfilled_running`.
inline CandidateSelection select_candidates(const std::vector<TenantQueue>& queues, const ResourceSnapshot& snap,
                                            QueuePolicy policy, SimTime backfill_timeout, SimTime now,
                                            const std::vector<VictimCandidate>& backfilled_running = {},
                                            bool round_robin = false) {
  CandidateSelection out;
  auto pool = snap.pool_free;
  const auto merged = merge_queues(queues, round_robin);
  PassParams params{policy, now, backfill_timeout};
  auto r = run_queue_pass(merged, params, [&](const QueueEntry& e) {
    if (!dynamic_resource_admit(e.demand, pool)) return DispatchOutcome::kResourceBlocked;
    for (const auto& [t, m] : e.demand) pool[t] -= m;
    return DispatchOutcome::kDispatched;
  });
  for (const auto& d : r.dispatched) {
    out.dispatch.push_back(d.job);
    if (d.backfilled) out.backfilled.push_back(d.job);
  }
  if (r.blocked_head && r.head_timed_out) {
    out.plan = build_preemption_plan(PreemptionKind::kBackfillTimeout, r.blocked_head->job,
                                     r.blocked_head->priority, unmet_demand(r.blocked_head->demand, pool),
                                     backfilled_running);
  }
  return out;
}

/// Requeue bookkeeping: whether a job may re-enter its queue after its
/// `count`-th requeue. No limit by default.
inline bool requeue_allowed(int count, std::optional<int> limit) { return !limit || count <= *limit; }

}  // namespace gcsim
