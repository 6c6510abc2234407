#pragma once

// Allocation, occupation, fragmentation, waiting-time and placement-deviation
// metrics; report assembly, CSV export and A/B comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gcsim/core.hpp"
#include "gcsim/rsch.hpp"
#include "gcsim/snapshot.hpp"
#include "gcsim/topology.hpp"
#include "gcsim/workload.hpp"

namespace gcsim {

inline Milli allocated_milli(const ResourceSnapshot& snap) {
  Milli m = 0;
  for (const auto& n : snap.nodes) m += n->used_total;
  return m;
}

inline Milli capacity_milli(const ClusterTopology& topo, bool healthy_only = false) {
  return gpus_to_milli(static_cast<std::int64_t>(healthy_only ? topo.total_healthy_devices() : topo.total_devices()));
}

/// Allocated GPUs over total GPUs; fractional shares count pro rata.
inline double gar(const ResourceSnapshot& snap, const ClusterTopology& topo, bool healthy_only = false) {
  const Milli cap = capacity_milli(topo, healthy_only);
  if (cap <= 0) throw InputError("gar: cluster has no GPUs");
  return static_cast<double>(allocated_milli(snap)) / static_cast<double>(cap);
}

/// Neither idle nor fully occupied. A device holding any share counts as
/// allocated.
inline bool node_fragmented(const Node& node, const NodeState& st) {
  return st.allocated_devices > 0 && st.allocated_devices < node.healthy_count();
}

inline double gfr(const ResourceSnapshot& snap, const ClusterTopology& topo) {
  if (topo.nodes.empty()) throw InputError("gfr: cluster has no nodes");
  std::size_t frag = 0;
  for (NodeIdx i = 0; i < topo.nodes.size(); ++i) {
    if (node_fragmented(topo.nodes[i], snap.node(i))) ++frag;
  }
  return static_cast<double>(frag) / static_cast<double>(topo.nodes.size());
}

/// (capacity - allocated) / capacity, defined for fragmented nodes only.
inline double fragmentation_degree(int capacity, int allocated) {
  if (capacity <= 0 || allocated <= 0 || allocated >= capacity) {
    throw StateError("fragmentation_degree: node is not fragmented");
  }
  return static_cast<double>(capacity - allocated) / static_cast<double>(capacity);
}

struct DeviationRecord {
  std::string job_id;
  std::size_t bucket = 0;
  int actual_nodes = 0;
  int optimal_nodes = 1;
  int actual_groups = 0;
  int optimal_groups = 1;

  double node_ratio() const { return static_cast<double>(actual_nodes) / optimal_nodes; }
  double group_ratio() const { return static_cast<double>(actual_groups) / optimal_groups; }
};

/// Placement deviation against the ceil-optimal node and group counts for
/// the job's pool.
inline DeviationRecord jtted(const Job& job, const PlacementDecision& d, const ClusterTopology& topo) {
  if (job.kind != JobKind::kGang) throw InputError("jtted: defined for gang jobs only");
  if (!d.success) throw InputError("jtted: placement did not succeed");
  const auto type = topo.find_gpu_type(job.pod_specs.front().gpu_type);
  if (!type) throw InputError("jtted: unknown gpu type");
  const Milli node_cap = gpus_to_milli(static_cast<std::int64_t>(topo.pool_node_capacity(*type)));
  const int max_group = std::max(1, topo.pool_max_group_nodes(*type));
  DeviationRecord r;
  r.job_id = job.job_id;
  r.bucket = bucket_index_for_gpus(job.total_gpus());
  r.optimal_nodes = static_cast<int>(std::max<Milli>(1, (job.total_milli() + node_cap - 1) / node_cap));
  r.optimal_groups = (r.optimal_nodes + max_group - 1) / max_group;
  std::set<NodeIdx> nodes;
  std::set<GroupIdx> groups;
  for (const auto& p : d.pods) {
    nodes.insert(p.node);
    groups.insert(topo.nodes[p.node].group);
  }
  r.actual_nodes = static_cast<int>(nodes.size());
  r.actual_groups = static_cast<int>(groups.size());
  return r;
}

struct WaitRecord {
  std::size_t bucket = 0;
  SimTime wait = 0;
};

struct SummaryStats {
  std::size_t count = 0;
  double mean = 0, median = 0, p95 = 0;
};

/// Linear interpolation between closest ranks.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

inline SummaryStats summarize(const std::vector<double>& v) {
  SummaryStats s;
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.median = percentile(v, 0.5);
  s.p95 = percentile(v, 0.95);
  return s;
}

/// Step-function integrals and samples owned by the engine.
class MetricsAccumulator {
 public:
  std::vector<std::pair<SimTime, double>> gar_series;
  std::vector<std::pair<SimTime, double>> gfr_series;
  double sor_numerator = 0;    // GPU-seconds allocated
  double sor_denominator = 0;  // GPU-seconds available
  double gfr_integral = 0;     // node-fraction-seconds
  std::vector<WaitRecord> waits;
  std::vector<WaitRecord> censored_waits;  // still queued at the end
  std::vector<DeviationRecord> deviations;

  /// Adds `interval` seconds at the given allocation level.
  void update_sor(SimTime interval, Milli allocated, Milli capacity) {
    if (interval < 0) throw InputError("update_sor: negative interval");
    sor_numerator += milli_to_gpus(allocated) * static_cast<double>(interval);
    sor_denominator += milli_to_gpus(capacity) * static_cast<double>(interval);
  }

  void update_sor(SimTime interval, const ResourceSnapshot& snap, const ClusterTopology& topo,
                  bool healthy_only = false) {
    update_sor(interval, allocated_milli(snap), capacity_milli(topo, healthy_only));
  }

  void sample(SimTime t, double gar_value, double gfr_value) {
    if (!gar_series.empty() && gar_series.back().first == t) {
      gar_series.back().second = gar_value;
      gfr_series.back().second = gfr_value;
      return;
    }
    gar_series.emplace_back(t, gar_value);
    gfr_series.emplace_back(t, gfr_value);
  }

  void add_gfr_time(SimTime interval, double gfr_value) { gfr_integral += gfr_value * static_cast<double>(interval); }

  void record_wait(const Job& job, SimTime dispatch_time, SimTime submit_time) {
    if (dispatch_time < submit_time) {
      throw InputError("record_wait: job '" + job.job_id + "' dispatched before submission");
    }
    waits.push_back({bucket_index_for_gpus(job.total_gpus()), dispatch_time - submit_time});
  }

  void record_censored_wait(const Job& job, SimTime end_time) {
    censored_waits.push_back({bucket_index_for_gpus(job.total_gpus()), std::max<SimTime>(0, end_time - job.submit_time)});
  }

  void record_deviation(DeviationRecord r) { deviations.push_back(std::move(r)); }

  double sor() const { return sor_denominator > 0 ? sor_numerator / sor_denominator : 0.0; }
};

/// Time-weighted mean of a step series over [series.front().first, end).
inline double time_weighted_mean(const std::vector<std::pair<SimTime, double>>& s, SimTime end) {
  if (s.empty() || end <= s.front().first) return 0.0;
  double area = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const SimTime until = i + 1 < s.size() ? std::min(s[i + 1].first, end) : end;
    if (until > s[i].first) area += s[i].second * static_cast<double>(until - s[i].first);
  }
  return area / static_cast<double>(end - s.front().first);
}

struct JobCounts {
  std::size_t submitted = 0, finished = 0, failed = 0, queued_at_end = 0, running_at_end = 0;
  std::size_t preemptions = 0, requeues = 0, placement_failures = 0;
};

struct MetricsReport {
  SimTime start = 0;
  SimTime end = 0;
  double gar_mean = 0;
  double gfr_mean = 0;
  double sor = 0;
  std::vector<std::pair<SimTime, double>> gar_series;
  std::vector<std::pair<SimTime, double>> gfr_series;
  std::vector<SummaryStats> jwtd;  // per bucket
  std::vector<std::size_t> jwtd_censored;
  std::vector<SummaryStats> censored_stats;
  struct Deviation {
    std::size_t count = 0;
    double node_ratio_mean = 0, group_ratio_mean = 0;
    double node_ratio_max = 0, group_ratio_max = 0;
  };
  std::vector<Deviation> jtted;  // per bucket
  std::vector<DeviationRecord> deviations;
  JobCounts jobs;
  nlohmann::json provenance = nlohmann::json::object();  // config and input digests
};

inline MetricsReport finalize_report(const MetricsAccumulator& acc, SimTime start, SimTime end, const JobCounts& jobs) {
  MetricsReport r;
  r.start = start;
  r.end = end;
  r.sor = acc.sor();
  r.gar_series = acc.gar_series;
  r.gfr_series = acc.gfr_series;
  r.gar_mean = time_weighted_mean(acc.gar_series, end);
  r.gfr_mean = time_weighted_mean(acc.gfr_series, end);
  const std::size_t nb = kBucketLabels.size();
  std::vector<std::vector<double>> waits(nb), censored(nb);
  for (const auto& w : acc.waits) waits[w.bucket].push_back(static_cast<double>(w.wait));
  for (const auto& w : acc.censored_waits) censored[w.bucket].push_back(static_cast<double>(w.wait));
  for (std::size_t b = 0; b < nb; ++b) {
    r.jwtd.push_back(summarize(waits[b]));
    r.jwtd_censored.push_back(censored[b].size());
    r.censored_stats.push_back(summarize(censored[b]));
  }
  r.jtted.assign(nb, {});
  for (const auto& d : acc.deviations) {
    auto& x = r.jtted[d.bucket];
    ++x.count;
    x.node_ratio_mean += d.node_ratio();
    x.group_ratio_mean += d.group_ratio();
    x.node_ratio_max = std::max(x.node_ratio_max, d.node_ratio());
    x.group_ratio_max = std::max(x.group_ratio_max, d.group_ratio());
  }
  for (auto& x : r.jtted) {
    if (x.count) {
      x.node_ratio_mean /= static_cast<double>(x.count);
      x.group_ratio_mean /= static_cast<double>(x.count);
    }
  }
  r.deviations = acc.deviations;
  r.jobs = jobs;
  return r;
}

/// Mean wait over the buckets at or above `min_bucket`, counting both
/// completed and censored waits (jobs never dispatched count up to the end).
inline double mean_wait_from_bucket(const MetricsReport& r, std::size_t min_bucket, bool include_censored = true) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t b = min_bucket; b < r.jwtd.size(); ++b) {
    sum += r.jwtd[b].mean * static_cast<double>(r.jwtd[b].count);
    n += r.jwtd[b].count;
    if (include_censored) {
      sum += r.censored_stats[b].mean * static_cast<double>(r.censored_stats[b].count);
      n += r.censored_stats[b].count;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Serialization ---------------------------------------------------------------

inline nlohmann::json report_to_json(const MetricsReport& r) {
  using nlohmann::json;
  json jwtd = json::object(), jtted = json::object();
  for (std::size_t b = 0; b < kBucketLabels.size(); ++b) {
    const std::string label(kBucketLabels[b]);
    const auto& s = r.jwtd[b];
    jwtd[label] = {{"count", s.count},
                   {"mean", s.mean},
                   {"median", s.median},
                   {"p95", s.p95},
                   {"censored", r.jwtd_censored[b]},
                   {"censored_mean", r.censored_stats[b].mean}};
    const auto& d = r.jtted[b];
    jtted[label] = {{"count", d.count},
                    {"node_ratio_mean", d.node_ratio_mean},
                    {"group_ratio_mean", d.group_ratio_mean},
                    {"node_ratio_max", d.node_ratio_max},
                    {"group_ratio_max", d.group_ratio_max}};
  }
  json j;
  j["schema"] = "gcsim.report/1";
  j["start"] = r.start;
  j["end"] = r.end;
  j["sor"] = r.sor;
  j["gar_mean"] = r.gar_mean;
  j["gfr_mean"] = r.gfr_mean;
  j["gar_samples"] = r.gar_series.size();
  j["jwtd"] = jwtd;
  j["jtted"] = jtted;
  j["jobs"] = {{"submitted", r.jobs.submitted},     {"finished", r.jobs.finished},
               {"failed", r.jobs.failed},           {"queued_at_end", r.jobs.queued_at_end},
               {"running_at_end", r.jobs.running_at_end}, {"preemptions", r.jobs.preemptions},
               {"requeues", r.jobs.requeues},       {"placement_failures", r.jobs.placement_failures}};
  j["provenance"] = r.provenance;
  return j;
}

/// Inverse of report_to_json for the scalar and per-bucket parts; series and
/// individual deviation records are not stored in the JSON form.
inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    if (j.value("schema", std::string()) != "gcsim.report/1") throw InputError("report: unknown schema");
    r.start = j.at("start").get<SimTime>();
    r.end = j.at("end").get<SimTime>();
    r.sor = j.at("sor").get<double>();
    r.gar_mean = j.at("gar_mean").get<double>();
    r.gfr_mean = j.at("gfr_mean").get<double>();
    for (const auto& label : kBucketLabels) {
      const auto& w = j.at("jwtd").at(std::string(label));
      SummaryStats s;
      s.count = w.at("count").get<std::size_t>();
      s.mean = w.at("mean").get<double>();
      s.median = w.at("median").get<double>();
      s.p95 = w.at("p95").get<double>();
      r.jwtd.push_back(s);
      r.jwtd_censored.push_back(w.at("censored").get<std::size_t>());
      SummaryStats c;
      c.count = r.jwtd_censored.back();
      c.mean = w.at("censored_mean").get<double>();
      r.censored_stats.push_back(c);
      const auto& d = j.at("jtted").at(std::string(label));
      MetricsReport::Deviation dev;
      dev.count = d.at("count").get<std::size_t>();
      dev.node_ratio_mean = d.at("node_ratio_mean").get<double>();
      dev.group_ratio_mean = d.at("group_ratio_mean").get<double>();
      dev.node_ratio_max = d.at("node_ratio_max").get<double>();
      dev.group_ratio_max = d.at("group_ratio_max").get<double>();
      r.jtted.push_back(dev);
    }
    const auto& jc = j.at("jobs");
    r.jobs.submitted = jc.at("submitted").get<std::size_t>();
    r.jobs.finished = jc.at("finished").get<std::size_t>();
    r.jobs.failed = jc.at("failed").get<std::size_t>();
    r.jobs.queued_at_end = jc.at("queued_at_end").get<std::size_t>();
    r.jobs.running_at_end = jc.at("running_at_end").get<std::size_t>();
    r.jobs.preemptions = jc.at("preemptions").get<std::size_t>();
    r.jobs.requeues = jc.at("requeues").get<std::size_t>();
    r.jobs.placement_failures = jc.at("placement_failures").get<std::size_t>();
    r.provenance = j.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("report: malformed: ") + e.what());
  }
  return r;
}

inline void write_series_csv(std::ostream& out, const std::vector<std::pair<SimTime, double>>& s) {
  out << "time,value\n";
  char buf[64];
  for (const auto& [t, v] : s) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out << t << ',' << buf << '\n';
  }
}

inline void write_jwtd_csv(std::ostream& out, const MetricsReport& r) {
  out << "bucket,mean,median,p95\n";
  char buf[128];
  for (std::size_t b = 0; b < r.jwtd.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", r.jwtd[b].mean, r.jwtd[b].median, r.jwtd[b].p95);
    out << kBucketLabels[b] << ',' << buf << '\n';
  }
}

inline void write_jtted_csv(std::ostream& out, const MetricsReport& r) {
  out << "bucket,count,node_ratio_mean,group_ratio_mean\n";
  char buf[128];
  for (std::size_t b = 0; b < r.jtted.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f", r.jtted[b].count, r.jtted[b].node_ratio_mean,
                  r.jtted[b].group_ratio_mean);
    out << kBucketLabels[b] << ',' << buf << '\n';
  }
}

/// Plain-text table for terminals.
inline std::string report_table(const MetricsReport& r) {
  std::ostringstream o;
  char buf[256];
  std::snprintf(buf, sizeof buf, "SOR %.4f   GAR(mean) %.4f   GFR(mean) %.4f\n", r.sor, r.gar_mean, r.gfr_mean);
  o << buf;
  o << "bucket       jobs    wait_mean  wait_median   wait_p95  censored  node_dev  group_dev\n";
  for (std::size_t b = 0; b < r.jwtd.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%-10s %6zu %12.1f %12.1f %10.1f %9zu %9.3f %10.3f\n",
                  std::string(kBucketLabels[b]).c_str(), r.jwtd[b].count, r.jwtd[b].mean, r.jwtd[b].median,
                  r.jwtd[b].p95, r.jwtd_censored[b], r.jtted[b].node_ratio_mean, r.jtted[b].group_ratio_mean);
    o << buf;
  }
  std::snprintf(buf, sizeof buf, "jobs: submitted %zu finished %zu failed %zu queued %zu running %zu preemptions %zu\n",
                r.jobs.submitted, r.jobs.finished, r.jobs.failed, r.jobs.queued_at_end, r.jobs.running_at_end,
                r.jobs.preemptions);
  o << buf;
  return o.str();
}

// Comparison ------------------------------------------------------------------

namespace detail {

inline nlohmann::json delta(double a, double b) {
  nlohmann::json d = {{"a", a}, {"b", b}, {"abs", b - a}};
  d["rel"] = a != 0 ? nlohmann::json((b - a) / a) : nlohmann::json(nullptr);
  return d;
}

}  // namespace detail

/// Per-metric deltas of B relative to A. Both reports must come from the
/// same trace and topology.
inline nlohmann::json compare_reports(const nlohmann::json& a, const nlohmann::json& b) {
  for (const char* key : {"trace_digest", "topology_digest"}) {
    const auto pa = a.value("provenance", nlohmann::json::object());
    const auto pb = b.value("provenance", nlohmann::json::object());
    if (pa.value(key, std::string()) != pb.value(key, std::string())) {
      throw InputError(std::string("compare: reports differ in ") + key);
    }
  }
  nlohmann::json out;
  try {
    out["sor"] = detail::delta(a.at("sor").get<double>(), b.at("sor").get<double>());
    out["gar_mean"] = detail::delta(a.at("gar_mean").get<double>(), b.at("gar_mean").get<double>());
    out["gfr_mean"] = detail::delta(a.at("gfr_mean").get<double>(), b.at("gfr_mean").get<double>());
    nlohmann::json jw = nlohmann::json::object(), jt = nlohmann::json::object();
    for (const auto& label : kBucketLabels) {
      const std::string l(label);
      jw[l] = detail::delta(a.at("jwtd").at(l).at("mean").get<double>(), b.at("jwtd").at(l).at("mean").get<double>());
      jt[l] = {{"node_ratio_mean", detail::delta(a.at("jtted").at(l).at("node_ratio_mean").get<double>(),
                                                 b.at("jtted").at(l).at("node_ratio_mean").get<double>())},
               {"group_ratio_mean", detail::delta(a.at("jtted").at(l).at("group_ratio_mean").get<double>(),
                                                  b.at("jtted").at(l).at("group_ratio_mean").get<double>())}};
    }
    out["jwtd_mean"] = jw;
    out["jtted"] = jt;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("compare: malformed report: ") + e.what());
  }
  return out;
}

inline std::string compare_table(const nlohmann::json& cmp) {
  std::ostringstream o;
  char buf[256];
  auto row = [&](const std::string& name, const nlohmann::json& d) {
    const double rel = d["rel"].is_null() ? 0.0 : d["rel"].get<double>() * 100.0;
    std::snprintf(buf, sizeof buf, "%-22s %14.6f %14.6f %14.6f %9.2f%%\n", name.c_str(), d["a"].get<double>(),
                  d["b"].get<double>(), d["abs"].get<double>(), rel);
    o << buf;
  };
  o << "metric                              A              B          delta       rel\n";
  row("sor", cmp["sor"]);
  row("gar_mean", cmp["gar_mean"]);
  row("gfr_mean", cmp["gfr_mean"]);
  for (const auto& label : kBucketLabels) row("jwtd_mean " + std::string(label), cmp["jwtd_mean"][std::string(label)]);
  for (const auto& label : kBucketLabels) {
    row("group_dev " + std::string(label), cmp["jtted"][std::string(label)]["group_ratio_mean"]);
  }
  return o.str();
}

}  // namespace gcsim
