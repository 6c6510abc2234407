#pragma once

// Jobs, traces (JSON-lines), size buckets and the synthetic trace generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gcsim/core.hpp"

namespace gcsim {

enum class JobKind { kGang, kNonGang };

/// Lifecycle as seen by the engine. kFailed is reached only through an
/// explicit requeue limit.
enum class JobState { kQueued, kAdmitted, kScheduled, kRunning, kFinished, kPreempted, kFailed };

inline const char* to_string(JobKind k) { return k == JobKind::kGang ? "gang" : "non_gang"; }

inline const char* to_string(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kAdmitted: return "admitted";
    case JobState::kScheduled: return "scheduled";
    case JobState::kRunning: return "running";
    case JobState::kFinished: return "finished";
    case JobState::kPreempted: return "preempted";
    case JobState::kFailed: return "failed";
  }
  return "queued";
}

/// `count` identical pods, each wanting `milli` of one GPU model. Pods of
/// one GPU or more take whole devices; smaller pods share a device.
struct PodSpec {
  std::string gpu_type;
  Milli milli = kMilliPerGpu;
  int count = 1;

  friend bool operator==(const PodSpec&, const PodSpec&) = default;
};

struct Job {
  std::string job_id;
  std::string tenant_id;
  int priority = 1;
  JobKind kind = JobKind::kGang;
  std::vector<PodSpec> pod_specs;
  SimTime submit_time = 0;
  SimTime duration = 1;
  bool needs_hbd = false;
  std::string task = "training";
  JobState state = JobState::kQueued;

  Milli total_milli() const {
    Milli m = 0;
    for (const auto& p : pod_specs) m += p.milli * p.count;
    return m;
  }

  double total_gpus() const { return milli_to_gpus(total_milli()); }

  int pod_count() const {
    int n = 0;
    for (const auto& p : pod_specs) n += p.count;
    return n;
  }

  /// Pod i of the flattened pod list.
  const PodSpec& pod_spec(std::uint32_t i) const {
    for (const auto& p : pod_specs) {
      if (i < static_cast<std::uint32_t>(p.count)) return p;
      i -= static_cast<std::uint32_t>(p.count);
    }
    throw StateError("job '" + job_id + "' has no pod " + std::to_string(i));
  }

  friend bool operator==(const Job&, const Job&) = default;
};

struct Trace {
  std::vector<Job> jobs;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::string> warnings;
};

// Size buckets ---------------------------------------------------------------

inline constexpr std::array<int, 6> kBucketLowerBounds = {1, 8, 64, 256, 1024, 2048};
inline constexpr std::array<std::string_view, 6> kBucketLabels = {
    "1-7", "8-63", "64-255", "256-1023", "1024-2047", ">=2048"};

inline std::size_t bucket_index_for_gpus(double gpus) {
  std::size_t b = 0;
  for (std::size_t i = 1; i < kBucketLowerBounds.size(); ++i) {
    if (gpus >= kBucketLowerBounds[i]) b = i;
  }
  return b;
}

inline std::string job_size_bucket(const Job& job) {
  return std::string(kBucketLabels[bucket_index_for_gpus(job.total_gpus())]);
}

// Trace I/O -------------------------------------------------------------------

inline nlohmann::json job_to_json(const Job& job) {
  nlohmann::json pods = nlohmann::json::array();
  for (const auto& p : job.pod_specs) {
    nlohmann::json jp = {{"gpu_type", p.gpu_type}, {"pods", p.count}};
    if (p.milli % kMilliPerGpu == 0) {
      jp["gpus_per_pod"] = p.milli / kMilliPerGpu;
    } else {
      jp["gpus_per_pod"] = milli_to_gpus(p.milli);
    }
    pods.push_back(std::move(jp));
  }
  return {{"v", 1},
          {"job_id", job.job_id},
          {"tenant_id", job.tenant_id},
          {"priority", job.priority},
          {"kind", to_string(job.kind)},
          {"pod_specs", pods},
          {"submit_time", job.submit_time},
          {"duration", job.duration},
          {"needs_hbd", job.needs_hbd},
          {"task", job.task},
          {"state", to_string(job.state)}};
}

inline Job job_from_json(const nlohmann::json& j) {
  Job job;
  job.job_id = j.at("job_id").get<std::string>();
  try {
    job.tenant_id = j.at("tenant_id").get<std::string>();
    job.priority = j.value("priority", 1);
    const auto kind = j.value("kind", std::string("gang"));
    if (kind == "gang") {
      job.kind = JobKind::kGang;
    } else if (kind == "non_gang") {
      job.kind = JobKind::kNonGang;
    } else {
      throw InputError("unknown kind '" + kind + "'");
    }
    for (const auto& jp : j.at("pod_specs")) {
      PodSpec p;
      p.gpu_type = jp.at("gpu_type").get<std::string>();
      const double gpus = jp.at("gpus_per_pod").get<double>();
      p.milli = gpus_to_milli(gpus);
      p.count = jp.value("pods", 1);
      if (p.milli <= 0) throw InputError("gpus_per_pod must be positive");
      if (p.milli > kMilliPerGpu && p.milli % kMilliPerGpu != 0) {
        throw InputError("gpus_per_pod above one GPU must be a whole number");
      }
      if (p.count <= 0) throw InputError("pods must be positive");
      job.pod_specs.push_back(std::move(p));
    }
    if (job.pod_specs.empty()) throw InputError("pod_specs is empty");
    job.submit_time = j.at("submit_time").get<SimTime>();
    job.duration = j.at("duration").get<SimTime>();
    job.needs_hbd = j.value("needs_hbd", false);
    job.task = j.value("task", std::string(job.kind == JobKind::kGang ? "training" : "inference"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("job '" + job.job_id + "': " + e.what());
  } catch (const InputError& e) {
    throw InputError("job '" + job.job_id + "': " + e.what());
  }
  if (job.submit_time < 0) throw InputError("job '" + job.job_id + "': negative submit_time");
  if (job.duration < 0) throw InputError("job '" + job.job_id + "': negative duration");
  if (job.duration == 0) throw InputError("job '" + job.job_id + "': duration must be > 0");
  return job;
}

/// Reads JSON-lines job records. Blank lines are skipped. Records are
/// stable-sorted by submit_time; a warning is recorded if that reordered
/// anything.
inline Trace parse_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("trace line " + std::to_string(lineno) + ": malformed record: " + e.what());
    }
    if (!j.is_object() || !j.contains("job_id")) {
      throw InputError("trace line " + std::to_string(lineno) + ": malformed record (no job_id)");
    }
    trace.jobs.push_back(job_from_json(j));
  }
  const bool sorted = std::is_sorted(trace.jobs.begin(), trace.jobs.end(),
                                     [](const Job& a, const Job& b) { return a.submit_time < b.submit_time; });
  if (!sorted) {
    std::stable_sort(trace.jobs.begin(), trace.jobs.end(),
                     [](const Job& a, const Job& b) { return a.submit_time < b.submit_time; });
    trace.warnings.push_back("trace records were out of submit_time order and have been sorted");
  }
  return trace;
}

inline Trace parse_trace(const std::string& text) {
  std::istringstream in(text);
  return parse_trace(in);
}

inline Trace load_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trace file '" + path + "'");
  return parse_trace(in);
}

inline void write_trace(std::ostream& out, const Trace& trace) {
  for (const auto& job : trace.jobs) out << job_to_json(job).dump() << '\n';
}

// Generator ------------------------------------------------------------------

struct SizeClass {
  int gpus = 1;
  double weight = 0.0;
  double mean_duration_s = 3600.0;
};

struct GpuTypeShare {
  std::string gpu_type;
  double weight = 1.0;
};

struct GeneratorParams {
  int job_count = 10000;
  std::uint64_t seed = 42;
  int tenant_count = 4;
  double arrival_rate_per_hour = 60.0;
  /// Small sizes dominate by count; 256+ sizes carry most of the GPU time.
  std::vector<SizeClass> sizes = {
      {1, 0.55, 3600.0},    {2, 0.20, 3600.0},     {4, 0.17, 3600.0},
      {8, 0.030, 14400.0},  {16, 0.015, 14400.0},  {32, 0.010, 14400.0},
      {64, 0.008, 14400.0}, {128, 0.005, 14400.0}, {256, 0.006, 43200.0},
      {512, 0.003, 43200.0}, {1024, 0.002, 43200.0}, {2048, 0.001, 43200.0}};
  double duration_sigma = 0.8;  // log-normal shape
  std::vector<GpuTypeShare> gpu_types = {{"L", 1.0}};
  int gpus_per_node = 8;
  /// Task mix among sub-node jobs; the remainder is gang training.
  double small_inference_fraction = 0.2;
  double small_debug_fraction = 0.3;
  double debug_duration_scale = 0.25;
  /// 1 = everything at one priority; 3 = debug 0 < training 1 < inference 2.
  int priority_levels = 3;
  /// Fraction of node-sized-or-larger jobs generated as non-gang inference
  /// services of 1, 2 or 4 GPU replicas instead of gang training.
  double service_fraction = 0.0;
  /// Fraction of gang jobs of >= 64 GPUs that demand a single HBD.
  double hbd_fraction = 0.0;
  /// Reject parameter sets whose expected mix misses the reference shape
  /// (>90% of jobs under 8 GPUs and >50% of GPU time in 256+ GPU jobs).
  bool require_workload_shape = true;
};

struct WorkloadShape {
  double small_job_fraction = 0.0;      // jobs with < 8 GPUs
  double large_gpu_time_share = 0.0;    // GPU time in jobs with >= 256 GPUs
};

/// Expected shape of the size mixture, computed from the parameters alone.
inline WorkloadShape expected_workload_shape(const GeneratorParams& p) {
  double w_total = 0, w_small = 0, t_total = 0, t_large = 0;
  const double small_scale = (1.0 - p.small_debug_fraction) + p.small_debug_fraction * p.debug_duration_scale;
  for (const auto& s : p.sizes) {
    w_total += s.weight;
    const double scale = s.gpus < p.gpus_per_node ? small_scale : 1.0;
    const double t = s.weight * s.gpus * s.mean_duration_s * scale;
    t_total += t;
    if (s.gpus < 8) w_small += s.weight;
    if (s.gpus >= 256) t_large += t;
  }
  WorkloadShape shape;
  if (w_total > 0) shape.small_job_fraction = w_small / w_total;
  if (t_total > 0) shape.large_gpu_time_share = t_large / t_total;
  return shape;
}

/// Measured shape of a concrete trace.
inline WorkloadShape measure_workload_shape(const Trace& trace) {
  WorkloadShape shape;
  if (trace.jobs.empty()) return shape;
  double small = 0, t_total = 0, t_large = 0;
  for (const auto& j : trace.jobs) {
    const double g = j.total_gpus();
    if (g < 8) small += 1;
    const double t = g * static_cast<double>(j.duration);
    t_total += t;
    if (g >= 256) t_large += t;
  }
  shape.small_job_fraction = small / static_cast<double>(trace.jobs.size());
  shape.large_gpu_time_share = t_total > 0 ? t_large / t_total : 0.0;
  return shape;
}

inline nlohmann::json generator_params_to_json(const GeneratorParams& p) {
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& s : p.sizes) {
    sizes.push_back({{"gpus", s.gpus}, {"weight", s.weight}, {"mean_duration_s", s.mean_duration_s}});
  }
  nlohmann::json types = nlohmann::json::array();
  for (const auto& t : p.gpu_types) types.push_back({{"gpu_type", t.gpu_type}, {"weight", t.weight}});
  return {{"job_count", p.job_count},
          {"seed", p.seed},
          {"tenant_count", p.tenant_count},
          {"arrival_rate_per_hour", p.arrival_rate_per_hour},
          {"sizes", sizes},
          {"duration_sigma", p.duration_sigma},
          {"gpu_types", types},
          {"gpus_per_node", p.gpus_per_node},
          {"small_inference_fraction", p.small_inference_fraction},
          {"small_debug_fraction", p.small_debug_fraction},
          {"debug_duration_scale", p.debug_duration_scale},
          {"priority_levels", p.priority_levels},
          {"service_fraction", p.service_fraction},
          {"hbd_fraction", p.hbd_fraction},
          {"require_workload_shape", p.require_workload_shape}};
}

/// Applies the keys present in `j` on top of `p`.
inline void apply_generator_params_json(GeneratorParams& p, const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("generator params: expected an object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "job_count") p.job_count = v.get<int>();
      else if (k == "seed") p.seed = v.get<std::uint64_t>();
      else if (k == "tenant_count") p.tenant_count = v.get<int>();
      else if (k == "arrival_rate_per_hour") p.arrival_rate_per_hour = v.get<double>();
      else if (k == "duration_sigma") p.duration_sigma = v.get<double>();
      else if (k == "gpus_per_node") p.gpus_per_node = v.get<int>();
      else if (k == "small_inference_fraction") p.small_inference_fraction = v.get<double>();
      else if (k == "small_debug_fraction") p.small_debug_fraction = v.get<double>();
      else if (k == "debug_duration_scale") p.debug_duration_scale = v.get<double>();
      else if (k == "priority_levels") p.priority_levels = v.get<int>();
      else if (k == "service_fraction") p.service_fraction = v.get<double>();
      else if (k == "hbd_fraction") p.hbd_fraction = v.get<double>();
      else if (k == "require_workload_shape") p.require_workload_shape = v.get<bool>();
      else if (k == "sizes") {
        p.sizes.clear();
        for (const auto& s : v) {
          p.sizes.push_back({s.at("gpus").get<int>(), s.at("weight").get<double>(), s.at("mean_duration_s").get<double>()});
        }
      } else if (k == "gpu_types") {
        p.gpu_types.clear();
        for (const auto& t : v) p.gpu_types.push_back({t.at("gpu_type").get<std::string>(), t.value("weight", 1.0)});
      } else {
        throw InputError("generator params: unknown key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("generator params: ") + e.what());
  }
}

namespace detail {

template <class T>
std::size_t pick_weighted(std::mt19937_64& rng, const std::vector<T>& items, double total) {
  std::uniform_real_distribution<double> u(0.0, total);
  double x = u(rng);
  for (std::size_t i = 0; i < items.size(); ++i) {
    x -= items[i].weight;
    if (x < 0) return i;
  }
  return items.size() - 1;
}

inline std::string zero_pad(std::uint64_t v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace detail

/// Poisson arrivals, size drawn from the mixture, log-normal durations
/// around each size's mean. Identical params yield an identical trace.
inline Trace generate_trace(const GeneratorParams& p) {
  if (p.job_count < 0) throw InputError("job_count must be non-negative");
  if (p.tenant_count <= 0) throw InputError("tenant_count must be positive");
  if (!(p.arrival_rate_per_hour > 0)) throw InputError("arrival_rate_per_hour must be positive");
  if (p.gpus_per_node <= 0) throw InputError("gpus_per_node must be positive");
  if (p.duration_sigma < 0) throw InputError("duration_sigma must be non-negative");
  if (p.service_fraction < 0 || p.service_fraction > 1.0) throw InputError("service_fraction must be in [0, 1]");
  if (p.small_inference_fraction < 0 || p.small_debug_fraction < 0 ||
      p.small_inference_fraction + p.small_debug_fraction > 1.0) {
    throw InputError("small task fractions must be non-negative and sum to at most 1");
  }
  double w_total = 0;
  for (const auto& s : p.sizes) {
    if (s.gpus <= 0 || s.weight < 0 || !(s.mean_duration_s > 0)) {
      throw InputError("size classes need positive gpus and duration and non-negative weight");
    }
    if (s.gpus > p.gpus_per_node && s.gpus % p.gpus_per_node != 0) {
      throw InputError("size " + std::to_string(s.gpus) + " is not a multiple of gpus_per_node");
    }
    w_total += s.weight;
  }
  if (!(w_total > 0)) throw InputError("size distribution has no mass");
  double t_total = 0;
  for (const auto& t : p.gpu_types) {
    if (t.weight < 0) throw InputError("gpu type weights must be non-negative");
    t_total += t.weight;
  }
  if (!(t_total > 0)) throw InputError("no gpu types to draw from");
  if (p.require_workload_shape) {
    const auto shape = expected_workload_shape(p);
    if (!(shape.small_job_fraction > 0.9) || !(shape.large_gpu_time_share > 0.5)) {
      throw InputError(
          "infeasible distribution parameters: expected small-job fraction " +
          std::to_string(shape.small_job_fraction) + " (need > 0.9) and large-job GPU-time share " +
          std::to_string(shape.large_gpu_time_share) + " (need > 0.5)");
    }
  }

  std::mt19937_64 rng(p.seed);
  std::exponential_distribution<double> gap(p.arrival_rate_per_hour / 3600.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> tenant(0, p.tenant_count - 1);

  const int prio_low = 0;
  const int prio_mid = p.priority_levels >= 3 ? 1 : 0;
  const int prio_high = p.priority_levels >= 3 ? 2 : (p.priority_levels == 2 ? 1 : 0);

  Trace trace;
  trace.jobs.reserve(static_cast<std::size_t>(p.job_count));
  double clock = 0.0;
  for (int i = 0; i < p.job_count; ++i) {
    clock += gap(rng);
    const auto& size = p.sizes[detail::pick_weighted(rng, p.sizes, w_total)];
    const auto& type = p.gpu_types[detail::pick_weighted(rng, p.gpu_types, t_total)];
    const double task_draw = unit(rng);
    const double z = normal(rng);
    const double hbd_draw = unit(rng);
    const double replica_draw = unit(rng);

    Job job;
    job.job_id = "j" + detail::zero_pad(static_cast<std::uint64_t>(i), 6);
    job.tenant_id = "t" + std::to_string(tenant(rng));
    job.submit_time = static_cast<SimTime>(std::floor(clock));

    double mean = size.mean_duration_s;
    const bool small = size.gpus < p.gpus_per_node;
    if (small && task_draw < p.small_inference_fraction) {
      job.task = "inference";
      job.kind = JobKind::kNonGang;
      job.priority = prio_high;
      int per = 1;
      if (size.gpus % 4 == 0 && replica_draw < 1.0 / 3) per = 4;
      else if (size.gpus % 2 == 0 && replica_draw < 2.0 / 3) per = 2;
      job.pod_specs = {PodSpec{type.gpu_type, gpus_to_milli(static_cast<std::int64_t>(per)), size.gpus / per}};
    } else if (small && task_draw < p.small_inference_fraction + p.small_debug_fraction) {
      job.task = "debug";
      job.kind = JobKind::kNonGang;
      job.priority = prio_low;
      mean *= p.debug_duration_scale;
      job.pod_specs = {PodSpec{type.gpu_type, gpus_to_milli(static_cast<std::int64_t>(size.gpus)), 1}};
    } else if (!small && task_draw < p.service_fraction) {
      job.task = "inference";
      job.kind = JobKind::kNonGang;
      job.priority = prio_high;
      int per = replica_draw < 1.0 / 3 ? 1 : (replica_draw < 2.0 / 3 ? 2 : 4);
      if (size.gpus % per != 0) per = 1;
      job.pod_specs = {PodSpec{type.gpu_type, gpus_to_milli(static_cast<std::int64_t>(per)), size.gpus / per}};
    } else {
      job.task = "training";
      job.kind = JobKind::kGang;
      job.priority = prio_mid;
      const int per = std::min(size.gpus, p.gpus_per_node);
      job.pod_specs = {PodSpec{type.gpu_type, gpus_to_milli(static_cast<std::int64_t>(per)), size.gpus / per}};
      job.needs_hbd = size.gpus >= 64 && hbd_draw < p.hbd_fraction;
    }
    const double sigma = p.duration_sigma;
    const double mu = std::log(mean) - 0.5 * sigma * sigma;
    double d = std::exp(mu + sigma * z);
    d = std::clamp(d, 60.0, 20.0 * mean);
    job.duration = std::max<SimTime>(1, static_cast<SimTime>(std::llround(d)));
    trace.jobs.push_back(std::move(job));
  }
  trace.meta = {{"generator", generator_params_to_json(p)}};
  return trace;
}

}  // namespace gcsim
