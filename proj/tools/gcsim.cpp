// gcsim command-line driver: generate | simulate | compare | report.
//
// Exit codes: 0 ok, 1 usage, 2 input, 3 internal. Diagnostics go to stderr;
// data goes to files.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gcsim/gcsim.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitInternal = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string out;
  char hex[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(hex, sizeof hex, "%02x", md[i]);
    out += hex;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw gcsim::InputError("cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << data) || !out.flush()) throw gcsim::InputError("cannot write '" + path.string() + "'");
}

json load_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw gcsim::InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::string trace_text(const gcsim::Trace& trace) {
  std::ostringstream s;
  gcsim::write_trace(s, trace);
  return s.str();
}

gcsim::Preset require_preset(const std::string& name) {
  auto p = gcsim::find_preset(name);
  if (!p) {
    std::string valid;
    for (const auto& n : gcsim::preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw UsageError("unknown preset '" + name + "' (valid: " + valid + ")");
  }
  return *p;
}

json file_entry(const fs::path& path, const std::string& data) {
  return {{"path", path.string()}, {"sha256", sha256_hex(data)}};
}

// generate -------------------------------------------------------------------

struct GenerateArgs {
  std::string preset;
  std::string params_file;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<double> rate;
  std::optional<int> tenants;
  bool any_shape = false;
  std::string out;
  std::string manifest_out;
  std::string manifest_in;
};

int cmd_generate(const GenerateArgs& a) {
  gcsim::GeneratorParams params;
  std::string out = a.out;
  json config;
  if (!a.manifest_in.empty()) {
    const json m = load_json_file(a.manifest_in);
    if (m.value("command", "") != "generate") throw gcsim::InputError("manifest is not from 'generate'");
    gcsim::apply_generator_params_json(params, m.at("config").at("workload"));
    if (out.empty()) out = m.at("outputs").at("trace").at("path").get<std::string>();
  } else {
    bool seeded = a.seed.has_value();
    if (!a.preset.empty()) {
      params = require_preset(a.preset).workload;
      seeded = true;
      config["preset"] = a.preset;
    }
    if (!a.params_file.empty()) {
      const json pj = load_json_file(a.params_file);
      gcsim::apply_generator_params_json(params, pj);
      seeded = seeded || pj.contains("seed");
    }
    if (a.jobs) params.job_count = *a.jobs;
    if (a.seed) params.seed = *a.seed;
    if (a.rate) params.arrival_rate_per_hour = *a.rate;
    if (a.tenants) params.tenant_count = *a.tenants;
    if (a.any_shape) params.require_workload_shape = false;
    if (!seeded) {
      std::cerr << "warning: no --seed given; using default seed " << params.seed << "\n";
    }
  }
  if (out.empty()) throw UsageError("generate: --output is required");
  const gcsim::Trace trace = gcsim::generate_trace(params);
  for (const auto& w : trace.warnings) std::cerr << "warning: " << w << "\n";
  const std::string text = trace_text(trace);
  write_file(out, text);

  config["workload"] = gcsim::generator_params_to_json(params);
  json manifest = {{"tool", "gcsim"},
                   {"version", gcsim::kVersion},
                   {"command", "generate"},
                   {"config", config},
                   {"outputs", {{"trace", file_entry(out, text)}}}};
  const std::string mpath = a.manifest_out.empty() ? out + ".manifest.json" : a.manifest_out;
  write_file(mpath, manifest.dump(2) + "\n");
  std::cerr << "wrote " << trace.jobs.size() << " jobs to " << out << "\n";
  return 0;
}

// simulate -------------------------------------------------------------------

struct SimulateArgs {
  std::string preset;
  std::string topology;
  std::string trace;
  std::string sim_config;
  std::string out_dir;
  std::string manifest_in;
  std::optional<std::string> queue;
  std::optional<std::string> placement;
  std::optional<gcsim::SimTime> cycle_period, backfill_timeout, startup_latency, preemption_overhead, horizon,
      sample_tick;
  std::optional<std::uint64_t> seed;
  std::optional<int> exempt_cycles, requeue_limit;
  bool no_topology_aware = false;
  bool full_rebuild = false;
  bool no_priority_preemption = false;
  bool round_robin = false;
  bool healthy_only = false;
  bool no_events = false;
};

struct SimInputs {
  gcsim::ClusterTopology topo;
  gcsim::Trace trace;
  gcsim::SimConfig cfg;
  json config;  // effective configuration recorded in the manifest
  json inputs = json::object();
};

SimInputs resolve_inputs_from_args(const SimulateArgs& a) {
  SimInputs in;
  std::optional<gcsim::Preset> preset;
  if (!a.preset.empty()) {
    preset = require_preset(a.preset);
    in.cfg = preset->sim;
    in.config["preset"] = a.preset;
  }
  if (!a.topology.empty()) {
    const std::string text = read_file(a.topology);
    in.topo = gcsim::load_topology(json::parse(text));
    in.config["topology"] = a.topology;
    in.inputs["topology"] = file_entry(a.topology, text);
  } else if (preset) {
    in.topo = gcsim::build_fat_tree(preset->topology);
  } else {
    throw UsageError("simulate: need --topology or --preset");
  }
  if (!a.trace.empty()) {
    const std::string text = read_file(a.trace);
    in.trace = gcsim::parse_trace(text);
    in.config["trace"] = a.trace;
    in.inputs["trace"] = file_entry(a.trace, text);
  } else if (preset) {
    in.trace = gcsim::generate_trace(preset->workload);
    in.config["workload"] = gcsim::generator_params_to_json(preset->workload);
  } else {
    throw UsageError("simulate: need --trace or --preset");
  }
  if (!a.sim_config.empty()) gcsim::apply_sim_config_json(in.cfg, load_json_file(a.sim_config));
  auto& c = in.cfg;
  if (a.queue) {
    auto q = gcsim::parse_queue_policy(*a.queue);
    if (!q) throw UsageError("invalid --queue '" + *a.queue + "' (valid: strict-fifo, best-effort, backfill)");
    c.queue_policy = *q;
  }
  if (a.placement) {
    auto p = gcsim::parse_placement_policy(*a.placement);
    if (!p) throw UsageError("invalid --placement '" + *a.placement + "' (valid: binpack, e-binpack, spread, e-spread)");
    c.placement_policy = *p;
  }
  if (a.cycle_period) c.cycle_period = *a.cycle_period;
  if (a.backfill_timeout) c.backfill_timeout = *a.backfill_timeout;
  if (a.startup_latency) c.startup_latency = *a.startup_latency;
  if (a.preemption_overhead) c.preemption_overhead = *a.preemption_overhead;
  if (a.horizon) c.horizon = *a.horizon;
  if (a.sample_tick) c.sample_tick = *a.sample_tick;
  if (a.seed) c.seed = *a.seed;
  if (a.exempt_cycles) c.exempt_cycles = *a.exempt_cycles;
  if (a.requeue_limit) c.requeue_limit = *a.requeue_limit;
  if (a.no_topology_aware) c.topology_aware = false;
  if (a.full_rebuild) c.full_rebuild = true;
  if (a.no_priority_preemption) c.priority_preemption = false;
  if (a.round_robin) c.round_robin = true;
  if (a.healthy_only) c.gar_healthy_only = true;
  in.config["sim"] = gcsim::sim_config_to_json(c);
  return in;
}

SimInputs resolve_inputs_from_manifest(const json& m) {
  if (m.value("command", "") != "simulate") throw gcsim::InputError("manifest is not from 'simulate'");
  SimInputs in;
  in.config = m.at("config");
  const json recorded = m.value("inputs", json::object());
  std::optional<gcsim::Preset> preset;
  if (in.config.contains("preset")) preset = require_preset(in.config["preset"].get<std::string>());
  auto checked = [&](const char* key) {
    const std::string path = in.config.at(key).get<std::string>();
    const std::string text = read_file(path);
    const std::string want = recorded.at(key).at("sha256").get<std::string>();
    if (sha256_hex(text) != want) throw gcsim::InputError(std::string(key) + " '" + path + "' changed since the manifest");
    in.inputs[key] = file_entry(path, text);
    return text;
  };
  if (in.config.contains("topology")) {
    in.topo = gcsim::load_topology(json::parse(checked("topology")));
  } else if (preset) {
    in.topo = gcsim::build_fat_tree(preset->topology);
  } else {
    throw gcsim::InputError("manifest names no topology");
  }
  if (in.config.contains("trace")) {
    in.trace = gcsim::parse_trace(checked("trace"));
  } else if (in.config.contains("workload")) {
    gcsim::GeneratorParams p;
    gcsim::apply_generator_params_json(p, in.config["workload"]);
    in.trace = gcsim::generate_trace(p);
  } else {
    throw gcsim::InputError("manifest names no trace");
  }
  gcsim::apply_sim_config_json(in.cfg, in.config.at("sim"));
  return in;
}

int cmd_simulate(const SimulateArgs& a) {
  std::string out_dir = a.out_dir;
  SimInputs in;
  if (!a.manifest_in.empty()) {
    const json m = load_json_file(a.manifest_in);
    in = resolve_inputs_from_manifest(m);
    if (out_dir.empty()) out_dir = m.value("output_dir", std::string());
  } else {
    in = resolve_inputs_from_args(a);
  }
  if (out_dir.empty()) throw UsageError("simulate: --out-dir is required");
  for (const auto& w : in.trace.warnings) std::cerr << "warning: " << w << "\n";
  in.cfg.validate();

  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw gcsim::InputError("cannot create output directory '" + out_dir + "'");

  std::ostringstream events;
  gcsim::Simulator sim(in.cfg, in.topo, in.trace);
  if (!a.no_events) sim.set_event_log(&events);
  gcsim::MetricsReport report = sim.run();
  report.provenance["trace_digest"] = sha256_hex(trace_text(in.trace));
  report.provenance["topology_digest"] = sha256_hex(gcsim::topology_to_json(in.topo).dump());
  report.provenance["tool_version"] = gcsim::kVersion;

  json outputs = json::object();
  auto emit = [&](const char* key, const std::string& name, const std::string& data) {
    write_file(dir / name, data);
    outputs[key] = file_entry(dir / name, data);
  };
  emit("report", "report.json", gcsim::report_to_json(report).dump(2) + "\n");
  emit("table", "report.txt", gcsim::report_table(report));
  std::ostringstream csv;
  gcsim::write_series_csv(csv, report.gar_series);
  emit("gar_csv", "gar.csv", csv.str());
  csv.str("");
  gcsim::write_series_csv(csv, report.gfr_series);
  emit("gfr_csv", "gfr.csv", csv.str());
  csv.str("");
  gcsim::write_jwtd_csv(csv, report);
  emit("jwtd_csv", "jwtd.csv", csv.str());
  csv.str("");
  gcsim::write_jtted_csv(csv, report);
  emit("jtted_csv", "jtted.csv", csv.str());
  if (!a.no_events) emit("events", "events.jsonl", events.str());

  json manifest = {{"tool", "gcsim"},
                   {"version", gcsim::kVersion},
                   {"command", "simulate"},
                   {"config", in.config},
                   {"inputs", in.inputs},
                   {"digests",
                    {{"trace_digest", report.provenance["trace_digest"]},
                     {"topology_digest", report.provenance["topology_digest"]}}},
                   {"output_dir", out_dir},
                   {"outputs", outputs}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  std::fprintf(stderr, "SOR %.4f  GAR %.4f  GFR %.4f  (%zu jobs, %zu finished) -> %s\n", report.sor,
               report.gar_mean, report.gfr_mean, report.jobs.submitted, report.jobs.finished, out_dir.c_str());
  return 0;
}

// compare / report -------------------------------------------------------------

int cmd_compare(const std::string& a, const std::string& b, const std::string& out) {
  const json cmp = gcsim::compare_reports(load_json_file(a), load_json_file(b));
  if (!out.empty()) write_file(out, cmp.dump(2) + "\n");
  std::cout << gcsim::compare_table(cmp);
  return 0;
}

int cmd_report(const std::string& path, const std::string& out) {
  const auto r = gcsim::report_from_json(load_json_file(path));
  const std::string table = gcsim::report_table(r);
  if (out.empty()) {
    std::cout << table;
  } else {
    write_file(out, table);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gcsim: discrete-event GPU cluster scheduling simulator"};
  app.set_version_flag("--version", std::string(gcsim::kVersion));
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file; keys under [generate] or [simulate] mirror the long flags");

  std::string valid_presets;
  for (const auto& n : gcsim::preset_names()) valid_presets += (valid_presets.empty() ? "" : "|") + n;

  GenerateArgs g;
  auto* gen = app.add_subcommand("generate", "write a synthetic JSON-lines trace");
  gen->add_option("--preset", g.preset, "start from a preset workload (" + valid_presets + ")");
  gen->add_option("--params", g.params_file, "JSON file of generator parameters");
  gen->add_option("--jobs", g.jobs, "number of jobs");
  gen->add_option("--seed", g.seed, "RNG seed");
  gen->add_option("--rate", g.rate, "arrivals per hour");
  gen->add_option("--tenants", g.tenants, "tenant count");
  gen->add_flag("--any-shape", g.any_shape, "skip the workload-shape check");
  gen->add_option("-o,--output", g.out, "trace path");
  gen->add_option("--manifest-out", g.manifest_out, "manifest path (default <output>.manifest.json)");
  gen->add_option("--manifest", g.manifest_in, "regenerate from a previous manifest");

  SimulateArgs s;
  auto* sim = app.add_subcommand("simulate", "run the scheduler over a trace and write metrics");
  sim->add_option("--preset", s.preset, "preset topology, workload and defaults (" + valid_presets + ")");
  sim->add_option("--topology", s.topology, "topology JSON");
  sim->add_option("--trace", s.trace, "trace JSON-lines");
  sim->add_option("--sim-config", s.sim_config, "JSON simulation config (quotas and every knob)");
  sim->add_option("-o,--out-dir", s.out_dir, "output directory");
  sim->add_option("--manifest", s.manifest_in, "re-run exactly from a previous manifest");
  sim->add_option("--queue", s.queue, "strict-fifo|best-effort|backfill");
  sim->add_option("--placement", s.placement, "binpack|e-binpack|spread|e-spread");
  sim->add_option("--cycle-period", s.cycle_period, "seconds between scheduling cycles");
  sim->add_option("--backfill-timeout", s.backfill_timeout, "head wait before preemption (seconds)");
  sim->add_option("--startup-latency", s.startup_latency, "dispatch to running delay (seconds)");
  sim->add_option("--preemption-overhead", s.preemption_overhead, "victim teardown delay (seconds)");
  sim->add_option("--horizon", s.horizon, "simulated seconds");
  sim->add_option("--sample-tick", s.sample_tick, "GAR/GFR sampling tick (seconds)");
  sim->add_option("--seed", s.seed, "recorded seed");
  sim->add_option("--exempt-cycles", s.exempt_cycles, "cycles a preempted job is protected");
  sim->add_option("--requeue-limit", s.requeue_limit, "requeues before a job fails");
  sim->add_flag("--no-topology-aware", s.no_topology_aware, "disable group preselection and tier ranking");
  sim->add_flag("--full-rebuild", s.full_rebuild, "rebuild snapshots from scratch every batch");
  sim->add_flag("--no-priority-preemption", s.no_priority_preemption, "disable priority preemption");
  sim->add_flag("--round-robin", s.round_robin, "round-robin across tenant queues");
  sim->add_flag("--healthy-only", s.healthy_only, "GAR over healthy GPUs only");
  sim->add_flag("--no-events", s.no_events, "skip events.jsonl");

  std::string cmp_a, cmp_b, cmp_out;
  auto* cmp = app.add_subcommand("compare", "per-metric deltas of report B against report A");
  cmp->add_option("a", cmp_a, "report A")->required();
  cmp->add_option("b", cmp_b, "report B")->required();
  cmp->add_option("-o,--output", cmp_out, "write the delta JSON here");

  std::string rep_in, rep_out;
  auto* rep = app.add_subcommand("report", "render a report JSON as a table");
  rep->add_option("report", rep_in, "report.json")->required();
  rep->add_option("-o,--output", rep_out, "write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(g);
    if (sim->parsed()) return cmd_simulate(s);
    if (cmp->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_out);
    if (rep->parsed()) return cmd_report(rep_in, rep_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const gcsim::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const json::exception& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
