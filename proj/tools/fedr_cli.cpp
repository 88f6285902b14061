// fedr: dataset generation, federation runs, baselines and the convergence
// check. Exit codes: 0 success, 1 runtime error, 2 configuration error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedr/baselines.hpp"
#include "fedr/bilevel.hpp"
#include "fedr/checkpoint.hpp"
#include "fedr/config.hpp"
#include "fedr/federation.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedr;

namespace {

constexpr const char* kToolVersion = "fedr 1.0.0";
constexpr const char* kOutDirEnv = "FEDR_OUT_DIR";

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  out << content;
  if (!out) throw Error("write failed for " + p.string());
}

// --out wins, then the environment, then the command's default.
fs::path resolve_out(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return fallback;
}

std::string samples_hash(const std::vector<McqSample>& samples) {
  std::uint64_t h = fnv1a64("");
  for (const auto& s : samples) h = fnv1a64(to_jsonl_line(s) + "\n", h);
  return hex64(h);
}

// --- data sources ------------------------------------------------------------

struct DataSource {
  std::string dir;  // empty: synthetic
  std::uint64_t seed = 1;
  SyntheticSpec spec;
};

json spec_to_json(const SyntheticSpec& s) {
  return {{"clients", s.clients},
          {"n_local_per_client", s.n_local_per_client},
          {"n_pool", s.n_pool},
          {"n_test_per_client", s.n_test_per_client},
          {"n_server_pretrain", s.n_server_pretrain},
          {"own_domain_fraction", s.own_domain_fraction},
          {"operands", s.operands}};
}

SyntheticSpec spec_from_json(const json& j) {
  SyntheticSpec s;
  s.clients = j.at("clients").get<int>();
  s.n_local_per_client = j.at("n_local_per_client").get<int>();
  s.n_pool = j.at("n_pool").get<int>();
  s.n_test_per_client = j.at("n_test_per_client").get<int>();
  s.n_server_pretrain = j.at("n_server_pretrain").get<int>();
  s.own_domain_fraction = j.at("own_domain_fraction").get<double>();
  s.operands = j.at("operands").get<std::vector<std::string>>();
  return s;
}

json source_to_json(const DataSource& d) {
  if (!d.dir.empty()) return {{"kind", "files"}, {"dir", d.dir}};
  return {{"kind", "synthetic"}, {"seed", d.seed}, {"spec", spec_to_json(d.spec)}};
}

DataSource source_from_json(const json& j) {
  DataSource d;
  if (j.at("kind") == "files") {
    d.dir = j.at("dir").get<std::string>();
  } else {
    d.seed = j.at("seed").get<std::uint64_t>();
    d.spec = spec_from_json(j.at("spec"));
  }
  return d;
}

void write_dataset(const fs::path& dir, const SyntheticData& d) {
  fs::create_directories(dir);
  for (std::size_t k = 0; k < d.locals.size(); ++k) {
    save_samples(dir / ("client_" + std::to_string(k) + "_local.jsonl"), d.locals[k].samples);
    save_samples(dir / ("client_" + std::to_string(k) + "_test.jsonl"), d.tests[k].samples);
  }
  save_samples(dir / "pool.jsonl", d.pool.samples);
  save_samples(dir / "server_pretrain.jsonl", d.server_corpus.samples);
  save_samples(dir / "demo.jsonl", {d.demo});
}

FederationData load_dataset(const fs::path& dir, int clients) {
  FederationData d;
  for (int k = 0; k < clients; ++k) {
    d.locals.push_back(load_local_dataset(dir / ("client_" + std::to_string(k) + "_local.jsonl"), k));
    d.tests.push_back(load_local_dataset(dir / ("client_" + std::to_string(k) + "_test.jsonl"), k));
  }
  d.pool = load_pool(dir / "pool.jsonl");
  d.server_corpus = load_local_dataset(dir / "server_pretrain.jsonl", -1);
  const auto demo = load_samples(dir / "demo.jsonl", DatasetKind::local);
  if (demo.size() != 1) throw ValidationError((dir / "demo.jsonl").string() + " must hold one record");
  d.demo = demo.front();
  return d;
}

FederationData materialise(const DataSource& src, int clients) {
  if (!src.dir.empty()) return load_dataset(src.dir, clients);
  SyntheticSpec spec = src.spec;
  spec.clients = clients;
  return from_synthetic(generate_synthetic(src.seed, spec));
}

json dataset_hashes(const FederationData& d) {
  json h;
  for (std::size_t k = 0; k < d.locals.size(); ++k) {
    h["client_" + std::to_string(k) + "_local"] = samples_hash(d.locals[k].samples);
    h["client_" + std::to_string(k) + "_test"] = samples_hash(d.tests[k].samples);
  }
  h["pool"] = samples_hash(d.pool.samples);
  h["server_pretrain"] = samples_hash(d.server_corpus.samples);
  h["demo"] = samples_hash({d.demo});
  return h;
}

// --- shared run options --------------------------------------------------------

struct RunOptions {
  std::string config_path;
  std::string manifest_path;
  std::string data_dir;
  std::string out;
  std::vector<std::string> overrides;
  int rounds = 0;
  int clients = 0;
  long long seed = -1;
  long long data_seed = -1;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON config file");
  cmd->add_option("--manifest", o.manifest_path, "Rerun from a manifest written by a previous run");
  cmd->add_option("--data", o.data_dir, "Dataset directory written by gen-data (default: synthetic)");
  cmd->add_option("-o,--out", o.out, std::string("Output directory (env ") + kOutDirEnv + ")");
  cmd->add_option("--set", o.overrides, "Config override key=value (repeatable)");
  cmd->add_option("--rounds", o.rounds, "Shortcut for --set rounds=N");
  cmd->add_option("--clients", o.clients, "Shortcut for --set clients=N");
  cmd->add_option("--seed", o.seed, "Shortcut for --set seed=N");
  cmd->add_option("--data-seed", o.data_seed, "Seed of the synthetic dataset (default: config seed)");
}

struct Resolved {
  FederationConfig cfg;
  DataSource source;
};

Resolved resolve(const RunOptions& o) {
  json cfg_json = json::object();
  DataSource src;
  bool data_seed_fixed = false;
  if (!o.manifest_path.empty()) {
    json m;
    try {
      m = json::parse(read_file(o.manifest_path));
    } catch (const json::exception& e) {
      throw ConfigError("manifest " + o.manifest_path + " is not valid JSON: " + e.what());
    }
    cfg_json = m.at("config");
    src = source_from_json(m.at("data"));
    data_seed_fixed = true;
  } else if (!o.config_path.empty()) {
    try {
      cfg_json = json::parse(read_file(o.config_path));
    } catch (const json::exception& e) {
      throw ConfigError("config file " + o.config_path + " is not valid JSON: " + e.what());
    }
  }
  // Flags win over the file.
  for (const auto& a : o.overrides) apply_override(cfg_json, a);
  if (o.rounds > 0) cfg_json["rounds"] = o.rounds;
  if (o.clients > 0) cfg_json["clients"] = o.clients;
  if (o.seed >= 0) cfg_json["seed"] = o.seed;
  Resolved r{config_from_json(cfg_json), src};
  if (!o.data_dir.empty()) r.source.dir = o.data_dir;
  if (o.data_seed >= 0) {
    r.source.seed = static_cast<std::uint64_t>(o.data_seed);
  } else if (!data_seed_fixed) {
    r.source.seed = r.cfg.seed;
  }
  r.source.spec.clients = r.cfg.clients;
  return r;
}

json manifest(const std::string& command, const Resolved& r, const FederationData& data,
              const json& artifacts) {
  return {{"tool_version", kToolVersion},
          {"command", command},
          {"config", config_to_json(r.cfg)},
          {"data", source_to_json(r.source)},
          {"dataset_hashes", dataset_hashes(data)},
          {"seeds", {{"config", r.cfg.seed}, {"data", r.source.seed}, {"decode", r.cfg.decode.seed}}},
          {"artifacts", artifacts}};
}

void print_reports(const std::vector<EvalReport>& reports, const std::string& label) {
  for (const auto& r : reports) {
    std::printf("%s %-10s %-9s acc=%.4f (%zu/%zu)\n", label.c_str(), r.model.c_str(),
                to_string(r.mode), r.accuracy, r.correct, r.n);
  }
}

// --- commands ------------------------------------------------------------------

struct GenOptions {
  std::string out;
  long long seed = 1;
  SyntheticSpec spec;
};

int cmd_gen_data(const GenOptions& o) {
  const fs::path dir = resolve_out(o.out, "data");
  const auto d = generate_synthetic(static_cast<std::uint64_t>(o.seed), o.spec);
  write_dataset(dir, d);
  DataSource src{"", static_cast<std::uint64_t>(o.seed), o.spec};
  json files = json::array();
  for (int k = 0; k < o.spec.clients; ++k) {
    files.push_back("client_" + std::to_string(k) + "_local.jsonl");
    files.push_back("client_" + std::to_string(k) + "_test.jsonl");
  }
  for (auto* f : {"pool.jsonl", "server_pretrain.jsonl", "demo.jsonl"}) files.push_back(f);
  json m = {{"tool_version", kToolVersion},
            {"command", "gen-data"},
            {"data", source_to_json(src)},
            {"dataset_hashes", dataset_hashes(from_synthetic(d))},
            {"seeds", {{"data", o.seed}}},
            {"artifacts", files}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  std::printf("wrote %zu files to %s\n", files.size() + 1, dir.string().c_str());
  return 0;
}

int cmd_run(const RunOptions& o) {
  const auto r = resolve(o);
  const fs::path dir = resolve_out(o.out, "runs/lada");
  fs::create_directories(dir);
  Federation fed(r.cfg, materialise(r.source, r.cfg.clients));
  const auto res = run(fed);
  save_metrics((dir / "metrics.csv").string(), res.metrics);
  save_message_log((dir / "messages.jsonl").string(), res.state.log);
  save_checkpoint((dir / "checkpoint.json").string(), res.state);
  write_file(dir / "manifest.json",
             manifest("run", r, fed.data, {"metrics.csv", "messages.jsonl", "checkpoint.json"})
                     .dump(2) +
                 "\n");
  print_reports(res.initial_reports, "round 0");
  print_reports(evaluate_all(fed, res.state), "round " + std::to_string(res.state.round));
  std::printf("communication: %zu messages, %.6f MB\n", res.state.log.records.size(),
              res.state.log.total_mb());
  return 0;
}

int cmd_baseline(const std::string& which, const RunOptions& o) {
  if (which != "standalone" && which != "fedkd") {
    throw ConfigError("unknown baseline '" + which + "' (expected standalone or fedkd)");
  }
  const auto r = resolve(o);
  const fs::path dir = resolve_out(o.out, "runs/" + which);
  fs::create_directories(dir);
  Federation fed(r.cfg, materialise(r.source, r.cfg.clients));
  const auto res = which == "standalone" ? run_standalone(fed) : run_fedkd(fed);
  save_metrics((dir / "metrics.csv").string(), res.metrics);
  json artifacts = {"metrics.csv", "checkpoint.json"};
  if (which == "fedkd") {
    save_message_log((dir / "messages.jsonl").string(), res.state.log);
    artifacts.push_back("messages.jsonl");
  }
  save_checkpoint((dir / "checkpoint.json").string(), res.state);
  write_file(dir / "manifest.json", manifest("baseline " + which, r, fed.data, artifacts).dump(2) + "\n");
  print_reports(res.reports, which);
  return 0;
}

struct ConvOptions {
  std::string out;
  int rounds = 4096;
  int inner = 5;
  int outer = 1;
  int seeds = 1;
  long long seed = 0;
  long long toy_seed = 2024;
  int dim_psi = 8;
  int dim_phi = 8;
  double sigma = 0.1;
  double step_scale = 0.25;
  bool at_optimum = false;
};

int cmd_convergence(const ConvOptions& o) {
  if (o.seeds < 1) throw ConfigError("--seeds must be >= 1");
  const fs::path dir = resolve_out(o.out, "runs/convergence");
  fs::create_directories(dir);
  const auto toy =
      BilevelToy::make(o.dim_psi, o.dim_phi, o.sigma, static_cast<std::uint64_t>(o.toy_seed));
  std::string slopes = "seed,slope,final_avg,stationary\n";
  double sum = 0.0;
  bool all_stationary = true;
  json artifacts = json::array();
  for (int s = 0; s < o.seeds; ++s) {
    ConvergenceConfig cc;
    cc.rounds = o.rounds;
    cc.inner_steps = o.inner;
    cc.outer_steps = o.outer;
    cc.outer_step_scale = o.step_scale;
    cc.start_at_optimum = o.at_optimum;
    cc.seed = static_cast<std::uint64_t>(o.seed + s);
    const auto res = bilevel_convergence_check(toy, cc);
    const std::string name = o.seeds == 1 ? "convergence.csv"
                                          : "convergence_seed" + std::to_string(cc.seed) + ".csv";
    write_file(dir / name, convergence_csv(res));
    artifacts.push_back(name);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%d\n", static_cast<unsigned long long>(cc.seed),
                  res.slope, res.running_avg.back(), res.stationary ? 1 : 0);
    slopes += buf;
    sum += res.slope;
    all_stationary = all_stationary && res.stationary;
    std::printf("seed %llu: slope %.4f%s\n", static_cast<unsigned long long>(cc.seed), res.slope,
                res.stationary ? " (stationary)" : "");
  }
  write_file(dir / "slopes.csv", slopes);
  artifacts.push_back("slopes.csv");
  if (all_stationary) {
    std::printf("stationary: running average of |grad F|^2 below %.0e\n", kStationaryAvg);
  } else {
    std::printf("mean slope over %d seeds: %.4f\n", o.seeds, sum / o.seeds);
  }
  json m = {{"tool_version", kToolVersion},
            {"command", "convergence"},
            {"config",
             {{"rounds", o.rounds},
              {"inner_steps", o.inner},
              {"outer_steps", o.outer},
              {"seeds", o.seeds},
              {"seed", o.seed},
              {"toy_seed", o.toy_seed},
              {"dim_psi", o.dim_psi},
              {"dim_phi", o.dim_phi},
              {"sigma", o.sigma},
              {"outer_step_scale", o.step_scale},
              {"start_at_optimum", o.at_optimum}}},
            {"artifacts", artifacts}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnability-aware federated reasoning distillation on a toy task"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write the synthetic skewed dataset as JSONL");
  gen_cmd->add_option("-o,--out", gen.out, std::string("Output directory (env ") + kOutDirEnv + ")");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--clients", gen.spec.clients, "Number of clients");
  gen_cmd->add_option("--local", gen.spec.n_local_per_client, "Local samples per client");
  gen_cmd->add_option("--pool", gen.spec.n_pool, "Distillation pool size");
  gen_cmd->add_option("--test", gen.spec.n_test_per_client, "Test samples per client");
  gen_cmd->add_option("--server-pretrain", gen.spec.n_server_pretrain, "Server pre-training samples");
  gen_cmd->add_option("--own-fraction", gen.spec.own_domain_fraction,
                      "Share of a client's local data from its own domain");

  RunOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "Run the federation and write metrics, log, checkpoint");
  add_run_options(run_cmd, run_opts);

  RunOptions base_opts;
  std::string which;
  auto* base_cmd = app.add_subcommand("baseline", "Run the standalone or fedkd baseline");
  base_cmd->add_option("which", which, "standalone | fedkd")->required();
  add_run_options(base_cmd, base_opts);

  ConvOptions conv;
  auto* conv_cmd = app.add_subcommand("convergence", "Bilevel toy convergence check");
  conv_cmd->add_option("-o,--out", conv.out, std::string("Output directory (env ") + kOutDirEnv + ")");
  conv_cmd->add_option("--rounds", conv.rounds, "Outer rounds T");
  conv_cmd->add_option("--inner", conv.inner, "Inner steps per round");
  conv_cmd->add_option("--outer", conv.outer, "Outer steps per round");
  conv_cmd->add_option("--seeds", conv.seeds, "Number of noise seeds");
  conv_cmd->add_option("--seed", conv.seed, "First noise seed");
  conv_cmd->add_option("--toy-seed", conv.toy_seed, "Seed of the toy problem");
  conv_cmd->add_option("--dim-psi", conv.dim_psi, "Outer dimension");
  conv_cmd->add_option("--dim-phi", conv.dim_phi, "Inner dimension");
  conv_cmd->add_option("--sigma", conv.sigma, "Gradient noise std");
  conv_cmd->add_option("--step-scale", conv.step_scale, "Outer step as a fraction of 1/L0");
  conv_cmd->add_flag("--at-optimum", conv.at_optimum, "Start at the known optimum");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*run_cmd) return cmd_run(run_opts);
    if (*base_cmd) return cmd_baseline(which, base_opts);
    if (*conv_cmd) return cmd_convergence(conv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
