// Command-line entry point: training, solving, the QONN accuracy benchmark
// and synthetic instance generation.
//
// Exit codes: 0 success, 2 configuration error, 3 artifact incompatibility,
// 4 runtime abort.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "qvrp/env.hpp"
#include "qvrp/errors.hpp"
#include "qvrp/kernels.hpp"
#include "qvrp/orchestrator.hpp"
#include "qvrp/policy.hpp"
#include "qvrp/qsampler.hpp"
#include "qvrp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qvrp;

namespace {

enum class LogLevel { silent = 0, info = 1, debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("QVRP_LOG");
  if (!env) return LogLevel::info;
  std::string v(env);
  if (v == "silent" || v == "0") return LogLevel::silent;
  if (v == "debug" || v == "2") return LogLevel::debug;
  return LogLevel::info;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::cerr << msg << "\n";
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return j;
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write output file: " + path.string());
  out << content;
}

// ---- schema validation -----------------------------------------------------

// Minimal structural schema: {"field": "number|integer|string|boolean|object:<name>|array"}
using Schema = std::map<std::string, std::string>;

const Schema kModelSchema{
    {"d", "integer"},          {"d_ff", "integer"},
    {"n_heads", "integer"},    {"n_quantum_heads", "integer"},
    {"quantum_scope", "string"}, {"dropout_rate", "number"},
    {"bn_momentum", "number"}, {"bn_eps", "number"},
    {"pointer_clip", "number"},
};

const Schema kSamplerSchema{
    {"n_nodes", "integer"},   {"n_trucks", "integer"}, {"capacity", "number"},
    {"horizon_s", "number"},  {"time_scale", "number"}, {"n_tuples", "integer"},
    {"p_rank3", "number"},    {"cyclic_fraction", "number"}, {"vol_min", "number"},
    {"clip", "number"},       {"unmet_penalty", "number"},
};

const Schema kTrainSchema{
    {"num_epochs", "integer"},          {"batch_size", "integer"},
    {"batches_per_epoch", "integer"},   {"learning_rate", "number"},
    {"baseline_significance", "number"}, {"eval_set_size", "integer"},
    {"sampler", "object:sampler"},      {"seed", "integer"},
    {"checkpoint_every", "integer"},    {"objective", "string"},
};

const Schema kTrainTopSchema{
    {"model", "object:model"},
    {"train", "object:train"},
    {"init_seed", "integer"},
};

const Schema kSubsetSchema{
    {"n_prime", "integer"},        {"n_trucks_prime", "integer"},
    {"k_node_draws", "integer"},   {"k_subset_attempts", "integer"},
    {"k_execution_trials", "integer"}, {"clip", "number"},
    {"truck_capacity", "number"},  {"horizon_s", "number"},
    {"max_iterations", "integer"}, {"seed", "integer"},
};

const Schema kShiftSchema{
    {"shift1_start_s", "number"}, {"shift1_end_s", "number"},
    {"shift2_start_s", "number"}, {"shift2_end_s", "number"},
    {"day_s", "number"},
};

const Schema kSolveTopSchema{
    {"subset_search", "object:subset_search"},
    {"shifts", "object:shifts"},
};

const Schema kBenchmarkNoiseSchema{
    {"depolarizing_p", "number"},
    {"readout_flip_q", "number"},
};

const Schema kBenchmarkSchema{
    {"qubit_counts", "array"}, {"trials", "integer"}, {"shots", "integer"},
    {"noise", "object:noise"}, {"exact", "boolean"},  {"seed", "integer"},
};

const Schema kGenSchema{
    {"nodes", "integer"},   {"groups", "integer"},  {"boxes", "integer"},
    {"box_volume", "number"}, {"p_rank3", "number"}, {"trucks", "integer"},
    {"capacity", "number"}, {"horizon_s", "number"}, {"time_scale", "number"},
    {"seed", "integer"},    {"output", "string"},
};

const Schema& schema_by_name(const std::string& name) {
  if (name == "model") return kModelSchema;
  if (name == "sampler") return kSamplerSchema;
  if (name == "train") return kTrainSchema;
  if (name == "subset_search") return kSubsetSchema;
  if (name == "shifts") return kShiftSchema;
  if (name == "noise") return kBenchmarkNoiseSchema;
  throw ConfigError("unknown schema object: " + name);
}

void validate_against(const json& j, const Schema& schema, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError(where + ": unknown field '" + key + "'");
    const std::string& kind = it->second;
    if (kind == "number" && !value.is_number())
      throw ConfigError(where + "." + key + ": expected a number");
    if (kind == "integer" && !value.is_number_integer())
      throw ConfigError(where + "." + key + ": expected an integer");
    if (kind == "string" && !value.is_string())
      throw ConfigError(where + "." + key + ": expected a string");
    if (kind == "boolean" && !value.is_boolean())
      throw ConfigError(where + "." + key + ": expected a boolean");
    if (kind == "array" && !value.is_array())
      throw ConfigError(where + "." + key + ": expected an array");
    if (kind.rfind("object:", 0) == 0)
      validate_against(value, schema_by_name(kind.substr(7)), where + "." + key);
  }
}

json schema_doc(const Schema& schema) {
  json doc = json::object();
  for (const auto& [key, kind] : schema)
    doc[key] = kind.rfind("object:", 0) == 0 ? json(schema_doc(schema_by_name(kind.substr(7))))
                                             : json(kind);
  return doc;
}

// deep merge: overlay wins, objects merge recursively
json merge_config(json base, const json& overlay) {
  if (!overlay.is_object() || !base.is_object()) return overlay;
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object())
      base[key] = merge_config(base[key], value);
    else
      base[key] = value;
  }
  return base;
}

// ---- train -----------------------------------------------------------------

json train_preset(const std::string& name) {
  json sampler{
      {"n_nodes", 8},      {"capacity", 10.0},      {"horizon_s", 57600.0},
      {"time_scale", 3600.0}, {"n_tuples", 5},      {"vol_min", 1.0},
      {"clip", 10.0},      {"unmet_penalty", 10000.0},
  };
  json model;
  json train{
      {"num_epochs", 100}, {"batch_size", 32}, {"batches_per_epoch", 4},
      {"learning_rate", 2e-3}, {"eval_set_size", 32}, {"seed", 1},
  };
  if (name == "classical-3truck") {
    sampler["n_trucks"] = 3;
    sampler["p_rank3"] = 0.5;
    sampler["cyclic_fraction"] = 1.0;
    model = json{{"d", 64}, {"d_ff", 256}, {"n_heads", 8}, {"n_quantum_heads", 0},
                 {"quantum_scope", "none"}};
  } else if (name == "quantum-rank2") {
    sampler["n_trucks"] = 2;
    sampler["p_rank3"] = 0.0;
    sampler["cyclic_fraction"] = 0.0;
    model = json{{"d", 64}, {"d_ff", 256}, {"n_heads", 8}, {"n_quantum_heads", 8},
                 {"quantum_scope", "encoder_qk"}};
  } else if (name == "quantum-rank23") {
    sampler["n_trucks"] = 2;
    sampler["p_rank3"] = 0.5;
    sampler["cyclic_fraction"] = 0.0;
    model = json{{"d", 64}, {"d_ff", 256}, {"n_heads", 8}, {"n_quantum_heads", 8},
                 {"quantum_scope", "encoder_qk"}};
  } else if (name == "quantum-cyclic") {
    sampler["n_trucks"] = 2;
    sampler["p_rank3"] = 0.0;
    sampler["cyclic_fraction"] = 1.0;
    model = json{{"d", 64}, {"d_ff", 256}, {"n_heads", 8}, {"n_quantum_heads", 8},
                 {"quantum_scope", "encoder_qk"}};
  } else {
    throw ConfigError("unknown preset: " + name +
                      " (expected classical-3truck, quantum-rank2, quantum-rank23 or "
                      "quantum-cyclic)");
  }
  train["sampler"] = sampler;
  return json{{"model", model}, {"train", train}, {"init_seed", 1}};
}

int cmd_train(const std::string& preset, const std::string& config_path, long seed_override,
              const std::string& out_dir) {
  json config = preset.empty() ? json{{"model", json::object()}, {"train", json::object()},
                                      {"init_seed", 1}}
                               : train_preset(preset);
  if (!config_path.empty()) config = merge_config(config, load_json_file(config_path));
  validate_against(config, kTrainTopSchema, "config");

  policy::ModelConfig model = policy::ModelConfig::from_json(config.value("model", json::object()));
  train::TrainConfig tc = train::TrainConfig::from_json(config.value("train", json::object()));
  uint64_t init_seed = config.value("init_seed", uint64_t{1});
  if (seed_override >= 0) {
    tc.seed = static_cast<uint64_t>(seed_override);
    init_seed = static_cast<uint64_t>(seed_override);
  }

  fs::path out(out_dir);
  fs::create_directories(out);

  policy::ParamStore initial = policy::init_params(model, init_seed);
  log_info("training: " + std::to_string(tc.num_epochs) + " epochs, batch " +
           std::to_string(tc.batch_size) + " x " + std::to_string(tc.batches_per_epoch) +
           " batches/epoch, " + std::to_string(initial.param_count()) + " parameters");

  json extra_base{{"sampler", tc.sampler.to_json()}, {"train_seed", tc.seed}};
  auto checkpoint_path = [&](int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_epoch%04d", epoch);
    return (out / buf).string();
  };

  train::EpochCallback on_epoch = [&](const train::EpochMetrics& m,
                                      const policy::ParamStore& store) {
    log_debug("epoch " + std::to_string(m.epoch) + ": cost " + std::to_string(m.mean_cost) +
              ", coverage " + std::to_string(m.mean_coverage));
    if (tc.checkpoint_every > 0 && m.epoch % tc.checkpoint_every == 0) {
      json extra = extra_base;
      extra["epoch"] = m.epoch;
      policy::save_checkpoint(checkpoint_path(m.epoch), store, model, extra);
    }
  };

  train::TrainResult result = train::train(tc, model, std::move(initial), on_epoch);

  write_file(out / "metrics.csv", train::metrics_csv(result.metrics));
  json extra = extra_base;
  extra["clip_default"] = result.clip_default;
  extra["epochs_trained"] = tc.num_epochs;
  policy::save_checkpoint((out / "checkpoint").string(), result.params, model, extra);
  log_info("final mean cost " + std::to_string(result.metrics.back().mean_cost) +
           ", coverage " + std::to_string(result.metrics.back().mean_coverage));
  log_info("wrote " + (out / "metrics.csv").string() + " and " + (out / "checkpoint").string() +
           ".{json,bin}");
  return 0;
}

// ---- solve -----------------------------------------------------------------

int cmd_solve(const std::string& checkpoint_prefix, const std::string& instance_path,
              const std::string& config_path, long seed_override, const std::string& out_dir) {
  json config = json::object();
  if (!config_path.empty()) config = load_json_file(config_path);
  validate_against(config, kSolveTopSchema, "config");

  policy::Checkpoint ck = policy::load_checkpoint(checkpoint_prefix);
  env::Instance full = env::load_instance(instance_path);

  orch::SubsetSearchConfig sc;
  // defaults come from the checkpoint's training scale
  if (ck.extra.contains("sampler")) {
    train::SamplerSpec s = train::SamplerSpec::from_json(ck.extra.at("sampler"));
    sc.n_prime = s.n_nodes;
    sc.n_trucks_prime = s.n_trucks;
    sc.truck_capacity = s.capacity;
    sc.horizon = s.horizon;
  }
  sc.clip = ck.extra.value("clip_default", 0.0);
  if (config.contains("subset_search"))
    sc = orch::SubsetSearchConfig::from_json(
        merge_config(sc.to_json(), config.at("subset_search")));
  if (seed_override >= 0) sc.seed = static_cast<uint64_t>(seed_override);
  orch::ShiftConfig shifts;
  if (config.contains("shifts")) shifts = orch::ShiftConfig::from_json(config.at("shifts"));

  if (sc.n_prime > full.node_count())
    throw IncompatibleArtifactError(
        "checkpoint was trained for " + std::to_string(sc.n_prime) +
        " nodes but the instance only has " + std::to_string(full.node_count()));
  if (sc.clip <= 0)
    throw IncompatibleArtifactError("checkpoint carries no demand clip; set subset_search.clip");

  fs::path out(out_dir);
  fs::create_directories(out);

  log_info("solving " + std::to_string(full.node_count()) + "-node instance with teams of " +
           std::to_string(sc.n_trucks_prime) + " trucks over " + std::to_string(sc.n_prime) +
           " nodes (clip " + std::to_string(sc.clip) + ")");
  orch::ExecutionResult exec = orch::execution_loop(full, ck.store, ck.config, sc);
  log_info("execution loop: " + std::to_string(exec.iterations) + " iterations, " +
           std::to_string(exec.trucks_used) + " trucks, fulfillment " +
           std::to_string(exec.fulfillment_fraction));

  std::vector<env::BoxGroup> groups = full.box_groups;
  if (groups.empty()) {
    // no box-level data: one box per demand component
    for (const auto& d : full.demand)
      groups.push_back({d.kind, d.nodes, 1, d.volume});
  }
  orch::FullScaleReport sim = orch::simulate_full_scale(full, groups, exec, shifts);
  log_info("full-scale recount: " + std::to_string(sim.boxes_fulfilled) + "/" +
           std::to_string(sim.boxes_total) + " boxes");

  write_file(out / "routes.csv", orch::listing_csv(sim.timeline, full));
  write_file(out / "demand_share.csv", orch::share_csv(sim.share));
  write_file(out / "report.json", orch::solve_report_json(exec, sim).dump(2) + "\n");
  log_info("wrote routes.csv, demand_share.csv and report.json under " + out.string());
  return 0;
}

// ---- benchmark-qonn ----------------------------------------------------------

int cmd_benchmark_qonn(const std::string& config_path, long seed_override,
                       const std::string& out_dir) {
  json config = json::object();
  if (!config_path.empty()) config = load_json_file(config_path);
  validate_against(config, kBenchmarkSchema, "config");

  qsim::BenchmarkConfig bc;  // defaults follow the published protocol
  if (config.contains("qubit_counts"))
    bc.qubit_counts = config.at("qubit_counts").get<std::vector<int>>();
  bc.trials = config.value("trials", bc.trials);
  bc.shots = config.value("shots", bc.shots);
  bc.exact = config.value("exact", bc.exact);
  bc.seed = config.value("seed", bc.seed);
  if (config.contains("noise")) {
    bc.noise.depolarizing_p = config.at("noise").value("depolarizing_p", 0.0);
    bc.noise.readout_flip_q = config.at("noise").value("readout_flip_q", 0.0);
  }
  if (seed_override >= 0) bc.seed = static_cast<uint64_t>(seed_override);

  qsim::BenchmarkReport report = qsim::benchmark_qonn(bc);
  fs::path out(out_dir);
  fs::create_directories(out);
  write_file(out / "qonn_benchmark.csv", qsim::benchmark_csv(report));
  write_file(out / "qonn_benchmark_summary.json",
             qsim::benchmark_summary(report).dump(2) + "\n");
  log_info("ran " + std::to_string(report.circuits_executed) + " circuits, " +
           std::to_string(report.total_measurements) + " measurements");
  log_info("wrote qonn_benchmark.csv and qonn_benchmark_summary.json under " + out.string());
  return 0;
}

// ---- gen-instance ------------------------------------------------------------

int cmd_gen_instance(const std::string& config_path, long nodes, long groups, long boxes,
                     long seed_override, const std::string& out_dir) {
  json config = json::object();
  if (!config_path.empty()) config = load_json_file(config_path);
  validate_against(config, kGenSchema, "config");

  std::string output = config.value("output", std::string("instance.json"));
  json spec_json = config;
  spec_json.erase("output");
  orch::SyntheticSpec spec = orch::SyntheticSpec::from_json(spec_json);
  if (nodes > 0) spec.nodes = static_cast<int>(nodes);
  if (groups > 0) spec.groups = static_cast<int>(groups);
  if (boxes > 0) spec.boxes = boxes;
  if (seed_override >= 0) spec.seed = static_cast<uint64_t>(seed_override);
  spec.validate();

  env::Instance inst = orch::generate_synthetic_instance(spec);
  fs::path out(out_dir);
  fs::create_directories(out);
  env::save_instance(inst, (out / output).string());
  long total_boxes = 0;
  for (const auto& g : inst.box_groups) total_boxes += g.count;
  log_info("generated " + std::to_string(inst.node_count()) + " nodes, " +
           std::to_string(inst.box_groups.size()) + " box groups, " +
           std::to_string(total_boxes) + " boxes -> " + (out / output).string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid quantum-classical routing toolkit"};
  app.require_subcommand(1);

  std::string config_path, preset, out_dir = ".";
  long seed = -1;
  int workers = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed, "master seed override");
    cmd->add_option("--workers", workers, "worker threads (default: all cores)");
    cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a routing agent");
  add_common(train_cmd);
  train_cmd->add_option("--preset", preset,
                        "classical-3truck | quantum-rank2 | quantum-rank23 | quantum-cyclic");
  bool train_schema = false;
  train_cmd->add_flag("--print-schema", train_schema, "print the config schema and exit");

  CLI::App* solve_cmd = app.add_subcommand("solve", "solve a full instance with a trained agent");
  add_common(solve_cmd);
  std::string checkpoint_prefix, instance_path;
  solve_cmd->add_option("--checkpoint", checkpoint_prefix, "checkpoint prefix (without .json)")
      ->required();
  solve_cmd->add_option("--instance", instance_path, "instance JSON file")->required();
  bool solve_schema = false;
  solve_cmd->add_flag("--print-schema", solve_schema, "print the config schema and exit");

  CLI::App* bench_cmd =
      app.add_subcommand("benchmark-qonn", "tomography accuracy benchmark");
  add_common(bench_cmd);
  bool bench_schema = false;
  bench_cmd->add_flag("--print-schema", bench_schema, "print the config schema and exit");

  CLI::App* gen_cmd = app.add_subcommand("gen-instance", "generate a synthetic instance");
  add_common(gen_cmd);
  long gen_nodes = 0, gen_groups = 0, gen_boxes = 0;
  gen_cmd->add_option("--nodes", gen_nodes, "node count");
  gen_cmd->add_option("--groups", gen_groups, "box group count");
  gen_cmd->add_option("--boxes", gen_boxes, "total box count");
  bool gen_schema = false;
  gen_cmd->add_flag("--print-schema", gen_schema, "print the config schema and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    if (workers > 0) kernels::set_worker_count(workers);
    if (train_cmd->parsed()) {
      if (train_schema) {
        std::cout << schema_doc(kTrainTopSchema).dump(2) << "\n";
        return 0;
      }
      return cmd_train(preset, config_path, seed, out_dir);
    }
    if (solve_cmd->parsed()) {
      if (solve_schema) {
        std::cout << schema_doc(kSolveTopSchema).dump(2) << "\n";
        return 0;
      }
      return cmd_solve(checkpoint_prefix, instance_path, config_path, seed, out_dir);
    }
    if (bench_cmd->parsed()) {
      if (bench_schema) {
        std::cout << schema_doc(kBenchmarkSchema).dump(2) << "\n";
        return 0;
      }
      return cmd_benchmark_qonn(config_path, seed, out_dir);
    }
    if (gen_cmd->parsed()) {
      if (gen_schema) {
        std::cout << schema_doc(kGenSchema).dump(2) << "\n";
        return 0;
      }
      return cmd_gen_instance(config_path, gen_nodes, gen_groups, gen_boxes, seed, out_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IncompatibleArtifactError& e) {
    std::cerr << "incompatible artifact: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
