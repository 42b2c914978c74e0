// neurotraj: data generation, relabeling, training, evaluation, closed-loop
// simulation, latency sweeps and plotting from one binary.

#include "neurotraj/driving_model.hpp"
#include "neurotraj/metrics.hpp"
#include "neurotraj/model_planner.hpp"
#include "neurotraj/parallel.hpp"
#include "neurotraj/scenario.hpp"
#include "neurotraj/simulator.hpp"
#include "neurotraj/svg_plot.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

namespace nt = neurotraj;
namespace fs = std::filesystem;
using nt::io::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string config_path;
};

/// Provenance record written next to every artifact.
class RunManifest {
 public:
  RunManifest(std::string command, const Globals& g) : command_(std::move(command)), seed_(g.seed) {}

  void set_config(const json& effective) { config_ = effective; }
  void arg(const std::string& key, json value) { args_[key] = std::move(value); }
  void input(const fs::path& p) { inputs_.push_back({{"path", p.string()}, {"sha256", nt::io::sha256_file(p)}}); }
  void output(const fs::path& p) { outputs_.push_back({{"path", p.string()}, {"sha256", nt::io::sha256_file(p)}}); }

  void write(const fs::path& path) const {
    const json doc{{"tool", "neurotraj"},
                   {"tool_version", NEUROTRAJ_VERSION},
                   {"command", command_},
                   {"args", args_},
                   {"seed", seed_},
                   {"config_sha256", nt::io::sha256_hex(config_.dump())},
                   {"config", config_},
                   {"inputs", inputs_},
                   {"outputs", outputs_}};
    nt::io::write_file_atomic(path, doc.dump(1) + "\n");
    spdlog::debug("manifest {}", path.string());
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  json config_ = json::object();
  json args_ = json::object();
  json inputs_ = json::array();
  json outputs_ = json::array();
};

fs::path sidecar(const fs::path& artifact, const std::string& suffix) {
  return fs::path(artifact.string() + suffix);
}

json load_config(const Globals& g, RunManifest& m) {
  if (g.config_path.empty()) return json::object();
  m.input(g.config_path);
  auto j = nt::io::parse_json(nt::io::read_file(g.config_path), "config " + g.config_path);
  if (!j.is_object()) throw nt::Error("config " + g.config_path + " must be a JSON object");
  return j;
}

json section(const json& cfg, const char* key) { return cfg.contains(key) ? cfg.at(key) : json::object(); }

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  nt::io::write_file_atomic(path, text);
}

std::vector<double> parse_latencies(const std::string& list) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const std::string item = list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    char* end = nullptr;
    const double ms = std::strtod(item.c_str(), &end);
    if (item.empty() || end != item.c_str() + item.size() || !(ms >= 0.0))
      throw CLI::ValidationError("--latencies", "'" + item + "' is not a nonnegative number of milliseconds");
    out.push_back(ms / 1000.0);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

nt::SimConfig sim_config_from_json(const json& j) {
  nt::SimConfig c;
  if (!j.is_object()) throw nt::Error("sim config must be an object");
  auto opt = [&](const char* key, double& slot) {
    if (j.contains(key)) slot = nt::io::get_field<double>(j, key);
  };
  opt("control_dt", c.control_dt);
  opt("plan_period", c.plan_period);
  opt("goal_radius", c.goal_radius);
  opt("time_budget", c.time_budget);
  if (j.contains("gains")) c.gains = nt::gains_from_json(j.at("gains"));
  if (!(c.control_dt > 0.0) || !(c.plan_period > 0.0)) throw nt::Error("sim rates must be positive");
  return c;
}

json sim_config_to_json(const nt::SimConfig& c) {
  return {{"control_dt", c.control_dt},
          {"plan_period", c.plan_period},
          {"goal_radius", c.goal_radius},
          {"time_budget", c.time_budget},
          {"gains", nt::gains_to_json(c.gains)}};
}

/// "oracle" or a model file.
std::function<std::unique_ptr<nt::Planner>()> planner_factory(const std::string& spec, RunManifest& m) {
  if (spec == "oracle") return [] { return std::make_unique<nt::OraclePlanner>(); };
  m.input(spec);
  auto model = std::make_shared<const nt::DrivingModel>(nt::DrivingModel::load(spec));
  return [model] { return std::make_unique<nt::ModelPlanner>(model); };
}

std::vector<nt::SimScenario> load_scenarios(const std::string& spec, RunManifest& m) {
  const auto suite = nt::standard_suite();
  if (spec.empty() || spec == "suite") return suite;
  if (spec.rfind("suite:", 0) == 0) {
    const auto name = spec.substr(6);
    for (const auto& s : suite)
      if (s.name == name) return {s};
    throw nt::Error("no suite scenario named '" + name + "'");
  }
  m.input(spec);
  const auto j = nt::io::parse_json(nt::io::read_file(spec), "scenario file " + spec);
  std::vector<nt::SimScenario> out;
  try {
    if (j.is_array())
      for (const auto& s : j) out.push_back(nt::scenario_from_json(s));
    else
      out.push_back(nt::scenario_from_json(j));
  } catch (const nt::Error& e) {
    throw nt::Error(spec + ": " + e.what());
  }
  if (out.empty()) throw nt::Error(spec + ": no scenarios");
  return out;
}

std::vector<nt::Episode> load_dataset(const fs::path& dir, RunManifest& m) {
  m.input(dir / "manifest.json");
  return nt::read_dataset(dir, true);
}

nt::DatasetManifest save_dataset(const fs::path& dir, std::span<const nt::Episode> eps, std::uint64_t seed,
                                 RunManifest& m) {
  auto dm = nt::write_dataset(dir, eps, seed);
  m.output(dir / "manifest.json");
  return dm;
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_gen(const Globals& g, const fs::path& out, std::size_t count, const std::string& set_path) {
  RunManifest m("gen", g);
  const json cfg = load_config(g, m);
  nt::ScenarioSet set;
  if (!set_path.empty()) {
    m.input(set_path);
    set = nt::scenario_set_from_json(nt::io::parse_json(nt::io::read_file(set_path), "scenario set " + set_path));
  } else if (cfg.contains("scenario_set")) {
    set = nt::scenario_set_from_json(cfg.at("scenario_set"));
  }
  m.set_config({{"scenario_set", nt::scenario_set_to_json(set)}});
  m.arg("count", count);
  m.arg("out", out.string());

  std::vector<nt::Episode> eps(count);
  nt::parallel_for(count, g.jobs, [&](std::size_t i) {
    eps[i] = nt::generate_from_set(set, nt::episode_seed(g.seed, i));
    eps[i].id = nt::episode_id(i);
  });
  save_dataset(out, eps, g.seed, m);
  m.write(out / "run_manifest.json");
  spdlog::info("generated {} episodes in {}", count, out.string());
}

void cmd_relabel(const Globals& g, const fs::path& data, const fs::path& out, double margin, double radius) {
  RunManifest m("relabel", g);
  load_config(g, m);
  m.set_config({{"margin", margin}, {"vehicle_radius", radius}});
  m.arg("data", data.string());
  m.arg("out", out.string());
  auto eps = load_dataset(data, m);
  std::vector<char> changed(eps.size(), 0);
  nt::parallel_for(eps.size(), g.jobs, [&](std::size_t i) {
    auto r = nt::relabel_causal(eps[i], margin, radius);
    changed[i] = r.label != eps[i].label;
    eps[i] = std::move(r);
  });
  save_dataset(out, eps, nt::read_manifest(data).base_seed, m);
  m.write(out / "run_manifest.json");
  spdlog::info("relabeled {} of {} episodes into {}", std::count(changed.begin(), changed.end(), 1), eps.size(),
               out.string());
}

void cmd_train(const Globals& g, const fs::path& data, const fs::path& out, const std::string& ablation,
               std::optional<int> epochs, fs::path log_path) {
  RunManifest m("train", g);
  const json cfg = load_config(g, m);
  const auto mcfg = nt::model_config_from_json(section(cfg, "model"));
  auto tcfg = nt::train_config_from_json(section(cfg, "train"));
  if (epochs) tcfg.max_epochs = *epochs;
  const auto ab = nt::ablation_from_string(ablation);
  m.set_config({{"model", nt::model_config_to_json(mcfg)}, {"train", nt::train_config_to_json(tcfg)}});
  m.arg("ablation", nt::to_string(ab));
  m.arg("data", data.string());
  m.arg("out", out.string());
  if (log_path.empty()) log_path = sidecar(out, ".log.csv");

  const auto eps = load_dataset(data, m);
  spdlog::info("training {} on {} episodes (ablation {})", out.string(), eps.size(), nt::to_string(ab));
  const auto res = nt::train(eps, mcfg, tcfg, ab, g.seed, [](const nt::TrainLogRow& r) {
    spdlog::info("epoch {:3d} train {:.4f} val {:.4f} val_ADE {:.3f}", r.epoch, r.train_loss, r.val_loss, r.val_ade);
  });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  res.model.save(out);
  write_text(log_path, nt::train_log_csv(res.log));
  m.output(out);
  m.output(log_path);
  m.write(sidecar(out, ".manifest.json"));
  spdlog::info("best epoch {}", res.best_epoch);
}

void cmd_eval(const Globals& g, const fs::path& model_path, const fs::path& data, const fs::path& report,
              const std::string& split, const fs::path& predictions) {
  RunManifest m("eval", g);
  const json cfg = load_config(g, m);
  const auto tcfg = nt::train_config_from_json(section(cfg, "train"));
  m.set_config({{"train", nt::train_config_to_json(tcfg)}});
  m.arg("split", split);
  m.arg("data", data.string());
  m.input(model_path);
  const auto model = nt::DrivingModel::load(model_path);
  const auto eps = load_dataset(data, m);

  const auto parts = nt::split_dataset(eps.size(), tcfg);
  std::vector<std::size_t> idx;
  if (split == "test") idx = parts.test;
  else if (split == "val") idx = parts.val;
  else if (split == "train") idx = parts.train;
  else {
    idx.resize(eps.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  if (idx.empty()) throw nt::Error("split '" + split + "' is empty");
  const auto sel = nt::select(eps, idx);

  std::vector<nt::ContinuousTrajectory> trajs(sel.size());
  nt::parallel_for(sel.size(), g.jobs, [&](std::size_t i) {
    trajs[i] = model.infer(sel[i]->map_window, sel[i]->v0);
  });
  std::vector<nt::MetricsReport> reports;
  std::string csv = nt::metrics_csv_header();
  for (std::size_t i = 0; i < sel.size(); ++i) {
    reports.push_back(nt::evaluate(trajs[i], *sel[i]));
    csv += nt::metrics_csv_row(sel[i]->id, reports.back());
  }
  const auto all = nt::aggregate(reports);
  csv += nt::metrics_csv_row("ALL", all);
  write_text(report, csv);
  m.output(report);

  if (!predictions.empty()) {
    std::string p = "episode,t,label_x,label_y,pred_x,pred_y\n";
    char buf[256];
    for (std::size_t i = 0; i < sel.size(); ++i)
      for (const auto& s : sel[i]->label) {
        const auto e = nt::eval(trajs[i], s.t);
        std::snprintf(buf, sizeof buf, "%s,%.2f,%.9g,%.9g,%.9g,%.9g\n", sel[i]->id.c_str(), s.t, s.position.x(),
                      s.position.y(), e.position.x(), e.position.y());
        p += buf;
      }
    write_text(predictions, p);
    m.output(predictions);
  }
  m.write(sidecar(report, ".manifest.json"));
  spdlog::info("{} episodes: E_ad {:.3f} m, E_fd {:.3f} m, E_v {:.3f} m/s", sel.size(), all.E_ad, all.E_fd, all.E_v);
}

void cmd_simulate(const Globals& g, const std::string& model, const std::string& scenario, double latency_ms,
                  const std::string& mode, const fs::path& trace, fs::path outcome, double speedup) {
  RunManifest m("simulate", g);
  const json cfg = load_config(g, m);
  auto sim = sim_config_from_json(section(cfg, "sim"));
  sim.latency = latency_ms / 1000.0;
  m.set_config({{"sim", sim_config_to_json(sim)}});
  m.arg("model", model);
  m.arg("scenario", scenario);
  m.arg("latency_ms", latency_ms);
  m.arg("mode", mode);
  const auto scenarios = load_scenarios(scenario, m);
  if (scenarios.size() != 1) throw nt::Error("simulate needs exactly one scenario");
  const auto planner = planner_factory(model, m)();
  const auto& sc = scenarios.front();
  const auto res = mode == "realtime" ? nt::run_episode_realtime(*planner, sc, sim, g.seed, speedup)
                                      : nt::run_episode(*planner, sc, sim, g.seed);
  if (outcome.empty()) outcome = sidecar(trace, ".outcome.json");
  write_text(trace, nt::trace_csv(res));
  write_text(outcome, nt::outcome_json(sc, res, sim.latency, g.seed).dump(1) + "\n");
  m.output(trace);
  m.output(outcome);
  m.write(sidecar(trace, ".manifest.json"));
  spdlog::info("{}: {} at t = {:.2f} s{}{}", sc.name, nt::to_string(res.outcome), res.end_time,
               res.reason.empty() ? "" : ", ", res.reason);
}

void cmd_sweep(const Globals& g, const std::string& model, const std::string& scenarios_spec,
               const std::string& latencies, std::size_t seed_count, const fs::path& out) {
  RunManifest m("sweep-latency", g);
  const json cfg = load_config(g, m);
  const auto sim = sim_config_from_json(section(cfg, "sim"));
  const auto lat = parse_latencies(latencies);
  m.set_config({{"sim", sim_config_to_json(sim)}});
  m.arg("model", model);
  m.arg("scenarios", scenarios_spec.empty() ? "suite" : scenarios_spec);
  m.arg("latencies", latencies);
  m.arg("seeds", seed_count);
  const auto scenarios = load_scenarios(scenarios_spec, m);
  const auto factory = planner_factory(model, m);
  std::vector<std::uint64_t> seeds(seed_count);
  std::iota(seeds.begin(), seeds.end(), g.seed);
  spdlog::info("sweeping {} latencies x {} scenarios x {} seeds", lat.size(), scenarios.size(), seeds.size());
  const auto rows = nt::sweep_latency(factory, scenarios, lat, seeds, sim, g.jobs);
  write_text(out, nt::latency_csv(rows));
  m.output(out);
  m.write(sidecar(out, ".manifest.json"));
  for (const auto& r : rows) spdlog::info("{:5.0f} ms: {}/{}", r.latency * 1000.0, r.successes, r.runs);
}

void cmd_plot(const Globals& g, const fs::path& input, const std::string& kind, const fs::path& out,
              const std::string& episode) {
  RunManifest m("plot", g);
  load_config(g, m);
  m.arg("kind", kind);
  m.input(input);
  const auto text = nt::io::read_file(input);
  std::string svg;
  try {
    svg = nt::plot::plot_csv(text, nt::plot::plot_kind_from_string(kind),
                             episode.empty() ? std::nullopt : std::optional<std::string>(episode));
  } catch (const nt::Error& e) {
    throw nt::Error(input.string() + ": " + e.what());
  }
  write_text(out, svg);
  m.output(out);
  m.write(sidecar(out, ".manifest.json"));
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("neurotraj");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("NEUROTRAJ_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Continuous-intention trajectory planning toolkit"};
  app.set_version_flag("--version", std::string(NEUROTRAJ_VERSION));
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for all randomness")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 256u));
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);

  std::function<void()> action;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic episode dataset");
  std::string gen_out, scenario_set;
  std::size_t count = 100;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", count, "Number of episodes")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--scenario-set", scenario_set, "Scenario set JSON")->check(CLI::ExistingFile);
  gen->callback([&] { action = [&] { cmd_gen(g, gen_out, count, scenario_set); }; });

  auto* rel = app.add_subcommand("relabel", "Replace non-causal labels with safe stops");
  std::string rel_data, rel_out;
  double margin = 2.0, radius = 1.0;
  rel->add_option("--data", rel_data, "Input dataset directory")->required()->check(CLI::ExistingDirectory);
  rel->add_option("--out", rel_out, "Output dataset directory")->required();
  rel->add_option("--margin", margin, "Stop margin [m]")->capture_default_str()->check(CLI::NonNegativeNumber);
  rel->add_option("--vehicle-radius", radius, "Collision radius [m]")->capture_default_str()->check(CLI::NonNegativeNumber);
  rel->callback([&] { action = [&] { cmd_relabel(g, rel_data, rel_out, margin, radius); }; });

  auto* tr = app.add_subcommand("train", "Train a driving model");
  std::string tr_data, tr_out, ablation = "none", tr_log;
  std::optional<int> epochs;
  tr->add_option("--data", tr_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", tr_out, "Model file")->required();
  tr->add_option("--ablation", ablation, "Ablation switch")
      ->capture_default_str()
      ->check(CLI::IsMember({"none", "no-intention", "no-v0", "no-cos", "no-hos", "big-hos"}));
  tr->add_option("--epochs", epochs, "Override the maximum epoch count")->check(CLI::NonNegativeNumber);
  tr->add_option("--log", tr_log, "Training log CSV (default <out>.log.csv)");
  tr->callback([&] { action = [&] { cmd_train(g, tr_data, tr_out, ablation, epochs, tr_log); }; });

  auto* ev = app.add_subcommand("eval", "Open-loop metrics on a dataset split");
  std::string ev_model, ev_data, ev_report, ev_split = "test", ev_pred;
  ev->add_option("--model", ev_model, "Model file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", ev_report, "Report CSV")->required();
  ev->add_option("--split", ev_split, "Which split")->capture_default_str()->check(
      CLI::IsMember({"test", "val", "train", "all"}));
  ev->add_option("--predictions", ev_pred, "Per-sample prediction CSV");
  ev->callback([&] { action = [&] { cmd_eval(g, ev_model, ev_data, ev_report, ev_split, ev_pred); }; });

  auto* si = app.add_subcommand("simulate", "Run one closed-loop episode");
  std::string si_model, si_scenario, mode = "sim", trace, outcome;
  double latency_ms = 0.0, speedup = 1.0;
  si->add_option("--model", si_model, "Model file or 'oracle'")->required();
  si->add_option("--scenario", si_scenario, "Scenario JSON or suite:<name>")->required();
  si->add_option("--latency-ms", latency_ms, "Planning latency")->capture_default_str()->check(CLI::Range(0.0, 800.0));
  si->add_option("--mode", mode, "sim or realtime")->capture_default_str()->check(CLI::IsMember({"sim", "realtime"}));
  si->add_option("--speedup", speedup, "Realtime speedup factor")->capture_default_str()->check(CLI::PositiveNumber);
  si->add_option("--trace", trace, "Trace CSV")->required();
  si->add_option("--outcome", outcome, "Outcome JSON (default <trace>.outcome.json)");
  si->callback([&] { action = [&] { cmd_simulate(g, si_model, si_scenario, latency_ms, mode, trace, outcome, speedup); }; });

  auto* sw = app.add_subcommand("sweep-latency", "Success rate against planning latency");
  std::string sw_model, sw_scenarios, latencies = "0,100,200,300,400,500,650,800", sw_out;
  std::size_t seed_count = 5;
  sw->add_option("--model", sw_model, "Model file or 'oracle'")->required();
  sw->add_option("--scenarios", sw_scenarios, "Scenario JSON (object or array) or suite:<name>; default standard suite");
  sw->add_option("--latencies", latencies, "Comma-separated milliseconds")->capture_default_str();
  sw->add_option("--seeds", seed_count, "Seeds per scenario, starting at --seed")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sw->add_option("--out", sw_out, "Success-rate CSV")->required();
  sw->callback([&] { action = [&] { cmd_sweep(g, sw_model, sw_scenarios, latencies, seed_count, sw_out); }; });

  auto* pl = app.add_subcommand("plot", "Render a CSV as SVG");
  std::string pl_in, pl_kind, pl_out, pl_episode;
  pl->add_option("--input", pl_in, "CSV file")->required()->check(CLI::ExistingFile);
  pl->add_option("--kind", pl_kind, "Plot kind")->required()->check(
      CLI::IsMember({"trajectory", "latency-curve", "training-curve"}));
  pl->add_option("--out", pl_out, "SVG file")->required();
  pl->add_option("--episode", pl_episode, "Episode id for trajectory plots");
  pl->callback([&] { action = [&] { cmd_plot(g, pl_in, pl_kind, pl_out, pl_episode); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* scope = &app;
    for (const auto* sub : app.get_subcommands()) scope = sub;
    std::cerr << scope->help();
    return 2;
  }

  try {
    action();
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
