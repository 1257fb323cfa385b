#pragma once

// Command-line driver: solve, simulate, baseline, verify, dynamics.
//
// Every run resolves its configuration (JSON file, then flags), loads and
// validates all inputs, computes, and only then writes outputs. A failure
// before the write phase leaves the output directory untouched.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cim/contest.hpp"
#include "cim/deviation.hpp"
#include "cim/distribution.hpp"
#include "cim/equilibrium.hpp"
#include "cim/errors.hpp"
#include "cim/graph.hpp"
#include "cim/order_tree.hpp"

#ifndef CIM_VERSION
#define CIM_VERSION "0.0.0"
#endif

namespace cim::cli {

enum ExitCode : int { kOk = 0, kViolation = 1, kUsage = 2, kConsistency = 3 };

/// Solver above this many agents always runs typed.
inline constexpr std::size_t kTypedAbove = 50'000;

struct RunConfig {
  std::string command;
  std::string graph;
  std::optional<long long> requester;
  std::optional<std::size_t> degree;      ///< pick a requester of this degree
  std::string profile;                    ///< optional invitation profile JSON
  double prize = 1.0;
  double cost = 0.1;
  nlohmann::json dist = {{"kind", "exponential"}, {"lambda", 1.0}};
  std::size_t tasks = 1000;
  std::uint64_t seed = 1;
  bool typed = false;
  std::size_t grid = 256;
  std::size_t cap = 12;
  std::size_t threads = 0;
  std::size_t reps = 500;
  std::string mode = "typed";
  std::string out = "out";

  nlohmann::json to_json() const {
    nlohmann::json j = {{"command", command}, {"graph", graph},   {"prize", prize}, {"cost", cost},
                        {"dist", dist},       {"tasks", tasks},   {"seed", seed},   {"typed", typed},
                        {"grid", grid},       {"cap", cap},       {"threads", threads},
                        {"reps", reps},       {"mode", mode},     {"out", out}};
    j["requester"] = requester ? nlohmann::json(*requester) : nlohmann::json(nullptr);
    j["degree"] = degree ? nlohmann::json(*degree) : nlohmann::json(nullptr);
    j["profile"] = profile.empty() ? nlohmann::json(nullptr) : nlohmann::json(profile);
    return j;
  }
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "exponential:1", "uniform:0:1" or inline JSON.
inline nlohmann::json parse_dist_spec(const std::string& text) {
  if (!text.empty() && text.front() == '{') {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("--dist: ") + e.what());
    }
  }
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  auto num = [&](std::size_t k, double fallback) {
    if (k >= parts.size()) return fallback;
    try {
      std::size_t used = 0;
      double v = std::stod(parts[k], &used);
      if (used != parts[k].size()) throw std::invalid_argument(parts[k]);
      return v;
    } catch (const std::exception&) {
      throw UsageError("--dist: bad number '" + parts[k] + "'");
    }
  };
  if (parts.empty()) throw UsageError("--dist is empty");
  if (parts[0] == "exponential" || parts[0] == "exp") {
    if (parts.size() > 2) throw UsageError("--dist exponential takes one parameter");
    return {{"kind", "exponential"}, {"lambda", num(1, 1.0)}};
  }
  if (parts[0] == "uniform") {
    if (parts.size() > 3) throw UsageError("--dist uniform takes two parameters");
    return {{"kind", "uniform"}, {"l", num(1, 0.0)}, {"u", num(2, 1.0)}};
  }
  throw UsageError("--dist: unknown distribution '" + parts[0] + "'");
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config " + path + " must be a JSON object");
  try {
    if (j.contains("graph")) cfg.graph = j.at("graph").get<std::string>();
    if (j.contains("requester") && !j.at("requester").is_null()) cfg.requester = j.at("requester").get<long long>();
    if (j.contains("degree") && !j.at("degree").is_null()) cfg.degree = j.at("degree").get<std::size_t>();
    if (j.contains("profile") && !j.at("profile").is_null()) cfg.profile = j.at("profile").get<std::string>();
    if (j.contains("prize")) cfg.prize = j.at("prize").get<double>();
    if (j.contains("cost")) cfg.cost = j.at("cost").get<double>();
    if (j.contains("dist"))
      cfg.dist = j.at("dist").is_string() ? parse_dist_spec(j.at("dist").get<std::string>()) : j.at("dist");
    if (j.contains("tasks")) cfg.tasks = j.at("tasks").get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("typed")) cfg.typed = j.at("typed").get<bool>();
    if (j.contains("grid")) cfg.grid = j.at("grid").get<std::size_t>();
    if (j.contains("cap")) cfg.cap = j.at("cap").get<std::size_t>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<std::size_t>();
    if (j.contains("reps")) cfg.reps = j.at("reps").get<std::size_t>();
    if (j.contains("mode")) cfg.mode = j.at("mode").get<std::string>();
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

/// Loaded and validated inputs shared by all subcommands.
struct Inputs {
  SocialGraph graph;
  NodeId requester = 0;
  std::optional<InvitationProfile> profile;
  DistributionPtr dist;
  ContestParams params;
  std::size_t threads = 1;
};

inline Inputs load_inputs(const RunConfig& cfg) {
  if (cfg.graph.empty()) throw UsageError("--graph is required");
  Inputs in;
  in.params = {cfg.prize, cfg.cost};
  try {
    in.params.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("bad contest parameters: ") + e.what());
  }
  try {
    in.dist = distribution_from_json(cfg.dist);
  } catch (const std::exception& e) {
    throw UsageError(std::string("bad distribution: ") + e.what());
  }
  if (cfg.grid == 0) throw UsageError("--grid must be positive");
  if (cfg.mode != "typed" && cfg.mode != "exhaustive") throw UsageError("--mode must be typed or exhaustive");

  std::ifstream gin(cfg.graph);
  if (!gin) throw UsageError("cannot open graph file " + cfg.graph);
  try {
    in.graph = load_edge_list(gin);
  } catch (const ParseError& e) {
    throw UsageError(cfg.graph + ":" + std::to_string(e.line()) + ": " + e.what());
  }

  if (cfg.requester) {
    if (!in.graph.contains_original(*cfg.requester))
      throw UsageError("requester " + std::to_string(*cfg.requester) + " is not in the graph");
    in.requester = in.graph.dense_id(*cfg.requester);
  } else if (cfg.degree) {
    bool found = false;
    for (NodeId v = 0; v < in.graph.node_count() && !found; ++v)
      if (in.graph.degree(v) == *cfg.degree) {
        in.requester = v;
        found = true;
      }
    if (!found) throw UsageError("no node has degree " + std::to_string(*cfg.degree));
  } else {
    in.requester = in.graph.contains_original(0) ? in.graph.dense_id(0) : 0;
  }
  in.graph = in.graph.with_requester(in.requester);

  in.profile.emplace(in.graph);
  if (!cfg.profile.empty()) {
    std::ifstream pin(cfg.profile);
    if (!pin) throw UsageError("cannot open profile file " + cfg.profile);
    try {
      in.profile = profile_from_json(in.graph, nlohmann::json::parse(pin));
    } catch (const std::exception& e) {
      throw UsageError(cfg.profile + ": " + e.what());
    }
  }
  in.threads = cfg.threads == 0 ? default_threads() : cfg.threads;
  return in;
}

/// Output files are rendered in memory and written together at the end.
struct OutputSet {
  std::vector<std::pair<std::string, std::string>> files;
  std::string summary;
  int exit_code = kOk;

  void add(std::string name, std::string body) { files.emplace_back(std::move(name), std::move(body)); }
};

inline nlohmann::json meta_json(const RunConfig& cfg) {
  return {{"config", cfg.to_json()},
          {"seed", cfg.seed},
          {"rng", std::string(CounterRng::kAlgorithm)},
          {"version", CIM_VERSION}};
}

inline std::string csv_meta_line(const RunConfig& cfg) { return "# meta: " + meta_json(cfg).dump() + "\n"; }

inline std::string with_meta(nlohmann::json body, const RunConfig& cfg) {
  body["meta"] = meta_json(cfg);
  return body.dump(2) + "\n";
}

struct Solved {
  OrderTree tree;
  ThresholdProfile profile;
  TypeSignature types;
  SolveTrace trace;
  bool typed = false;
  double seconds = 0.0;
};

inline Solved solve(const Inputs& in, const RunConfig& cfg) {
  Solved s;
  auto h = derive_invitation_graph(in.graph, *in.profile);
  if (h.invited.empty()) throw UsageError("the requester has no neighbours to invite");
  s.tree = build_order_tree(h);
  s.typed = cfg.typed || s.tree.agent_count() > kTypedAbove;
  auto t0 = std::chrono::steady_clock::now();
  s.profile = solve_equilibrium(s.tree, in.params, *in.dist, &s.trace, SolveOptions{.typed = s.typed});
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  s.types = canonical_types(s.tree);
  return s;
}

inline nlohmann::json trace_json(const Solved& s, const SocialGraph& g) {
  nlohmann::json batches = nlohmann::json::array();
  for (auto& b : s.trace.batches) {
    nlohmann::json ids = nlohmann::json::array();
    for (NodeId v : b.agents) ids.push_back(g.original_id(v));
    batches.push_back({{"agents", std::move(ids)}, {"threshold", b.threshold}, {"min_threshold", b.min_threshold}});
  }
  return {{"agents", s.tree.agent_count()},
          {"type_classes", s.types.class_count(s.tree)},
          {"typed", s.typed},
          {"root_solves", s.trace.root_solves},
          {"max_solves_per_batch", s.trace.max_solves_per_batch},
          {"unconditional",
           s.profile.unconditional ? nlohmann::json(g.original_id(*s.profile.unconditional)) : nlohmann::json(nullptr)},
          {"batches", std::move(batches)}};
}

inline void cmd_solve(const RunConfig& cfg, const Inputs& in, OutputSet& out) {
  auto s = solve(in, cfg);
  std::ostringstream csv;
  csv << csv_meta_line(cfg);
  write_threshold_csv(csv, s.tree, s.profile, s.types, in.graph);
  out.add("thresholds.csv", csv.str());
  out.add("order_tree.json", with_meta(order_tree_to_json(s.tree, in.graph), cfg));
  std::ostringstream dot;
  dot << "// meta: " << meta_json(cfg).dump() << "\n";
  write_dot(dot, s.tree, in.graph);
  out.add("order_tree.dot", dot.str());
  out.add("solve_trace.json", with_meta(trace_json(s, in.graph), cfg));
  std::ostringstream line;
  line << "solve: |U|=" << s.tree.agent_count() << " types=" << s.types.class_count(s.tree)
       << " batches=" << s.trace.batches.size() << " unconditional="
       << (s.profile.unconditional ? std::to_string(in.graph.original_id(*s.profile.unconditional)) : "none")
       << " solve_seconds=" << s.seconds;
  out.summary = line.str();
}

inline std::string batch_line(const char* name, const BatchStats& st) {
  std::ostringstream line;
  auto med = st.median_best_quality();
  line << name << ": tasks=" << st.task_count() << " no_contributor=" << st.no_contributor_count
       << " single_winner=" << st.single_winner_fraction() << " max_winners=" << st.max_winners()
       << " median_best=" << (med ? format_double(*med) : "none") << " mean_payout=" << st.mean_payout;
  return line.str();
}

inline void cmd_simulate(const RunConfig& cfg, const Inputs& in, OutputSet& out) {
  auto s = solve(in, cfg);
  auto st = simulate_batch(s.tree, s.profile, in.params, *in.dist, cfg.tasks, cfg.seed, in.threads);
  std::ostringstream csv;
  csv << csv_meta_line(cfg);
  write_tasks_csv(csv, st);
  out.add("tasks.csv", csv.str());
  auto summary = batch_summary_json(st);
  summary["agents"] = s.tree.agent_count();
  out.add("summary.json", with_meta(std::move(summary), cfg));
  out.summary = batch_line("simulate", st);
}

inline void cmd_baseline(const RunConfig& cfg, const Inputs& in, OutputSet& out) {
  const std::size_t d = in.graph.degree(in.requester);
  if (d == 0) throw UsageError("the requester has no neighbours");
  auto st = mn_baseline(d, in.params, *in.dist, cfg.tasks, cfg.seed, in.threads);
  std::ostringstream csv;
  csv << csv_meta_line(cfg);
  write_tasks_csv(csv, st);
  out.add("baseline_tasks.csv", csv.str());
  auto summary = batch_summary_json(st);
  summary["degree"] = d;
  summary["threshold"] = mn_threshold(d, in.params, *in.dist);
  out.add("baseline_summary.json", with_meta(std::move(summary), cfg));
  out.summary = batch_line("baseline", st);
}

inline void cmd_verify(const RunConfig& cfg, const Inputs& in, OutputSet& out) {
  DeviationOptions opts;
  opts.cap = cfg.cap;
  opts.grid = cfg.grid;
  opts.threads = in.threads;
  opts.seed = cfg.seed;
  opts.typed_solver = cfg.typed;
  auto mode = cfg.mode == "exhaustive" ? VerifyMode::exhaustive : VerifyMode::typed;
  auto sum = verify_all(in.graph, in.params, *in.dist, mode, opts);
  out.add("verify.json", with_meta(summary_to_json(sum, in.graph, in.params.prize), cfg));
  std::ostringstream line;
  line << "verify: mode=" << cfg.mode << " agents=" << sum.agents << " checked=" << sum.checked
       << " type_classes=" << sum.type_classes << " distinct_trees=" << sum.distinct_trees
       << " violated=" << sum.violated << (sum.partial ? " partial" : "");
  out.summary = line.str();
  if (!sum.ok()) out.exit_code = kViolation;
}

inline void cmd_dynamics(const RunConfig& cfg, const Inputs& in, OutputSet& out) {
  auto s = solve(in, cfg);
  auto order = invitation_waves(derive_invitation_graph(in.graph, *in.profile));
  auto curve = population_dynamics(s.tree, s.profile, in.params, *in.dist, order, cfg.reps, cfg.seed, in.threads);
  std::ostringstream csv;
  csv << csv_meta_line(cfg);
  write_dynamics_csv(csv, curve);
  out.add("dynamics.csv", csv.str());
  std::size_t below = 0;
  for (double e : curve.endpoints) below += e < curve.reference;
  const double mean_end = curve.mean_best.empty() ? 0.0 : curve.mean_best.back();
  const double frac = curve.endpoints.empty() ? 0.0 : static_cast<double>(below) / static_cast<double>(curve.endpoints.size());
  nlohmann::json j = {{"agents", s.tree.agent_count()},
                      {"repetitions", cfg.reps},
                      {"reference", curve.reference},
                      {"mean_endpoint", mean_end},
                      {"relative_gap", curve.reference > 0 ? 1.0 - mean_end / curve.reference : 0.0},
                      {"fraction_endpoints_below_reference", frac}};
  out.add("dynamics.json", with_meta(std::move(j), cfg));
  std::ostringstream line;
  line << "dynamics: |U|=" << s.tree.agent_count() << " reps=" << cfg.reps << " mean_endpoint=" << mean_end
       << " reference=" << curve.reference << " below_fraction=" << frac;
  out.summary = line.str();
}

inline void write_outputs(const std::string& dir, const OutputSet& out) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory " + dir + ": " + ec.message());
  for (auto& [name, body] : out.files) {
    auto path = std::filesystem::path(dir) / name;
    std::ofstream os(path, std::ios::binary);
    os << body;
    if (!os) throw UsageError("cannot write " + path.string());
  }
}

inline int run(int argc, char** argv, std::ostream& sout = std::cout, std::ostream& serr = std::cerr) {
  CLI::App app{"Collective invitation contest: equilibria, simulation and verification", "cim"};
  app.set_version_flag("--version", std::string(CIM_VERSION));
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path, dist_text;
  std::optional<long long> requester;
  std::optional<std::size_t> degree;

  struct Flags {
    std::string graph, profile, mode, out;
    double prize = 0, cost = 0;
    std::size_t tasks = 0, grid = 0, cap = 0, threads = 0, reps = 0;
    std::uint64_t seed = 0;
    bool typed = false;
  } f;

  std::vector<CLI::Option*> opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file; flags override it");
    opts.push_back(sub->add_option("--graph", f.graph, "Edge list file"));
    sub->add_option("--requester", requester, "Requester node id (original id)");
    sub->add_option("--degree", degree, "Pick the first node of this degree as requester");
    opts.push_back(sub->add_option("--profile", f.profile, "Invitation profile JSON"));
    opts.push_back(sub->add_option("--prize", f.prize, "Prize M"));
    opts.push_back(sub->add_option("--cost", f.cost, "Contribution cost c"));
    sub->add_option("--dist", dist_text, "exponential:LAMBDA, uniform:L:U or inline JSON");
    opts.push_back(sub->add_option("--tasks", f.tasks, "Number of tasks"));
    opts.push_back(sub->add_option("--seed", f.seed, "Master seed"));
    opts.push_back(sub->add_flag("--typed", f.typed, "Use the type-sharing solver"));
    opts.push_back(sub->add_option("--grid", f.grid, "Quality grid size for verification"));
    opts.push_back(sub->add_option("--cap", f.cap, "Exhaustive deviation cap"));
    opts.push_back(sub->add_option("--threads", f.threads, "Worker threads (0 = all cores)"));
    opts.push_back(sub->add_option("--reps", f.reps, "Repetitions for dynamics"));
    opts.push_back(sub->add_option("--mode", f.mode, "typed or exhaustive"));
    opts.push_back(sub->add_option("--out", f.out, "Output directory"));
  };
  std::vector<std::pair<CLI::App*, void (*)(const RunConfig&, const Inputs&, OutputSet&)>> cmds = {
      {app.add_subcommand("solve", "Solve the equilibrium and export the order tree"), cmd_solve},
      {app.add_subcommand("simulate", "Monte Carlo batch of tasks under the mechanism"), cmd_simulate},
      {app.add_subcommand("baseline", "Monte Carlo batch without invitations"), cmd_baseline},
      {app.add_subcommand("verify", "Check that inviting everyone is a best response"), cmd_verify},
      {app.add_subcommand("dynamics", "Best quality as the population grows"), cmd_dynamics}};
  for (auto& [sub, fn] : cmds) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e, sout, serr);
    return rc == 0 ? kOk : kUsage;
  }

  OutputSet out;
  try {
    for (auto& [sub, fn] : cmds) {
      if (!sub->parsed()) continue;
      cfg.command = sub->get_name();
      if (!config_path.empty()) apply_config_file(cfg, config_path);
      auto given = [&](const char* name) { return sub->get_option(name)->count() > 0; };
      if (given("--graph")) cfg.graph = f.graph;
      if (requester) {
        cfg.requester = requester;
        cfg.degree.reset();
      }
      if (degree) {
        cfg.degree = degree;
        if (!requester) cfg.requester.reset();
      }
      if (given("--profile")) cfg.profile = f.profile;
      if (given("--prize")) cfg.prize = f.prize;
      if (given("--cost")) cfg.cost = f.cost;
      if (!dist_text.empty()) cfg.dist = parse_dist_spec(dist_text);
      if (given("--tasks")) cfg.tasks = f.tasks;
      if (given("--seed")) cfg.seed = f.seed;
      if (given("--typed")) cfg.typed = f.typed;
      if (given("--grid")) cfg.grid = f.grid;
      if (given("--cap")) cfg.cap = f.cap;
      if (given("--threads")) cfg.threads = f.threads;
      if (given("--reps")) cfg.reps = f.reps;
      if (given("--mode")) cfg.mode = f.mode;
      if (given("--out")) cfg.out = f.out;

      auto inputs = load_inputs(cfg);
      try {
        fn(cfg, inputs, out);
      } catch (const UsageError&) {
        throw;
      } catch (const std::exception& e) {
        serr << "cim: internal consistency error: " << e.what() << "\n";
        return kConsistency;
      }
      write_outputs(cfg.out, out);
    }
  } catch (const UsageError& e) {
    serr << "cim: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    serr << "cim: " << e.what() << "\n";
    return kUsage;
  }
  sout << out.summary << "\n";
  return out.exit_code;
}

}  // namespace cim::cli
