// Command-line runner for the 2SYN simulator.
//
//   twosyn_sim --scenario prop-delay --policy all --reps 20 --seed 7 --out results
//
// Exit codes: 0 ok, 1 one or more runs failed, 2 usage error.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "twosyn/twosyn.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailure = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Packet-level simulator of a 2SYN multihoming router"};
  app.allow_extras(false);

  std::string scenario = "prop-delay";
  std::string policy = "all";
  std::uint64_t seed = 1;
  int reps = 1;
  std::string out = "results";
  int jobs = 1;
  std::string flow_key;
  double route_delay_ms = -1.0;
  bool list = false;

  app.add_option("--scenario", scenario, "built-in scenario name, 'suite' for all built-ins, or a scenario file")
      ->capture_default_str();
  app.add_option("--policy", policy,
                 "'all', or a comma list of: static<i>, random, 2syn, egreedy, ucb, thompson")
      ->capture_default_str();
  app.add_option("--seed", seed, "base seed")->capture_default_str();
  app.add_option("--reps", reps, "repetitions per policy")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--out", out, "output directory")->capture_default_str();
  app.add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--flow-key", flow_key, "router flow key: 5tuple or ippair (default: scenario's)")
      ->check(CLI::IsMember({"5tuple", "ippair"}));
  app.add_option("--route-update-delay-ms", route_delay_ms,
                 "delay before a 2SYN route takes effect (default: scenario's)")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--list", list, "list built-in scenarios and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (list) {
    for (const twosyn::Scenario& s : twosyn::builtin_suite()) {
      std::cout << s.name << "  " << s.description << "\n";
    }
    return kExitOk;
  }

  std::vector<std::string> scenarios;
  if (scenario == "suite") {
    for (const twosyn::Scenario& s : twosyn::builtin_suite()) scenarios.push_back(s.name);
  } else {
    scenarios.push_back(scenario);
  }

  std::vector<twosyn::PolicyKind> policies;
  if (policy != "all") {
    for (const std::string& item : split(policy, ',')) {
      auto p = twosyn::PolicyKind::parse(item);
      if (!p) {
        std::cerr << "error: unknown policy '" << item << "'\n";
        return kExitUsage;
      }
      policies.push_back(*p);
    }
  }

  std::vector<twosyn::BatchResult> batches;
  int failures = 0;
  for (const std::string& name : scenarios) {
    twosyn::RunSpec spec;
    spec.scenario = name;
    spec.policies = policies;
    spec.seed = seed;
    spec.repetitions = reps;
    spec.out_dir = out;
    spec.parallelism = jobs;
    if (!flow_key.empty()) {
      spec.options.flow_key_mode = flow_key == "ippair" ? twosyn::FlowKeyMode::IpPair : twosyn::FlowKeyMode::FiveTuple;
    }
    if (route_delay_ms >= 0) spec.options.route_update_delay = twosyn::SimTime::from_seconds(route_delay_ms / 1000.0);

    try {
      const twosyn::Scenario s = twosyn::resolve_scenario(name);
      for (const twosyn::PolicyKind& p : policies) {
        if (p.type == twosyn::PolicyType::Static && p.static_path > s.k) {
          std::cerr << "error: " << p.name() << " does not exist in scenario " << s.name << " (k=" << s.k << ")\n";
          return kExitUsage;
        }
      }
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitUsage;
    }

    try {
      batches.push_back(twosyn::run_batch(spec));
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitRunFailure;
    }
    twosyn::print_table(batches.back(), std::cout);
    std::cout << "\n";
    failures += batches.back().failures();
  }

  try {
    twosyn::write_summary_csv(batches, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRunFailure;
  }
  if (failures > 0) {
    std::cerr << failures << " run(s) failed\n";
    return kExitRunFailure;
  }
  return kExitOk;
}
