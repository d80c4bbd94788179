// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "twosyn/twosyn.hpp"

using namespace twosyn;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 7;
int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

std::string f4(double v) { return fixed(v, 4); }

std::vector<PolicyKind> all_policies(int k) {
  std::vector<PolicyKind> v;
  for (int p = 1; p <= k; ++p) v.push_back(PolicyKind::fixed(p));
  for (const char* name : {"random", "2syn", "egreedy", "ucb", "thompson"}) v.push_back(*PolicyKind::parse(name));
  return v;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

int differing_files(const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b) {
  int n = 0;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || it->second != v) ++n;
  }
  for (const auto& [k, v] : b) {
    if (!a.count(k)) ++n;
  }
  return n;
}

// Whole built-in suite, every applicable policy, one repetition each.
std::vector<BatchResult> run_suite(const fs::path& out, int jobs) {
  std::vector<BatchResult> batches;
  for (const Scenario& s : builtin_suite()) {
    RunSpec spec;
    spec.scenario = s.name;
    spec.policies = all_policies(s.k);
    spec.seed = kSeed;
    spec.out_dir = out;
    spec.parallelism = jobs;
    batches.push_back(run_batch(spec));
  }
  write_summary_csv(batches, out);
  return batches;
}

const RunReport& find_run(const std::vector<BatchResult>& suite, const std::string& scenario,
                          const std::string& policy) {
  for (const BatchResult& b : suite) {
    if (b.scenario.name != scenario) continue;
    for (const RunResult& r : b.runs) {
      if (r.policy.name() == policy) return r.report;
    }
  }
  throw std::runtime_error("no run for " + scenario + "/" + policy);
}

double batch_mean(const BatchResult& b, const std::string& policy) {
  for (const PolicySummary& s : b.summaries) {
    if (s.policy == policy) return s.fct.mean;
  }
  throw std::runtime_error("no summary for " + policy);
}

BatchResult repeated(const std::string& scenario, std::vector<PolicyKind> policies, int reps) {
  RunSpec spec;
  spec.scenario = scenario;
  spec.policies = std::move(policies);
  spec.seed = kSeed;
  spec.repetitions = reps;
  return run_batch(spec, false);
}

int ceil_log2(std::uint64_t x) {
  int r = 0;
  while ((1ULL << r) < x) ++r;
  return r;
}

void single_flow_criteria() {
  Scenario s = *find_builtin("prop-delay");
  std::get<RepeatedFile>(s.workload.flows).count = 1;
  const RunReport s1 = run_scenario(s, PolicyKind::fixed(1), kSeed);
  const RunReport s2 = run_scenario(s, PolicyKind::fixed(2), kSeed);
  const RunReport ts = run_scenario(s, PolicyKind::two_syn(), kSeed);
  const SimTime f1 = *s1.flow_records.at(0).fct;
  const SimTime f2 = *s2.flow_records.at(0).fct;
  const SimTime ft = *ts.flow_records.at(0).fct;
  report(1, "2SYN equals the best static path on a single flow", ft == f2 && f2 < f1,
         "2SYN " + std::to_string(ft.count()) + " ns, Static2 " + std::to_string(f2.count()) + " ns, Static1 " +
             std::to_string(f1.count()) + " ns");

  const TcpConfig tcp;
  const std::uint64_t segments = (1'000'000 + tcp.mss - 1) / tcp.mss;
  const std::uint64_t first_window = (1'000'000 + std::uint64_t{tcp.initial_window} * tcp.mss - 1) /
                                     (std::uint64_t{tcp.initial_window} * tcp.mss);
  const int rounds = ceil_log2(first_window + 1);
  const SimTime rtt = s.paths[1].one_way_delay * 2;
  const double oracle = (1 + rounds + 1) * rtt.seconds();
  const double err = std::abs(f2.seconds() - oracle);
  report(2, "Static2 FCT matches the slow-start oracle", err <= rtt.seconds(),
         "measured " + f4(f2.seconds()) + " s, oracle " + f4(oracle) + " s (" + std::to_string(rounds) +
             " data rounds, " + std::to_string(segments) + " segments), error " + f4(err) + " s");
}

void prop_delay_criterion() {
  const BatchResult b = repeated("prop-delay", baseline_policies(2), 20);
  const double s1 = batch_mean(b, "Static1");
  const double s2 = batch_mean(b, "Static2");
  const double rnd = batch_mean(b, "Random");
  const double ts = batch_mean(b, "2SYN");
  const double mid = (s1 + s2) / 2;
  const bool pass = b.failures() == 0 && std::abs(ts - s2) <= 0.05 * s2 && s2 < rnd && rnd < s1 &&
                    std::abs(rnd - mid) <= 0.15 * mid;
  report(3, "prop-delay ordering over 20 reps", pass,
         "Static1 " + f4(s1) + ", Static2 " + f4(s2) + ", Random " + f4(rnd) + " (midpoint " + f4(mid) + "), 2SYN " +
             f4(ts));
}

void queueing_criterion() {
  const BatchResult b = repeated("queueing", {PolicyKind::fixed(1), PolicyKind::fixed(2), PolicyKind::two_syn()}, 20);
  const double s1 = batch_mean(b, "Static1");
  const double s2 = batch_mean(b, "Static2");
  const double ts = batch_mean(b, "2SYN");
  report(4, "queueing: 2SYN near Static2 and below Static1 over 20 reps",
         b.failures() == 0 && ts <= 1.10 * s2 && ts < s1,
         "Static1 " + f4(s1) + ", Static2 " + f4(s2) + ", 2SYN " + f4(ts) + " (ratio " + f4(ts / s2) + ")");
}

void bw_drop_criterion(const std::vector<BatchResult>& suite) {
  const RunReport& ts = find_run(suite, "bw-drop", "2SYN");
  const double s1 = mean_fct(find_run(suite, "bw-drop", "Static1"));
  const double s2 = mean_fct(find_run(suite, "bw-drop", "Static2"));
  const double m = mean_fct(ts);
  int early = 0;
  int late = 0;
  std::string trace;
  for (const FlowRecord& f : ts.flow_records) {
    const PathId p = f.chosen_path.value_or(0);
    trace += std::to_string(p);
    if (f.index < 8 && p == 2) ++early;
    if (f.index >= 8 && p == 1) ++late;
  }
  report(5, "bw-drop: 2SYN follows the faster path", early >= 7 && late >= 10 && m < std::min(s1, s2),
         "trace " + trace + ", path 2 in " + std::to_string(early) + "/8 early, path 1 in " + std::to_string(late) +
             "/12 late, mean 2SYN " + f4(m) + " vs Static1 " + f4(s1) + ", Static2 " + f4(s2));
}

struct Tail {
  double mean = 0.0;
  double path2 = 0.0;
};

// Last 25 flows of every pair.
Tail tail(const RunReport& r) {
  double sum = 0.0;
  int n = 0;
  int on2 = 0;
  for (const FlowRecord& f : r.flow_records) {
    if (f.index < 25) continue;
    ++n;
    if (f.completed()) sum += f.fct->seconds();
    if (f.chosen_path == 2) ++on2;
  }
  return {n ? sum / n : 0.0, n ? static_cast<double>(on2) / n : 0.0};
}

void mab_fixed_criterion(const std::vector<BatchResult>& suite) {
  const Tail ts = tail(find_run(suite, "mab-fixed", "2SYN"));
  bool pass = true;
  std::string detail = "2SYN last-25 mean " + f4(ts.mean);
  for (const char* p : {"EpsilonGreedy", "UCB", "Thompson"}) {
    const RunReport& r = find_run(suite, "mab-fixed", p);
    const Tail t = tail(r);
    const bool all_done = r.counter("flows_aborted") == 0;
    pass = pass && all_done && t.mean <= 1.15 * ts.mean && t.path2 >= 0.80;
    detail += std::string("; ") + p + " " + f4(t.mean) + " (x" + f4(t.mean / ts.mean) + "), path 2 in " +
              fixed(100 * t.path2, 1) + "%";
  }
  report(6, "mab-fixed: bandits converge to the faster path", pass, detail);
}

void mab_drop_criterion(const std::vector<BatchResult>& suite) {
  const double ts = mean_fct(find_run(suite, "mab-drop", "2SYN"));
  bool pass = true;
  std::string detail = "2SYN " + f4(ts);
  for (const char* p : {"EpsilonGreedy", "UCB", "Thompson"}) {
    const double m = mean_fct(find_run(suite, "mab-drop", p));
    pass = pass && ts < m;
    detail += std::string(", ") + p + " " + f4(m);
  }
  report(7, "mab-drop: 2SYN beats every bandit", pass, detail);
}

void overhead_criterion(const std::vector<BatchResult>& suite) {
  const RunReport& r = find_run(suite, "prop-delay", "2SYN");
  const std::uint64_t n = r.counter("flows_established");
  const OverheadEstimate e = destination_overhead(r);
  const bool counters_ok = r.counter("syn_duplicated") == n && r.counter("rst_sent") == n &&
                           r.counter("late_synack_dropped") <= n;
  const bool ratio_ok = std::abs(e.measured - e.predicted) <= 0.5 * e.predicted;
  report(8, "one extra SYN and half-open connection per flow", counters_ok && ratio_ok && n > 0,
         "n " + std::to_string(n) + ", syn_duplicated " + std::to_string(r.counter("syn_duplicated")) +
             ", rst_sent " + std::to_string(r.counter("rst_sent")) + ", late_synack_dropped " +
             std::to_string(r.counter("late_synack_dropped")) + ", overhead measured " + f4(e.measured) +
             " vs predicted " + f4(e.predicted));
}

void invariant_criterion(const std::vector<BatchResult>& suite) {
  int runs = 0;
  int bad = 0;
  std::string first;
  for (const BatchResult& b : suite) {
    for (const RunResult& r : b.runs) {
      ++runs;
      if (r.ok() && r.report.violations.empty()) continue;
      ++bad;
      if (first.empty()) first = b.scenario.name + "/" + r.policy.name() + ": " + r.error;
    }
  }
  report(10, "invariants across every built-in scenario and policy", bad == 0 && runs > 0,
         std::to_string(runs) + " runs, " + std::to_string(bad) + " with violations" +
             (first.empty() ? "" : " (first: " + first + ")"));
}

}  // namespace

int main() {
  try {
    single_flow_criteria();
    prop_delay_criterion();
    queueing_criterion();

    const fs::path root = fs::temp_directory_path() / "twosyn_acceptance";
    fs::remove_all(root);
    const std::vector<BatchResult> suite = run_suite(root / "a", 1);
    bw_drop_criterion(suite);
    mab_fixed_criterion(suite);
    mab_drop_criterion(suite);
    overhead_criterion(suite);

    run_suite(root / "b", 1);
    run_suite(root / "c", 8);
    const auto a = tree(root / "a");
    const int repeat_diff = differing_files(a, tree(root / "b"));
    const int jobs_diff = differing_files(a, tree(root / "c"));
    report(9, "suite output is reproducible", repeat_diff == 0 && jobs_diff == 0 && !a.empty(),
           std::to_string(a.size()) + " files, " + std::to_string(repeat_diff) + " differ on repeat, " +
               std::to_string(jobs_diff) + " differ with 8 jobs");
    invariant_criterion(suite);
    fs::remove_all(root);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
