#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "twosyn/metrics.hpp"
#include "twosyn/scenario.hpp"
#include "twosyn/simulation.hpp"

namespace twosyn {

struct RunSpec {
  std::string scenario = "prop-delay";  // built-in name or scenario file path
  std::vector<PolicyKind> policies;     // empty: the scenario's comparison set
  std::uint64_t seed = 1;
  int repetitions = 1;
  std::filesystem::path out_dir = "results";
  int parallelism = 1;
  RunOptions options;
};

// Stable per-run seed. Adding or removing a policy leaves the other runs'
// seeds unchanged.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& scenario, const std::string& policy,
                                 int repetition) {
  const std::string triple = scenario + '\x1f' + policy + '\x1f' + std::to_string(repetition);
  return seed ^ fnv1a64(triple);
}

inline Scenario resolve_scenario(const std::string& name_or_path) {
  if (auto s = find_builtin(name_or_path)) return *s;
  if (std::filesystem::exists(name_or_path)) return load_scenario_file(name_or_path);
  throw std::invalid_argument("unknown scenario '" + name_or_path + "'");
}

struct RunResult {
  PolicyKind policy;
  int repetition = 0;
  std::uint64_t seed = 0;
  RunReport report;
  std::string error;  // empty on success
  bool ok() const { return error.empty(); }
};

struct PolicySummary {
  std::string policy;
  int runs = 0;
  Summary fct;
};

struct BatchResult {
  Scenario scenario;
  std::vector<RunResult> runs;  // policy-major, repetition-minor
  std::vector<PolicySummary> summaries;
  int failures() const {
    return static_cast<int>(std::count_if(runs.begin(), runs.end(), [](const RunResult& r) { return !r.ok(); }));
  }
};

inline std::filesystem::path run_dir(const RunSpec& spec, const Scenario& s, const RunResult& r) {
  std::ostringstream rep;
  rep << "rep" << std::setw(3) << std::setfill('0') << r.repetition;
  return spec.out_dir / s.name / r.policy.name() / rep.str();
}

// Runs every (policy, repetition) pair. Runs are independent; with
// parallelism > 1 they are spread over worker threads and the results are
// merged in a fixed order, so output does not depend on the thread count.
inline BatchResult run_batch(const RunSpec& spec, bool write_files = true) {
  if (spec.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  if (spec.parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
  BatchResult batch;
  batch.scenario = resolve_scenario(spec.scenario);
  const std::vector<PolicyKind> policies = spec.policies.empty() ? batch.scenario.compare : spec.policies;
  for (const PolicyKind& p : policies) {
    for (int rep = 0; rep < spec.repetitions; ++rep) {
      RunResult r;
      r.policy = p;
      r.repetition = rep;
      r.seed = derive_seed(spec.seed, batch.scenario.name, p.name(), rep);
      batch.runs.push_back(std::move(r));
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < batch.runs.size(); i = next++) {
      RunResult& r = batch.runs[i];
      try {
        r.report = run_scenario(batch.scenario, r.policy, r.seed, spec.options);
        if (!r.report.violations.empty()) {
          r.error = "invariant violation: " + r.report.violations.front();
        }
        if (write_files) export_csv(r.report, run_dir(spec, batch.scenario, r));
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  const int threads = std::min<int>(spec.parallelism, static_cast<int>(batch.runs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const PolicyKind& p : policies) {
    PolicySummary ps;
    ps.policy = p.name();
    std::vector<double> fcts;
    for (const RunResult& r : batch.runs) {
      if (!(r.policy == p) || !r.ok()) continue;
      ++ps.runs;
      const auto v = completed_fcts(r.report);
      fcts.insert(fcts.end(), v.begin(), v.end());
    }
    ps.fct = summarize(fcts);
    batch.summaries.push_back(ps);
  }
  return batch;
}

// summary.csv: scenario,policy,runs,flows,mean_fct,stddev,p50,p99
inline void write_summary_csv(const std::vector<BatchResult>& batches, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const auto path = dir / "summary.csv";
  auto out = detail::open_csv(path);
  out << "scenario,policy,runs,flows,mean_fct,stddev,p50,p99\n";
  for (const BatchResult& b : batches) {
    for (const PolicySummary& s : b.summaries) {
      out << b.scenario.name << ',' << s.policy << ',' << s.runs << ',' << s.fct.n << ',' << fixed(s.fct.mean) << ','
          << fixed(s.fct.stddev) << ',' << fixed(s.fct.p50) << ',' << fixed(s.fct.p99) << '\n';
    }
  }
  detail::close_csv(out, path);
}

// Plain-text comparison table with a bar per policy, scaled to the slowest.
inline void print_table(const BatchResult& b, std::ostream& os) {
  os << "scenario " << b.scenario.name;
  if (!b.scenario.paper_faithful) os << "  [simulated stand-in, not paper-faithful]";
  os << "\n";
  double worst = 0.0;
  for (const auto& s : b.summaries) worst = std::max(worst, s.fct.mean);
  os << std::left << std::setw(15) << "policy" << std::right << std::setw(6) << "flows" << std::setw(12)
     << "mean FCT s" << std::setw(11) << "stddev" << std::setw(11) << "p50" << std::setw(11) << "p99" << "\n";
  for (const auto& s : b.summaries) {
    const int bar = worst > 0 ? static_cast<int>(std::lround(30.0 * s.fct.mean / worst)) : 0;
    os << std::left << std::setw(15) << s.policy << std::right << std::setw(6) << s.fct.n << std::setw(12)
       << fixed(s.fct.mean, 4) << std::setw(11) << fixed(s.fct.stddev, 4) << std::setw(11) << fixed(s.fct.p50, 4)
       << std::setw(11) << fixed(s.fct.p99, 4) << "  " << std::string(static_cast<std::size_t>(bar), '#') << "\n";
  }
  for (const RunResult& r : b.runs) {
    if (!r.ok()) os << "FAILED " << r.policy.name() << " rep " << r.repetition << ": " << r.error << "\n";
  }
}

}  // namespace twosyn
