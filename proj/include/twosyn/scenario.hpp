#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "twosyn/policies.hpp"
#include "twosyn/rng.hpp"
#include "twosyn/topology.hpp"

namespace twosyn {

enum class Pacing { Sequential, Concurrent };

struct RepeatedFile {
  std::uint64_t size = 1'000'000;
  int count = 20;
  Direction direction = Direction::Download;
  Pacing pacing = Pacing::Sequential;
};

// Web-search flow-size mixture: 62% small, 18% medium, 20% large. Sizes are
// log-uniform within each class.
struct WebSearchMix {
  int count = 100;
  Direction direction = Direction::Download;
};

inline constexpr double kWebSmallShare = 0.62;
inline constexpr double kWebMediumShare = 0.18;
inline constexpr std::uint64_t kWebSmallMin = 10'000;
inline constexpr std::uint64_t kWebMediumMin = 100'000;
inline constexpr std::uint64_t kWebLargeMin = 1'000'000;
inline constexpr std::uint64_t kWebLargeMax = 30'000'000;

inline std::uint64_t log_uniform(RngStream& rng, std::uint64_t lo, std::uint64_t hi) {
  const double x = std::exp(std::log(static_cast<double>(lo)) +
                            rng.uniform01() * (std::log(static_cast<double>(hi)) - std::log(static_cast<double>(lo))));
  return std::clamp(static_cast<std::uint64_t>(x), lo, hi);
}

inline std::uint64_t draw_web_search_size(RngStream& rng) {
  const double u = rng.uniform01();
  if (u < kWebSmallShare) return std::min(log_uniform(rng, kWebSmallMin, kWebMediumMin), kWebMediumMin - 1);
  if (u < kWebSmallShare + kWebMediumShare) return log_uniform(rng, kWebMediumMin, kWebLargeMin);
  return std::max(log_uniform(rng, kWebLargeMin, kWebLargeMax), kWebLargeMin + 1);
}

// Long-lived greedy flows across one path, rate-capped at their sender.
struct BackgroundFlows {
  PathId path = 1;
  int n_flows = 1;
  std::uint64_t per_flow_cap = 100'000'000;
  Direction direction = Direction::Download;
  bool active_at_start = true;
};

struct Workload {
  std::variant<RepeatedFile, WebSearchMix> flows = RepeatedFile{};
  std::vector<BackgroundFlows> background;

  int flows_per_pair() const {
    return std::visit([](const auto& w) { return w.count; }, flows);
  }
  Direction direction() const {
    return std::visit([](const auto& w) { return w.direction; }, flows);
  }
  Pacing pacing() const {
    if (const auto* r = std::get_if<RepeatedFile>(&flows)) return r->pacing;
    return Pacing::Sequential;
  }
};

struct AtTime {
  SimTime at{};
};
// Fires when this fraction of all foreground flows has completed.
struct AfterFractionOfFlows {
  double fraction = 0.5;
};

enum class LinkSide { Fwd, Rev, Both };

struct CapacityChange {
  PathId path = 1;
  LinkSide side = LinkSide::Both;
  std::uint64_t bps = 0;
};
struct BackgroundStart {
  int group = 0;  // index into Workload::background
};
struct BackgroundStop {
  int group = 0;
};

struct ScheduledChange {
  std::variant<AtTime, AfterFractionOfFlows> trigger;
  std::variant<CapacityChange, BackgroundStart, BackgroundStop> action;
};

struct Scenario {
  std::string name;
  std::string description;
  bool paper_faithful = true;
  std::uint64_t seed = 1;
  int k = 2;
  std::vector<PathSpec> paths;
  int pairs = 1;
  Workload workload;
  std::vector<ScheduledChange> events;
  PolicyKind policy = PolicyKind::two_syn();
  // Policies compared by "--policy all".
  std::vector<PolicyKind> compare;
  FlowKeyMode flow_key_mode = FlowKeyMode::FiveTuple;
  SimTime route_update_delay{};
  // Background flows get this long to reach steady state before the first
  // foreground flow; their own starts are spread over the first half.
  SimTime warmup{};
  // Each pair's first flow starts uniformly in [warmup, warmup + jitter).
  SimTime start_jitter{};
  SimTime horizon = SimTime::sec(36'000);
};

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Returns one message per offending field; empty when the scenario is valid.
inline std::vector<std::string> validation_errors(const Scenario& s) {
  std::vector<std::string> errs;
  auto fail = [&](const std::string& field, const std::string& msg) { errs.push_back(field + ": " + msg); };
  if (s.name.empty()) fail("name", "must not be empty");
  if (s.k < 1) fail("k", "must be >= 1");
  if (static_cast<int>(s.paths.size()) != s.k) {
    fail("paths", "expected " + std::to_string(s.k) + " paths, got " + std::to_string(s.paths.size()));
  }
  for (std::size_t i = 0; i < s.paths.size(); ++i) {
    const std::string f = "paths.path" + std::to_string(i + 1);
    if (s.paths[i].fwd_bps == 0) fail(f + ".fwd_mbps", "must be > 0");
    if (s.paths[i].rev_bps == 0) fail(f + ".rev_mbps", "must be > 0");
    if (s.paths[i].one_way_delay < SimTime{}) fail(f + ".delay_ms", "must be >= 0");
  }
  if (s.pairs < 1) fail("pairs", "must be >= 1");
  if (s.pairs > 100) fail("pairs", "at most 100 host pairs");
  const int per_pair = s.workload.flows_per_pair();
  if (per_pair < 0) fail("workload.count", "must be >= 0");
  if (per_pair > 16'000) fail("workload.count", "at most 16000 flows per pair");
  if (const auto* r = std::get_if<RepeatedFile>(&s.workload.flows)) {
    if (r->size > (std::uint64_t{1} << 40)) fail("workload.size_bytes", "must be <= 2^40");
  }
  auto path_ok = [&](PathId p) { return p >= 1 && p <= static_cast<int>(s.paths.size()); };
  for (std::size_t g = 0; g < s.workload.background.size(); ++g) {
    const auto& b = s.workload.background[g];
    const std::string f = "workload.background" + std::to_string(g + 1);
    if (!path_ok(b.path)) fail(f + ".path", "path " + std::to_string(b.path) + " does not exist");
    if (b.n_flows < 1) fail(f + ".flows", "must be >= 1");
    if (b.per_flow_cap == 0) fail(f + ".cap_mbps", "must be > 0");
  }
  std::optional<SimTime> last_time;
  std::optional<double> last_fraction;
  for (std::size_t e = 0; e < s.events.size(); ++e) {
    const auto& ev = s.events[e];
    const std::string f = "events.event" + std::to_string(e + 1);
    if (const auto* t = std::get_if<AtTime>(&ev.trigger)) {
      if (t->at < SimTime{}) fail(f + ".trigger", "time must be >= 0");
      if (last_time && t->at <= *last_time) fail(f + ".trigger", "timed changes must be strictly increasing");
      last_time = t->at;
    } else {
      const double x = std::get<AfterFractionOfFlows>(ev.trigger).fraction;
      if (!(x > 0.0 && x < 1.0)) fail(f + ".trigger", "fraction must be in (0, 1)");
      if (last_fraction && x <= *last_fraction) {
        fail(f + ".trigger", "fraction triggers must be strictly increasing");
      }
      last_fraction = x;
    }
    if (const auto* c = std::get_if<CapacityChange>(&ev.action)) {
      if (!path_ok(c->path)) fail(f + ".path", "path " + std::to_string(c->path) + " does not exist");
      if (c->bps == 0) fail(f + ".mbps", "must be > 0");
    } else {
      const int g = std::holds_alternative<BackgroundStart>(ev.action) ? std::get<BackgroundStart>(ev.action).group
                                                                       : std::get<BackgroundStop>(ev.action).group;
      if (g < 0 || g >= static_cast<int>(s.workload.background.size())) {
        fail(f + ".group", "background group " + std::to_string(g + 1) + " does not exist");
      }
    }
  }
  auto policy_ok = [&](const PolicyKind& p, const std::string& field) {
    if (p.type == PolicyType::Static && !path_ok(p.static_path)) {
      fail(field, "static path " + std::to_string(p.static_path) + " does not exist");
    }
    if (p.type == PolicyType::EpsilonGreedy && !(p.epsilon >= 0.0 && p.epsilon <= 1.0)) {
      fail(field, "epsilon must be in [0, 1]");
    }
    if (p.type == PolicyType::Ucb && !(p.ucb_c >= 0.0)) fail(field, "ucb_c must be >= 0");
  };
  policy_ok(s.policy, "policy.policy");
  for (const PolicyKind& p : s.compare) policy_ok(p, "policy.compare");
  if (s.route_update_delay < SimTime{}) fail("policy.route_update_delay_ms", "must be >= 0");
  if (s.warmup < SimTime{}) fail("warmup_s", "must be >= 0");
  if (s.start_jitter < SimTime{}) fail("start_jitter_ms", "must be >= 0");
  if (s.horizon <= SimTime{}) fail("horizon_s", "must be > 0");
  return errs;
}

inline void validate(const Scenario& s) {
  const auto errs = validation_errors(s);
  if (errs.empty()) return;
  std::string msg = "invalid scenario '" + s.name + "'";
  for (const auto& e : errs) msg += "\n  " + e;
  throw ValidationError(msg);
}

// One planned foreground flow.
struct FlowSpec {
  int pair = 0;
  int index = 0;
  std::uint64_t bytes = 0;
  Direction direction = Direction::Download;
};

// The randomized parts of a run, fixed up front from the seed.
struct FlowSchedule {
  std::vector<std::vector<FlowSpec>> per_pair;
  // Sequential pacing: one flow at a time, round-robin over the pairs.
  std::vector<std::pair<int, int>> order;
  std::vector<SimTime> first_start;                 // per pair
  std::vector<std::vector<SimTime>> background_start;  // per group, per flow
  int total() const {
    int n = 0;
    for (const auto& v : per_pair) n += static_cast<int>(v.size());
    return n;
  }
};

// Number of completed foreground flows after which a fraction trigger fires.
inline int fraction_threshold(double fraction, int total_flows) {
  return std::max(1, static_cast<int>(std::ceil(fraction * static_cast<double>(total_flows) - 1e-9)));
}

inline FlowSchedule build_schedule(const Scenario& s, std::uint64_t seed) {
  validate(s);
  FlowSchedule fs;
  RngStream sizes(seed, "workload.sizes");
  RngStream jitter(seed, "workload.jitter");
  fs.per_pair.resize(static_cast<std::size_t>(s.pairs));
  for (int j = 0; j < s.pairs; ++j) {
    const int n = s.workload.flows_per_pair();
    for (int i = 0; i < n; ++i) {
      FlowSpec f{j, i, 0, s.workload.direction()};
      if (const auto* r = std::get_if<RepeatedFile>(&s.workload.flows)) f.bytes = r->size;
      else f.bytes = draw_web_search_size(sizes);
      fs.per_pair[static_cast<std::size_t>(j)].push_back(f);
    }
  }
  for (int i = 0; i < s.workload.flows_per_pair(); ++i) {
    for (int j = 0; j < s.pairs; ++j) fs.order.emplace_back(j, i);
  }
  for (int j = 0; j < s.pairs; ++j) {
    SimTime t = s.warmup;
    if (s.start_jitter > SimTime{}) {
      t = t + SimTime::ns(static_cast<std::int64_t>(jitter.uniform_int(static_cast<std::uint64_t>(s.start_jitter.count()))));
    }
    fs.first_start.push_back(t);
  }
  for (const BackgroundFlows& b : s.workload.background) {
    std::vector<SimTime> starts;
    const SimTime spread = s.warmup / 2;
    for (int i = 0; i < b.n_flows; ++i) {
      std::int64_t off = 0;
      if (spread > SimTime{}) off = static_cast<std::int64_t>(jitter.uniform_int(static_cast<std::uint64_t>(spread.count())));
      starts.push_back(SimTime::ns(off));
    }
    fs.background_start.push_back(std::move(starts));
  }
  return fs;
}

inline std::vector<PolicyKind> baseline_policies(int k) {
  std::vector<PolicyKind> v;
  for (int p = 1; p <= k; ++p) v.push_back(PolicyKind::fixed(p));
  v.push_back(PolicyKind::random());
  v.push_back(PolicyKind::two_syn());
  return v;
}

inline std::vector<PolicyKind> bandit_comparison(int k) {
  auto v = baseline_policies(k);
  v.push_back(PolicyKind::epsilon_greedy(0.1));
  v.push_back(PolicyKind::ucb(1.0));
  v.push_back(PolicyKind::thompson());
  return v;
}

namespace detail {
inline PathSpec path(double mbps, double one_way_ms) {
  PathSpec p;
  p.fwd_bps = p.rev_bps = static_cast<std::uint64_t>(mbps * 1e6);
  p.one_way_delay = SimTime::from_seconds(one_way_ms / 1000.0);
  return p;
}
inline ScheduledChange drop_after(double fraction, PathId p, double mbps) {
  return ScheduledChange{AfterFractionOfFlows{fraction},
                         CapacityChange{p, LinkSide::Both, static_cast<std::uint64_t>(mbps * 1e6)}};
}
}  // namespace detail

inline std::vector<Scenario> builtin_suite() {
  std::vector<Scenario> v;

  Scenario prop;
  prop.name = "prop-delay";
  prop.description = "equal 300 Mbps paths, RTT 120 ms vs 80 ms, 20 x 1 MB downloads";
  prop.paths = {detail::path(300, 60), detail::path(300, 40)};
  prop.workload.flows = RepeatedFile{1'000'000, 20, Direction::Download, Pacing::Sequential};
  prop.compare = baseline_policies(2);
  v.push_back(prop);

  Scenario queue;
  queue.name = "queueing";
  queue.description = "300 Mbps / 120 ms paths, 5 background flows at 100 Mbps each on path 1";
  queue.paths = {detail::path(300, 60), detail::path(300, 60)};
  queue.workload.flows = RepeatedFile{1'000'000, 20, Direction::Download, Pacing::Sequential};
  queue.workload.background = {BackgroundFlows{1, 5, 100'000'000, Direction::Download, true}};
  queue.warmup = SimTime::sec(4);
  queue.compare = baseline_policies(2);
  v.push_back(queue);

  Scenario bw;
  bw.name = "bw-drop";
  bw.description = "path 1 100 Mbps, path 2 300 -> 30 Mbps after 40% of 20 x 100 MB downloads";
  bw.paths = {detail::path(100, 40), detail::path(300, 40)};
  bw.workload.flows = RepeatedFile{100'000'000, 20, Direction::Download, Pacing::Sequential};
  bw.events = {detail::drop_after(0.4, 2, 30)};
  bw.compare = baseline_policies(2);
  v.push_back(bw);

  Scenario mab;
  mab.name = "mab-fixed";
  mab.description = "200 vs 300 Mbps, 5 pairs, 50 x 10 MB per pair";
  mab.paths = {detail::path(200, 40), detail::path(300, 40)};
  mab.pairs = 5;
  mab.workload.flows = RepeatedFile{10'000'000, 50, Direction::Download, Pacing::Sequential};
  mab.compare = bandit_comparison(2);
  v.push_back(mab);

  Scenario drop = mab;
  drop.name = "mab-drop";
  drop.description = "200 vs 300 Mbps, 5 pairs, 20 x 200 MB per pair, path 2 -> 100 Mbps after 40%";
  drop.workload.flows = RepeatedFile{200'000'000, 20, Direction::Download, Pacing::Sequential};
  drop.events = {detail::drop_after(0.4, 2, 100)};
  v.push_back(drop);

  // Synthetic analogue of a wired DSL line next to a cellular link. Not a
  // reproduction of any measured trace.
  Scenario lte;
  lte.name = "lte-vs-dsl-sim";
  lte.description = "SIMULATED STAND-IN, not paper-faithful: asymmetric DSL-like path next to a "
                    "higher-RTT LTE-like path whose capacity varies";
  lte.paper_faithful = false;
  PathSpec dsl;
  dsl.rev_bps = 100'000'000;
  dsl.fwd_bps = 10'000'000;
  dsl.one_way_delay = SimTime::ms(15);
  PathSpec cell = detail::path(60, 35);
  lte.paths = {dsl, cell};
  lte.workload.flows = WebSearchMix{60, Direction::Download};
  const std::uint64_t cell_mbps[] = {20, 120, 40, 150, 10, 80};
  for (int i = 0; i < 6; ++i) {
    lte.events.push_back(ScheduledChange{AtTime{SimTime::sec(3 * (i + 1))},
                                         CapacityChange{2, LinkSide::Both, cell_mbps[i] * 1'000'000}});
  }
  lte.compare = baseline_policies(2);
  v.push_back(lte);

  for (Scenario& s : v) {
    s.k = static_cast<int>(s.paths.size());
    validate(s);
  }
  return v;
}

inline std::optional<Scenario> find_builtin(const std::string& name) {
  for (Scenario& s : builtin_suite()) {
    if (s.name == name) return s;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Scenario files.
//
//   name = my-run            # top level: name, description, seed, k, pairs,
//   pairs = 1                #   flow_key, warmup_s, start_jitter_ms, horizon_s
//   [paths]
//   path1.capacity_mbps = 300   # or path1.fwd_mbps / path1.rev_mbps
//   path1.delay_ms = 60         # one-way
//   [workload]
//   type = repeated_file        # or web_search
//   size_bytes = 1000000
//   count = 20
//   direction = download        # or upload
//   pacing = sequential         # or concurrent
//   background1.path = 1
//   background1.flows = 5
//   background1.cap_mbps = 100
//   background1.direction = download
//   background1.active = true
//   [events]
//   event1.trigger = fraction:0.4     # or time:<seconds>
//   event1.action = capacity          # or background_start / background_stop
//   event1.path = 2
//   event1.side = both                # fwd, rev, both
//   event1.mbps = 30
//   event1.group = 1
//   [policy]
//   policy = 2syn
//   compare = static1,static2,random,2syn
//   epsilon = 0.1
//   ucb_c = 1.0
//   route_update_delay_ms = 0
//
// Comments start with '#' or ';'. Unknown sections and keys are errors.
// ---------------------------------------------------------------------------

struct ScenarioParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

class FileParser {
 public:
  explicit FileParser(std::string origin) : origin_(std::move(origin)) {}

  Scenario parse(std::istream& in) {
    s_.paths.clear();
    s_.compare.clear();
    std::string line;
    std::string section;
    while (std::getline(in, line)) {
      ++line_no_;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') error("malformed section header");
        section = lower(trim(line.substr(1, line.size() - 2)));
        if (section != "paths" && section != "workload" && section != "events" && section != "policy") {
          error("unknown section [" + section + "]");
        }
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) error("expected key = value");
      const std::string key = lower(trim(line.substr(0, eq)));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) error("empty key");
      if (!seen_.insert(section + "." + key).second) error("duplicate key '" + key + "'");
      if (section.empty()) top(key, value);
      else if (section == "paths") paths(key, value);
      else if (section == "workload") workload(key, value);
      else if (section == "events") events(key, value);
      else policy(key, value);
    }
    return finish();
  }

 private:
  [[noreturn]] void error(const std::string& msg) const {
    throw ScenarioParseError(origin_ + ":" + std::to_string(line_no_) + ": " + msg);
  }

  double number(const std::string& v) const {
    double x = 0.0;
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc() || p != end || !std::isfinite(x)) error("'" + v + "' is not a number");
    return x;
  }
  std::int64_t integer(const std::string& v) const {
    std::int64_t x = 0;
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc() || p != end) error("'" + v + "' is not an integer");
    return x;
  }
  bool boolean(const std::string& v) const {
    const std::string l = lower(v);
    if (l == "true" || l == "yes" || l == "1") return true;
    if (l == "false" || l == "no" || l == "0") return false;
    error("'" + v + "' is not a boolean");
  }
  std::uint64_t mbps(const std::string& v) const {
    const double x = number(v);
    if (x <= 0) error("rate must be > 0");
    return static_cast<std::uint64_t>(std::llround(x * 1e6));
  }
  Direction direction(const std::string& v) const {
    const std::string l = lower(v);
    if (l == "download") return Direction::Download;
    if (l == "upload") return Direction::Upload;
    error("direction must be download or upload");
  }
  PolicyKind policy_kind(const std::string& v) const {
    auto p = PolicyKind::parse(trim(v));
    if (!p) error("unknown policy '" + v + "'");
    return *p;
  }
  // Splits "path2.delay_ms" into (2, "delay_ms").
  std::pair<int, std::string> indexed(const std::string& key, const std::string& prefix) const {
    if (key.rfind(prefix, 0) != 0) error("unknown key '" + key + "'");
    const auto dot = key.find('.');
    if (dot == std::string::npos) error("unknown key '" + key + "'");
    const std::string idx = key.substr(prefix.size(), dot - prefix.size());
    if (idx.empty() || !std::all_of(idx.begin(), idx.end(), ::isdigit)) error("unknown key '" + key + "'");
    const int i = std::stoi(idx);
    if (i < 1 || i > 64) error("index out of range in '" + key + "'");
    return {i, key.substr(dot + 1)};
  }

  void top(const std::string& key, const std::string& v) {
    if (key == "name") s_.name = v;
    else if (key == "description") s_.description = v;
    else if (key == "seed") s_.seed = static_cast<std::uint64_t>(integer(v));
    else if (key == "k") k_ = static_cast<int>(integer(v));
    else if (key == "pairs") s_.pairs = static_cast<int>(integer(v));
    else if (key == "flow_key") {
      const std::string l = lower(v);
      if (l == "5tuple") s_.flow_key_mode = FlowKeyMode::FiveTuple;
      else if (l == "ippair") s_.flow_key_mode = FlowKeyMode::IpPair;
      else error("flow_key must be 5tuple or ippair");
    } else if (key == "warmup_s") s_.warmup = SimTime::from_seconds(number(v));
    else if (key == "start_jitter_ms") s_.start_jitter = SimTime::from_seconds(number(v) / 1000.0);
    else if (key == "horizon_s") s_.horizon = SimTime::from_seconds(number(v));
    else if (key == "paper_faithful") s_.paper_faithful = boolean(v);
    else error("unknown key '" + key + "'");
  }

  void paths(const std::string& key, const std::string& v) {
    auto [i, field] = indexed(key, "path");
    PathSpec& p = paths_[i];
    if (field == "capacity_mbps") p.fwd_bps = p.rev_bps = mbps(v);
    else if (field == "fwd_mbps") p.fwd_bps = mbps(v);
    else if (field == "rev_mbps") p.rev_bps = mbps(v);
    else if (field == "delay_ms") p.one_way_delay = SimTime::from_seconds(number(v) / 1000.0);
    else error("unknown key '" + key + "'");
  }

  void workload(const std::string& key, const std::string& v) {
    if (key.rfind("background", 0) == 0) {
      auto [i, field] = indexed(key, "background");
      BackgroundFlows& b = background_[i];
      if (field == "path") b.path = static_cast<PathId>(integer(v));
      else if (field == "flows") b.n_flows = static_cast<int>(integer(v));
      else if (field == "cap_mbps") b.per_flow_cap = mbps(v);
      else if (field == "direction") b.direction = direction(v);
      else if (field == "active") b.active_at_start = boolean(v);
      else error("unknown key '" + key + "'");
      return;
    }
    if (key == "type") {
      const std::string l = lower(v);
      if (l == "repeated_file") web_ = false;
      else if (l == "web_search") web_ = true;
      else error("type must be repeated_file or web_search");
    } else if (key == "size_bytes") {
      const auto x = integer(v);
      if (x < 0) error("size_bytes must be >= 0");
      file_.size = static_cast<std::uint64_t>(x);
    } else if (key == "count") {
      count_ = static_cast<int>(integer(v));
    } else if (key == "direction") {
      dir_ = direction(v);
    } else if (key == "pacing") {
      const std::string l = lower(v);
      if (l == "sequential") file_.pacing = Pacing::Sequential;
      else if (l == "concurrent") file_.pacing = Pacing::Concurrent;
      else error("pacing must be sequential or concurrent");
    } else {
      error("unknown key '" + key + "'");
    }
  }

  void events(const std::string& key, const std::string& v) {
    auto [i, field] = indexed(key, "event");
    RawEvent& e = events_[i];
    e.line = line_no_;
    if (field == "trigger") {
      const auto colon = v.find(':');
      if (colon == std::string::npos) error("trigger must be time:<s> or fraction:<x>");
      const std::string kind = lower(trim(v.substr(0, colon)));
      const double x = number(trim(v.substr(colon + 1)));
      if (kind == "time") e.trigger = AtTime{SimTime::from_seconds(x)};
      else if (kind == "fraction") e.trigger = AfterFractionOfFlows{x};
      else error("trigger must be time:<s> or fraction:<x>");
    } else if (field == "action") {
      e.action = lower(v);
      if (e.action != "capacity" && e.action != "background_start" && e.action != "background_stop") {
        error("action must be capacity, background_start or background_stop");
      }
    } else if (field == "path") {
      e.path = static_cast<PathId>(integer(v));
    } else if (field == "side") {
      const std::string l = lower(v);
      if (l == "fwd") e.side = LinkSide::Fwd;
      else if (l == "rev") e.side = LinkSide::Rev;
      else if (l == "both") e.side = LinkSide::Both;
      else error("side must be fwd, rev or both");
    } else if (field == "mbps") {
      e.bps = mbps(v);
    } else if (field == "group") {
      e.group = static_cast<int>(integer(v));
    } else {
      error("unknown key '" + key + "'");
    }
  }

  void policy(const std::string& key, const std::string& v) {
    if (key == "policy") policy_ = policy_kind(v);
    else if (key == "compare") {
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) s_.compare.push_back(policy_kind(item));
    } else if (key == "epsilon") epsilon_ = number(v);
    else if (key == "ucb_c") ucb_c_ = number(v);
    else if (key == "route_update_delay_ms") s_.route_update_delay = SimTime::from_seconds(number(v) / 1000.0);
    else error("unknown key '" + key + "'");
  }

  Scenario finish() {
    int expected = 1;
    for (const auto& [i, p] : paths_) {
      if (i != expected++) throw ScenarioParseError(origin_ + ": path indices must be 1..k without gaps");
      s_.paths.push_back(p);
    }
    s_.k = k_ ? *k_ : static_cast<int>(s_.paths.size());
    expected = 1;
    for (const auto& [i, b] : background_) {
      if (i != expected++) throw ScenarioParseError(origin_ + ": background indices must be contiguous from 1");
      s_.workload.background.push_back(b);
    }
    if (web_) s_.workload.flows = WebSearchMix{count_.value_or(100), dir_};
    else {
      file_.count = count_.value_or(20);
      file_.direction = dir_;
      s_.workload.flows = file_;
    }
    expected = 1;
    for (const auto& [i, e] : events_) {
      const std::string where = origin_ + ":" + std::to_string(e.line) + ": event" + std::to_string(i);
      if (i != expected++) throw ScenarioParseError(origin_ + ": event indices must be contiguous from 1");
      if (!e.trigger) throw ScenarioParseError(where + " has no trigger");
      if (e.action.empty()) throw ScenarioParseError(where + " has no action");
      ScheduledChange c{*e.trigger, CapacityChange{}};
      if (e.action == "capacity") {
        if (!e.path || !e.bps) throw ScenarioParseError(where + " needs path and mbps");
        c.action = CapacityChange{*e.path, e.side, *e.bps};
      } else {
        if (!e.group) throw ScenarioParseError(where + " needs group");
        if (e.action == "background_start") c.action = BackgroundStart{*e.group - 1};
        else c.action = BackgroundStop{*e.group - 1};
      }
      s_.events.push_back(c);
    }
    auto apply_params = [&](PolicyKind& p) {
      if (epsilon_ && p.type == PolicyType::EpsilonGreedy) p.epsilon = *epsilon_;
      if (ucb_c_ && p.type == PolicyType::Ucb) p.ucb_c = *ucb_c_;
    };
    s_.policy = policy_.value_or(PolicyKind::two_syn());
    apply_params(s_.policy);
    if (s_.compare.empty()) s_.compare = baseline_policies(static_cast<int>(s_.paths.size()));
    for (PolicyKind& p : s_.compare) apply_params(p);
    validate(s_);
    return s_;
  }

  struct RawEvent {
    std::optional<std::variant<AtTime, AfterFractionOfFlows>> trigger;
    std::string action;
    std::optional<PathId> path;
    LinkSide side = LinkSide::Both;
    std::optional<std::uint64_t> bps;
    std::optional<int> group;
    int line = 0;
  };

  std::string origin_;
  int line_no_ = 0;
  Scenario s_;
  std::set<std::string> seen_;
  std::optional<int> k_;
  std::map<int, PathSpec> paths_;
  std::map<int, BackgroundFlows> background_;
  std::map<int, RawEvent> events_;
  bool web_ = false;
  RepeatedFile file_;
  std::optional<int> count_;
  Direction dir_ = Direction::Download;
  std::optional<PolicyKind> policy_;
  std::optional<double> epsilon_;
  std::optional<double> ucb_c_;
};

}  // namespace detail

inline Scenario parse_scenario(std::istream& in, const std::string& origin = "<scenario>") {
  return detail::FileParser(origin).parse(in);
}

inline Scenario parse_scenario_string(const std::string& text, const std::string& origin = "<scenario>") {
  std::istringstream in(text);
  return parse_scenario(in, origin);
}

inline Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioParseError("cannot open scenario file " + path);
  return parse_scenario(in, path);
}

}  // namespace twosyn
