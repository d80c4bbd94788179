#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "twosyn/packet.hpp"
#include "twosyn/simcore.hpp"

namespace twosyn {

enum class FlowClass { Small, Medium, Large };

inline constexpr std::uint64_t kSmallFlowLimit = 100'000;
inline constexpr std::uint64_t kLargeFlowFloor = 1'000'000;

// Small < 100 KB <= Medium <= 1 MB < Large.
inline FlowClass classify(std::uint64_t bytes) {
  if (bytes < kSmallFlowLimit) return FlowClass::Small;
  if (bytes <= kLargeFlowFloor) return FlowClass::Medium;
  return FlowClass::Large;
}

inline const char* to_string(FlowClass c) {
  switch (c) {
    case FlowClass::Small: return "small";
    case FlowClass::Medium: return "medium";
    case FlowClass::Large: return "large";
  }
  return "?";
}

struct FlowRecord {
  FlowKey flow_key;
  int pair = 0;
  int index = 0;  // position in the pair's flow sequence
  std::optional<PathId> chosen_path;
  SimTime syn_sent_at{};
  std::optional<SimTime> established_at;
  std::optional<SimTime> fct;  // absent for aborted flows
  std::uint64_t bytes = 0;
  std::uint64_t delivered_bytes = 0;
  std::uint64_t retransmissions = 0;  // data sender side
  // Server side: handshake received to connection closed.
  std::optional<SimTime> fct_at_dest;

  bool completed() const { return fct.has_value(); }
  FlowClass flow_class() const { return classify(bytes); }
};

// One server-side connection at a destination, for half-open accounting.
struct HalfOpenRecord {
  int pair = 0;
  std::uint32_t tag = 0;
  SimTime syn_received_at{};
  std::optional<SimTime> half_open_end;
  bool established = false;
};

struct ThroughputSeries {
  SimTime bucket = SimTime::ms(100);
  // bits_per_s[path - 1][bucket index]
  std::vector<std::vector<double>> bits_per_s;
  std::vector<std::uint64_t> payload_bytes;  // per path totals

  void add(PathId p, SimTime at, std::uint64_t bytes) {
    auto& row = bits_per_s.at(static_cast<std::size_t>(p - 1));
    const auto idx = static_cast<std::size_t>(at.count() / bucket.count());
    if (row.size() <= idx) row.resize(idx + 1, 0.0);
    row[idx] += static_cast<double>(bytes) * 8.0 / bucket.seconds();
    payload_bytes.at(static_cast<std::size_t>(p - 1)) += bytes;
  }
  // Integral of the series, in bytes.
  double integral_bytes(PathId p) const {
    double sum = 0.0;
    for (double v : bits_per_s.at(static_cast<std::size_t>(p - 1))) sum += v;
    return sum * bucket.seconds() / 8.0;
  }
};

struct RunReport {
  std::string scenario;
  std::string policy;
  std::uint64_t seed = 0;
  int k = 0;
  bool two_syn = false;
  std::vector<SimTime> path_rtts;
  std::vector<FlowRecord> flow_records;
  ThroughputSeries throughput_series;
  std::vector<std::pair<std::string, std::uint64_t>> counters;
  std::vector<std::pair<SimTime, std::size_t>> half_open_series;
  std::vector<HalfOpenRecord> half_open_records;
  std::vector<std::string> violations;
  SimTime end_time{};

  std::uint64_t counter(const std::string& name) const {
    for (const auto& [n, v] : counters) {
      if (n == name) return v;
    }
    throw std::out_of_range("no counter named " + name);
  }
};

inline double mean_fct(const RunReport& r, std::optional<FlowClass> filter = std::nullopt) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const FlowRecord& f : r.flow_records) {
    if (!f.completed() || (filter && f.flow_class() != *filter)) continue;
    sum += f.fct->seconds();
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_fct: no completed flow matches the selection");
  return sum / static_cast<double>(n);
}

struct OverheadEstimate {
  double measured = 0.0;
  double predicted = 0.0;  // RTT / FCT_D
  double extra_half_open_seconds_per_flow = 0.0;
  double mean_fct_at_dest = 0.0;
};

// Extra half-open connection-seconds at the destinations per flow, relative
// to the mean FCT seen by the destination. Extra connections are the ones
// that never completed their handshake. The predictor uses the RTT of each
// flow's chosen path.
inline OverheadEstimate destination_overhead(const RunReport& r) {
  if (!r.two_syn && r.k > 1) throw std::invalid_argument("destination_overhead: run did not use 2SYN");
  OverheadEstimate est;
  double fct_d = 0.0;
  double rtt = 0.0;
  std::size_t n = 0;
  for (const FlowRecord& f : r.flow_records) {
    if (!f.completed() || !f.fct_at_dest || !f.chosen_path) continue;
    fct_d += f.fct_at_dest->seconds();
    rtt += r.path_rtts.at(static_cast<std::size_t>(*f.chosen_path - 1)).seconds();
    ++n;
  }
  if (n == 0) throw std::invalid_argument("destination_overhead: no completed flows");
  est.mean_fct_at_dest = fct_d / static_cast<double>(n);
  if (r.k <= 1) return est;
  double extra = 0.0;
  for (const HalfOpenRecord& h : r.half_open_records) {
    if (h.established || !h.half_open_end) continue;
    extra += (*h.half_open_end - h.syn_received_at).seconds();
  }
  est.extra_half_open_seconds_per_flow = extra / static_cast<double>(n);
  est.measured = est.extra_half_open_seconds_per_flow / est.mean_fct_at_dest;
  est.predicted = (rtt / static_cast<double>(n)) / est.mean_fct_at_dest;
  return est;
}

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double p50 = 0.0;
  double p99 = 0.0;
};

// Percentile by linear interpolation between closest ranks.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  s.p50 = percentile(v, 0.50);
  s.p99 = percentile(v, 0.99);
  return s;
}

inline std::vector<double> completed_fcts(const RunReport& r) {
  std::vector<double> v;
  for (const FlowRecord& f : r.flow_records) {
    if (f.completed()) v.push_back(f.fct->seconds());
  }
  return v;
}

// Fixed-point rendering so CSV output does not depend on stream state.
inline std::string fixed(double v, int digits = 9) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

namespace detail {
inline std::ofstream open_csv(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  return out;
}
inline void close_csv(std::ofstream& out, const std::filesystem::path& p) {
  out.close();
  if (!out) throw std::runtime_error("write failed for " + p.string());
}
}  // namespace detail

// Writes flows.csv, throughput.csv and counters.csv into `dir`.
//   flows.csv      flow_key,policy,chosen_path,start,fct,bytes,retrans
//   throughput.csv t,path,bits_per_s   (t = bucket start in seconds)
//   counters.csv   name,value
// Absent values (no path chosen, aborted flow) are written as empty fields.
inline void export_csv(const RunReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  const auto flows_path = dir / "flows.csv";
  auto flows = detail::open_csv(flows_path);
  flows << "flow_key,policy,chosen_path,start,fct,bytes,retrans\n";
  for (const FlowRecord& f : r.flow_records) {
    flows << to_string(f.flow_key) << ',' << r.policy << ',';
    if (f.chosen_path) flows << *f.chosen_path;
    flows << ',' << format_seconds(f.syn_sent_at) << ',';
    if (f.fct) flows << format_seconds(*f.fct);
    flows << ',' << f.bytes << ',' << f.retransmissions << '\n';
  }
  detail::close_csv(flows, flows_path);

  const auto tput_path = dir / "throughput.csv";
  auto tput = detail::open_csv(tput_path);
  tput << "t,path,bits_per_s\n";
  const auto& series = r.throughput_series.bits_per_s;
  std::size_t buckets = 0;
  for (const auto& row : series) buckets = std::max(buckets, row.size());
  for (std::size_t b = 0; b < buckets; ++b) {
    const SimTime t = r.throughput_series.bucket * static_cast<std::int64_t>(b);
    for (std::size_t p = 0; p < series.size(); ++p) {
      const double v = b < series[p].size() ? series[p][b] : 0.0;
      tput << format_seconds(t) << ',' << (p + 1) << ',' << fixed(v, 1) << '\n';
    }
  }
  detail::close_csv(tput, tput_path);

  const auto counters_path = dir / "counters.csv";
  auto counters = detail::open_csv(counters_path);
  counters << "name,value\n";
  for (const auto& [name, value] : r.counters) counters << name << ',' << value << '\n';
  detail::close_csv(counters, counters_path);
}

}  // namespace twosyn
