#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "twosyn/metrics.hpp"
#include "twosyn/scenario.hpp"
#include "twosyn/topology.hpp"

namespace twosyn {

struct RunOptions {
  std::optional<FlowKeyMode> flow_key_mode;
  std::optional<SimTime> route_update_delay;
  TcpConfig tcp;
};

inline constexpr Port kFirstClientPort = 49152;
inline constexpr Port kBackgroundClientPort = 40000;
inline constexpr std::uint32_t kFlowsPerPairTag = 1u << 16;
inline constexpr std::uint32_t kBackgroundTagBase = 0xF0000000u;

// Drives one scenario under one policy: builds the network, feeds the
// foreground flows pair by pair, applies the scheduled changes and collects
// a RunReport. Single-threaded; one instance per run.
class Simulation {
 public:
  Simulation(const Scenario& s, PolicyKind policy, std::uint64_t seed, RunOptions opt = {})
      : scenario_(s), policy_(policy), seed_(seed) {
    validate(scenario_);
    schedule_ = build_schedule(scenario_, seed_);
    TopologyConfig tc;
    tc.paths = scenario_.paths;
    tc.pairs = scenario_.pairs;
    tc.router.policy = policy_;
    tc.router.flow_key_mode = opt.flow_key_mode.value_or(scenario_.flow_key_mode);
    tc.router.route_update_delay = opt.route_update_delay.value_or(scenario_.route_update_delay);
    tc.tcp = opt.tcp;
    topo_ = std::make_unique<Topology>(sched_, tc, seed_);
    wire_observers();
    for (std::size_t g = 0; g < scenario_.workload.background.size(); ++g) add_background_group(g);
  }

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  Topology& topology() { return *topo_; }
  Scheduler& scheduler() { return sched_; }
  const FlowSchedule& flow_schedule() const { return schedule_; }

  // Observer for every foreground flow start, in start order.
  std::function<void(const FlowSpec&, SimTime)> on_flow_start;
  // Observer for every scheduled change as it is applied.
  std::function<void(std::size_t event_index, SimTime)> on_change_applied;

  RunReport run() {
    if (ran_) throw std::logic_error("Simulation::run called twice");
    ran_ = true;
    for (std::size_t e = 0; e < scenario_.events.size(); ++e) {
      if (const auto* t = std::get_if<AtTime>(&scenario_.events[e].trigger)) {
        sched_.schedule(t->at, [this, e] { apply_change(e); });
      }
    }
    for (std::size_t g = 0; g < background_.size(); ++g) {
      if (!scenario_.workload.background[g].active_at_start) continue;
      for (std::size_t i = 0; i < background_[g].size(); ++i) {
        sched_.schedule(schedule_.background_start[g][i], [this, g, i] { start_background(g, i); });
      }
    }
    total_flows_ = schedule_.total();
    if (scenario_.workload.pacing() == Pacing::Concurrent) {
      for (int j = 0; j < scenario_.pairs; ++j) {
        const auto& flows = schedule_.per_pair[static_cast<std::size_t>(j)];
        const SimTime t0 = schedule_.first_start[static_cast<std::size_t>(j)];
        for (std::size_t i = 0; i < flows.size(); ++i) {
          sched_.schedule(t0, [this, j, i] { start_flow(j, static_cast<int>(i)); });
        }
      }
    } else if (total_flows_ > 0) {
      sched_.schedule(schedule_.first_start[0], [this] { start_next(); });
    }
    if (total_flows_ == 0) sched_.schedule(scenario_.warmup, [this] { sched_.stop(); });
    sched_.run_until(scenario_.horizon);
    return collect();
  }

 private:
  static std::uint32_t tag_of(int pair, int index) {
    return static_cast<std::uint32_t>(pair) * kFlowsPerPairTag + static_cast<std::uint32_t>(index) + 1;
  }
  static std::uint64_t source_key(HostId h, Port p) { return (static_cast<std::uint64_t>(h) << 16) | p; }

  void wire_observers() {
    Router& r = topo_->router();
    r.on_route_installed = [this](const RouteEvent& ev) {
      auto it = by_source_.find(source_key(ev.conn.inner.host, ev.conn.inner.port));
      if (it == by_source_.end()) return;
      FlowRecord& rec = records_[it->second];
      if (!rec.chosen_path) rec.chosen_path = ev.path;
    };
    report_.throughput_series.bits_per_s.resize(static_cast<std::size_t>(topo_->k()));
    report_.throughput_series.payload_bytes.resize(static_cast<std::size_t>(topo_->k()));
    for (PathId p = 1; p <= topo_->k(); ++p) {
      for (LinkDir d : {LinkDir::Fwd, LinkDir::Rev}) {
        topo_->wan_link(p, d).on_deliver = [this, p](const Packet& pkt, SimTime at) {
          if (pkt.payload_len) report_.throughput_series.add(p, at, pkt.payload_len);
        };
      }
    }
    for (int j = 0; j < topo_->pairs(); ++j) {
      topo_->dest(j).on_half_open_change = [this](SimTime at, std::size_t /*count*/) {
        std::size_t total = 0;
        for (int d = 0; d < topo_->pairs(); ++d) total += topo_->dest(d).half_open();
        report_.half_open_series.emplace_back(at, total);
      };
    }
  }

  void add_background_group(std::size_t g) {
    const BackgroundFlows& b = scenario_.workload.background[g];
    std::vector<BackgroundFlow> flows;
    for (int i = 0; i < b.n_flows; ++i) {
      BackgroundFlow f;
      f.pair = topo_->add_cross_pair(b.path, b.direction, b.per_flow_cap);
      flows.push_back(f);
    }
    background_.push_back(std::move(flows));
  }

  void start_background(std::size_t g, std::size_t i) {
    BackgroundFlow& f = background_[g][i];
    if (f.conn) return;
    const Port port = static_cast<Port>(kBackgroundClientPort + f.starts++ % 8000);
    const Address to{f.pair.receiver->id(), 0, kServerPort};
    const std::uint32_t tag = kBackgroundTagBase + static_cast<std::uint32_t>(g * 1024 + i);
    f.conn = f.pair.sender->connect(port, to, kGreedyBytes, -1, tag, [this, g, i](const TcpEndpoint&) {
      background_[g][i].conn.reset();
    });
  }

  void stop_background(std::size_t g, std::size_t i) {
    BackgroundFlow& f = background_[g][i];
    if (!f.conn) return;
    const Host::ConnId id = *f.conn;
    f.pair.sender->reset(id);
    f.conn.reset();
  }

  void start_flow(int pair, int index) {
    const FlowSpec& spec = schedule_.per_pair[static_cast<std::size_t>(pair)][static_cast<std::size_t>(index)];
    Host& src = topo_->source(pair);
    Host& dst = topo_->dest(pair);
    const Port port = static_cast<Port>(kFirstClientPort + index % 16000);
    const Address to{dst.id(), 0, kServerPort};
    FlowRecord rec;
    rec.flow_key = FlowKey::make(FlowKeyMode::FiveTuple, src.address(port), to);
    rec.pair = pair;
    rec.index = index;
    rec.syn_sent_at = sched_.now();
    rec.bytes = spec.bytes;
    const std::size_t idx = records_.size();
    records_.push_back(rec);
    by_source_[source_key(src.id(), port)] = idx;
    if (on_flow_start) on_flow_start(spec, sched_.now());
    const bool download = spec.direction == Direction::Download;
    const std::uint64_t send = download ? 0 : spec.bytes;
    const std::int64_t request = download ? static_cast<std::int64_t>(spec.bytes) : -1;
    const Host::ConnId id = src.connect(port, to, send, request, tag_of(pair, index),
                                         [this, idx](const TcpEndpoint& ep) { flow_done(idx, ep); });
    conn_of_.push_back(id);
  }

  void start_next() {
    const auto [pair, index] = schedule_.order.at(next_in_order_++);
    start_flow(pair, index);
  }

  void flow_done(std::size_t idx, const TcpEndpoint& ep) {
    FlowRecord& rec = records_[idx];
    rec.established_at = ep.established_at();
    if (ep.fin_acked_at() && !ep.aborted()) rec.fct = *ep.fin_acked_at() - ep.syn_sent_at();
    ++finished_flows_;
    check_fraction_triggers();
    if (finished_flows_ == total_flows_) {
      // Let the last teardown segments drain before stopping.
      sched_.schedule_in(topo_->max_rtt() + SimTime::ms(1), [this] { sched_.stop(); });
      return;
    }
    if (scenario_.workload.pacing() == Pacing::Sequential) {
      sched_.schedule_in(SimTime::ns(1), [this] { start_next(); });
    }
  }

  void check_fraction_triggers() {
    for (std::size_t e = 0; e < scenario_.events.size(); ++e) {
      const auto* f = std::get_if<AfterFractionOfFlows>(&scenario_.events[e].trigger);
      if (!f || fired_fraction_.count(e)) continue;
      if (finished_flows_ >= fraction_threshold(f->fraction, total_flows_)) {
        fired_fraction_.insert(e);
        apply_change(e);
      }
    }
  }

  void apply_change(std::size_t e) {
    const ScheduledChange& ch = scenario_.events[e];
    if (const auto* c = std::get_if<CapacityChange>(&ch.action)) {
      if (c->side != LinkSide::Rev) topo_->set_link_capacity(c->path, LinkDir::Fwd, c->bps);
      if (c->side != LinkSide::Fwd) topo_->set_link_capacity(c->path, LinkDir::Rev, c->bps);
    } else if (const auto* b = std::get_if<BackgroundStart>(&ch.action)) {
      const auto g = static_cast<std::size_t>(b->group);
      for (std::size_t i = 0; i < background_[g].size(); ++i) start_background(g, i);
    } else {
      const auto g = static_cast<std::size_t>(std::get<BackgroundStop>(ch.action).group);
      for (std::size_t i = 0; i < background_[g].size(); ++i) stop_background(g, i);
    }
    if (on_change_applied) on_change_applied(e, sched_.now());
  }

  RunReport collect() {
    Router& r = topo_->router();
    r.audit_tables();
    for (std::size_t i = 0; i < records_.size(); ++i) {
      FlowRecord& rec = records_[i];
      const TcpEndpoint& src_ep = topo_->source(rec.pair).endpoint(conn_of_[i]);
      const TcpEndpoint* dst_ep = topo_->dest(rec.pair).accepted(tag_of(rec.pair, rec.index));
      const bool download = schedule_.per_pair[static_cast<std::size_t>(rec.pair)]
                                              [static_cast<std::size_t>(rec.index)].direction == Direction::Download;
      if (!rec.established_at) rec.established_at = src_ep.established_at();
      rec.delivered_bytes = download ? src_ep.bytes_received() : (dst_ep ? dst_ep->bytes_received() : 0);
      const TcpEndpoint* sender = download ? dst_ep : &src_ep;
      rec.retransmissions = sender ? sender->retransmissions() : 0;
      if (dst_ep && dst_ep->closed_at() && !dst_ep->aborted()) {
        rec.fct_at_dest = *dst_ep->closed_at() - dst_ep->syn_received_at();
      }
    }
    for (int j = 0; j < topo_->pairs(); ++j) {
      for (const ServerConnLog& log : topo_->dest(j).server_log()) {
        report_.half_open_records.push_back(
            HalfOpenRecord{j, log.tag, log.syn_received_at, log.half_open_end, log.established});
      }
    }
    report_.scenario = scenario_.name;
    report_.policy = policy_.name();
    report_.seed = seed_;
    report_.k = topo_->k();
    report_.two_syn = r.uses_two_syn();
    for (PathId p = 1; p <= topo_->k(); ++p) report_.path_rtts.push_back(topo_->path_spec(p).rtt());
    report_.flow_records = records_;
    report_.counters = r.counters().items();
    std::uint64_t completed = 0;
    for (const FlowRecord& f : records_) completed += f.completed() ? 1 : 0;
    report_.counters.emplace_back("flows_started", records_.size());
    report_.counters.emplace_back("flows_completed", completed);
    report_.counters.emplace_back("flows_aborted", finished_flows_ - static_cast<int>(completed));
    report_.end_time = sched_.now();
    report_.violations = r.violations();
    if (!r.tables_consistent()) report_.violations.push_back("router tables inconsistent at end of run");
    for (const auto& link : topo_->links()) {
      if (!link->conserves()) report_.violations.push_back("link " + link->name() + " lost packets");
    }
    if (sched_.scheduled_count() != sched_.fired_count() + sched_.canceled_count() + sched_.pending_count()) {
      report_.violations.push_back("scheduler event accounting mismatch");
    }
    if (finished_flows_ < total_flows_) {
      report_.violations.push_back("horizon reached with " + std::to_string(total_flows_ - finished_flows_) +
                                   " flows unfinished");
    }
    return std::move(report_);
  }

  static constexpr std::uint64_t kGreedyBytes = std::uint64_t{1} << 50;

  struct BackgroundFlow {
    CrossPair pair;
    std::optional<Host::ConnId> conn;
    int starts = 0;
  };

  Scenario scenario_;
  PolicyKind policy_;
  std::uint64_t seed_;
  Scheduler sched_;
  FlowSchedule schedule_;
  std::unique_ptr<Topology> topo_;
  std::vector<std::vector<BackgroundFlow>> background_;
  std::vector<FlowRecord> records_;
  std::vector<Host::ConnId> conn_of_;
  std::unordered_map<std::uint64_t, std::size_t> by_source_;
  std::set<std::size_t> fired_fraction_;
  std::size_t next_in_order_ = 0;
  int total_flows_ = 0;
  int finished_flows_ = 0;
  bool ran_ = false;
  RunReport report_;
};

inline RunReport run_scenario(const Scenario& s, PolicyKind policy, std::uint64_t seed, RunOptions opt = {}) {
  Simulation sim(s, policy, seed, std::move(opt));
  return sim.run();
}

}  // namespace twosyn
