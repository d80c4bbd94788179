#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "twosyn/link.hpp"
#include "twosyn/packet.hpp"
#include "twosyn/policies.hpp"
#include "twosyn/simcore.hpp"

namespace twosyn {

struct RouterConfig {
  HostId id = 1;
  int k = 2;
  PolicyKind policy = PolicyKind::two_syn();
  FlowKeyMode flow_key_mode = FlowKeyMode::FiveTuple;
  SimTime idle_timeout = SimTime::sec(30);
  SimTime handshake_timeout = SimTime::sec(3);
  SimTime nat_linger = SimTime::ms(500);
  // Time to install a per-flow route once 2SYN picks a path; the winning
  // SYN-ACK is held until the route is in place.
  SimTime route_update_delay{};
  Port nat_port_min = 1024;
  Port nat_port_max = 65535;
  PathId default_route = 1;
};

struct RouterCounters {
  std::uint64_t syn_duplicated = 0;
  std::uint64_t syn_reemitted = 0;
  std::uint64_t rst_sent = 0;
  std::uint64_t late_synack_dropped = 0;
  std::uint64_t stray_dropped = 0;
  std::uint64_t loser_path_dropped = 0;
  std::uint64_t handshake_timeouts = 0;
  std::uint64_t nat_exhaustions = 0;
  std::uint64_t default_route_anomalies = 0;
  std::uint64_t flows_established = 0;
  std::uint64_t flows_torn_down = 0;
  std::uint64_t idle_timeouts = 0;

  // Stable (name, value) listing for reports.
  std::vector<std::pair<std::string, std::uint64_t>> items() const {
    return {{"syn_duplicated", syn_duplicated},
            {"syn_reemitted", syn_reemitted},
            {"rst_sent", rst_sent},
            {"late_synack_dropped", late_synack_dropped},
            {"stray_dropped", stray_dropped},
            {"loser_path_dropped", loser_path_dropped},
            {"handshake_timeouts", handshake_timeouts},
            {"nat_exhaustions", nat_exhaustions},
            {"default_route_anomalies", default_route_anomalies},
            {"flows_established", flows_established},
            {"flows_torn_down", flows_torn_down},
            {"idle_timeouts", idle_timeouts}};
  }
};

enum class FlowEndCause { FinAckComplete, Rst, IdleTimeout };

// Per-connection facts the router reports when it picks or retires a path.
struct RouteEvent {
  ConnKey conn;
  FlowKey flow;
  PathId path = 0;
  SimTime syn_seen_at{};
  SimTime at{};
  std::optional<FlowEndCause> cause;  // empty for "route installed"
};

// The multihoming router: NAT towards k WAN paths plus per-flow routing,
// using either the 2SYN handshake race or a single-path policy.
class Router {
 public:
  Router(Scheduler& sched, RouterConfig cfg, std::uint64_t seed)
      : sched_(sched),
        cfg_(cfg),
        selector_(cfg.policy.type == PolicyType::TwoSyn ? PolicyKind::fixed(1) : cfg.policy, cfg.k,
                  seed),
        wan_egress_(static_cast<std::size_t>(cfg.k) + 1, nullptr),
        nat_(static_cast<std::size_t>(cfg.k) + 1),
        next_port_(static_cast<std::size_t>(cfg.k) + 1, cfg.nat_port_min) {
    if (cfg.k < 1) throw std::invalid_argument("router needs k >= 1");
    if (cfg.nat_port_min > cfg.nat_port_max) throw std::invalid_argument("empty NAT port range");
    if (cfg.default_route < 1 || cfg.default_route > cfg.k) {
      throw std::invalid_argument("default route out of range");
    }
    wan_ports_.reserve(static_cast<std::size_t>(cfg.k));
    for (int p = 1; p <= cfg.k; ++p) wan_ports_.emplace_back(*this, p);
  }

  Router(const Router&) = delete;
  Router& operator=(const Router&) = delete;

  // Sink for packets arriving from the branch side.
  PacketSink& lan_port() { return lan_port_; }
  // Sink for packets arriving from WAN path `p`.
  PacketSink& wan_port(PathId p) { return wan_ports_.at(static_cast<std::size_t>(p - 1)); }

  void set_wan_egress(PathId p, PacketSink* sink) { wan_egress_.at(static_cast<std::size_t>(p)) = sink; }
  void set_lan_egress(HostId host, PacketSink* sink) { lan_egress_[host] = sink; }

  const RouterConfig& config() const { return cfg_; }
  const RouterCounters& counters() const { return counters_; }
  PathSelector& selector() { return selector_; }
  bool uses_two_syn() const { return cfg_.policy.type == PolicyType::TwoSyn && cfg_.k > 1; }

  std::size_t af_size() const { return af_.size(); }
  std::size_t route_count() const { return routes_.size(); }
  std::size_t pending_count() const { return pending_.size(); }
  std::size_t binding_count() const {
    std::size_t n = 0;
    for (const auto& m : nat_) n += m.size();
    return n;
  }
  std::optional<PathId> route_for(const FlowKey& fk) const {
    auto it = routes_.find(fk);
    if (it == routes_.end()) return std::nullopt;
    return it->second;
  }
  bool has_pending(const FlowKey& fk) const { return pending_.count(fk) != 0; }

  // Audit findings; empty when every router invariant held.
  const std::vector<std::string>& violations() const { return violations_; }

  // AF table and route table agree on keys and paths.
  bool tables_consistent() const {
    if (af_.size() != routes_.size()) return false;
    for (const auto& [fk, e] : af_) {
      auto it = routes_.find(fk);
      if (it == routes_.end() || it->second != e.path) return false;
    }
    return true;
  }

  std::function<void(const RouteEvent&)> on_route_installed;
  std::function<void(const RouteEvent&)> on_connection_end;

  void on_lan_packet(Packet pkt) {
    const ConnKey ck{pkt.src, pkt.dst};
    const FlowKey fk = FlowKey::of(cfg_.flow_key_mode, pkt);
    auto cit = conns_.find(ck);
    if (pkt.is_pure_syn()) {
      if (cit != conns_.end()) {
        resend_syn(cit->second, pkt);
      } else {
        new_syn(ck, fk, pkt);
      }
      return;
    }
    if (cit == conns_.end()) {
      // No binding: send out the default interface with the router address.
      ++counters_.default_route_anomalies;
      pkt.src = Address{cfg_.id, static_cast<std::uint16_t>(cfg_.default_route), pkt.src.port};
      emit_wan(cfg_.default_route, pkt, nullptr);
      return;
    }
    Conn& c = cit->second;
    if (c.path == 0) {
      if (pkt.has(kRst)) {
        for (PathId p = 1; p <= cfg_.k; ++p) {
          if (!c.outer[static_cast<std::size_t>(p)]) continue;
          Packet rst = pkt;
          rst.src = outer_address(p, *c.outer[static_cast<std::size_t>(p)]);
          emit_wan(p, rst, &c);
        }
        abandon_pending(c.flow, true);
      } else {
        ++counters_.stray_dropped;
      }
      return;
    }
    pkt.src = outer_address(c.path, *c.outer[static_cast<std::size_t>(c.path)]);
    touch(c);
    track_close(c, pkt, /*from_lan=*/true);
    emit_wan(c.path, pkt, &c);
    after_close_tracking(ck);
  }

  void on_wan_packet(PathId path, Packet pkt) {
    if (path < 1 || path > cfg_.k || pkt.dst.host != cfg_.id ||
        pkt.dst.iface != static_cast<std::uint16_t>(path)) {
      ++counters_.stray_dropped;
      return;
    }
    auto& table = nat_[static_cast<std::size_t>(path)];
    auto bit = table.find(pkt.dst.port);
    if (bit == table.end()) {
      ++counters_.stray_dropped;
      return;
    }
    Binding& b = bit->second;
    if (b.loser) {
      if (pkt.is_syn_ack()) {
        ++counters_.late_synack_dropped;
      } else {
        ++counters_.loser_path_dropped;
      }
      return;
    }
    auto cit = conns_.find(b.conn);
    if (cit == conns_.end()) {
      ++counters_.stray_dropped;
      return;
    }
    Conn& c = cit->second;
    if (c.path == 0) {
      on_pending_wan(c, path, pkt);
      return;
    }
    if (path != c.path) {
      ++counters_.loser_path_dropped;
      return;
    }
    pkt.dst = c.key.inner;
    touch(c);
    track_close(c, pkt, /*from_lan=*/false);
    if (pkt.is_syn_ack()) ++c.synacks_to_lan;
    emit_lan(pkt);
    after_close_tracking(c.key);
  }

  // Ends every connection of `flow` and removes its AF and route entries.
  void on_flow_end(const FlowKey& flow, FlowEndCause cause) {
    auto it = af_.find(flow);
    if (it == af_.end()) return;
    const std::vector<ConnKey> members(it->second.conns.begin(), it->second.conns.end());
    for (const ConnKey& ck : members) end_connection(ck, cause);
    remove_af(flow);
  }

  // Reaps a handshake that never got a SYN-ACK.
  void handshake_timeout(const FlowKey& flow) {
    auto it = pending_.find(flow);
    if (it == pending_.end() || it->second.decide_scheduled) return;
    ++counters_.handshake_timeouts;
    abandon_pending(flow, false);
  }

  // Full audit of table state; appends to violations().
  void audit_tables() {
    if (!tables_consistent()) violations_.push_back("AF table and route table disagree");
    for (const auto& [fk, e] : af_) {
      for (const ConnKey& ck : e.conns) {
        auto it = conns_.find(ck);
        if (it == conns_.end() || it->second.path != e.path) {
          violations_.push_back("AF member connection missing or on another path");
        }
      }
    }
  }

 private:
  struct Binding {
    ConnKey conn;
    bool loser = false;
  };

  struct Conn {
    ConnKey key;
    FlowKey flow;
    HostPair pair;
    SimTime syn_seen_at{};
    PathId path = 0;  // 0 while the handshake race is open
    std::vector<std::optional<Port>> outer;  // index 1..k
    bool two_syn = false;
    bool closing = false;  // torn down, binding lingering
    std::optional<std::uint64_t> lan_fin_end;
    std::optional<std::uint64_t> wan_fin_end;
    bool lan_fin_acked = false;
    bool wan_fin_acked = false;
    // Audit counters.
    std::uint64_t loser_rsts = 0;
    std::uint64_t loser_other = 0;
    std::uint64_t synacks_to_lan = 0;
    std::uint64_t winner_sets = 0;
  };

  struct Pending {
    ConnKey owner;
    Packet syn;
    SimTime syn_received_at{};
    EventHandle timeout;
    bool decide_scheduled = false;
    PathId candidate = 0;
    Packet candidate_pkt;
    std::vector<bool> refused;  // D answered RST on that path
    std::vector<Packet> waiting;  // further SYNs sharing the flow key
  };

  struct AfEntry {
    PathId path = 0;
    SimTime installed_at{};
    SimTime last_activity{};
    EventHandle idle_timer;
    std::unordered_set<ConnKey, ConnKeyHash> conns;
  };

  class LanPort : public PacketSink {
   public:
    explicit LanPort(Router& r) : r_(r) {}
    void receive(Packet pkt, int) override { r_.on_lan_packet(std::move(pkt)); }
   private:
    Router& r_;
  };
  class WanPort : public PacketSink {
   public:
    WanPort(Router& r, PathId p) : r_(r), p_(p) {}
    void receive(Packet pkt, int) override { r_.on_wan_packet(p_, std::move(pkt)); }
   private:
    Router& r_;
    PathId p_;
  };

  Address outer_address(PathId p, Port port) const {
    return Address{cfg_.id, static_cast<std::uint16_t>(p), port};
  }

  std::optional<Port> allocate_port(PathId p, const ConnKey& ck) {
    auto& table = nat_[static_cast<std::size_t>(p)];
    const std::uint32_t span = static_cast<std::uint32_t>(cfg_.nat_port_max) - cfg_.nat_port_min + 1;
    Port& cursor = next_port_[static_cast<std::size_t>(p)];
    for (std::uint32_t tries = 0; tries < span; ++tries) {
      const Port candidate = cursor;
      cursor = candidate == cfg_.nat_port_max ? cfg_.nat_port_min : static_cast<Port>(candidate + 1);
      if (!table.count(candidate)) {
        table.emplace(candidate, Binding{ck, false});
        return candidate;
      }
    }
    return std::nullopt;
  }

  void release_port(PathId p, Port port) { nat_[static_cast<std::size_t>(p)].erase(port); }

  void linger_release(PathId p, Port port) {
    sched_.schedule_in(cfg_.nat_linger, [this, p, port] { release_port(p, port); });
  }

  Conn& make_conn(const ConnKey& ck, const FlowKey& fk, const Packet& syn) {
    Conn c;
    c.key = ck;
    c.flow = fk;
    c.pair = {syn.src.host, syn.dst.host};
    c.syn_seen_at = sched_.now();
    c.outer.assign(static_cast<std::size_t>(cfg_.k) + 1, std::nullopt);
    return conns_.emplace(ck, std::move(c)).first->second;
  }

  void new_syn(const ConnKey& ck, const FlowKey& fk, const Packet& syn) {
    if (auto af = af_.find(fk); af != af_.end()) {
      // Flow key already routed (IpPair sharing): follow the recorded path.
      join_flow(ck, fk, syn, af->second.path);
      return;
    }
    if (auto pit = pending_.find(fk); pit != pending_.end()) {
      pit->second.waiting.push_back(syn);
      return;
    }
    if (uses_two_syn()) {
      start_race(ck, fk, syn);
      return;
    }
    const PathId p = selector_.select_path({syn.src.host, syn.dst.host});
    Conn& c = make_conn(ck, fk, syn);
    auto port = allocate_port(p, ck);
    if (!port) {
      ++counters_.nat_exhaustions;
      conns_.erase(ck);
      return;
    }
    c.outer[static_cast<std::size_t>(p)] = *port;
    c.path = p;
    ++c.winner_sets;
    install_af(fk, p, c);
    Packet out = syn;
    out.src = outer_address(p, *port);
    emit_wan(p, out, &c);
  }

  void join_flow(const ConnKey& ck, const FlowKey& fk, const Packet& syn, PathId p) {
    Conn& c = make_conn(ck, fk, syn);
    auto port = allocate_port(p, ck);
    if (!port) {
      ++counters_.nat_exhaustions;
      conns_.erase(ck);
      return;
    }
    c.outer[static_cast<std::size_t>(p)] = *port;
    c.path = p;
    ++c.winner_sets;
    AfEntry& e = af_.at(fk);
    e.conns.insert(ck);
    e.last_activity = sched_.now();
    notify_installed(c);
    Packet out = syn;
    out.src = outer_address(p, *port);
    emit_wan(p, out, &c);
  }

  void start_race(const ConnKey& ck, const FlowKey& fk, const Packet& syn) {
    Conn& c = make_conn(ck, fk, syn);
    c.two_syn = true;
    for (PathId p = 1; p <= cfg_.k; ++p) {
      auto port = allocate_port(p, ck);
      if (!port) {
        ++counters_.nat_exhaustions;
        for (PathId q = 1; q < p; ++q) release_port(q, *c.outer[static_cast<std::size_t>(q)]);
        conns_.erase(ck);
        return;
      }
      c.outer[static_cast<std::size_t>(p)] = *port;
    }
    Pending pd;
    pd.owner = ck;
    pd.syn = syn;
    pd.syn_received_at = sched_.now();
    pd.refused.assign(static_cast<std::size_t>(cfg_.k) + 1, false);
    pd.timeout = sched_.schedule_in(cfg_.handshake_timeout, [this, fk] { handshake_timeout(fk); });
    pending_.emplace(fk, std::move(pd));
    counters_.syn_duplicated += static_cast<std::uint64_t>(cfg_.k - 1);
    emit_syn_copies(c, syn);
  }

  void emit_syn_copies(Conn& c, const Packet& syn) {
    for (PathId p = 1; p <= cfg_.k; ++p) {
      Packet out = syn;
      out.src = outer_address(p, *c.outer[static_cast<std::size_t>(p)]);
      out.created_at = sched_.now();
      emit_wan(p, out, &c);
    }
  }

  void resend_syn(Conn& c, const Packet& syn) {
    if (c.closing) {
      ++counters_.stray_dropped;
      return;
    }
    if (c.path == 0) {
      // Retransmitted SYN during the race: reuse the existing bindings.
      ++counters_.syn_reemitted;
      emit_syn_copies(c, syn);
      return;
    }
    Packet out = syn;
    out.src = outer_address(c.path, *c.outer[static_cast<std::size_t>(c.path)]);
    emit_wan(c.path, out, &c);
  }

  void on_pending_wan(Conn& c, PathId path, const Packet& pkt) {
    auto pit = pending_.find(c.flow);
    if (pit == pending_.end() || pit->second.owner != c.key) {
      ++counters_.stray_dropped;
      return;
    }
    Pending& pd = pit->second;
    if (pkt.is_syn_ack()) {
      if (!pd.decide_scheduled) {
        pd.decide_scheduled = true;
        pd.candidate = path;
        pd.candidate_pkt = pkt;
        // Decide at the end of this tick so simultaneous SYN-ACKs resolve to
        // the lowest path index.
        const FlowKey fk = c.flow;
        sched_.schedule(sched_.now(), [this, fk] { decide(fk); });
      } else if (path < pd.candidate) {
        ++counters_.late_synack_dropped;
        pd.candidate = path;
        pd.candidate_pkt = pkt;
      } else {
        ++counters_.late_synack_dropped;
      }
      return;
    }
    if (pkt.has(kRst)) {
      pd.refused[static_cast<std::size_t>(path)] = true;
      bool all = true;
      for (PathId p = 1; p <= cfg_.k; ++p) all = all && pd.refused[static_cast<std::size_t>(p)];
      if (all && !pd.decide_scheduled) {
        Packet rst = pkt;
        rst.dst = c.key.inner;
        emit_lan(rst);
        abandon_pending(c.flow, false);
      }
      return;
    }
    ++counters_.stray_dropped;
  }

  void decide(const FlowKey& fk) {
    auto pit = pending_.find(fk);
    if (pit == pending_.end()) return;
    Pending pd = std::move(pit->second);
    pending_.erase(pit);
    sched_.cancel(pd.timeout);
    auto cit = conns_.find(pd.owner);
    if (cit == conns_.end()) return;
    Conn& c = cit->second;
    if (c.path != 0) violations_.push_back("winner chosen twice for " + to_string(c.flow));
    const PathId winner = pd.candidate;
    c.path = winner;
    ++c.winner_sets;
    for (PathId p = 1; p <= cfg_.k; ++p) {
      if (p == winner) continue;
      const Port port = *c.outer[static_cast<std::size_t>(p)];
      Packet rst;
      rst.src = outer_address(p, port);
      rst.dst = c.key.remote;
      rst.seq = 1;
      rst.flags = kRst;
      rst.created_at = sched_.now();
      rst.tag = pd.syn.tag;
      ++counters_.rst_sent;
      emit_wan(p, rst, &c);
      nat_[static_cast<std::size_t>(p)].at(port).loser = true;
      linger_release(p, port);
      c.outer[static_cast<std::size_t>(p)].reset();
    }
    Packet synack = pd.candidate_pkt;
    synack.dst = c.key.inner;
    const ConnKey ck = c.key;
    auto finish = [this, fk, ck, winner, synack, waiting = std::move(pd.waiting)]() mutable {
      auto it = conns_.find(ck);
      if (it == conns_.end()) return;
      install_af(fk, winner, it->second);
      ++it->second.synacks_to_lan;
      emit_lan(synack);
      for (const Packet& syn : waiting) {
        const ConnKey wk{syn.src, syn.dst};
        if (!conns_.count(wk)) join_flow(wk, fk, syn, winner);
      }
    };
    if (cfg_.route_update_delay.count() > 0) {
      sched_.schedule_in(cfg_.route_update_delay, std::move(finish));
    } else {
      finish();
    }
  }

  void abandon_pending(const FlowKey& fk, bool /*by_source*/) {
    auto pit = pending_.find(fk);
    if (pit == pending_.end()) return;
    const ConnKey owner = pit->second.owner;
    sched_.cancel(pit->second.timeout);
    pending_.erase(pit);
    auto cit = conns_.find(owner);
    if (cit == conns_.end()) return;
    for (PathId p = 1; p <= cfg_.k; ++p) {
      if (auto port = cit->second.outer[static_cast<std::size_t>(p)]) release_port(p, *port);
    }
    conns_.erase(cit);
  }

  void install_af(const FlowKey& fk, PathId p, Conn& c) {
    ++counters_.flows_established;
    auto [it, inserted] = af_.try_emplace(fk);
    AfEntry& e = it->second;
    if (inserted) {
      e.path = p;
      e.installed_at = sched_.now();
      routes_[fk] = p;
      arm_idle(fk, sched_.now() + cfg_.idle_timeout);
    }
    e.conns.insert(c.key);
    e.last_activity = sched_.now();
    if (routes_.size() != af_.size()) violations_.push_back("route table out of sync on install");
    notify_installed(c);
  }

  void notify_installed(const Conn& c) {
    if (on_route_installed) {
      on_route_installed(RouteEvent{c.key, c.flow, c.path, c.syn_seen_at, sched_.now(), std::nullopt});
    }
  }

  void remove_af(const FlowKey& fk) {
    auto it = af_.find(fk);
    if (it == af_.end()) return;
    sched_.cancel(it->second.idle_timer);
    af_.erase(it);
    routes_.erase(fk);
    if (routes_.size() != af_.size()) violations_.push_back("route table out of sync on removal");
  }

  void arm_idle(const FlowKey& fk, SimTime at) {
    AfEntry& e = af_.at(fk);
    e.idle_timer = sched_.schedule(at, [this, fk] { idle_check(fk); });
  }

  void idle_check(const FlowKey& fk) {
    auto it = af_.find(fk);
    if (it == af_.end()) return;
    const SimTime due = it->second.last_activity + cfg_.idle_timeout;
    if (sched_.now() < due) {
      arm_idle(fk, due);
      return;
    }
    ++counters_.idle_timeouts;
    on_flow_end(fk, FlowEndCause::IdleTimeout);
  }

  void touch(Conn& c) {
    if (c.closing) return;
    auto it = af_.find(c.flow);
    if (it != af_.end()) it->second.last_activity = sched_.now();
  }

  void track_close(Conn& c, const Packet& pkt, bool from_lan) {
    if (c.closing) return;
    if (pkt.has(kRst)) {
      pending_end_ = FlowEndCause::Rst;
      return;
    }
    if (pkt.has(kFin)) {
      (from_lan ? c.lan_fin_end : c.wan_fin_end) = pkt.seq + pkt.payload_len;
    }
    if (pkt.has(kAck)) {
      // An ACK from one side covering the other side's FIN.
      const auto& other_fin = from_lan ? c.wan_fin_end : c.lan_fin_end;
      if (other_fin && pkt.ack > *other_fin) (from_lan ? c.wan_fin_acked : c.lan_fin_acked) = true;
    }
    if (c.lan_fin_acked && c.wan_fin_acked) pending_end_ = FlowEndCause::FinAckComplete;
  }

  void after_close_tracking(const ConnKey& ck) {
    if (!pending_end_) return;
    const FlowEndCause cause = *pending_end_;
    pending_end_.reset();
    auto it = conns_.find(ck);
    if (it == conns_.end() || it->second.closing) return;
    const FlowKey fk = it->second.flow;
    end_connection(ck, cause);
    auto af = af_.find(fk);
    if (af != af_.end() && af->second.conns.empty()) remove_af(fk);
  }

  void end_connection(const ConnKey& ck, FlowEndCause cause) {
    auto it = conns_.find(ck);
    if (it == conns_.end() || it->second.closing) return;
    Conn& c = it->second;
    c.closing = true;
    ++counters_.flows_torn_down;
    audit_connection(c);
    if (auto af = af_.find(c.flow); af != af_.end()) af->second.conns.erase(ck);
    if (cause == FlowEndCause::FinAckComplete) {
      selector_.record_outcome(c.pair, c.path, sched_.now() - c.syn_seen_at);
    }
    if (on_connection_end) {
      on_connection_end(RouteEvent{c.key, c.flow, c.path, c.syn_seen_at, sched_.now(), cause});
    }
    const PathId p = c.path;
    const Port port = *c.outer[static_cast<std::size_t>(p)];
    sched_.schedule_in(cfg_.nat_linger, [this, ck, p, port] {
      release_port(p, port);
      conns_.erase(ck);
    });
  }

  void audit_connection(const Conn& c) {
    if (c.winner_sets != 1) violations_.push_back("winner set " + std::to_string(c.winner_sets) +
                                                  " times for " + to_string(c.flow));
    if (c.loser_other != 0) {
      violations_.push_back("post-establishment packets on a loser path for " + to_string(c.flow));
    }
    if (c.two_syn && c.loser_rsts != static_cast<std::uint64_t>(cfg_.k - 1)) {
      violations_.push_back("expected k-1 cancellation RSTs for " + to_string(c.flow));
    }
    if (c.synacks_to_lan == 0 && c.path != 0) {
      violations_.push_back("source never saw a SYN-ACK for " + to_string(c.flow));
    }
  }

  void emit_wan(PathId p, const Packet& pkt, Conn* c) {
    if (c && c->path != 0 && p != c->path) {
      if (pkt.has(kRst)) ++c->loser_rsts;
      else ++c->loser_other;
    }
    PacketSink* sink = wan_egress_.at(static_cast<std::size_t>(p));
    if (!sink) throw std::logic_error("router has no egress for path " + std::to_string(p));
    sink->receive(pkt, static_cast<int>(cfg_.id));
  }

  void emit_lan(const Packet& pkt) {
    auto it = lan_egress_.find(pkt.dst.host);
    if (it == lan_egress_.end()) {
      ++counters_.stray_dropped;
      return;
    }
    it->second->receive(pkt, static_cast<int>(cfg_.id));
  }

  Scheduler& sched_;
  RouterConfig cfg_;
  PathSelector selector_;
  LanPort lan_port_{*this};
  std::vector<WanPort> wan_ports_;
  std::vector<PacketSink*> wan_egress_;
  std::unordered_map<HostId, PacketSink*> lan_egress_;

  std::vector<std::unordered_map<Port, Binding>> nat_;  // index 1..k
  std::vector<Port> next_port_;
  std::unordered_map<ConnKey, Conn, ConnKeyHash> conns_;
  std::unordered_map<FlowKey, Pending, FlowKeyHash> pending_;
  std::unordered_map<FlowKey, AfEntry, FlowKeyHash> af_;
  std::unordered_map<FlowKey, PathId, FlowKeyHash> routes_;
  std::optional<FlowEndCause> pending_end_;
  RouterCounters counters_;
  std::vector<std::string> violations_;
};

}  // namespace twosyn
