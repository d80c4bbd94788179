#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "twosyn/link.hpp"
#include "twosyn/tcp.hpp"

namespace twosyn {

// Server-side view of one accepted connection, used for half-open accounting.
struct ServerConnLog {
  std::uint32_t tag = 0;
  Address remote;
  SimTime syn_received_at{};
  std::optional<SimTime> half_open_end;  // left SynReceived (either way)
  bool established = false;
  bool aborted = false;
  std::optional<SimTime> closed_at;
};

// End host with a TCP stack. Owns its endpoints and drives their timers.
class Host : public PacketSink {
 public:
  using ConnId = std::size_t;
  // Fired once per active-open connection, when our FIN is acknowledged or
  // the connection aborts.
  using DoneFn = std::function<void(const TcpEndpoint&)>;

  Host(Scheduler& sched, HostId id, TcpConfig cfg = {}) : sched_(sched), id_(id), cfg_(cfg) {
    if (id >= (1u << 24)) throw std::invalid_argument("host id out of range");
  }

  Host(const Host&) = delete;
  Host& operator=(const Host&) = delete;

  HostId id() const { return id_; }
  Address address(Port port) const { return Address{id_, 0, port}; }

  void set_default_route(PacketSink* next) { default_route_ = next; }
  // Egress for packets addressed to (host, iface); used by destinations to
  // answer on the path a connection arrived from.
  void add_route(HostId host, std::uint16_t iface, PacketSink* next) {
    routes_[route_key(host, iface)] = next;
  }

  void listen(Port port) { listening_.insert(port); }

  ConnId connect(Port local_port, Address remote, std::uint64_t bytes, std::int64_t request_bytes,
                 std::uint32_t tag, DoneFn on_done) {
    const std::uint64_t key = conn_key(local_port, remote);
    if (by_key_.count(key)) throw std::logic_error("connection already exists");
    const ConnId id = conns_.size();
    conns_.push_back(Conn{TcpEndpoint(cfg_, address(local_port), remote), false, false, {}, {}, {}, static_cast<std::size_t>(-1)});
    Conn& c = conns_.back();
    c.active = true;
    c.on_done = std::move(on_done);
    by_key_[key] = id;
    const Packet syn = c.ep.open_connection(bytes, sched_.now(), request_bytes, tag);
    send(syn);
    sync_timer(id);
    return id;
  }

  void receive(Packet pkt, int /*ingress*/) override {
    ++segments_in_;
    const std::uint64_t key = conn_key(pkt.dst.port, pkt.src);
    auto it = by_key_.find(key);
    ConnId id;
    if (it == by_key_.end()) {
      if (!pkt.is_pure_syn() || pkt.dst.host != id_) {
        ++stray_;
        return;
      }
      if (!listening_.count(pkt.dst.port)) {
        Packet rst;
        rst.src = pkt.dst;
        rst.dst = pkt.src;
        rst.flags = kRst | kAck;
        rst.ack = pkt.seq + 1;
        rst.created_at = sched_.now();
        rst.tag = pkt.tag;
        send(rst);
        return;
      }
      id = conns_.size();
      conns_.push_back(Conn{TcpEndpoint::listening(cfg_, pkt.dst, pkt.src), false, false, {}, {}, {}, static_cast<std::size_t>(-1)});
      by_key_[key] = id;
      conns_.back().log_index = server_log_.size();
      server_log_.push_back(ServerConnLog{pkt.tag, pkt.src, sched_.now(), {}, false, false, {}});
    } else {
      id = it->second;
    }
    process(id, [&](TcpEndpoint& ep, std::vector<Packet>& out) {
      ep.on_segment(pkt, sched_.now(), out);
    });
  }

  // Aborts a connection locally, sending a RST to the peer.
  void reset(ConnId id) {
    process(id, [&](TcpEndpoint& ep, std::vector<Packet>& out) {
      if (auto rst = ep.reset(sched_.now())) out.push_back(*rst);
    });
  }

  const TcpEndpoint& endpoint(ConnId id) const { return conns_.at(id).ep; }
  // First passive connection with this tag that completed its handshake.
  const TcpEndpoint* accepted(std::uint32_t tag) const {
    auto it = accepted_by_tag_.find(tag);
    return it == accepted_by_tag_.end() ? nullptr : &conns_[it->second].ep;
  }
  std::size_t connection_count() const { return conns_.size(); }
  const std::vector<ServerConnLog>& server_log() const { return server_log_; }
  std::size_t half_open() const { return half_open_; }
  std::uint64_t stray_segments() const { return stray_; }
  std::uint64_t segments_in() const { return segments_in_; }
  std::uint64_t segments_out() const { return segments_out_; }

  // Observer for changes of the SynReceived connection count.
  std::function<void(SimTime, std::size_t)> on_half_open_change;

 private:
  struct Conn {
    TcpEndpoint ep;
    bool active = false;
    bool done_reported = false;
    DoneFn on_done;
    EventHandle timer;
    SimTime timer_at{};
    std::size_t log_index = static_cast<std::size_t>(-1);
  };

  static std::uint64_t conn_key(Port local_port, const Address& remote) {
    return (static_cast<std::uint64_t>(local_port) << 48) |
           (static_cast<std::uint64_t>(remote.iface & 0xff) << 40) |
           (static_cast<std::uint64_t>(remote.host & 0xffffff) << 16) | remote.port;
  }
  static std::uint64_t route_key(HostId host, std::uint16_t iface) {
    return (static_cast<std::uint64_t>(host) << 16) | iface;
  }

  template <typename Step>
  void process(ConnId id, Step&& step) {
    Conn& c = conns_[id];
    const TcpState before = c.ep.state();
    out_.clear();
    step(c.ep, out_);
    for (const Packet& p : out_) send(p);
    after_step(id, before);
    sync_timer(id);
  }

  void after_step(ConnId id, TcpState before) {
    Conn& c = conns_[id];
    const TcpState after = c.ep.state();
    if (before != after) {
      if (after == TcpState::SynReceived) adjust_half_open(+1);
      if (before == TcpState::SynReceived) adjust_half_open(-1);
    }
    if (c.log_index != static_cast<std::size_t>(-1)) {
      ServerConnLog& log = server_log_[c.log_index];
      if (before == TcpState::SynReceived && after != TcpState::SynReceived) {
        log.half_open_end = sched_.now();
      }
      if (c.ep.established_at() && !log.established) {
        log.established = true;
        accepted_by_tag_.emplace(log.tag, id);
      }
      if (c.ep.state() == TcpState::Closed && !log.closed_at && before != TcpState::Closed) {
        log.closed_at = sched_.now();
        log.aborted = c.ep.aborted();
      }
    }
    if (c.active && !c.done_reported && (c.ep.fin_acked_at() || c.ep.aborted())) {
      c.done_reported = true;
      if (c.on_done) {
        // The callback may open new connections and grow conns_.
        DoneFn fn = c.on_done;
        fn(conns_[id].ep);
      }
    }
  }

  void adjust_half_open(int delta) {
    half_open_ = static_cast<std::size_t>(static_cast<long>(half_open_) + delta);
    if (on_half_open_change) on_half_open_change(sched_.now(), half_open_);
  }

  void sync_timer(ConnId id) {
    Conn& c = conns_[id];
    const auto deadline = c.ep.timer_deadline();
    if (!deadline) return;
    if (sched_.is_pending(c.timer)) {
      if (c.timer_at <= *deadline) return;
      sched_.cancel(c.timer);
    }
    c.timer_at = *deadline;
    c.timer = sched_.schedule(*deadline, [this, id] { fire_timer(id); });
  }

  void fire_timer(ConnId id) {
    Conn& c = conns_[id];
    const auto deadline = c.ep.timer_deadline();
    if (!deadline) return;
    if (sched_.now() < *deadline) {
      sync_timer(id);
      return;
    }
    process(id, [&](TcpEndpoint& ep, std::vector<Packet>& out) { ep.on_timer(sched_.now(), out); });
  }

  void send(const Packet& p) {
    ++segments_out_;
    PacketSink* next = default_route_;
    if (!routes_.empty()) {
      auto it = routes_.find(route_key(p.dst.host, p.dst.iface));
      if (it != routes_.end()) next = it->second;
    }
    if (!next) throw std::logic_error("host has no route for packet");
    next->receive(p, static_cast<int>(id_));
  }

  Scheduler& sched_;
  HostId id_;
  TcpConfig cfg_;
  PacketSink* default_route_ = nullptr;
  std::unordered_map<std::uint64_t, PacketSink*> routes_;
  std::unordered_set<Port> listening_;
  std::deque<Conn> conns_;
  std::unordered_map<std::uint64_t, ConnId> by_key_;
  std::vector<ServerConnLog> server_log_;
  std::unordered_map<std::uint32_t, ConnId> accepted_by_tag_;
  std::vector<Packet> out_;
  std::size_t half_open_ = 0;
  std::uint64_t stray_ = 0;
  std::uint64_t segments_in_ = 0;
  std::uint64_t segments_out_ = 0;
};

}  // namespace twosyn
