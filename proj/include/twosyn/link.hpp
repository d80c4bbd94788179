#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include "twosyn/packet.hpp"
#include "twosyn/simcore.hpp"

namespace twosyn {

// Anything that accepts packets: links, switches, hosts, the router.
class PacketSink {
 public:
  virtual ~PacketSink() = default;
  // `ingress` identifies the arrival interface as configured by the sender.
  virtual void receive(Packet pkt, int ingress) = 0;
};

inline constexpr std::uint64_t kUnlimitedBuffer = std::numeric_limits<std::uint64_t>::max();

// Serialization time of `bytes` at `bps`, rounded up to the next nanosecond.
inline SimTime serialization_time(std::uint64_t bytes, std::uint64_t bps) {
  const std::uint64_t bits_ns = bytes * 8ULL * 1'000'000'000ULL;
  return SimTime{static_cast<std::int64_t>((bits_ns + bps - 1) / bps)};
}

__extension__ using uint128 = unsigned __int128;

// Bandwidth-delay product in bytes.
inline std::uint64_t bdp_bytes(SimTime rtt, std::uint64_t bps) {
  return static_cast<std::uint64_t>(
      (static_cast<uint128>(bps) * static_cast<std::uint64_t>(rtt.count())) /
      (8ULL * 1'000'000'000ULL));
}

struct LinkStats {
  std::uint64_t packets_in = 0;
  std::uint64_t packets_delivered = 0;
  std::uint64_t packets_dropped = 0;
  std::uint64_t bytes_delivered = 0;
  std::uint64_t filter_drops = 0;
};

struct LinkConfig {
  std::string name;
  std::uint64_t capacity_bps = 1'000'000'000;
  SimTime prop_delay = SimTime::us(100);
  // Drop-tail limit in bytes; when buffer_rtt is set the limit tracks
  // buffer_rtt * capacity across capacity changes.
  std::uint64_t buffer_limit = kUnlimitedBuffer;
  SimTime buffer_rtt{};
};

// Store-and-forward link with a drop-tail FIFO. Departure times are computed
// at enqueue. Delivery is FIFO, so only the head packet has an arrival event
// scheduled at any time.
class Link : public PacketSink {
 public:
  Link(Scheduler& sched, LinkConfig cfg, PacketSink* far_end, int far_ingress)
      : sched_(sched), cfg_(std::move(cfg)), far_end_(far_end), far_ingress_(far_ingress) {
    if (cfg_.capacity_bps == 0) throw std::invalid_argument("link capacity must be > 0");
    if (cfg_.buffer_rtt.count() > 0) cfg_.buffer_limit = bdp_bytes(cfg_.buffer_rtt, cfg_.capacity_bps);
  }

  void connect(PacketSink* far_end, int far_ingress) {
    far_end_ = far_end;
    far_ingress_ = far_ingress;
  }

  Link(const Link&) = delete;
  Link& operator=(const Link&) = delete;

  void receive(Packet pkt, int /*ingress*/) override { transmit(std::move(pkt)); }

  // Returns false if the packet was dropped.
  bool transmit(Packet pkt) {
    const SimTime now = sched_.now();
    ++stats_.packets_in;
    if (drop_filter && drop_filter(pkt)) {
      ++stats_.packets_dropped;
      ++stats_.filter_drops;
      return false;
    }
    advance(now);
    const std::uint64_t size = pkt.wire_size();
    if (cfg_.buffer_limit != kUnlimitedBuffer && queued_bytes_ + size > cfg_.buffer_limit) {
      ++stats_.packets_dropped;
      return false;
    }
    Entry e;
    e.enqueued_at = now;
    e.start = std::max(now, busy_until_);
    e.finish = e.start + serialization_time(size, cfg_.capacity_bps);
    e.size = static_cast<std::uint32_t>(size);
    busy_until_ = e.finish;
    e.pkt = std::move(pkt);
    entries_.push_back(std::move(e));
    queued_bytes_ += size;
    if (entries_.size() == 1) arm_head();
    return true;
  }

  // From now on serialization uses `bps`. Packets whose serialization already
  // started keep their departure; later ones are re-timed, none are dropped.
  void set_capacity(std::uint64_t bps) {
    if (bps == 0) throw std::invalid_argument("link capacity must be > 0");
    const SimTime now = sched_.now();
    advance(now);
    cfg_.capacity_bps = bps;
    if (cfg_.buffer_rtt.count() > 0) cfg_.buffer_limit = bdp_bytes(cfg_.buffer_rtt, bps);
    SimTime prev_finish = now;
    for (std::size_t i = serialized_; i < entries_.size(); ++i) {
      Entry& e = entries_[i];
      if (e.start < now) {
        prev_finish = e.finish;
        continue;
      }
      const SimTime finish = prev_finish + serialization_time(e.size, bps);
      e.start = prev_finish;
      e.finish = finish;
      prev_finish = finish;
    }
    if (serialized_ < entries_.size()) busy_until_ = entries_.back().finish;
    if (!entries_.empty() && head_at_ != entries_.front().finish + cfg_.prop_delay) {
      sched_.cancel(head_event_);
      arm_head();
    }
  }

  std::uint64_t capacity_bps() const { return cfg_.capacity_bps; }
  SimTime prop_delay() const { return cfg_.prop_delay; }
  std::uint64_t buffer_limit() const { return cfg_.buffer_limit; }
  const std::string& name() const { return cfg_.name; }
  const LinkStats& stats() const { return stats_; }

  // Bytes of packets not yet fully serialized, as of `now`.
  std::uint64_t queued_bytes() {
    advance(sched_.now());
    return queued_bytes_;
  }
  // Packets accepted but not yet delivered (queued or propagating).
  std::uint64_t packets_in_flight() const { return entries_.size(); }

  // Conservation: in = delivered + dropped + in flight.
  bool conserves() const {
    return stats_.packets_in ==
           stats_.packets_delivered + stats_.packets_dropped + entries_.size();
  }

  // Test hook: returning true drops the packet before it is queued.
  std::function<bool(const Packet&)> drop_filter;
  // Observer for every delivered packet.
  std::function<void(const Packet&, SimTime)> on_deliver;

 private:
  struct Entry {
    Packet pkt;
    SimTime enqueued_at{};
    SimTime start{};
    SimTime finish{};
    std::uint32_t size = 0;
  };

  void arm_head() {
    head_at_ = entries_.front().finish + cfg_.prop_delay;
    head_event_ = sched_.schedule(head_at_, [this] { deliver_front(); });
  }

  void advance(SimTime now) {
    while (serialized_ < entries_.size() && entries_[serialized_].finish <= now) {
      queued_bytes_ -= entries_[serialized_].size;
      ++serialized_;
    }
  }

  void deliver_front() {
    Entry e = std::move(entries_.front());
    entries_.pop_front();
    if (serialized_ > 0) {
      --serialized_;
    } else {
      queued_bytes_ -= e.size;
    }
    if (!entries_.empty()) arm_head();
    ++stats_.packets_delivered;
    stats_.bytes_delivered += e.size;
    if (on_deliver) on_deliver(e.pkt, sched_.now());
    far_end_->receive(std::move(e.pkt), far_ingress_);
  }

  Scheduler& sched_;
  LinkConfig cfg_;
  PacketSink* far_end_;
  int far_ingress_;
  std::deque<Entry> entries_;
  std::size_t serialized_ = 0;
  std::uint64_t queued_bytes_ = 0;
  SimTime busy_until_{};
  EventHandle head_event_;
  SimTime head_at_{};
  LinkStats stats_;
};

}  // namespace twosyn
