#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "twosyn/packet.hpp"
#include "twosyn/simcore.hpp"

namespace twosyn {

struct TcpConfig {
  std::uint32_t mss = 1448;
  std::uint32_t initial_window = 10;  // segments
  SimTime initial_rto = SimTime::sec(1);
  SimTime min_rto = SimTime::ms(200);
  SimTime max_rto = SimTime::sec(60);
  SimTime clock_granularity = SimTime::ms(1);
  std::uint64_t rcv_wnd = 64ULL * 1000 * 1000;
  // Consecutive timeouts on the same data before the connection is aborted.
  int max_retries = 15;
};

enum class TcpState { Closed, Listen, SynSent, SynReceived, Established, FinWait, CloseWait };

inline const char* to_string(TcpState s) {
  switch (s) {
    case TcpState::Closed: return "Closed";
    case TcpState::Listen: return "Listen";
    case TcpState::SynSent: return "SynSent";
    case TcpState::SynReceived: return "SynReceived";
    case TcpState::Established: return "Established";
    case TcpState::FinWait: return "FinWait";
    case TcpState::CloseWait: return "CloseWait";
  }
  return "?";
}

// New Reno endpoint without SACK, delayed ACK or Nagle. Sequence space starts
// at zero on both sides: the SYN consumes 0, data occupies [1, 1 + bytes) and
// the FIN sits at 1 + bytes.
//
// The endpoint is a pure state machine: callers feed it segments and timer
// expiries and poll timer_deadline() to arm their own timer.
class TcpEndpoint {
 public:
  TcpEndpoint(TcpConfig cfg, Address local, Address remote)
      : cfg_(cfg), local_(local), remote_(remote) {
    cwnd_ = std::uint64_t{cfg_.initial_window} * cfg_.mss;
    ssthresh_ = cfg_.rcv_wnd;
    rto_ = cfg_.initial_rto;
  }

  // Passive endpoint waiting for a SYN from `remote`.
  static TcpEndpoint listening(TcpConfig cfg, Address local, Address remote) {
    TcpEndpoint ep(cfg, local, remote);
    ep.state_ = TcpState::Listen;
    return ep;
  }

  // Active open. `bytes` is what this side sends; `request_bytes` >= 0 asks
  // the peer to send that many bytes instead (download).
  Packet open_connection(std::uint64_t bytes, SimTime now, std::int64_t request_bytes = -1,
                         std::uint32_t tag = 0) {
    if (state_ != TcpState::Closed || opened_) {
      throw std::logic_error("open_connection on an endpoint that is not fresh");
    }
    opened_ = true;
    tag_ = tag;
    bytes_to_send_ = bytes;
    request_bytes_ = request_bytes;
    active_close_ = request_bytes < 0;
    data_end_ = 1 + bytes;
    state_ = TcpState::SynSent;
    syn_sent_at_ = now;
    snd_una_ = 0;
    snd_nxt_ = 1;
    snd_max_ = 1;
    timer_ = now + rto_;
    timed_seq_ = 0;
    timed_at_ = now;
    timing_ = true;
    return make_syn(now);
  }

  void on_segment(const Packet& pkt, SimTime now, std::vector<Packet>& out) {
    if (!pkt.well_formed()) {
      ++malformed_;
      return;
    }
    if (state_ == TcpState::Closed) {
      // Finished connections re-acknowledge retransmitted FINs.
      if (finished_ && pkt.seq_len() > 0 && !pkt.has(kRst)) out.push_back(make_ack(now));
      return;
    }
    if (pkt.has(kRst)) {
      abort(now);
      return;
    }
    switch (state_) {
      case TcpState::Listen: on_listen(pkt, now, out); return;
      case TcpState::SynSent: on_syn_sent(pkt, now, out); return;
      case TcpState::SynReceived:
        if (pkt.is_pure_syn()) {
          out.push_back(make_syn_ack(now));
          return;
        }
        if (!pkt.has(kAck) || pkt.ack != 1) return;
        state_ = TcpState::Established;
        established_at_ = now;
        break;
      default: break;
    }
    on_synchronized(pkt, now, out);
  }

  void on_timer(SimTime now, std::vector<Packet>& out) {
    if (!timer_ || now < *timer_) return;
    timer_.reset();
    if (state_ == TcpState::Closed || state_ == TcpState::Listen) return;
    if (++consecutive_timeouts_ > cfg_.max_retries) {
      abort(now);
      return;
    }
    ++timeouts_;
    rto_ = std::min(rto_ * 2, cfg_.max_rto);
    timing_ = false;
    if (state_ == TcpState::SynSent || state_ == TcpState::SynReceived) {
      ++retransmissions_;
      out.push_back(state_ == TcpState::SynSent ? make_syn(now) : make_syn_ack(now));
      timer_ = now + rto_;
      return;
    }
    const std::uint64_t flight = snd_max_ - snd_una_;
    ssthresh_ = std::max(flight / 2, std::uint64_t{2} * cfg_.mss);
    cwnd_ = cfg_.mss;
    recover_ = snd_max_;
    in_recovery_ = false;
    pending_partial_retransmit_ = false;
    dupacks_ = 0;
    // Go back to the earliest unacknowledged byte; emit() counts the resend.
    snd_nxt_ = snd_una_;
    try_send(now, out);
    if (!timer_ && snd_max_ > snd_una_) timer_ = now + rto_;
  }

  std::optional<SimTime> timer_deadline() const { return timer_; }

  // Local abort: returns the RST to send, or nothing if already closed.
  std::optional<Packet> reset(SimTime now) {
    if (state_ == TcpState::Closed) return std::nullopt;
    Packet rst;
    rst.src = local_;
    rst.dst = remote_;
    rst.seq = snd_nxt_;
    rst.flags = kRst;
    rst.created_at = now;
    rst.tag = tag_;
    abort(now);
    return rst;
  }

  TcpState state() const { return state_; }
  bool finished() const { return finished_; }
  bool aborted() const { return aborted_; }
  const Address& local() const { return local_; }
  const Address& remote() const { return remote_; }
  std::uint32_t tag() const { return tag_; }

  std::uint64_t cwnd() const { return cwnd_; }
  std::uint64_t ssthresh() const { return ssthresh_; }
  std::uint64_t snd_una() const { return snd_una_; }
  std::uint64_t snd_nxt() const { return snd_nxt_; }
  std::uint64_t snd_max() const { return snd_max_; }
  std::uint64_t rcv_nxt() const { return rcv_nxt_; }
  SimTime rto() const { return rto_; }
  SimTime srtt() const { return srtt_; }
  SimTime rttvar() const { return rttvar_; }
  bool in_recovery() const { return in_recovery_; }
  std::uint64_t bytes_to_send() const { return bytes_to_send_; }
  std::uint64_t bytes_received() const { return bytes_received_; }
  std::uint64_t retransmissions() const { return retransmissions_; }
  std::uint64_t timeouts() const { return timeouts_; }
  std::uint64_t fast_retransmits() const { return fast_retransmits_; }
  std::uint64_t malformed() const { return malformed_; }
  std::uint32_t mss() const { return cfg_.mss; }

  SimTime syn_sent_at() const { return syn_sent_at_; }
  SimTime syn_received_at() const { return syn_received_at_; }
  std::optional<SimTime> established_at() const { return established_at_; }
  // Time our FIN was acknowledged.
  std::optional<SimTime> fin_acked_at() const { return fin_acked_at_; }
  std::optional<SimTime> closed_at() const { return closed_at_; }

 private:
  Packet base(SimTime now, std::uint8_t flags) const {
    Packet p;
    p.src = local_;
    p.dst = remote_;
    p.flags = flags;
    p.created_at = now;
    p.tag = tag_;
    p.ack = (flags & kAck) ? rcv_nxt_ : 0;
    return p;
  }
  Packet make_syn(SimTime now) const {
    Packet p = base(now, kSyn);
    p.seq = 0;
    p.request_bytes = request_bytes_;
    return p;
  }
  Packet make_syn_ack(SimTime now) const {
    Packet p = base(now, kSyn | kAck);
    p.seq = 0;
    return p;
  }
  Packet make_ack(SimTime now) const {
    Packet p = base(now, kAck);
    p.seq = std::min(snd_nxt_, snd_max_);
    return p;
  }

  void on_listen(const Packet& pkt, SimTime now, std::vector<Packet>& out) {
    if (!pkt.is_pure_syn()) return;
    tag_ = pkt.tag;
    rcv_nxt_ = pkt.seq + 1;
    if (pkt.request_bytes >= 0) {
      bytes_to_send_ = static_cast<std::uint64_t>(pkt.request_bytes);
      active_close_ = true;
    } else {
      bytes_to_send_ = 0;
      active_close_ = false;
    }
    data_end_ = 1 + bytes_to_send_;
    snd_una_ = 0;
    snd_nxt_ = 1;
    snd_max_ = 1;
    state_ = TcpState::SynReceived;
    syn_received_at_ = now;
    timer_ = now + rto_;
    timed_seq_ = 0;
    timed_at_ = now;
    timing_ = true;
    out.push_back(make_syn_ack(now));
  }

  void on_syn_sent(const Packet& pkt, SimTime now, std::vector<Packet>& out) {
    if (!pkt.is_syn_ack() || pkt.ack != 1) return;
    rcv_nxt_ = pkt.seq + 1;
    state_ = TcpState::Established;
    established_at_ = now;
    on_new_ack(pkt.ack, now);
    const std::size_t before = out.size();
    try_send(now, out);
    if (out.size() == before) out.push_back(make_ack(now));
  }

  void on_synchronized(const Packet& pkt, SimTime now, std::vector<Packet>& out) {
    if (pkt.is_syn_ack()) {
      // Our ACK of the SYN-ACK was lost.
      out.push_back(make_ack(now));
      return;
    }
    if (pkt.has(kSyn)) return;

    if (pkt.has(kAck)) {
      if (pkt.ack > snd_una_ && pkt.ack <= snd_max_) {
        on_new_ack(pkt.ack, now);
      } else if (pkt.ack == snd_una_ && pkt.seq_len() == 0 && snd_max_ > snd_una_) {
        on_dup_ack(now, out);
      }
    }

    const bool carries_seq = pkt.seq_len() > 0;
    if (carries_seq) receive_data(pkt);

    if (peer_fin_received_ && !active_close_) want_fin_ = true;
    const std::size_t before = out.size();
    try_send(now, out);
    if (carries_seq && out.size() == before) out.push_back(make_ack(now));
    maybe_finish(now);
  }

  void receive_data(const Packet& pkt) {
    const std::uint64_t begin = pkt.seq;
    const std::uint64_t end = pkt.seq + pkt.payload_len;
    if (pkt.payload_len > 0 && end > rcv_nxt_) {
      if (begin <= rcv_nxt_) {
        advance_rcv(end);
      } else {
        insert_ooo(begin, end);
      }
    }
    if (pkt.has(kFin)) peer_fin_seq_ = end;
    if (peer_fin_seq_ && !peer_fin_received_ && rcv_nxt_ == *peer_fin_seq_) {
      rcv_nxt_ += 1;
      peer_fin_received_ = true;
    }
  }

  void advance_rcv(std::uint64_t end) {
    bytes_received_ += end - rcv_nxt_;
    rcv_nxt_ = end;
    while (!ooo_.empty() && ooo_.begin()->first <= rcv_nxt_) {
      auto it = ooo_.begin();
      if (it->second > rcv_nxt_) {
        bytes_received_ += it->second - rcv_nxt_;
        rcv_nxt_ = it->second;
      }
      ooo_.erase(it);
    }
  }

  void insert_ooo(std::uint64_t begin, std::uint64_t end) {
    auto it = ooo_.upper_bound(begin);
    if (it != ooo_.begin()) {
      auto prev = std::prev(it);
      if (prev->second >= begin) {
        begin = prev->first;
        end = std::max(end, prev->second);
        it = ooo_.erase(prev);
      }
    }
    while (it != ooo_.end() && it->first <= end) {
      end = std::max(end, it->second);
      it = ooo_.erase(it);
    }
    ooo_.emplace(begin, end);
  }

  void on_new_ack(std::uint64_t ack, SimTime now) {
    const bool handshake_only = snd_una_ == 0 && ack == 1;
    const std::uint64_t acked = ack - snd_una_;
    snd_una_ = ack;
    if (snd_nxt_ < snd_una_) snd_nxt_ = snd_una_;
    consecutive_timeouts_ = 0;
    if (timing_ && ack > timed_seq_) {
      rtt_sample(now - timed_at_);
      timing_ = false;
    }
    if (!handshake_only) {
      bool restart = true;
      if (in_recovery_) {
        if (ack >= recover_) {
          cwnd_ = std::min(ssthresh_, (snd_max_ - snd_una_) + cfg_.mss);
          in_recovery_ = false;
          dupacks_ = 0;
        } else {
          pending_partial_retransmit_ = true;
          cwnd_ = cwnd_ > acked ? cwnd_ - acked : 0;
          if (acked >= cfg_.mss) cwnd_ += cfg_.mss;
          cwnd_ = std::max<std::uint64_t>(cwnd_, cfg_.mss);
          restart = !partial_ack_seen_;
          partial_ack_seen_ = true;
        }
      } else {
        dupacks_ = 0;
        if (cwnd_ < ssthresh_) {
          cwnd_ += cfg_.mss;
        } else {
          cwnd_ += std::max<std::uint64_t>(1, std::uint64_t{cfg_.mss} * cfg_.mss / cwnd_);
        }
      }
      cwnd_ = std::min(cwnd_, cfg_.rcv_wnd);
      if (snd_max_ > snd_una_) {
        if (restart || !timer_) timer_ = now + rto_;
      } else {
        timer_.reset();
      }
    } else {
      // Handshake ACK.
      timer_.reset();
    }
    if (fin_sent_ && snd_una_ > data_end_ && !fin_acked_at_) fin_acked_at_ = now;
  }

  void on_dup_ack(SimTime now, std::vector<Packet>& out) {
    ++dupacks_;
    if (!in_recovery_ && dupacks_ == 3) {
      // RFC 6582: only enter recovery if this ACK is past the last recovery point.
      if (snd_una_ > recover_) {
        const std::uint64_t flight = snd_max_ - snd_una_;
        ssthresh_ = std::max(flight / 2, std::uint64_t{2} * cfg_.mss);
        recover_ = snd_max_;
        in_recovery_ = true;
        partial_ack_seen_ = false;
        retransmit_una(now, out);
        ++fast_retransmits_;
        cwnd_ = ssthresh_ + 3ULL * cfg_.mss;
      }
    } else if (in_recovery_ && dupacks_ > 3) {
      cwnd_ = std::min(cwnd_ + cfg_.mss, cfg_.rcv_wnd);
      try_send(now, out);
    }
  }

  void retransmit_una(SimTime now, std::vector<Packet>& out) {
    ++retransmissions_;
    timing_ = false;
    out.push_back(make_segment(snd_una_, now));
    if (!timer_) timer_ = now + rto_;
  }

  // Data segment starting at `seq`, or the FIN if `seq` is the FIN position.
  Packet make_segment(std::uint64_t seq, SimTime now) const {
    Packet p = base(now, kAck);
    p.seq = seq;
    if (seq >= data_end_) {
      p.flags |= kFin;
    } else {
      p.payload_len = static_cast<std::uint32_t>(
          std::min<std::uint64_t>(cfg_.mss, data_end_ - seq));
    }
    return p;
  }

  void try_send(SimTime now, std::vector<Packet>& out) {
    if (state_ != TcpState::Established && state_ != TcpState::FinWait &&
        state_ != TcpState::CloseWait) {
      return;
    }
    if (pending_partial_retransmit_) {
      pending_partial_retransmit_ = false;
      retransmit_una(now, out);
    }
    const std::uint64_t wnd = std::min(cwnd_, cfg_.rcv_wnd);
    while (snd_nxt_ < data_end_) {
      const std::uint64_t flight = snd_nxt_ - snd_una_;
      const std::uint64_t len = std::min<std::uint64_t>(cfg_.mss, data_end_ - snd_nxt_);
      if (flight + len > wnd && flight > 0) break;
      emit(now, out);
    }
    const bool fin_wanted = active_close_ || want_fin_;
    if (fin_wanted && snd_nxt_ == data_end_) emit(now, out);
  }

  void emit(SimTime now, std::vector<Packet>& out) {
    Packet p = make_segment(snd_nxt_, now);
    if (snd_nxt_ < snd_max_) {
      ++retransmissions_;
      if (timing_ && timed_seq_ >= snd_nxt_) timing_ = false;
    } else if (!timing_) {
      timing_ = true;
      timed_seq_ = snd_nxt_;
      timed_at_ = now;
    }
    snd_nxt_ += p.seq_len();
    snd_max_ = std::max(snd_max_, snd_nxt_);
    if (p.has(kFin) && !fin_sent_) {
      fin_sent_ = true;
      if (state_ == TcpState::Established) state_ = TcpState::FinWait;
    }
    if (!timer_) timer_ = now + rto_;
    out.push_back(p);
  }

  void maybe_finish(SimTime now) {
    if (peer_fin_received_ && state_ == TcpState::Established) state_ = TcpState::CloseWait;
    if (fin_acked_at_ && peer_fin_received_) {
      state_ = TcpState::Closed;
      finished_ = true;
      closed_at_ = now;
      timer_.reset();
    }
  }

  void abort(SimTime now) {
    state_ = TcpState::Closed;
    aborted_ = true;
    closed_at_ = now;
    timer_.reset();
  }

  void rtt_sample(SimTime r) {
    if (!have_rtt_) {
      srtt_ = r;
      rttvar_ = r / 2;
      have_rtt_ = true;
    } else {
      const SimTime diff = srtt_ > r ? srtt_ - r : r - srtt_;
      rttvar_ = (rttvar_ * 3 + diff) / 4;
      srtt_ = (srtt_ * 7 + r) / 8;
    }
    rto_ = srtt_ + std::max(cfg_.clock_granularity, rttvar_ * 4);
    rto_ = std::clamp(rto_, cfg_.min_rto, cfg_.max_rto);
  }

  TcpConfig cfg_;
  Address local_;
  Address remote_;
  TcpState state_ = TcpState::Closed;
  bool opened_ = false;
  bool finished_ = false;
  bool aborted_ = false;
  std::uint32_t tag_ = 0;

  std::uint64_t bytes_to_send_ = 0;
  std::int64_t request_bytes_ = -1;
  bool active_close_ = true;
  bool want_fin_ = false;
  bool fin_sent_ = false;
  std::uint64_t data_end_ = 1;

  std::uint64_t snd_una_ = 0;
  std::uint64_t snd_nxt_ = 0;
  std::uint64_t snd_max_ = 0;
  std::uint64_t cwnd_ = 0;
  std::uint64_t ssthresh_ = 0;
  std::uint64_t recover_ = 0;
  bool in_recovery_ = false;
  bool partial_ack_seen_ = false;
  bool pending_partial_retransmit_ = false;
  int dupacks_ = 0;
  int consecutive_timeouts_ = 0;

  std::uint64_t rcv_nxt_ = 0;
  std::map<std::uint64_t, std::uint64_t> ooo_;
  std::optional<std::uint64_t> peer_fin_seq_;
  bool peer_fin_received_ = false;
  std::uint64_t bytes_received_ = 0;

  SimTime rto_{};
  SimTime srtt_{};
  SimTime rttvar_{};
  bool have_rtt_ = false;
  bool timing_ = false;
  std::uint64_t timed_seq_ = 0;
  SimTime timed_at_{};
  std::optional<SimTime> timer_;

  std::uint64_t retransmissions_ = 0;
  std::uint64_t timeouts_ = 0;
  std::uint64_t fast_retransmits_ = 0;
  std::uint64_t malformed_ = 0;

  SimTime syn_sent_at_{};
  SimTime syn_received_at_{};
  std::optional<SimTime> established_at_;
  std::optional<SimTime> fin_acked_at_;
  std::optional<SimTime> closed_at_;
};

}  // namespace twosyn
