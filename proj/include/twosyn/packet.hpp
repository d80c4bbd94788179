#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "twosyn/simcore.hpp"

namespace twosyn {

using HostId = std::uint32_t;
using Port = std::uint16_t;

// Transport endpoint. Router WAN interfaces are numbered 1..k; hosts use 0.
struct Address {
  HostId host = 0;
  std::uint16_t iface = 0;
  Port port = 0;

  constexpr bool operator==(const Address&) const = default;
};

inline std::string to_string(const Address& a) {
  return "h" + std::to_string(a.host) + "." + std::to_string(a.iface) + ":" +
         std::to_string(a.port);
}

enum TcpFlag : std::uint8_t {
  kSyn = 1u << 0,
  kAck = 1u << 1,
  kFin = 1u << 2,
  kRst = 1u << 3,
};

inline constexpr std::uint32_t kHeaderBytes = 40;

struct Packet {
  Address src;
  Address dst;
  std::uint64_t seq = 0;
  std::uint64_t ack = 0;
  std::uint32_t payload_len = 0;
  std::uint8_t flags = 0;
  SimTime created_at{};
  // Bytes the client asks the server to send back, carried on the SYN as a
  // stand-in for an application request; -1 means the client sends.
  std::int64_t request_bytes = -1;
  // Trace tag echoed by the peer; simulator bookkeeping only, never read by
  // forwarding logic.
  std::uint32_t tag = 0;

  bool has(std::uint8_t f) const { return (flags & f) != 0; }
  bool is_pure_syn() const { return has(kSyn) && !has(kAck); }
  bool is_syn_ack() const { return has(kSyn) && has(kAck); }
  std::uint32_t wire_size() const { return payload_len + kHeaderBytes; }
  // Sequence space consumed: payload plus one each for SYN and FIN.
  std::uint64_t seq_len() const {
    return payload_len + (has(kSyn) ? 1 : 0) + (has(kFin) ? 1 : 0);
  }
  // SYN and FIN never co-occur; SYN and RST segments carry no payload.
  bool well_formed() const {
    if (has(kSyn) && has(kFin)) return false;
    if ((has(kSyn) || has(kRst)) && payload_len != 0) return false;
    return true;
  }
};

enum class FlowKeyMode { FiveTuple, IpPair };

inline constexpr std::uint8_t kProtoTcp = 6;

// Flow identity as seen from the branch side. In IpPair mode the ports are
// zeroed so every connection between two hosts maps to one key.
struct FlowKey {
  HostId src_host = 0;
  HostId dst_host = 0;
  Port src_port = 0;
  Port dst_port = 0;
  std::uint8_t protocol = kProtoTcp;

  static FlowKey make(FlowKeyMode mode, const Address& src, const Address& dst) {
    FlowKey k;
    k.src_host = src.host;
    k.dst_host = dst.host;
    if (mode == FlowKeyMode::FiveTuple) {
      k.src_port = src.port;
      k.dst_port = dst.port;
    }
    return k;
  }
  // Key of a branch-originated packet.
  static FlowKey of(FlowKeyMode mode, const Packet& p) { return make(mode, p.src, p.dst); }

  constexpr bool operator==(const FlowKey&) const = default;
};

inline std::string to_string(const FlowKey& k) {
  return "h" + std::to_string(k.src_host) + ":" + std::to_string(k.src_port) + "->h" +
         std::to_string(k.dst_host) + ":" + std::to_string(k.dst_port);
}

struct FlowKeyHash {
  std::size_t operator()(const FlowKey& k) const {
    std::uint64_t v = (static_cast<std::uint64_t>(k.src_host) << 32) | k.dst_host;
    std::uint64_t w = (static_cast<std::uint64_t>(k.src_port) << 16) | k.dst_port;
    v ^= w * 0x9e3779b97f4a7c15ULL + (v << 6) + (v >> 2);
    return static_cast<std::size_t>(v * 0xff51afd7ed558ccdULL);
  }
};

// Full 5-tuple of a branch-side connection, independent of FlowKeyMode.
struct ConnKey {
  Address inner;
  Address remote;
  constexpr bool operator==(const ConnKey&) const = default;
};

struct ConnKeyHash {
  std::size_t operator()(const ConnKey& k) const {
    std::uint64_t a = (static_cast<std::uint64_t>(k.inner.host) << 32) |
                      (static_cast<std::uint64_t>(k.inner.iface) << 16) | k.inner.port;
    std::uint64_t b = (static_cast<std::uint64_t>(k.remote.host) << 32) |
                      (static_cast<std::uint64_t>(k.remote.iface) << 16) | k.remote.port;
    return static_cast<std::size_t>((a * 0x9e3779b97f4a7c15ULL) ^ (b + 0x7f4a7c15ULL + (a << 6)));
  }
};

// 1-based WAN path index.
using PathId = int;

}  // namespace twosyn
