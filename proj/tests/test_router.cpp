#include <gtest/gtest.h>

#include <memory>
#include <vector>

#include "test_util.hpp"
#include "twosyn/rng.hpp"
#include "twosyn/router.hpp"

using namespace twosyn;
using twosyn::testing::Collector;

namespace {

constexpr HostId kSrc = 100;
constexpr HostId kDst = 200;
constexpr Port kDstPort = 5201;

// Router with recording sinks on every port. WAN packets are injected by
// hand to script handshake races.
struct Bench {
  explicit Bench(int k, PolicyKind policy = PolicyKind::two_syn(), FlowKeyMode mode = FlowKeyMode::FiveTuple,
                 RouterConfig base = {}) {
    base.k = k;
    base.policy = policy;
    base.flow_key_mode = mode;
    router = std::make_unique<Router>(s, base, 1);
    lan = std::make_unique<Collector>(s);
    router->set_lan_egress(kSrc, lan.get());
    for (int p = 1; p <= k; ++p) {
      wan.push_back(std::make_unique<Collector>(s));
      router->set_wan_egress(p, wan.back().get());
    }
  }

  Collector& path(PathId p) { return *wan.at(static_cast<std::size_t>(p - 1)); }

  static Packet syn(Port sport) {
    Packet p;
    p.src = Address{kSrc, 0, sport};
    p.dst = Address{kDst, 0, kDstPort};
    p.flags = kSyn;
    return p;
  }
  static Packet from_lan(Port sport, std::uint8_t flags) {
    Packet p = syn(sport);
    p.flags = flags;
    return p;
  }
  // Reply from the destination on path p to the outer address that SYN
  // copy `i` carried.
  Packet reply_on(PathId p, std::size_t i, std::uint8_t flags) {
    Packet r;
    r.src = Address{kDst, 0, kDstPort};
    r.dst = path(p).got.at(i).pkt.src;
    r.flags = flags;
    r.ack = 1;
    return r;
  }
  void lan_at(SimTime at, Packet p) {
    s.schedule(at, [this, p] { router->lan_port().receive(p, 0); });
  }
  void wan_at(SimTime at, PathId path, Packet p) {
    s.schedule(at, [this, path, p] { router->wan_port(path).receive(p, 0); });
  }
  std::size_t count(PathId p, std::uint8_t flag) {
    std::size_t n = 0;
    for (auto& it : path(p).got) n += it.pkt.has(flag);
    return n;
  }

  Scheduler s;
  std::unique_ptr<Router> router;
  std::unique_ptr<Collector> lan;
  std::vector<std::unique_ptr<Collector>> wan;
};

FlowKey key(Port sport, FlowKeyMode mode = FlowKeyMode::FiveTuple) {
  return FlowKey::make(mode, Address{kSrc, 0, sport}, Address{kDst, 0, kDstPort});
}

}  // namespace

TEST(Router, SynIsCopiedToEveryPathWithPerPathAddresses) {
  Bench b(3);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  for (PathId p = 1; p <= 3; ++p) {
    ASSERT_EQ(b.path(p).got.size(), 1u);
    const Packet& c = b.path(p).got[0].pkt;
    EXPECT_TRUE(c.is_pure_syn());
    EXPECT_EQ(c.src.host, RouterConfig{}.id);
    EXPECT_EQ(c.src.iface, p);
    EXPECT_EQ(c.dst, (Address{kDst, 0, kDstPort}));
  }
  EXPECT_EQ(b.router->counters().syn_duplicated, 2u);
  EXPECT_EQ(b.router->binding_count(), 3u);
  EXPECT_TRUE(b.router->has_pending(key(40000)));
}

// SYN at 0; SYN-ACK on path 2 at 20 ms, on path 1 at 30 ms. Path 2 wins, the
// others get a RST at 20 ms and the late SYN-ACK is dropped.
TEST(Router, FirstSynAckWinsAndLosersAreReset) {
  Bench b(3);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  b.wan_at(SimTime::ms(20), 2, b.reply_on(2, 0, kSyn | kAck));
  b.wan_at(SimTime::ms(30), 1, b.reply_on(1, 0, kSyn | kAck));
  b.s.run_until(SimTime::ms(500));

  ASSERT_EQ(b.lan->got.size(), 1u);
  EXPECT_EQ(b.lan->got[0].at, SimTime::ms(20));
  EXPECT_TRUE(b.lan->got[0].pkt.is_syn_ack());
  EXPECT_EQ(b.lan->got[0].pkt.dst, (Address{kSrc, 0, 40000}));
  EXPECT_EQ(b.router->route_for(key(40000)), 2);
  EXPECT_EQ(b.router->counters().rst_sent, 2u);
  EXPECT_EQ(b.count(1, kRst), 1u);
  EXPECT_EQ(b.count(2, kRst), 0u);
  EXPECT_EQ(b.count(3, kRst), 1u);
  EXPECT_EQ(b.path(1).got.back().at, SimTime::ms(20));
  EXPECT_EQ(b.router->counters().late_synack_dropped, 1u);
  EXPECT_EQ(b.router->counters().flows_established, 1u);
  EXPECT_FALSE(b.router->has_pending(key(40000)));
  EXPECT_TRUE(b.router->tables_consistent());
}

TEST(Router, SimultaneousSynAcksResolveToLowestIndex) {
  Bench b(3);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  b.wan_at(SimTime::ms(20), 3, b.reply_on(3, 0, kSyn | kAck));
  b.wan_at(SimTime::ms(20), 2, b.reply_on(2, 0, kSyn | kAck));
  b.s.run_until(SimTime::ms(500));
  EXPECT_EQ(b.router->route_for(key(40000)), 2);
  EXPECT_EQ(b.lan->got.size(), 1u);
  EXPECT_EQ(b.router->counters().late_synack_dropped, 1u);
  EXPECT_EQ(b.router->counters().rst_sent, 2u);
}

TEST(Router, RetransmittedSynReusesBindings) {
  Bench b(2);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.lan_at(SimTime::sec(1), Bench::syn(40000));
  b.s.run_until(SimTime::sec(1) + SimTime::ms(1));
  EXPECT_EQ(b.router->counters().syn_reemitted, 1u);
  EXPECT_EQ(b.router->counters().syn_duplicated, 1u);
  EXPECT_EQ(b.router->binding_count(), 2u);
  for (PathId p = 1; p <= 2; ++p) {
    ASSERT_EQ(b.path(p).got.size(), 2u);
    EXPECT_EQ(b.path(p).got[0].pkt.src, b.path(p).got[1].pkt.src);
  }
  // A SYN-ACK answering either copy still wins exactly once.
  b.wan_at(SimTime::sec(1) + SimTime::ms(50), 1, b.reply_on(1, 1, kSyn | kAck));
  b.wan_at(SimTime::sec(1) + SimTime::ms(60), 1, b.reply_on(1, 0, kSyn | kAck));
  b.s.run_until(SimTime::sec(2));
  EXPECT_EQ(b.router->route_for(key(40000)), 1);
  EXPECT_EQ(b.router->counters().flows_established, 1u);
  EXPECT_EQ(b.router->counters().rst_sent, 1u);
  EXPECT_TRUE(b.router->violations().empty());
}

TEST(Router, EstablishedTrafficUsesOnlyTheWinner) {
  Bench b(2);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  b.wan_at(SimTime::ms(10), 2, b.reply_on(2, 0, kSyn | kAck));
  b.s.run_until(SimTime::ms(500));
  const std::size_t before1 = b.path(1).got.size();
  for (int i = 0; i < 5; ++i) b.lan_at(SimTime::ms(20 + i), Bench::from_lan(40000, kAck));
  // Anything still arriving on the loser path is dropped.
  Packet stray = b.reply_on(1, 0, kAck);
  b.wan_at(SimTime::ms(30), 1, stray);
  Packet data = b.reply_on(2, 0, kAck);
  data.payload_len = 100;
  b.wan_at(SimTime::ms(31), 2, data);
  b.s.run_until(SimTime::ms(500));
  EXPECT_EQ(b.path(1).got.size(), before1);
  EXPECT_EQ(b.path(2).got.size(), 1u + 5u);
  EXPECT_EQ(b.router->counters().loser_path_dropped, 1u);
  ASSERT_EQ(b.lan->got.size(), 2u);
  EXPECT_EQ(b.lan->got[1].pkt.payload_len, 100u);
  EXPECT_EQ(b.lan->got[1].pkt.dst, (Address{kSrc, 0, 40000}));
}

TEST(Router, RouteUpdateDelayHoldsTheSynAck) {
  RouterConfig cfg;
  cfg.route_update_delay = SimTime::ms(5);
  Bench b(2, PolicyKind::two_syn(), FlowKeyMode::FiveTuple, cfg);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  b.wan_at(SimTime::ms(10), 1, b.reply_on(1, 0, kSyn | kAck));
  b.s.run_until(SimTime::ms(500));
  ASSERT_EQ(b.lan->got.size(), 1u);
  EXPECT_EQ(b.lan->got[0].at, SimTime::ms(15));
  EXPECT_EQ(b.count(2, kRst), 1u);
  EXPECT_EQ(b.path(2).got.back().at, SimTime::ms(10));
}

TEST(Router, HandshakeTimeoutReleasesState) {
  Bench b(2);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(2999));
  EXPECT_EQ(b.router->pending_count(), 1u);
  b.s.run_until();
  EXPECT_EQ(b.router->counters().handshake_timeouts, 1u);
  EXPECT_EQ(b.router->pending_count(), 0u);
  EXPECT_EQ(b.router->binding_count(), 0u);
  EXPECT_EQ(b.router->af_size(), 0u);
}

TEST(Router, RefusedOnEveryPathForwardsRst) {
  Bench b(2);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  b.wan_at(SimTime::ms(10), 1, b.reply_on(1, 0, kRst | kAck));
  b.wan_at(SimTime::ms(12), 2, b.reply_on(2, 0, kRst | kAck));
  b.s.run_until(SimTime::ms(500));
  ASSERT_EQ(b.lan->got.size(), 1u);
  EXPECT_TRUE(b.lan->got[0].pkt.has(kRst));
  EXPECT_EQ(b.lan->got[0].at, SimTime::ms(12));
  EXPECT_EQ(b.router->pending_count(), 0u);
  EXPECT_EQ(b.router->binding_count(), 0u);
  EXPECT_EQ(b.router->counters().handshake_timeouts, 0u);
}

TEST(Router, RefusalOnOnePathLeavesTheRaceOpen) {
  Bench b(2);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  b.wan_at(SimTime::ms(10), 1, b.reply_on(1, 0, kRst | kAck));
  b.wan_at(SimTime::ms(40), 2, b.reply_on(2, 0, kSyn | kAck));
  b.s.run_until(SimTime::ms(500));
  EXPECT_EQ(b.router->route_for(key(40000)), 2);
  ASSERT_EQ(b.lan->got.size(), 1u);
  EXPECT_TRUE(b.lan->got[0].pkt.is_syn_ack());
}

TEST(Router, SourceRstDuringRaceAbandonsEveryPath) {
  Bench b(3);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.lan_at(SimTime::ms(5), Bench::from_lan(40000, kRst));
  b.s.run_until(SimTime::ms(6));
  for (PathId p = 1; p <= 3; ++p) EXPECT_EQ(b.count(p, kRst), 1u);
  EXPECT_EQ(b.router->pending_count(), 0u);
  EXPECT_EQ(b.router->binding_count(), 0u);
}

TEST(Router, SingleCopyPolicies) {
  Bench b(3, PolicyKind::fixed(3));
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  EXPECT_TRUE(b.path(1).got.empty());
  EXPECT_TRUE(b.path(2).got.empty());
  ASSERT_EQ(b.path(3).got.size(), 1u);
  EXPECT_EQ(b.router->route_for(key(40000)), 3);
  EXPECT_EQ(b.router->counters().syn_duplicated, 0u);
  EXPECT_EQ(b.router->counters().rst_sent, 0u);
}

TEST(Router, TwoSynWithOnePathDoesNotRace) {
  Bench b(1);
  EXPECT_FALSE(b.router->uses_two_syn());
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(500));
  EXPECT_EQ(b.path(1).got.size(), 1u);
  EXPECT_EQ(b.router->route_for(key(40000)), 1);
  EXPECT_EQ(b.router->counters().syn_duplicated, 0u);
}

TEST(Router, IpPairKeyedConnectionsShareThePath) {
  Bench b(2, PolicyKind::two_syn(), FlowKeyMode::IpPair);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.lan_at(SimTime::ms(1), Bench::syn(40001));  // waits for the race
  b.s.run_until(SimTime::ms(2));
  EXPECT_EQ(b.path(1).got.size(), 1u);
  EXPECT_EQ(b.path(2).got.size(), 1u);
  b.wan_at(SimTime::ms(10), 2, b.reply_on(2, 0, kSyn | kAck));
  b.lan_at(SimTime::ms(20), Bench::syn(40002));  // joins the installed route
  b.s.run_until(SimTime::ms(25));
  EXPECT_EQ(b.router->route_for(key(40000, FlowKeyMode::IpPair)), 2);
  EXPECT_EQ(b.router->af_size(), 1u);
  std::size_t syns2 = 0;
  for (auto& it : b.path(2).got) syns2 += it.pkt.is_pure_syn();
  EXPECT_EQ(syns2, 3u);
  EXPECT_EQ(b.count(1, kSyn), 1u);  // only the original race copy
  EXPECT_EQ(b.router->counters().syn_duplicated, 1u);
  EXPECT_EQ(b.router->counters().rst_sent, 1u);
}

TEST(Router, NatExhaustionIsCounted) {
  RouterConfig cfg;
  cfg.nat_port_min = 2000;
  cfg.nat_port_max = 2001;
  Bench b(2, PolicyKind::fixed(1), FlowKeyMode::FiveTuple, cfg);
  for (Port p = 0; p < 3; ++p) b.lan_at(SimTime::ms(p), Bench::syn(static_cast<Port>(40000 + p)));
  b.s.run_until(SimTime::ms(10));
  EXPECT_EQ(b.path(1).got.size(), 2u);
  EXPECT_EQ(b.router->counters().nat_exhaustions, 1u);
  EXPECT_EQ(b.router->binding_count(), 2u);
}

TEST(Router, StrayAndUnboundTraffic) {
  Bench b(2);
  Packet bogus;
  bogus.src = Address{kDst, 0, kDstPort};
  bogus.dst = Address{RouterConfig{}.id, 1, 9999};
  bogus.flags = kAck;
  b.wan_at(SimTime{}, 1, bogus);
  Packet wrong_iface = bogus;
  wrong_iface.dst.iface = 2;
  b.wan_at(SimTime{}, 1, wrong_iface);
  b.lan_at(SimTime{}, Bench::from_lan(40000, kAck));
  b.s.run_until(SimTime::ms(1));
  EXPECT_EQ(b.router->counters().stray_dropped, 2u);
  EXPECT_EQ(b.router->counters().default_route_anomalies, 1u);
  ASSERT_EQ(b.path(1).got.size(), 1u);
  EXPECT_EQ(b.path(1).got[0].pkt.src.iface, 1);
}

// FIN from each side, each acknowledged, retires the connection and both
// tables. The bandit sees the connection's duration.
TEST(Router, FinExchangeTearsDownAndReportsDuration) {
  Bench b(2, PolicyKind::ucb());
  std::vector<RouteEvent> ends;
  b.router->on_connection_end = [&](const RouteEvent& e) { ends.push_back(e); };
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.s.run_until(SimTime::ms(1));
  ASSERT_EQ(b.path(1).got.size(), 1u);
  b.wan_at(SimTime::ms(10), 1, b.reply_on(1, 0, kSyn | kAck));
  Packet fin = Bench::from_lan(40000, kFin | kAck);
  fin.seq = 1;
  fin.ack = 1;
  b.lan_at(SimTime::ms(20), fin);
  Packet fin_ack = b.reply_on(1, 0, kFin | kAck);
  fin_ack.seq = 1;
  fin_ack.ack = 2;
  b.wan_at(SimTime::ms(30), 1, fin_ack);
  Packet last = Bench::from_lan(40000, kAck);
  last.seq = 2;
  last.ack = 2;
  b.lan_at(SimTime::ms(40), last);
  b.s.run_until(SimTime::ms(41));
  ASSERT_EQ(ends.size(), 1u);
  EXPECT_EQ(ends[0].cause, FlowEndCause::FinAckComplete);
  EXPECT_EQ(ends[0].at - ends[0].syn_seen_at, SimTime::ms(40));
  EXPECT_EQ(b.router->af_size(), 0u);
  EXPECT_EQ(b.router->route_count(), 0u);
  const auto arms = b.router->selector().arms({kSrc, kDst});
  ASSERT_EQ(arms.size(), 2u);
  EXPECT_EQ(arms[0].pulls, 1u);
  EXPECT_DOUBLE_EQ(arms[0].mean(), -0.04);
  b.s.run_until();
  EXPECT_EQ(b.router->binding_count(), 0u);  // released after the linger
}

TEST(Router, IdleFlowsExpire) {
  RouterConfig cfg;
  cfg.idle_timeout = SimTime::sec(2);
  Bench b(2, PolicyKind::fixed(1), FlowKeyMode::FiveTuple, cfg);
  b.lan_at(SimTime{}, Bench::syn(40000));
  b.lan_at(SimTime::sec(1), Bench::from_lan(40000, kAck));
  b.s.run_until(SimTime::sec(2) + SimTime::ms(500));
  EXPECT_EQ(b.router->af_size(), 1u);  // activity at 1 s pushed the deadline
  b.s.run_until();
  EXPECT_EQ(b.router->counters().idle_timeouts, 1u);
  EXPECT_EQ(b.router->af_size(), 0u);
  EXPECT_EQ(b.router->binding_count(), 0u);
}

// Random races: any subset of paths answers, in any order, possibly at the
// same tick. At most one winner, the earliest answer (lowest index on ties);
// k-1 RSTs; no loser SYN-ACK towards the source; consistent tables.
TEST(RouterProperty, RaceOutcomes) {
  RngStream rng(2024, "test.router.race");
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_int(4));
    Bench b(k);
    b.lan_at(SimTime{}, Bench::syn(40000));
    b.s.run_until(SimTime::ms(1));
    std::optional<std::pair<SimTime, PathId>> first;
    std::vector<std::size_t> answers(static_cast<std::size_t>(k) + 1, 0);
    for (PathId p = 1; p <= k; ++p) {
      if (rng.uniform01() < 0.25) continue;
      const SimTime at = SimTime::ms(5 + static_cast<std::int64_t>(rng.uniform_int(4)));
      b.wan_at(at, p, b.reply_on(p, 0, kSyn | kAck));
      ++answers[static_cast<std::size_t>(p)];
      if (rng.uniform01() < 0.3) {
        b.wan_at(at + SimTime::ms(1), p, b.reply_on(p, 0, kSyn | kAck));
        ++answers[static_cast<std::size_t>(p)];
      }
      if (!first || std::make_pair(at, p) < *first) first = std::make_pair(at, p);
    }
    b.s.run_until(first ? SimTime::ms(500) : SimTime::sec(5));
    const RouterCounters& c = b.router->counters();
    ASSERT_TRUE(b.router->tables_consistent());
    if (!first) {
      EXPECT_EQ(c.handshake_timeouts, 1u);
      EXPECT_EQ(c.flows_established, 0u);
      EXPECT_TRUE(b.lan->got.empty());
      continue;
    }
    EXPECT_EQ(b.router->route_for(key(40000)), first->second);
    EXPECT_EQ(c.flows_established, 1u);
    EXPECT_EQ(c.rst_sent, static_cast<std::uint64_t>(k - 1));
    std::size_t synacks = 0;
    for (auto& it : b.lan->got) synacks += it.pkt.is_syn_ack();
    // Only the winner's SYN-ACKs (including retransmissions) reach the source.
    EXPECT_EQ(synacks, answers[static_cast<std::size_t>(first->second)]);
    for (PathId p = 1; p <= k; ++p) EXPECT_EQ(b.count(p, kRst), p == first->second ? 0u : 1u);
    EXPECT_TRUE(b.router->violations().empty());
  }
}
