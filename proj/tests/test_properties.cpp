#include <gtest/gtest.h>

#include <map>

#include "test_util.hpp"
#include "twosyn/host.hpp"
#include "twosyn/link.hpp"
#include "twosyn/rng.hpp"
#include "twosyn/simulation.hpp"

using namespace twosyn;
using twosyn::testing::Collector;

namespace {

LinkConfig link_cfg(std::uint64_t bps, SimTime d, std::uint64_t buffer = kUnlimitedBuffer) {
  LinkConfig c;
  c.capacity_bps = bps;
  c.prop_delay = d;
  c.buffer_limit = buffer;
  return c;
}

// Sits between a host and its uplink and checks every segment the client
// emits against the sender's window at that moment.
struct SendAudit : PacketSink {
  Link* next = nullptr;
  Host* host = nullptr;
  Host::ConnId id = 0;
  std::uint64_t rcv_wnd = 0;
  std::uint64_t highest = 0;
  int checked = 0;
  std::vector<std::string> errors;

  void receive(Packet pkt, int) override {
    const TcpEndpoint& ep = host->endpoint(id);
    const std::uint64_t end = pkt.seq + pkt.payload_len;
    if (pkt.payload_len > 0 && pkt.seq >= highest) {
      ++checked;
      const std::uint64_t wnd = std::min(ep.cwnd(), rcv_wnd);
      if (pkt.seq != ep.snd_una() && end - ep.snd_una() > wnd) {
        errors.push_back("new data beyond window at seq " + std::to_string(pkt.seq));
      }
      if (ep.snd_max() - ep.snd_una() > rcv_wnd + ep.mss()) errors.push_back("in flight exceeds rcv_wnd");
    }
    if (ep.cwnd() > rcv_wnd) errors.push_back("cwnd above rcv_wnd");
    if (ep.cwnd() < ep.mss()) errors.push_back("cwnd below one segment");
    if (ep.snd_una() > ep.snd_nxt()) errors.push_back("snd_una ahead of snd_nxt");
    highest = std::max(highest, end);
    next->transmit(std::move(pkt));
  }
};

struct LossyTransfer {
  LossyTransfer(std::uint64_t seed, double loss, std::uint64_t rcv_wnd, std::uint64_t buffer)
      : tcp(make_tcp(rcv_wnd)),
        a(s, 1, tcp),
        b(s, 2, tcp),
        ab(s, link_cfg(50'000'000, SimTime::ms(15), buffer), &b, 0),
        ba(s, link_cfg(50'000'000, SimTime::ms(15)), &a, 0),
        rng(seed, "loss") {
    audit.next = &ab;
    audit.host = &a;
    audit.rcv_wnd = rcv_wnd;
    a.set_default_route(&audit);
    b.set_default_route(&ba);
    b.listen(80);
    ab.drop_filter = [this, loss](const Packet& p) { return p.payload_len > 0 && rng.uniform01() < loss; };
    ba.drop_filter = [this, loss](const Packet&) { return rng.uniform01() < loss / 4; };
    audit.id = a.connect(50000, b.address(80), kBytes, -1, 1, [this](const TcpEndpoint& ep) {
      aborted = ep.aborted();
      done = true;
    });
  }
  static TcpConfig make_tcp(std::uint64_t rcv_wnd) {
    TcpConfig c;
    c.rcv_wnd = rcv_wnd;
    return c;
  }
  static constexpr std::uint64_t kBytes = 2'000'000;
  TcpConfig tcp;
  Scheduler s;
  Host a;
  Host b;
  Link ab;
  Link ba;
  RngStream rng;
  SendAudit audit;
  bool done = false;
  bool aborted = false;
};

SimTime upload_fct(SimTime one_way, std::uint64_t bytes) {
  Scheduler s;
  Host a(s, 1);
  Host b(s, 2);
  Link ab(s, link_cfg(1'000'000'000, one_way), &b, 0);
  Link ba(s, link_cfg(1'000'000'000, one_way), &a, 0);
  a.set_default_route(&ab);
  b.set_default_route(&ba);
  b.listen(80);
  SimTime done{};
  a.connect(50000, b.address(80), bytes, -1, 1, [&](const TcpEndpoint&) { done = s.now(); });
  s.run_until();
  return done;
}

// Small two-pair scenario with a capacity drop halfway through.
Scenario small_scenario() {
  return parse_scenario_string(
      "name = small\n"
      "pairs = 2\n"
      "[paths]\n"
      "path1.capacity_mbps = 100\npath1.delay_ms = 30\n"
      "path2.capacity_mbps = 100\npath2.delay_ms = 20\n"
      "[workload]\n"
      "size_bytes = 300000\ncount = 8\n"
      "[events]\n"
      "event1.trigger = fraction:0.5\nevent1.action = capacity\nevent1.path = 2\nevent1.mbps = 10\n");
}

const std::vector<PolicyKind> kAllPolicies = {PolicyKind::fixed(1), PolicyKind::fixed(2), PolicyKind::random(),
                                              PolicyKind::two_syn(),  PolicyKind::parse("egreedy").value(),
                                              PolicyKind::parse("ucb").value(), PolicyKind::parse("thompson").value()};

void expect_run_invariants(const RunReport& r, const std::string& what) {
  EXPECT_TRUE(r.violations.empty()) << what << ": " << (r.violations.empty() ? "" : r.violations.front());
  std::uint64_t want = 0;
  std::uint64_t got = 0;
  for (const FlowRecord& f : r.flow_records) {
    EXPECT_TRUE(f.completed()) << what;
    want += f.bytes;
    got += f.delivered_bytes;
    ASSERT_TRUE(f.chosen_path.has_value()) << what;
    EXPECT_GE(*f.chosen_path, 1);
    EXPECT_LE(*f.chosen_path, r.k);
  }
  EXPECT_EQ(got, want) << what;
  EXPECT_EQ(r.counter("flows_started"), r.flow_records.size()) << what;
  EXPECT_EQ(r.counter("flows_completed") + r.counter("flows_aborted"), r.flow_records.size()) << what;
  if (r.two_syn) {
    const std::uint64_t n = r.counter("flows_established");
    EXPECT_EQ(r.counter("rst_sent"), static_cast<std::uint64_t>(r.k - 1) * n) << what;
    EXPECT_EQ(r.counter("syn_duplicated"), static_cast<std::uint64_t>(r.k - 1) * n) << what;
    EXPECT_LE(r.counter("late_synack_dropped"), static_cast<std::uint64_t>(r.k - 1) * n) << what;
  }
}

}  // namespace

TEST(TcpProperty, SendsStayInsideTheWindowUnderLoss) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (std::uint64_t rcv_wnd : {64'000'000ULL, 60'000ULL}) {
      LossyTransfer t(seed, 0.02, rcv_wnd, 150'000);
      t.s.run_until();
      ASSERT_TRUE(t.done) << seed;
      EXPECT_FALSE(t.aborted) << seed;
      EXPECT_TRUE(t.audit.errors.empty()) << "seed " << seed << " wnd " << rcv_wnd << ": " << t.audit.errors.front();
      EXPECT_GT(t.audit.checked, 1000);
    }
  }
}

TEST(TcpProperty, FctStrictlyIncreasesWithDelay) {
  SimTime prev{};
  for (int ms = 1; ms <= 100; ms += 9) {
    const SimTime fct = upload_fct(SimTime::ms(ms), 1'000'000);
    EXPECT_GT(fct, prev) << ms;
    prev = fct;
  }
}

TEST(LinkProperty, OccupancyAndThroughputBounds) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Scheduler s;
    Collector sink(s);
    const std::uint64_t bps = 20'000'000;
    const std::uint64_t limit = 30'000;
    Link link(s, link_cfg(bps, SimTime::ms(2), limit), &sink, 0);
    std::vector<std::pair<SimTime, std::uint32_t>> deliveries;
    link.on_deliver = [&](const Packet& p, SimTime at) { deliveries.emplace_back(at, p.wire_size()); };
    RngStream rng(seed, "arrivals");
    bool over = false;
    SimTime t{};
    for (int i = 0; i < 2000; ++i) {
      t = t + SimTime::us(static_cast<std::int64_t>(rng.uniform_int(400)));
      const auto len = static_cast<std::uint32_t>(rng.uniform_int(1449));
      s.schedule(t, [&, len] {
        link.transmit(twosyn::testing::data_packet(len, 0));
        if (link.queued_bytes() > limit) over = true;
      });
    }
    s.run_until();
    EXPECT_FALSE(over) << seed;
    EXPECT_TRUE(link.conserves());
    EXPECT_GT(link.stats().packets_dropped, 0u) << seed;
    // Bytes delivered in any window cannot exceed capacity times its length
    // plus one packet already in service.
    for (std::size_t i = 0; i < deliveries.size(); i += 37) {
      std::uint64_t bytes = 0;
      for (std::size_t j = i; j < deliveries.size(); ++j) {
        bytes += deliveries[j].second;
        const double window = (deliveries[j].first - deliveries[i].first).seconds();
        EXPECT_LE(static_cast<double>(bytes - deliveries[i].second), window * bps / 8 + 1e-6) << seed;
      }
    }
  }
}

TEST(SimulationProperty, InvariantsAcrossSeedsAndPolicies) {
  const Scenario s = small_scenario();
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    for (const PolicyKind& p : kAllPolicies) {
      expect_run_invariants(run_scenario(s, p, seed), p.name() + " seed " + std::to_string(seed));
    }
  }
}

TEST(SimulationProperty, IpPairModeKeepsInvariants) {
  const Scenario s = small_scenario();
  RunOptions opt;
  opt.flow_key_mode = FlowKeyMode::IpPair;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    expect_run_invariants(run_scenario(s, PolicyKind::two_syn(), seed, opt), "ippair seed " + std::to_string(seed));
  }
}

TEST(SimulationProperty, RepeatedRunsAreIdentical) {
  const Scenario s = small_scenario();
  for (const PolicyKind& p : kAllPolicies) {
    const RunReport a = run_scenario(s, p, 5);
    const RunReport b = run_scenario(s, p, 5);
    ASSERT_EQ(a.flow_records.size(), b.flow_records.size());
    for (std::size_t i = 0; i < a.flow_records.size(); ++i) {
      EXPECT_EQ(a.flow_records[i].fct, b.flow_records[i].fct) << p.name();
      EXPECT_EQ(a.flow_records[i].chosen_path, b.flow_records[i].chosen_path) << p.name();
    }
    EXPECT_EQ(a.counters, b.counters) << p.name();
  }
}

TEST(SimulationProperty, PairsLearnIndependently) {
  // Each pair keeps its own bandit, so UCB tries both arms on each pair's
  // first two flows.
  const Scenario s = small_scenario();
  const RunReport r = run_scenario(s, PolicyKind::parse("ucb").value(), 3);
  std::map<int, int> per_pair;
  for (const FlowRecord& f : r.flow_records) ++per_pair[f.pair];
  EXPECT_EQ(per_pair.size(), 2u);
  EXPECT_EQ(per_pair[0], 8);
  EXPECT_EQ(per_pair[1], 8);
  for (int pair = 0; pair < 2; ++pair) {
    std::vector<PathId> first;
    for (const FlowRecord& f : r.flow_records) {
      if (f.pair == pair && f.index < 2) first.push_back(*f.chosen_path);
    }
    ASSERT_EQ(first.size(), 2u);
    EXPECT_NE(first[0], first[1]) << pair;
  }
}
