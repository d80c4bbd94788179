#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "twosyn/host.hpp"
#include "twosyn/link.hpp"
#include "twosyn/router.hpp"

namespace twosyn {

// One WAN path. "Forward" is router to destination (upload direction),
// "reverse" is destination to router (download direction).
struct PathSpec {
  std::uint64_t fwd_bps = 300'000'000;
  std::uint64_t rev_bps = 300'000'000;
  SimTime one_way_delay = SimTime::ms(40);

  SimTime rtt() const { return one_way_delay * 2; }
};

struct LanSpec {
  std::uint64_t bps = 1'000'000'000;
  SimTime delay = SimTime::us(100);
};

enum class Direction { Download, Upload };
enum class LinkDir { Fwd, Rev };

inline constexpr HostId kRouterHost = 1;
inline constexpr HostId kSourceBase = 100;
inline constexpr HostId kDestBase = 200;
inline constexpr HostId kCrossFarBase = 1000;
inline constexpr HostId kCrossNearBase = 2000;
inline constexpr Port kServerPort = 5201;

// Static forwarding by destination host.
class Switch : public PacketSink {
 public:
  explicit Switch(std::string name) : name_(std::move(name)) {}
  void add_route(HostId host, PacketSink* next) { routes_[host] = next; }
  void set_default(PacketSink* next) { default_ = next; }
  void receive(Packet pkt, int ingress) override {
    auto it = routes_.find(pkt.dst.host);
    PacketSink* next = it != routes_.end() ? it->second : default_;
    if (!next) {
      ++unroutable_;
      return;
    }
    next->receive(std::move(pkt), ingress);
  }
  std::uint64_t unroutable() const { return unroutable_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::unordered_map<HostId, PacketSink*> routes_;
  PacketSink* default_ = nullptr;
  std::uint64_t unroutable_ = 0;
};

struct TopologyConfig {
  std::vector<PathSpec> paths;
  int pairs = 1;
  LanSpec lan;
  RouterConfig router;  // k is taken from paths
  TcpConfig tcp;
};

// A cross-traffic host pair attached across one WAN path.
struct CrossPair {
  PathId path = 1;
  Direction direction = Direction::Download;
  Host* sender = nullptr;
  Host* receiver = nullptr;
};

// Sources S_j -- router R -- k WAN paths -- destinations D_j. Each path i is
// a forward/reverse link pair between R's interface i and a path router P_i
// that fans out to the destinations over LAN links. WAN buffers are sized
// RTT * capacity.
class Topology {
 public:
  Topology(Scheduler& sched, TopologyConfig cfg, std::uint64_t seed) : sched_(sched), cfg_(std::move(cfg)) {
    const int k = static_cast<int>(cfg_.paths.size());
    if (k < 1) throw std::invalid_argument("topology needs at least one path");
    if (cfg_.pairs < 1) throw std::invalid_argument("topology needs at least one host pair");
    cfg_.router.k = k;
    cfg_.router.id = kRouterHost;
    cfg_.router.nat_linger = max_rtt() * 2;
    router_ = std::make_unique<Router>(sched_, cfg_.router, seed);

    for (int p = 1; p <= k; ++p) {
      const PathSpec& ps = cfg_.paths[static_cast<std::size_t>(p - 1)];
      auto far = std::make_unique<Switch>("P" + std::to_string(p));
      auto near = std::make_unique<Switch>("Q" + std::to_string(p));
      Link* fwd = add_link("wan" + std::to_string(p) + ".fwd", ps.fwd_bps, ps.one_way_delay,
                           ps.rtt(), far.get());
      Link* rev = add_link("wan" + std::to_string(p) + ".rev", ps.rev_bps, ps.one_way_delay,
                           ps.rtt(), near.get());
      router_->set_wan_egress(p, fwd);
      near->add_route(kRouterHost, &router_->wan_port(p));
      near->set_default(fwd);
      far->add_route(kRouterHost, rev);
      wan_fwd_.push_back(fwd);
      wan_rev_.push_back(rev);
      far_.push_back(std::move(far));
      near_.push_back(std::move(near));
    }

    for (int j = 0; j < cfg_.pairs; ++j) {
      auto s = std::make_unique<Host>(sched_, kSourceBase + static_cast<HostId>(j), cfg_.tcp);
      auto d = std::make_unique<Host>(sched_, kDestBase + static_cast<HostId>(j), cfg_.tcp);
      Link* up = add_lan("lan.S" + std::to_string(j) + ".up", &router_->lan_port());
      Link* down = add_lan("lan.S" + std::to_string(j) + ".down", s.get());
      s->set_default_route(up);
      router_->set_lan_egress(s->id(), down);
      d->listen(kServerPort);
      for (int p = 1; p <= k; ++p) {
        Switch* far = far_[static_cast<std::size_t>(p - 1)].get();
        Link* to_d = add_lan("lan.P" + std::to_string(p) + ".D" + std::to_string(j), d.get());
        Link* from_d = add_lan("lan.D" + std::to_string(j) + ".P" + std::to_string(p), far);
        far->add_route(d->id(), to_d);
        d->add_route(kRouterHost, static_cast<std::uint16_t>(p), from_d);
      }
      sources_.push_back(std::move(s));
      dests_.push_back(std::move(d));
    }
  }

  Topology(const Topology&) = delete;
  Topology& operator=(const Topology&) = delete;

  int k() const { return static_cast<int>(cfg_.paths.size()); }
  int pairs() const { return cfg_.pairs; }
  Scheduler& scheduler() { return sched_; }
  Router& router() { return *router_; }
  Host& source(int j) { return *sources_.at(static_cast<std::size_t>(j)); }
  Host& dest(int j) { return *dests_.at(static_cast<std::size_t>(j)); }
  const PathSpec& path_spec(PathId p) const { return cfg_.paths.at(static_cast<std::size_t>(p - 1)); }
  Link& wan_link(PathId p, LinkDir dir) {
    check_path(p);
    return *(dir == LinkDir::Fwd ? wan_fwd_ : wan_rev_)[static_cast<std::size_t>(p - 1)];
  }
  const std::vector<std::unique_ptr<Link>>& links() const { return links_; }
  const std::vector<CrossPair>& cross_pairs() const { return cross_; }
  SimTime max_rtt() const {
    SimTime m{};
    for (const PathSpec& p : cfg_.paths) m = std::max(m, p.rtt());
    return m;
  }

  // Capacity change on one direction of a WAN path, effective now.
  void set_link_capacity(PathId p, LinkDir dir, std::uint64_t bps) {
    if (bps == 0) throw std::invalid_argument("capacity must be > 0");
    wan_link(p, dir).set_capacity(bps);
  }

  // Adds a greedy cross-traffic host pair across path `p`. The sender's
  // access link runs at `cap_bps`, which caps the flow's rate.
  CrossPair add_cross_pair(PathId p, Direction dir, std::uint64_t cap_bps) {
    check_path(p);
    const std::size_t idx = cross_.size();
    const SimTime rtt = path_spec(p).rtt();
    auto far_host = std::make_unique<Host>(sched_, kCrossFarBase + static_cast<HostId>(idx), cfg_.tcp);
    auto near_host = std::make_unique<Host>(sched_, kCrossNearBase + static_cast<HostId>(idx), cfg_.tcp);
    Switch* far = far_[static_cast<std::size_t>(p - 1)].get();
    Switch* near = near_[static_cast<std::size_t>(p - 1)].get();
    const bool far_sends = dir == Direction::Download;
    const std::uint64_t far_up_bps = far_sends ? cap_bps : cfg_.lan.bps;
    const std::uint64_t near_up_bps = far_sends ? cfg_.lan.bps : cap_bps;
    Link* far_up = add_link("cross" + std::to_string(idx) + ".far.up", far_up_bps, cfg_.lan.delay,
                            far_sends ? rtt : SimTime{}, far);
    Link* far_down = add_lan("cross" + std::to_string(idx) + ".far.down", far_host.get());
    Link* near_up = add_link("cross" + std::to_string(idx) + ".near.up", near_up_bps, cfg_.lan.delay,
                             far_sends ? SimTime{} : rtt, near);
    Link* near_down = add_lan("cross" + std::to_string(idx) + ".near.down", near_host.get());
    far_host->set_default_route(far_up);
    near_host->set_default_route(near_up);
    far->add_route(far_host->id(), far_down);
    far->add_route(near_host->id(), wan_rev_[static_cast<std::size_t>(p - 1)]);
    near->add_route(near_host->id(), near_down);
    near->add_route(far_host->id(), wan_fwd_[static_cast<std::size_t>(p - 1)]);
    CrossPair cp;
    cp.path = p;
    cp.direction = dir;
    cp.sender = far_sends ? far_host.get() : near_host.get();
    cp.receiver = far_sends ? near_host.get() : far_host.get();
    cp.receiver->listen(kServerPort);
    cross_hosts_.push_back(std::move(far_host));
    cross_hosts_.push_back(std::move(near_host));
    cross_.push_back(cp);
    return cp;
  }

 private:
  void check_path(PathId p) const {
    if (p < 1 || p > k()) throw std::out_of_range("unknown path index " + std::to_string(p));
  }

  Link* add_link(std::string name, std::uint64_t bps, SimTime delay, SimTime buffer_rtt, PacketSink* to) {
    LinkConfig lc;
    lc.name = std::move(name);
    lc.capacity_bps = bps;
    lc.prop_delay = delay;
    lc.buffer_rtt = buffer_rtt;
    links_.push_back(std::make_unique<Link>(sched_, lc, to, 0));
    return links_.back().get();
  }
  Link* add_lan(std::string name, PacketSink* to) {
    return add_link(std::move(name), cfg_.lan.bps, cfg_.lan.delay, SimTime{}, to);
  }

  Scheduler& sched_;
  TopologyConfig cfg_;
  std::unique_ptr<Router> router_;
  std::vector<std::unique_ptr<Link>> links_;
  std::vector<Link*> wan_fwd_;
  std::vector<Link*> wan_rev_;
  std::vector<std::unique_ptr<Switch>> far_;
  std::vector<std::unique_ptr<Switch>> near_;
  std::vector<std::unique_ptr<Host>> sources_;
  std::vector<std::unique_ptr<Host>> dests_;
  std::vector<std::unique_ptr<Host>> cross_hosts_;
  std::vector<CrossPair> cross_;
};

}  // namespace twosyn
