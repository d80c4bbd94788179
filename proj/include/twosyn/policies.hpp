#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "twosyn/packet.hpp"
#include "twosyn/rng.hpp"
#include "twosyn/simcore.hpp"

namespace twosyn {

enum class PolicyType { Static, UniformRandom, TwoSyn, EpsilonGreedy, Ucb, Thompson };

struct PolicyKind {
  PolicyType type = PolicyType::TwoSyn;
  PathId static_path = 1;
  double epsilon = 0.1;
  double ucb_c = 1.0;

  static PolicyKind fixed(PathId p) { return {PolicyType::Static, p}; }
  static PolicyKind random() { return {PolicyType::UniformRandom}; }
  static PolicyKind two_syn() { return {PolicyType::TwoSyn}; }
  static PolicyKind epsilon_greedy(double eps = 0.1) {
    PolicyKind k{PolicyType::EpsilonGreedy};
    k.epsilon = eps;
    return k;
  }
  static PolicyKind ucb(double c = 1.0) {
    PolicyKind k{PolicyType::Ucb};
    k.ucb_c = c;
    return k;
  }
  static PolicyKind thompson() { return {PolicyType::Thompson}; }

  bool is_bandit() const {
    return type == PolicyType::EpsilonGreedy || type == PolicyType::Ucb ||
           type == PolicyType::Thompson;
  }

  std::string name() const {
    switch (type) {
      case PolicyType::Static: return "Static" + std::to_string(static_path);
      case PolicyType::UniformRandom: return "Random";
      case PolicyType::TwoSyn: return "2SYN";
      case PolicyType::EpsilonGreedy: return "EpsilonGreedy";
      case PolicyType::Ucb: return "UCB";
      case PolicyType::Thompson: return "Thompson";
    }
    return "?";
  }

  // Accepts the names produced by name() (case-insensitive) plus the short
  // forms static:<i>, random, 2syn, egreedy, ucb, thompson.
  static std::optional<PolicyKind> parse(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "2syn" || s == "twosyn") return two_syn();
    if (s == "random" || s == "uniformrandom") return random();
    if (s == "egreedy" || s == "epsilongreedy" || s == "epsilon-greedy") return epsilon_greedy();
    if (s == "ucb") return ucb();
    if (s == "thompson") return thompson();
    std::string digits;
    if (s.rfind("static:", 0) == 0) digits = s.substr(7);
    else if (s.rfind("static", 0) == 0) digits = s.substr(6);
    else return std::nullopt;
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) return std::nullopt;
    const int p = std::stoi(digits);
    if (p < 1) return std::nullopt;
    return fixed(p);
  }

  bool operator==(const PolicyKind&) const = default;
};

// Statistics of one (pair, path) arm. Rewards are -FCT in seconds.
struct ArmStat {
  std::uint64_t pulls = 0;
  double reward_sum = 0.0;
  double reward_sq_sum = 0.0;
  double posterior_mean = 0.0;
  double posterior_var = 0.0;

  double mean() const { return pulls ? reward_sum / static_cast<double>(pulls) : 0.0; }
  // Unbiased sample variance; zero with fewer than two samples.
  double sample_var() const {
    if (pulls < 2) return 0.0;
    const double n = static_cast<double>(pulls);
    const double v = (reward_sq_sum - reward_sum * reward_sum / n) / (n - 1.0);
    return std::max(v, 0.0);
  }
};

// Observed reward range of one pair, across all its arms.
struct RewardRange {
  double lo = 0.0;
  double hi = 0.0;
  bool any = false;

  void add(double r) {
    if (!any) {
      lo = hi = r;
      any = true;
    } else {
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
  }
  double normalize(double r) const {
    if (!any || hi <= lo) return 0.0;
    return (r - lo) / (hi - lo);
  }
};

inline constexpr double kThompsonPriorMean = 0.0;
inline constexpr double kThompsonPriorVar = 10.0;
inline constexpr double kThompsonVarFloor = 1e-6;

inline double reward_of(SimTime fct) { return -fct.seconds(); }

namespace detail {
inline PathId argmax_lowest(const std::vector<double>& score) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < score.size(); ++i) {
    if (score[i] > score[best]) best = i;
  }
  return static_cast<PathId>(best + 1);
}
inline std::optional<PathId> first_unpulled(std::span<const ArmStat> arms) {
  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (arms[i].pulls == 0) return static_cast<PathId>(i + 1);
  }
  return std::nullopt;
}
}  // namespace detail

// Picks a path for a non-2SYN policy. `arms` holds one entry per path.
// Argmax ties resolve to the lowest index. 2SYN never calls this: its path
// comes out of the handshake race.
inline PathId select_path(const PolicyKind& policy, std::span<const ArmStat> arms,
                          const RewardRange& range, RngStream& rng) {
  const int k = static_cast<int>(arms.size());
  if (k < 1) throw std::invalid_argument("select_path needs at least one path");
  switch (policy.type) {
    case PolicyType::Static:
      if (policy.static_path < 1 || policy.static_path > k) {
        throw std::invalid_argument("static path out of range");
      }
      return policy.static_path;
    case PolicyType::UniformRandom:
      return static_cast<PathId>(rng.uniform_int(static_cast<std::uint64_t>(k)) + 1);
    case PolicyType::TwoSyn:
      throw std::logic_error("2SYN selects its path by racing handshakes");
    case PolicyType::EpsilonGreedy: {
      const double u = rng.uniform01();
      PathId best;
      if (auto fresh = detail::first_unpulled(arms)) {
        best = *fresh;
      } else {
        std::vector<double> score(arms.size());
        for (std::size_t i = 0; i < arms.size(); ++i) score[i] = arms[i].mean();
        best = detail::argmax_lowest(score);
      }
      if (u >= policy.epsilon || k == 1) return best;
      // Explore one of the other paths uniformly.
      PathId other = static_cast<PathId>(rng.uniform_int(static_cast<std::uint64_t>(k - 1)) + 1);
      if (other >= best) ++other;
      return other;
    }
    case PolicyType::Ucb: {
      if (auto fresh = detail::first_unpulled(arms)) return *fresh;
      double total = 0.0;
      for (const ArmStat& a : arms) total += static_cast<double>(a.pulls);
      std::vector<double> score(arms.size());
      for (std::size_t i = 0; i < arms.size(); ++i) {
        const double bonus = std::sqrt(2.0 * std::log(total) / static_cast<double>(arms[i].pulls));
        score[i] = range.normalize(arms[i].mean()) + policy.ucb_c * bonus;
      }
      return detail::argmax_lowest(score);
    }
    case PolicyType::Thompson: {
      std::vector<double> score(arms.size());
      for (std::size_t i = 0; i < arms.size(); ++i) {
        const ArmStat& a = arms[i];
        const double mean = a.pulls ? a.posterior_mean : kThompsonPriorMean;
        const double var = a.pulls ? a.posterior_var : kThompsonPriorVar;
        score[i] = rng.normal(mean, std::sqrt(var));
      }
      return detail::argmax_lowest(score);
    }
  }
  throw std::logic_error("unknown policy");
}

// Adds one observed reward to an arm, refreshing the Gaussian posterior
// (known-variance conjugate update, variance estimated from the arm's samples).
inline void add_reward(ArmStat& arm, double reward) {
  ++arm.pulls;
  arm.reward_sum += reward;
  arm.reward_sq_sum += reward * reward;
  const double obs_var = std::max(arm.sample_var(), kThompsonVarFloor);
  const double precision = 1.0 / kThompsonPriorVar + static_cast<double>(arm.pulls) / obs_var;
  arm.posterior_var = 1.0 / precision;
  arm.posterior_mean =
      arm.posterior_var * (kThompsonPriorMean / kThompsonPriorVar + arm.reward_sum / obs_var);
}

using HostPair = std::pair<HostId, HostId>;

// Per-(source, destination) learners. Pairs never share statistics.
class PathSelector {
 public:
  PathSelector(PolicyKind policy, int k, std::uint64_t seed)
      : policy_(policy), k_(k), rng_(seed, policy.type == PolicyType::Thompson ? "thompson" : "policy") {
    if (k < 1) throw std::invalid_argument("need at least one path");
    if (policy.type == PolicyType::Static && (policy.static_path < 1 || policy.static_path > k)) {
      throw std::invalid_argument("static path " + std::to_string(policy.static_path) +
                                  " out of range 1.." + std::to_string(k));
    }
  }

  const PolicyKind& policy() const { return policy_; }
  int k() const { return k_; }

  PathId select_path(const HostPair& pair) {
    Learner& l = learner(pair);
    return twosyn::select_path(policy_, l.arms, l.range, rng_);
  }

  // Stateless policies ignore outcomes.
  void record_outcome(const HostPair& pair, PathId path, SimTime fct) {
    if (!policy_.is_bandit()) return;
    if (path < 1 || path > k_) throw std::invalid_argument("record_outcome: bad path");
    Learner& l = learner(pair);
    const double r = reward_of(fct);
    add_reward(l.arms[static_cast<std::size_t>(path - 1)], r);
    l.range.add(r);
  }

  // Empty span for pairs never seen.
  std::span<const ArmStat> arms(const HostPair& pair) const {
    auto it = learners_.find(pair);
    if (it == learners_.end()) return {};
    return it->second.arms;
  }
  std::size_t pair_count() const { return learners_.size(); }

 private:
  struct Learner {
    std::vector<ArmStat> arms;
    RewardRange range;
  };

  Learner& learner(const HostPair& pair) {
    auto [it, inserted] = learners_.try_emplace(pair);
    if (inserted) it->second.arms.resize(static_cast<std::size_t>(k_));
    return it->second;
  }

  PolicyKind policy_;
  int k_;
  RngStream rng_;
  std::map<HostPair, Learner> learners_;
};

}  // namespace twosyn
