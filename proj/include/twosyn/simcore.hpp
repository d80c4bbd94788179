#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

namespace twosyn {

// Virtual time in integer nanoseconds since simulation start.
class SimTime {
 public:
  constexpr SimTime() = default;
  constexpr explicit SimTime(std::int64_t ns) : ns_(ns) {}

  static constexpr SimTime ns(std::int64_t v) { return SimTime{v}; }
  static constexpr SimTime us(std::int64_t v) { return SimTime{v * 1'000}; }
  static constexpr SimTime ms(std::int64_t v) { return SimTime{v * 1'000'000}; }
  static constexpr SimTime sec(std::int64_t v) { return SimTime{v * 1'000'000'000}; }
  // Rounds to the nearest nanosecond; used only when loading configs.
  static SimTime from_seconds(double s) {
    return SimTime{static_cast<std::int64_t>(s * 1e9 + (s >= 0 ? 0.5 : -0.5))};
  }
  static constexpr SimTime max() { return SimTime{std::numeric_limits<std::int64_t>::max()}; }

  constexpr std::int64_t count() const { return ns_; }
  constexpr double seconds() const { return static_cast<double>(ns_) * 1e-9; }

  constexpr auto operator<=>(const SimTime&) const = default;

  constexpr SimTime operator+(SimTime o) const { return SimTime{ns_ + o.ns_}; }
  constexpr SimTime operator-(SimTime o) const { return SimTime{ns_ - o.ns_}; }
  constexpr SimTime& operator+=(SimTime o) { ns_ += o.ns_; return *this; }
  constexpr SimTime& operator-=(SimTime o) { ns_ -= o.ns_; return *this; }
  constexpr SimTime operator*(std::int64_t k) const { return SimTime{ns_ * k}; }
  constexpr SimTime operator/(std::int64_t k) const { return SimTime{ns_ / k}; }

 private:
  std::int64_t ns_ = 0;
};

// Formats as seconds with nine decimals, using integer arithmetic only.
inline std::string format_seconds(SimTime t) {
  std::int64_t v = t.count();
  std::string sign;
  if (v < 0) { sign = "-"; v = -v; }
  std::string frac = std::to_string(v % 1'000'000'000);
  frac.insert(0, 9 - frac.size(), '0');
  return sign + std::to_string(v / 1'000'000'000) + "." + frac;
}

struct EventHandle {
  std::uint32_t slot = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t generation = 0;

  bool valid() const { return slot != std::numeric_limits<std::uint32_t>::max(); }
};

// Single-threaded discrete-event scheduler. Events with equal fire times run
// in insertion order.
class Scheduler {
 public:
  using Action = std::function<void()>;

  SimTime now() const { return now_; }

  EventHandle schedule(SimTime at, Action action) {
    if (at < now_) {
      throw std::logic_error("schedule in the past: at=" + format_seconds(at) +
                             " now=" + format_seconds(now_));
    }
    std::uint32_t slot;
    if (!free_slots_.empty()) {
      slot = free_slots_.back();
      free_slots_.pop_back();
    } else {
      slot = static_cast<std::uint32_t>(slots_.size());
      slots_.emplace_back();
    }
    Slot& s = slots_[slot];
    s.action = std::move(action);
    s.live = true;
    heap_.push(Entry{at, next_seq_++, slot, s.generation});
    ++scheduled_;
    ++pending_;
    return EventHandle{slot, s.generation};
  }

  EventHandle schedule_in(SimTime delay, Action action) {
    return schedule(now_ + delay, std::move(action));
  }

  // True iff the event existed and had not fired yet.
  bool cancel(EventHandle h) {
    if (!is_pending(h)) return false;
    release(h.slot);
    ++canceled_;
    --pending_;
    return true;
  }

  bool is_pending(EventHandle h) const {
    return h.valid() && h.slot < slots_.size() && slots_[h.slot].live &&
           slots_[h.slot].generation == h.generation;
  }

  // Runs events in (fire time, insertion order) until the queue is empty, the
  // next event is past `deadline`, or stop() was called. Returns the clock.
  SimTime run_until(SimTime deadline = SimTime::max()) {
    stopped_ = false;
    while (!heap_.empty() && !stopped_) {
      const Entry top = heap_.top();
      Slot& s = slots_[top.slot];
      if (!s.live || s.generation != top.generation) {
        heap_.pop();
        continue;
      }
      if (top.at > deadline) break;
      heap_.pop();
      now_ = top.at;
      Action action = std::move(s.action);
      release(top.slot);
      --pending_;
      ++fired_;
      action();
    }
    return now_;
  }

  void stop() { stopped_ = true; }

  std::uint64_t scheduled_count() const { return scheduled_; }
  std::uint64_t fired_count() const { return fired_; }
  std::uint64_t canceled_count() const { return canceled_; }
  std::uint64_t pending_count() const { return pending_; }

 private:
  struct Entry {
    SimTime at;
    std::uint64_t seq;
    std::uint32_t slot;
    std::uint32_t generation;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.seq > b.seq;
    }
  };
  struct Slot {
    Action action;
    std::uint32_t generation = 0;
    bool live = false;
  };

  void release(std::uint32_t slot) {
    Slot& s = slots_[slot];
    s.action = nullptr;
    s.live = false;
    ++s.generation;
    free_slots_.push_back(slot);
  }

  SimTime now_{};
  std::uint64_t next_seq_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
  std::vector<Slot> slots_;
  std::vector<std::uint32_t> free_slots_;
  std::uint64_t scheduled_ = 0;
  std::uint64_t fired_ = 0;
  std::uint64_t canceled_ = 0;
  std::uint64_t pending_ = 0;
  bool stopped_ = false;
};

}  // namespace twosyn
