#ifndef P2PL_ALLOC_STATS_HPP
#define P2PL_ALLOC_STATS_HPP

#include <atomic>
#include <cstddef>

namespace p2pl::alloc {

/// Counters fed by the global operator new/delete replacement in
/// tools/alloc_hooks.cpp. Without that translation unit linked in, they stay 0.
struct Counters {
  std::atomic<std::size_t> current{0};
  std::atomic<std::size_t> peak{0};
  std::atomic<bool> installed{false};
};

inline Counters& counters() {
  static Counters c;
  return c;
}

inline bool tracking_enabled() { return counters().installed.load(); }

inline void note_alloc(std::size_t bytes) {
  auto& c = counters();
  const std::size_t now = c.current.fetch_add(bytes) + bytes;
  std::size_t prev = c.peak.load();
  while (now > prev && !c.peak.compare_exchange_weak(prev, now)) {
  }
}

inline void note_free(std::size_t bytes) { counters().current.fetch_sub(bytes); }

/// Peak bytes above the level at construction.
class PeakScope {
 public:
  PeakScope() : base_(counters().current.load()) { counters().peak.store(base_); }
  std::size_t peak_bytes() const {
    const std::size_t p = counters().peak.load();
    return p > base_ ? p - base_ : 0;
  }

 private:
  std::size_t base_;
};

}  // namespace p2pl::alloc

#endif  // P2PL_ALLOC_STATS_HPP
