#include "loopformer/schedule.hpp"

#include <algorithm>
#include <stdexcept>

namespace loopformer {

const char* share_mode_name(ShareMode mode) {
  switch (mode) {
    case ShareMode::Stacked: return "stacked";
    case ShareMode::SharedLoop: return "shared-loop";
    case ShareMode::ClosedChain: return "closed-chain";
  }
  return "?";
}

ShareMode share_mode_from_name(const std::string& name) {
  if (name == "stacked") return ShareMode::Stacked;
  if (name == "shared-loop") return ShareMode::SharedLoop;
  if (name == "closed-chain") return ShareMode::ClosedChain;
  throw std::invalid_argument("unknown sharing mode '" + name +
                              "' (expected stacked, shared-loop or closed-chain)");
}

int LayerSchedule::physical_count() const {
  int mx = -1;
  for (int a : assignment) mx = std::max(mx, a);
  return mx + 1;
}

bool LayerSchedule::is_boundary(int virtual_index) const {
  return std::find(block_boundaries.begin(), block_boundaries.end(), virtual_index) !=
         block_boundaries.end();
}

LayerSchedule build_schedule(ShareMode mode, int n, int t) {
  if (n < 1) throw std::invalid_argument("schedule: layers per block must be positive, got " + std::to_string(n));
  if (t < 1) throw std::invalid_argument("schedule: loop count must be positive, got " + std::to_string(t));

  LayerSchedule s;
  s.mode = mode;
  s.block_size = n;
  s.loops = t;

  switch (mode) {
    case ShareMode::Stacked:
      for (int i = 0; i < n * t; ++i) s.assignment.push_back(i);
      for (int b = 0; b < t; ++b) s.block_boundaries.push_back(b * n);
      break;
    case ShareMode::SharedLoop:
      for (int b = 0; b < t; ++b) {
        s.block_boundaries.push_back(b * n);
        for (int i = 0; i < n; ++i) s.assignment.push_back(i);
      }
      break;
    case ShareMode::ClosedChain: {
      if (n < 2) throw std::invalid_argument("schedule: closed-chain needs at least 2 layers per block");
      // Triangle wave over 0..n-1; one extra layer closes the chain back on
      // weight 0 after T reflections.
      const int period = 2 * n - 2;
      const int len = t * (n - 1) + 1;
      for (int i = 0; i < len; ++i) {
        const int r = i % period;
        s.assignment.push_back(r < n ? r : period - r);
      }
      for (int b = 0; b <= t; ++b) s.block_boundaries.push_back(b * (n - 1));
      break;
    }
  }
  return s;
}

}  // namespace loopformer
