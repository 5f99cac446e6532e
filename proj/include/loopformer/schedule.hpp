#pragma once

#include <string>
#include <vector>

namespace loopformer {

// How the virtual (unrolled) depth sequence maps onto physical weight sets.
//   stacked:      N*T distinct layers, grouped into T blocks of N.
//   shared-loop:  one block of N layers applied T times.
//   closed-chain: N layers visited along a reflecting walk (0,1,..,N-1,N-2,
//                 ..,1,0,1,..), T reflections deep: T*(N-1)+1 virtual layers.
enum class ShareMode { Stacked, SharedLoop, ClosedChain };

const char* share_mode_name(ShareMode mode);
ShareMode share_mode_from_name(const std::string& name);

struct LayerSchedule {
  ShareMode mode = ShareMode::Stacked;
  int block_size = 1;  // N, layers per block
  int loops = 1;       // T

  // One physical weight index per virtual layer.
  std::vector<int> assignment;
  // Virtual indices where a new block starts; the block input gets the
  // re-injected sequence added there (index 0 is the plain input).
  std::vector<int> block_boundaries;

  int virtual_count() const { return static_cast<int>(assignment.size()); }
  int physical_count() const;
  bool is_boundary(int virtual_index) const;
};

// Throws on nonpositive N or T and on closed-chain with N == 1.
LayerSchedule build_schedule(ShareMode mode, int n, int t);

}  // namespace loopformer
