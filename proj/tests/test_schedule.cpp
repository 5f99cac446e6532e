#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "loopformer/schedule.hpp"

using namespace loopformer;

TEST_CASE("shared-loop repeats the block") {
  LayerSchedule s = build_schedule(ShareMode::SharedLoop, 8, 2);
  std::vector<int> expect;
  for (int t = 0; t < 2; ++t) {
    for (int i = 0; i < 8; ++i) expect.push_back(i);
  }
  CHECK(s.assignment == expect);
  CHECK(s.block_boundaries == std::vector<int>{0, 8});
  CHECK(s.physical_count() == 8);
}

TEST_CASE("closed-chain reproduces the 7-layer reflecting walk") {
  LayerSchedule s = build_schedule(ShareMode::ClosedChain, 4, 2);
  CHECK(s.assignment == std::vector<int>{0, 1, 2, 3, 2, 1, 0});
  CHECK(s.block_boundaries == std::vector<int>{0, 3, 6});
  CHECK(s.physical_count() == 4);
}

TEST_CASE("stacked is the plain layer stack") {
  LayerSchedule s = build_schedule(ShareMode::Stacked, 6, 1);
  CHECK(s.assignment == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(s.block_boundaries == std::vector<int>{0});
  CHECK(s.physical_count() == 6);

  LayerSchedule s2 = build_schedule(ShareMode::Stacked, 3, 2);
  CHECK(s2.assignment == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(s2.block_boundaries == std::vector<int>{0, 3});
  CHECK(s2.physical_count() == 6);
}

TEST_CASE("closed-chain length law") {
  LayerSchedule s = build_schedule(ShareMode::ClosedChain, 8, 5);
  CHECK(s.virtual_count() == 5 * 7 + 1);

  LayerSchedule s2 = build_schedule(ShareMode::ClosedChain, 2, 2);
  CHECK(s2.assignment == std::vector<int>{0, 1, 0});
}

TEST_CASE("length laws hold across the N/T grid") {
  for (int n = 2; n <= 10; ++n) {
    for (int t = 1; t <= 6; ++t) {
      CHECK(build_schedule(ShareMode::Stacked, n, t).virtual_count() == n * t);
      CHECK(build_schedule(ShareMode::SharedLoop, n, t).virtual_count() == n * t);
      CHECK(build_schedule(ShareMode::ClosedChain, n, t).virtual_count() == t * (n - 1) + 1);
    }
  }
}

TEST_CASE("every physical index appears in the assignment") {
  for (int n = 2; n <= 10; ++n) {
    for (int t = 1; t <= 6; ++t) {
      for (ShareMode mode : {ShareMode::Stacked, ShareMode::SharedLoop, ShareMode::ClosedChain}) {
        LayerSchedule s = build_schedule(mode, n, t);
        std::set<int> used(s.assignment.begin(), s.assignment.end());
        CHECK(static_cast<int>(used.size()) == s.physical_count());
        CHECK(*used.begin() == 0);
        CHECK(*used.rbegin() == s.physical_count() - 1);
      }
    }
  }
}

TEST_CASE("closed-chain is a palindrome at T=2 and a triangle-wave prefix otherwise") {
  for (int n = 2; n <= 10; ++n) {
    LayerSchedule two = build_schedule(ShareMode::ClosedChain, n, 2);
    std::vector<int> rev(two.assignment.rbegin(), two.assignment.rend());
    CHECK(two.assignment == rev);

    LayerSchedule deep = build_schedule(ShareMode::ClosedChain, n, 6);
    for (int t = 1; t <= 6; ++t) {
      LayerSchedule prefix = build_schedule(ShareMode::ClosedChain, n, t);
      CHECK(std::equal(prefix.assignment.begin(), prefix.assignment.end(), deep.assignment.begin()));
    }
  }
}

TEST_CASE("boundaries sit at block starts") {
  LayerSchedule s = build_schedule(ShareMode::SharedLoop, 3, 4);
  CHECK(s.block_boundaries == std::vector<int>{0, 3, 6, 9});
  CHECK(s.is_boundary(0));
  CHECK(s.is_boundary(6));
  CHECK_FALSE(s.is_boundary(5));

  LayerSchedule c = build_schedule(ShareMode::ClosedChain, 3, 3);
  CHECK(c.block_boundaries == std::vector<int>{0, 2, 4, 6});
  CHECK(c.virtual_count() == 7);
}

TEST_CASE("invalid schedules are rejected") {
  CHECK_THROWS_AS(build_schedule(ShareMode::ClosedChain, 1, 2), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(ShareMode::Stacked, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(ShareMode::SharedLoop, 2, 0), std::invalid_argument);
}

TEST_CASE("mode names round trip") {
  for (ShareMode mode : {ShareMode::Stacked, ShareMode::SharedLoop, ShareMode::ClosedChain}) {
    CHECK(share_mode_from_name(share_mode_name(mode)) == mode);
  }
  CHECK_THROWS_AS(share_mode_from_name("circular"), std::invalid_argument);
}
