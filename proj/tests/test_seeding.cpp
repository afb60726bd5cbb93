#include <set>

#include <gtest/gtest.h>

#include "hepco/seeding.hpp"

using namespace hepco;

TEST(Seeding, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Seeding, SameMasterSameStreams) {
  const SeedStreams a(42), b(42);
  for (const char* name : {"partition", "generator", "distill", "eval", "client/3"}) {
    EXPECT_EQ(a.seed(name), b.seed(name));
    auto ra = a.rng(name);
    auto rb = b.rng(name);
    EXPECT_EQ(ra(), rb());
  }
}

TEST(Seeding, DistinctNamesGiveDistinctFirstOutputs) {
  const SeedStreams s(7);
  std::set<std::uint64_t> firsts;
  const char* names[] = {"partition", "generator", "distill", "eval", "data", "tasks", "attention", "init"};
  for (const char* n : names) firsts.insert(s.rng(n)());
  for (int c = 0; c < 64; ++c) firsts.insert(s.rng(stream_name("client", c))());
  EXPECT_EQ(firsts.size(), 8u + 64u);
}

TEST(Seeding, ClientStreamFixedByIndexNotOrder) {
  const SeedStreams s(99);
  std::vector<std::uint64_t> forward, backward(10);
  for (int c = 0; c < 10; ++c) forward.push_back(s.seed(stream_name("client", c)));
  for (int c = 9; c >= 0; --c) backward[c] = s.seed(stream_name("client", c));
  EXPECT_EQ(forward, backward);
}

TEST(Seeding, ChildStreamsAreScoped) {
  const SeedStreams s(5);
  EXPECT_NE(s.child("round/0").seed("client/0"), s.child("round/1").seed("client/0"));
  EXPECT_NE(s.child("round/0").seed("client/0"), s.seed("client/0"));
  EXPECT_EQ(s.child("round/2").master(), s.seed("round/2"));
  EXPECT_NE(SeedStreams(1).seed("x"), SeedStreams(2).seed("x"));
}
