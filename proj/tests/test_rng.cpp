#include <doctest.h>

#include <cmath>
#include <vector>

#include "wsda/rng.hpp"
#include "wsda/util.hpp"

using namespace wsda;

TEST_CASE("rng streams are deterministic and fork-independent") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream root(7);
  RngStream c1 = root.fork("alpha");
  RngStream c2 = root.fork("beta");
  CHECK(c1.next_u64() != c2.next_u64());

  // forking does not disturb the parent
  RngStream p1(9), p2(9);
  (void)p1.fork("child");
  CHECK(p1.next_u64() == p2.next_u64());
}

TEST_CASE("rng uniform and normal have sane statistics") {
  RngStream s(123);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = s.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
  CHECK(std::abs(sum2 / n - 1.0 / 3.0) < 0.01);

  double nsum = 0.0, nsum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = s.normal();
    nsum += z;
    nsum2 += z * z;
  }
  CHECK(std::abs(nsum / n) < 0.03);
  CHECK(std::abs(nsum2 / n - 1.0) < 0.05);

  for (int trial = 0; trial < 1000; ++trial) {
    int v = s.uniform_int(7);
    CHECK(v >= 0);
    CHECK(v < 7);
  }
}

TEST_CASE("digest is order sensitive and stable") {
  Digest d1, d2;
  d1.update_string("ab");
  d1.update_string("c");
  d2.update_string("a");
  d2.update_string("bc");
  CHECK(d1.value() != d2.value());  // length-prefixed

  Digest d3;
  d3.update_string("ab");
  d3.update_string("c");
  CHECK(d1.value() == d3.value());
  CHECK(d1.hex().size() == 16);
}

TEST_CASE("parallel_for covers every index once") {
  std::vector<int> hits(1000, 0);
  parallel_for(1000, [&](int i) { hits[static_cast<size_t>(i)] += 1; });
  for (int h : hits) CHECK(h == 1);
}
