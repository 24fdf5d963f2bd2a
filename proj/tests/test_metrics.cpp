#include <doctest.h>

#include <vector>

#include "spwc/errors.hpp"
#include "spwc/metrics.hpp"

using namespace spwc;

namespace {

AccuracyMatrix three_by_three() {
  AccuracyMatrix m;
  m.append_row({0.9});
  m.append_row({0.8, 0.95});
  m.append_row({0.7, 0.85, 0.92});
  return m;
}

}  // namespace

TEST_CASE("APA and ACF on a hand-built matrix") {
  const AccuracyMatrix m = three_by_three();
  CHECK(apa(m, 1) == doctest::Approx(0.9));
  CHECK(apa(m, 2) == doctest::Approx(0.875));
  CHECK(apa(m, 3) == doctest::Approx((0.7 + 0.85 + 0.92) / 3.0));
  CHECK(acf(m, 1) == 0.0);
  CHECK(acf(m, 2) == doctest::Approx(0.1));
  CHECK(acf(m, 3) == doctest::Approx((0.2 + 0.1) / 2.0));
}

TEST_CASE("ACF keeps backward transfer as a negative value") {
  AccuracyMatrix m;
  m.append_row({0.6});
  m.append_row({0.7, 0.9});
  CHECK(acf(m, 2) == doctest::Approx(-0.1));
}

TEST_CASE("accuracy matrix validates its rows") {
  AccuracyMatrix m;
  CHECK_THROWS_AS(m.append_row({0.5, 0.5}), StructuralError);
  CHECK_THROWS_AS(m.append_row({1.5}), UsageError);
  m.append_row({0.5});
  CHECK_THROWS_AS(apa(m, 2), LookupError);
  CHECK_THROWS_AS(apa(m, 0), LookupError);
}

TEST_CASE("PS of a ledger growing one snapshot per task is H_m / m") {
  const std::uint64_t n = 610500;
  StorageLedger ledger;
  for (std::uint64_t t = 1; t <= 10; ++t) ledger.prams.push_back(StorageLedger::footprint(n, t - 1));
  double harmonic = 0.0;
  for (int m = 1; m <= 10; ++m) {
    harmonic += 1.0 / m;
    CHECK(ps(ledger, static_cast<std::size_t>(m)) == doctest::Approx(harmonic / m).epsilon(1e-14));
  }
  CHECK(ps(ledger, 10) == doctest::Approx(7381.0 / 2520.0 / 10.0).epsilon(1e-14));
}

TEST_CASE("PS is capped at one and a lighter ledger scores higher") {
  const std::uint64_t n = 1000;
  StorageLedger flat;
  StorageLedger shrinking;
  StorageLedger topk;
  StorageLedger all;
  for (std::uint64_t t = 1; t <= 5; ++t) {
    flat.prams.push_back(StorageLedger::footprint(n, 0));
    shrinking.prams.push_back(StorageLedger::footprint(n, t == 1 ? 3 : 0));
    topk.prams.push_back(StorageLedger::footprint(n, (t - 1 + 1) / 2));  // ceil((t-1)/2)
    all.prams.push_back(StorageLedger::footprint(n, t - 1));
  }
  CHECK(ps(flat, 5) == 1.0);
  CHECK(ps(shrinking, 5) == 1.0);
  CHECK(ps(topk, 5) > ps(all, 5));
  CHECK(StorageLedger::footprint(n, 2) == 6000);
}

TEST_CASE("stream average") {
  const std::vector<double> v{0.5, 0.7, 0.9};
  CHECK(stream_average(v) == doctest::Approx(0.7));
}
