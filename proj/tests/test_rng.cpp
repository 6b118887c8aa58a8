#include <cmath>
#include <set>
#include <vector>

#include "bbmtube/rng.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace bbmtube;

TEST_CASE("philox4x32-10 known-answer vectors") {
    CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
          Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                        {0xffffffffu, 0xffffffffu}) ==
          Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                        {0xa4093822u, 0x299f31d0u}) ==
          Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("draws are pure functions of the address") {
    const CounterRng a(42), b(42), c(43);
    CHECK(a.uniform(7, 3, 0) == b.uniform(7, 3, 0));
    CHECK(a.uniform(7, 3, 0) != c.uniform(7, 3, 0));
    CHECK(a.uniform(7, 3, 0) != a.uniform(7, 4, 0));
    CHECK(a.uniform(7, 3, 0) != a.uniform(8, 3, 0));
    CHECK(a.uniform(7, 3, 0) != a.uniform(7, 3, 1));
    const auto blk = a.block(7, 3);
    CHECK(blk.u[0] == a.uniform(7, 3, 0));
}

TEST_CASE("uniforms lie in (0, 1] and have the right moments") {
    const CounterRng rng(2024);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0, nsum = 0.0, nsum2 = 0.0, nsum4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform(static_cast<std::uint64_t>(i), 0, 0);
        REQUIRE(u > 0.0);
        REQUIRE(u <= 1.0);
        sum += u;
        sum2 += u * u;
        const double z = rng.block(static_cast<std::uint64_t>(i), 1).normal();
        nsum += z;
        nsum2 += z * z;
        nsum4 += z * z * z * z;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.005));
    CHECK(sum2 / n - std::pow(sum / n, 2) == doctest::Approx(1.0 / 12.0).epsilon(0.01));
    CHECK(std::abs(nsum / n) < 5.0 / std::sqrt(n));
    CHECK(nsum2 / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(nsum4 / n == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("child ids are distinct across a genealogy") {
    std::set<std::uint64_t> seen{1};
    std::vector<std::uint64_t> frontier{1};
    for (std::uint32_t step = 0; step < 12; ++step) {
        std::vector<std::uint64_t> next;
        for (auto id : frontier) {
            for (unsigned which = 0; which < 2; ++which) {
                const auto child = child_id(id, step, which);
                CHECK(seen.insert(child).second);
                next.push_back(child);
            }
        }
        frontier = std::move(next);
    }
    CHECK(seen.size() == (1u << 13) - 1);
}

TEST_CASE("replication seeds are distinct") {
    std::set<std::uint64_t> seeds;
    for (std::uint64_t i = 0; i < 10000; ++i) seeds.insert(replication_seed(5, i));
    CHECK(seeds.size() == 10000);
}
