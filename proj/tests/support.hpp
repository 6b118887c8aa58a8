#pragma once

// Small property-testing helpers: a seeded generator and a driver that
// reports the failing case index.

#include <cstdint>
#include <random>
#include <string>

#include "doctest.h"

namespace testing {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : engine_(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>()(engine_); }
    std::uint64_t bits() { return engine_(); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    bool coin() { return (engine_() & 1u) != 0; }

private:
    std::mt19937_64 engine_;
};

template <class Body>
void for_all(int cases, std::uint64_t seed, Body&& body) {
    Gen gen(seed);
    for (int i = 0; i < cases; ++i) {
        CAPTURE(i);
        body(gen);
    }
}

// Composite Simpson rule with n (even) panels.
template <class F>
double simpson(F&& f, double a, double b, int n = 20000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

}  // namespace testing
