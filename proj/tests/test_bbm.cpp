#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "bbmtube/bbm.hpp"
#include "bbmtube/errors.hpp"
#include "bbmtube/pde.hpp"
#include "bbmtube/rng.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace bbmtube;

namespace {

SimConfig make_config(double r, double L, double dt, double horizon, std::uint64_t seed = 7) {
    SimConfig c(r, L, dt, horizon);
    c.seed = seed;
    return c;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double std_error(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

// Crossing frequency of a finely discretised Brownian bridge from y0 to y1 over
// time dt. Discrete monitoring misses some crossings, so this sits slightly
// below the continuous answer.
double bridge_crossing_mc(double y0, double y1, double dt, double L, int paths, int substeps,
                          std::uint64_t seed) {
    testing::Gen gen(seed);
    const double h = dt / substeps;
    const double sh = std::sqrt(h);
    std::vector<double> w(substeps + 1);
    int hits = 0;
    for (int p = 0; p < paths; ++p) {
        w[0] = 0.0;
        for (int i = 1; i <= substeps; ++i) w[i] = w[i - 1] + sh * gen.normal();
        bool hit = false;
        for (int i = 0; i <= substeps && !hit; ++i) {
            const double s = static_cast<double>(i) / substeps;
            const double y = y0 + (y1 - y0) * s + w[i] - s * w[substeps];
            hit = std::abs(y) >= L;
        }
        hits += hit ? 1 : 0;
    }
    return static_cast<double>(hits) / paths;
}

}  // namespace

TEST_CASE("SimConfig enforces the step cap") {
    CHECK_NOTHROW(SimConfig(1.0, 2.0, 0.04, 1.0));
    CHECK_THROWS_AS(SimConfig(1.0, 2.0, 0.05, 1.0), ConfigError);   // L^2/100 = 0.04
    CHECK_THROWS_AS(SimConfig(5.0, 10.0, 0.05, 1.0), ConfigError);  // 0.1/r = 0.02
    CHECK_THROWS_AS(SimConfig(0.0, 2.0, 0.01, 1.0), ConfigError);
    CHECK_THROWS_AS(SimConfig(1.0, -1.0, 0.01, 1.0), ConfigError);
    CHECK_THROWS_AS(SimConfig(1.0, 2.0, 0.01, 1.005), ConfigError);
    const SimConfig open(1.0, INFINITY, 0.1, 1.0);
    CHECK_FALSE(open.tube_enabled());
    CHECK(open.steps() == 10);
}

TEST_CASE("bridge_kill_prob examples") {
    CHECK(bridge_kill_prob(0.0, 0.0, 1e-4, 1.0) == 0.0);
    CHECK(bridge_kill_prob(0.9, 0.9, 0.01, 1.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
    CHECK(bridge_kill_prob(0.9, 0.9, 0.01, 1.0) == doctest::Approx(0.1353).epsilon(1e-3));
    CHECK_THROWS_AS(bridge_kill_prob(1.0, 0.0, 0.01, 1.0), DomainError);
    CHECK_THROWS_AS(bridge_kill_prob(0.0, -1.2, 0.01, 1.0), DomainError);
}

TEST_CASE("bridge_kill_prob agrees with a fine-step pinned bridge") {
    struct Case {
        double y0, y1, dt, L;
    };
    for (const Case c : {Case{0.9, 0.9, 0.01, 1.0}, Case{0.8, -0.7, 0.05, 1.0},
                         Case{1.7, 1.9, 0.02, 2.0}}) {
        CAPTURE(c.y0);
        CAPTURE(c.y1);
        const double formula = bridge_kill_prob(c.y0, c.y1, c.dt, c.L);
        const double mc = bridge_crossing_mc(c.y0, c.y1, c.dt, c.L, 6000, 2000, 99);
        const double se = std::sqrt(std::max(formula * (1 - formula), 1e-4) / 6000);
        // Discrete monitoring biases the MC low by O(sqrt(dt/substeps)).
        CHECK(mc <= formula + 4 * se);
        CHECK(mc >= formula - 4 * se - 0.03);
    }
}

TEST_CASE("bridge_kill_prob properties") {
    testing::for_all(500, 11, [](testing::Gen& g) {
        const double L = g.uniform(0.2, 5.0);
        const double y0 = g.uniform(-0.999, 0.999) * L;
        const double y1 = g.uniform(-0.999, 0.999) * L;
        const double dt = g.uniform(1e-5, 0.5);
        const double p = bridge_kill_prob(y0, y1, dt, L);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        CHECK(p == doctest::Approx(bridge_kill_prob(-y0, -y1, dt, L)).epsilon(1e-12));
        CHECK(p == doctest::Approx(bridge_kill_prob(y1, y0, dt, L)).epsilon(1e-12));
        // Longer steps and narrower tubes kill more.
        CHECK(bridge_kill_prob(y0, y1, 2 * dt, L) >= p - 1e-15);
        CHECK(bridge_kill_prob(y0, y1, dt, L * 1.5) <= p + 1e-15);
    });
}

TEST_CASE("simulate starts from one particle with Z(0) = 1") {
    for (const char* key : {"zero", "linear:lambda=0.5", "sinlog", "power:beta=0.5"}) {
        CAPTURE(key);
        const auto stats = simulate(make_config(1.0, 2.0, 0.01, 1.0), make_path(key));
        REQUIRE(!stats.counts.empty());
        CHECK(stats.checkpoints[0] == 0.0);
        CHECK(stats.counts[0] == 1);
        CHECK(stats.z_values[0] == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("trajectory invariants hold across random configs") {
    testing::for_all(40, 3, [](testing::Gen& g) {
        const double L = g.uniform(0.5, 2.5);
        const double r = g.uniform(0.2, 2.0);
        const double dt = std::min({0.01, 0.1 / r, L * L / 100});
        auto c = make_config(r, L, dt, std::round(3.0 / dt) * dt, g.bits());
        c.n_max = 5000;
        const auto stats = simulate(c, make_path(g.coin() ? "zero" : "linear:lambda=0.5"));
        bool extinct = false;
        for (std::size_t k = 0; k < stats.counts.size(); ++k) {
            if (extinct) CHECK(stats.counts[k] == 0);
            if (stats.counts[k] == 0) {
                extinct = true;
                CHECK(stats.z_values[k] == 0.0);
                REQUIRE(stats.extinction_time.has_value());
                CHECK(*stats.extinction_time <= stats.checkpoints[k] + 1e-12);
            } else {
                CHECK(stats.z_values[k] > 0.0);
            }
            if (k > 0) CHECK(stats.checkpoints[k] > stats.checkpoints[k - 1]);
        }
        CHECK(stats.bound_violations == 0);
    });
}

TEST_CASE("simulate is deterministic and thread-count invariant") {
    const auto path = make_path("sinlog");
    auto c = make_config(1.5, 2.0, 0.01, 4.0, 1234);
    const auto a = simulate(c, path);
    const auto b = simulate(c, path);
    CHECK(a.counts == b.counts);
    CHECK(a.z_values == b.z_values);
    CHECK(a.total_births == b.total_births);

    const auto e1 = run_ensemble(c, path, 24, 1);
    const auto e4 = run_ensemble(c, path, 24, 4);
    REQUIRE(e1.size() == e4.size());
    for (std::size_t i = 0; i < e1.size(); ++i) {
        CHECK(e1[i].counts == e4[i].counts);
        CHECK(e1[i].z_values == e4[i].z_values);
        CHECK(e1[i].seed_used == replication_seed(c.seed, i));
    }
    c.seed = 1235;
    CHECK(simulate(c, path).z_values != a.z_values);
}

TEST_CASE("coupled runs are monotone in L") {
    testing::for_all(15, 21, [](testing::Gen& g) {
        const double L1 = g.uniform(1.0, 2.0);
        const double L2 = L1 + g.uniform(0.0, 1.0);
        const std::uint64_t seed = g.bits();
        const auto path = make_path(g.coin() ? "zero" : "linear:lambda=0.5");
        std::vector<std::set<std::uint64_t>> ids1, ids2;
        auto collect = [](std::vector<std::set<std::uint64_t>>& out) {
            return [&out](const CheckpointView& v) {
                std::set<std::uint64_t> s;
                for (const auto& q : v.particles) s.insert(q.id);
                out.push_back(std::move(s));
            };
        };
        const auto a = simulate(make_config(1.0, L1, 0.01, 3.0, seed), path, collect(ids1));
        const auto b = simulate(make_config(1.0, L2, 0.01, 3.0, seed), path, collect(ids2));
        REQUIRE(a.counts.size() == b.counts.size());
        for (std::size_t k = 0; k < a.counts.size(); ++k) {
            CHECK(a.counts[k] <= b.counts[k]);
            CHECK(std::includes(ids2[k].begin(), ids2[k].end(), ids1[k].begin(), ids1[k].end()));
        }
    });
}

TEST_CASE("compute_Z matches the recorded checkpoint values") {
    const auto path = make_path("linear:lambda=0.5");
    const auto c = make_config(1.0, 2.0, 0.01, 2.0, 5);
    std::vector<double> recomputed;
    const auto stats = simulate(c, path, [&](const CheckpointView& v) {
        recomputed.push_back(compute_Z(v.particles, v.t, path, c));
    });
    REQUIRE(recomputed.size() == stats.z_values.size());
    for (std::size_t k = 0; k < recomputed.size(); ++k) {
        CHECK(recomputed[k] == doctest::Approx(stats.z_values[k]).epsilon(1e-9));
    }
}

TEST_CASE("compute_Z for the zero path ignores the Girsanov factor") {
    const auto c = make_config(1.0, 2.0, 0.01, 1.0);
    std::vector<Particle> ps = {{1, 0, 0.0, 0.3, 0.0, 1.0}, {2, 1, 0.5, -1.1, 0.0, 1.0}};
    const double t = 1.5;
    const double lead = std::exp((std::numbers::pi * std::numbers::pi / 32.0 - 1.0) * t);
    const double expect = lead * (std::cos(std::numbers::pi * 0.3 / 4) + std::cos(std::numbers::pi * 1.1 / 4));
    CHECK(compute_Z(ps, t, zero_path(), c) == doctest::Approx(expect).epsilon(1e-12));
    ps[0].x = 2.5;
    CHECK_THROWS_AS(compute_Z(ps, t, zero_path(), c), InvariantViolation);
}

TEST_CASE("Yule process without a tube") {
    // e^{rt} is the mean of the continuous-time process; the Bernoulli step
    // loses a factor exp(-r^2 dt t) which at dt = 1e-3 is far inside 3 s.e.
    auto c = make_config(1.0, INFINITY, 1e-3, 2.0, 42);
    c.checkpoint_interval = 0.25;
    const auto ens = run_ensemble(c, zero_path(), 2000);
    std::vector<double> n2;
    for (const auto& s : ens) n2.push_back(static_cast<double>(s.counts.back()));
    CHECK(std::abs(mean(n2) - std::exp(2.0)) < 3 * std_error(n2));
    const auto g = estimate_growth_rate(ens, 1.0, 2.0, Conditioning::All);
    CHECK(g.rate == doctest::Approx(1.0).epsilon(0.05));
    CHECK(g.excluded == 0);
}

TEST_CASE("subcritical tube dies out") {
    // r = 0.2 < pi^2/32. Survival decays like e^{(r - pi^2/32) t}; the PDE puts
    // it at 0.053 at t = 20 and 0.002 at t = 50.
    const auto c = make_config(0.2, 2.0, 0.01, 50.0, 8);
    const auto est = survival_probability(c, zero_path(), 50.0, 2000);
    CHECK(est.estimate < 0.01);
    CHECK(survival_probability(c, zero_path(), 0.0, 100).estimate == 1.0);
    CHECK_THROWS_AS(survival_probability(c, zero_path(), 1.0, 99), DomainError);
}

TEST_CASE("survival frequency matches the nonextinction PDE") {
    auto c = make_config(1.0, 2.0, 0.005, 5.0, 77);
    c.checkpoint_interval = 1.0;
    const auto ens = run_ensemble(c, zero_path(), 2000);
    const double pde = solve_nonextinction(zero_path(), 1.0, 2.0, 5.0);
    const auto est = survival_at(ens, 5.0);
    CAPTURE(est.estimate);
    CAPTURE(pde);
    CHECK(std::abs(est.estimate - pde) <= est.ci_halfwidth * 1.3);
}

TEST_CASE("growth estimation needs survivors") {
    const auto c = make_config(0.2, 1.0, 0.01, 10.0, 3);
    const auto ens = run_ensemble(c, zero_path(), 3);
    bool none_alive = std::none_of(ens.begin(), ens.end(), [](const auto& s) { return s.survived(); });
    if (none_alive) CHECK_THROWS_AS(estimate_growth_rate(ens, 5.0, 10.0), EstimationError);
    std::vector<TrajectoryStats> one(ens.begin(), ens.begin() + 1);
    CHECK_THROWS_AS(estimate_growth_rate(one, 5.0, 10.0), EstimationError);
}

TEST_CASE("population cap policies") {
    auto c = make_config(1.0, INFINITY, 0.01, 5.0, 9);
    c.n_max = 2;
    const auto stopped = simulate(c, zero_path());
    CHECK(stopped.truncated);
    REQUIRE(stopped.truncation_time.has_value());
    CHECK(*stopped.truncation_time < 5.0);
    CHECK(stopped.survived());

    // Thinning keeps the weighted count unbiased.
    c.thinning = Thinning::UniformThin;
    c.n_max = 30;
    c.dt = 1e-3;
    c.horizon = 2.0;
    const auto ens = run_ensemble(c, zero_path(), 2000);
    std::vector<double> w;
    std::size_t events = 0;
    for (const auto& s : ens) {
        CHECK_FALSE(s.truncated);
        CHECK(s.counts.back() <= c.n_max);
        w.push_back(s.weighted_counts.back());
        events += s.thinning_events;
    }
    CHECK(events > 0);
    CHECK(std::abs(mean(w) - std::exp(2.0)) < 3 * std_error(w));
}

TEST_CASE("Girsanov bound is never violated on curved paths") {
    for (const char* key : {"sinlog", "power:beta=0.5", "dyadic_smooth", "log"}) {
        CAPTURE(key);
        auto c = make_config(1.5, 2.0, 0.01, 5.0, 17);
        c.n_max = 20000;
        const auto ens = run_ensemble(c, make_path(key), 20);
        for (const auto& s : ens) {
            CHECK(s.bound_violations == 0);
            CHECK(s.worst_bound_margin <= 0.0);
        }
    }
}

TEST_CASE("checkpoint and ensemble CSV plus manifest") {
    auto c = make_config(1.0, 2.0, 0.01, 1.0, 4);
    c.checkpoint_interval = 0.5;
    const auto ens = run_ensemble(c, zero_path(), 5);
    std::ostringstream one, all, manifest;
    write_checkpoint_csv(one, ens[0]);
    const std::string text = one.str();
    CHECK(text.rfind("t,count,weighted_count,Z,survivors_so_far\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    write_ensemble_csv(all, ens);
    CHECK(all.str().rfind("t,count,weighted_count,Z,survivors_so_far\n", 0) == 0);
    write_sim_manifest(manifest, c, "zero", ens);
    const auto j = nlohmann::json::parse(manifest.str());
    CHECK(j.contains("config_hash"));
    CHECK(j["seed"].get<std::uint64_t>() == 4);
    CHECK(config_fingerprint(c, "zero") == config_fingerprint(c, "zero"));
    CHECK(config_fingerprint(c, "zero") != config_fingerprint(c, "linear:lambda=0.5"));
}
