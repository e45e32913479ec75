#include <doctest.h>

#include <algorithm>
#include <set>

#include "ticketlab/errors.hpp"
#include "ticketlab/task.hpp"

using namespace ticketlab;

namespace {

std::vector<std::uint8_t> bits_of(std::size_t d, std::initializer_list<std::size_t> on) {
    std::vector<std::uint8_t> x(d, 0);
    for (auto i : on) x[i] = 1;
    return x;
}

}  // namespace

TEST_CASE("single read-once clause on four literals is forced") {
    const auto t = generate_dnf(1, 4, OverlapMode::ReadOnce, 0);
    REQUIRE(t.clauses.size() == 1);
    CHECK(t.clauses[0] == Clause{0, 1, 2, 3});
}

TEST_CASE("read-once 8 clauses over 32 inputs are disjoint and cover every index") {
    const auto t = generate_dnf(8, 32, OverlapMode::ReadOnce, 7);
    REQUIRE(t.clauses.size() == 8);
    std::set<std::size_t> seen;
    for (const auto& c : t.clauses)
        for (auto i : c) CHECK(seen.insert(i).second);
    CHECK(seen.size() == 32);
    CHECK(*seen.rbegin() == 31);
}

TEST_CASE("overlapping 8 clauses over 32 inputs are distinct four-subsets") {
    const auto t = generate_dnf(8, 32, OverlapMode::Overlapping, 7);
    std::set<std::set<std::size_t>> subsets;
    for (const auto& c : t.clauses) {
        std::set<std::size_t> s(c.begin(), c.end());
        CHECK(s.size() == 4);
        CHECK(*s.rbegin() < 32);
        subsets.insert(s);
    }
    CHECK(subsets.size() == 8);
}

TEST_CASE("generated tasks satisfy the structural invariants across seeds and modes") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        for (auto mode : {OverlapMode::ReadOnce, OverlapMode::Overlapping}) {
            const std::size_t k = 1 + seed % 9;
            const auto d = default_d_in(k, mode);
            const auto t = generate_dnf(k, d, mode, seed);
            CHECK_NOTHROW(validate(t));
            CHECK(std::is_sorted(t.clauses.begin(), t.clauses.end()));
            CHECK(std::adjacent_find(t.clauses.begin(), t.clauses.end()) == t.clauses.end());
            if (mode == OverlapMode::ReadOnce) {
                std::set<std::size_t> u;
                for (const auto& c : t.clauses) u.insert(c.begin(), c.end());
                CHECK(u.size() == 4 * k);
            }
            CHECK(t == generate_dnf(k, d, mode, seed));
        }
    }
}

TEST_CASE("generate_dnf rejects impossible budgets") {
    CHECK_THROWS_AS(generate_dnf(2, 7, OverlapMode::ReadOnce, 0), ConfigError);
    CHECK_THROWS_AS(generate_dnf(0, 8, OverlapMode::Overlapping, 0), ConfigError);
    CHECK_THROWS_AS(generate_dnf(1, 3, OverlapMode::Overlapping, 0), ConfigError);
    // C(5,4) = 5 distinct subsets exist, so a sixth cannot be drawn.
    CHECK_THROWS_AS(generate_dnf(6, 5, OverlapMode::Overlapping, 0), ConfigError);
}

TEST_CASE("default input widths") {
    CHECK(default_d_in(8, OverlapMode::ReadOnce) == 32);
    CHECK(default_d_in(16, OverlapMode::Overlapping) == 32);
    CHECK(default_d_in(5, OverlapMode::Overlapping) == 16);
    CHECK(default_d_in(1, OverlapMode::Overlapping) == 4);
    CHECK(default_d_in(2, OverlapMode::Overlapping) == 8);
}

TEST_CASE("eval_dnf on hand cases") {
    DnfTask t{{Clause{0, 1, 2, 3}}, 8, OverlapMode::ReadOnce};
    CHECK(eval_dnf(t, bits_of(8, {0, 1, 2, 3, 4, 5, 6, 7})));
    CHECK_FALSE(eval_dnf(t, bits_of(8, {1, 2, 3, 4, 5, 6, 7})));
    CHECK_FALSE(eval_dnf(t, bits_of(8, {})));
    const auto big = generate_dnf(16, 32, OverlapMode::Overlapping, 3);
    CHECK_FALSE(eval_dnf(big, bits_of(32, {})));
}

TEST_CASE("sampled labels match brute-force re-evaluation") {
    const auto t = generate_dnf(8, 32, OverlapMode::ReadOnce, 3);
    const auto small = sample_dataset(t, 4, 3);
    CHECK(small.n == 4);
    for (std::size_t i = 0; i < small.n; ++i) {
        bool any = false;
        for (const auto& c : t.clauses) {
            bool all = true;
            for (auto j : c) all = all && small.row(i)[j];
            any = any || all;
        }
        CHECK(small.labels[i] == (any ? 1 : 0));
    }
    const auto over = generate_dnf(16, 16, OverlapMode::Overlapping, 11);
    const auto big = sample_dataset(over, 100000, 5);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < big.n; ++i) mismatches += (eval_dnf(over, big.row(i)) ? 1 : 0) != big.labels[i];
    CHECK(mismatches == 0);
}

TEST_CASE("balanced sampler keeps the positive fraction near one half") {
    const auto one = generate_dnf(1, 4, OverlapMode::ReadOnce, 0);
    CHECK(sample_dataset(one, 1000, 1).positive_fraction() == doctest::Approx(0.5).epsilon(0.1));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto t = generate_dnf(16, 16, OverlapMode::Overlapping, seed);
        const double f = sample_dataset(t, 2000, seed).positive_fraction();
        CHECK(f >= 0.35);
        CHECK(f <= 0.65);
    }
    CHECK_THROWS_AS(sample_dataset(one, 0, 1), ConfigError);
}

TEST_CASE("sampler is deterministic in its seed") {
    const auto t = generate_dnf(8, 32, OverlapMode::Overlapping, 2);
    const auto a = sample_dataset(t, 500, 9);
    const auto b = sample_dataset(t, 500, 9);
    const auto c = sample_dataset(t, 500, 10);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK(a.inputs != c.inputs);
}

TEST_CASE("task text round trip and malformed input") {
    const auto t = generate_dnf(8, 32, OverlapMode::Overlapping, 4);
    CHECK(parse_task(serialize_task(t)) == t);
    CHECK_THROWS_AS(parse_task("dnf v1; d_in=8; mode=read_once; clauses=[[0,1,2,9]]"), InputError);
    CHECK_THROWS_AS(parse_task("garbage"), InputError);
    CHECK(parse_overlap_mode("read-once") == OverlapMode::ReadOnce);
    CHECK_THROWS_AS(parse_overlap_mode("sideways"), ConfigError);
}
