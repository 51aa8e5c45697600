#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gradalign/rng.hpp"

using namespace gradalign;

TEST_CASE("streams are reproducible and position-addressable", "[rng]") {
    RngStream a(derive_key(42, "test", 1, 2));
    RngStream b(derive_key(42, "test", 1, 2));
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    REQUIRE(a.position() == 100);
}

TEST_CASE("different purposes give different streams", "[rng]") {
    RngStream a = derive_stream(42, "alpha", 0, 0);
    RngStream b = derive_stream(42, "beta", 0, 0);
    RngStream c = derive_stream(43, "alpha", 0, 0);
    REQUIRE(a.next_u64() != b.next_u64());
    REQUIRE(derive_key(42, "alpha", 0, 0) != derive_key(42, "alpha", 0, 1));
    REQUIRE(derive_key(42, "alpha", 0, 0) != derive_key(42, "alpha", 1, 0));
    REQUIRE(a.key() != c.key());
}

TEST_CASE("uniform doubles land in [0,1) with mean near one half", "[rng]") {
    RngStream rng = derive_stream(7, "uniform");
    const int n = 100000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.next_double();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    // 3 standard errors of the mean of U(0,1)
    REQUIRE(std::fabs(sum / n - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("next_below is unbiased over a small range", "[rng]") {
    RngStream rng = derive_stream(11, "below");
    const int n = 60000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) ++counts[rng.next_below(3)];
    for (int c : counts) REQUIRE(std::fabs(c / static_cast<double>(n) - 1.0 / 3.0) < 0.01);
}

TEST_CASE("normal draws have unit variance", "[rng]") {
    RngStream rng = derive_stream(13, "normal");
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    REQUIRE(std::fabs(sum / n) < 0.02);
    REQUIRE(std::fabs(sq / n - 1.0) < 0.03);
}

TEST_CASE("categorical respects the probability vector", "[rng]") {
    RngStream rng = derive_stream(17, "categorical");
    const std::vector<double> probs{0.1, 0.6, 0.3};
    const int n = 50000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) ++counts[rng.categorical(probs)];
    for (int a = 0; a < 3; ++a) {
        const double se = std::sqrt(probs[a] * (1 - probs[a]) / n);
        REQUIRE(std::fabs(counts[a] / static_cast<double>(n) - probs[a]) < 3.5 * se);
    }
}

TEST_CASE("shuffle is a permutation and seed-stable", "[rng]") {
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
    RngStream a = derive_stream(19, "shuffle");
    RngStream b = derive_stream(19, "shuffle");
    std::vector<int> va = v, vb = v;
    a.shuffle(va);
    b.shuffle(vb);
    REQUIRE(va == vb);
    std::vector<int> sorted = va;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == v);
}
