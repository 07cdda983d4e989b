#include <doctest.h>

#include <cmath>

#include "pipebench/connector.hpp"
#include "pipebench/rng.hpp"

using namespace pipebench;

namespace {

// integer oracle for half-up rounding over the 1e-4 grid: v = k/10^4
int64_t oracle_quantize_grid(int64_t k, int decimals) {
    int64_t clamped = std::min<int64_t>(std::max<int64_t>(k, 0), 10000);
    int64_t q;
    if (decimals == 3)
        q = (clamped + 5) / 10;  // floor((x*10^3)+0.5) on the grid
    else if (decimals == 6)
        q = clamped * 100;
    else if (decimals == 8)
        q = clamped * 10000;
    else
        REQUIRE(false);
    int64_t cap = 1;
    for (int i = 0; i < decimals; ++i) cap *= 10;
    return std::min(q, cap - 1);
}

int64_t digits_to_int(const std::vector<int>& ids) {
    int64_t q = 0;
    for (int d : ids) q = q * 10 + d;
    return q;
}

}  // namespace

TEST_CASE("vocabulary is a 14-symbol bijection") {
    for (int i = 0; i < vocab::kSize; ++i) CHECK(vocab::id(vocab::symbol(i)) == i);
    CHECK(vocab::id(':') == 13);
    CHECK(vocab::id(' ') == 10);
    CHECK_THROWS_AS(vocab::id('.'), std::invalid_argument);
}

TEST_CASE("encode_value examples") {
    FormatSpec d3{3};
    CHECK(encode_value(0.622, d3) == std::vector<int>{6, 2, 2});
    CHECK(encode_value(0.0, d3) == std::vector<int>{0, 0, 0});
    CHECK(encode_value(1.0, d3) == std::vector<int>{9, 9, 9});
    CHECK(encode_value(0.8985, d3) == std::vector<int>{8, 9, 9});  // half-up
    CHECK(encode_value(-0.25, d3) == std::vector<int>{0, 0, 0});   // clamp
    CHECK(encode_value(1.25, d3) == std::vector<int>{9, 9, 9});
}

TEST_CASE("decode_value examples and errors") {
    FormatSpec d3{3};
    CHECK(decode_value({6, 2, 2}, d3) == doctest::Approx(0.622).epsilon(1e-12));
    CHECK(decode_value({0, 0, 0}, d3) == 0.0);
    CHECK_THROWS_WITH_AS(decode_value({5, 13, 7}, d3), "non-digit token at position 1", DecodeError);
    CHECK_THROWS_AS(decode_value({1, 2}, d3), DecodeError);

    // "517 898" split on the space -> the first appendix square
    std::vector<int> pair = {5, 1, 7, vocab::kSpace, 8, 9, 8};
    auto sep = std::find(pair.begin(), pair.end(), vocab::kSpace);
    CHECK(decode_value({pair.begin(), sep}, d3) == doctest::Approx(0.517));
    CHECK(decode_value({sep + 1, pair.end()}, d3) == doctest::Approx(0.898));
}

TEST_CASE("round trip equals clamped half-up rounding on the 1e-4 grid") {
    for (int decimals : {3, 6, 8}) {
        FormatSpec spec{decimals};
        double scale = std::pow(10.0, decimals);
        for (int64_t k = -1000; k <= 11000; ++k) {
            double v = static_cast<double>(k) / 10000.0;
            double got = decode_value(encode_value(v, spec), spec);
            double want = static_cast<double>(oracle_quantize_grid(k, decimals)) / scale;
            REQUIRE(got == want);
        }
    }
}

TEST_CASE("encode_sequence layout matches the appendix golden string") {
    FormatSpec d3{3};
    std::vector<Point> context = {{0.517, 0.898}, {0.378, 0.886}, {0.622, 0.439}};
    TokenSeq with_target = encode_sequence(context, Point{0.517, 0.898}, d3);
    CHECK(with_target.str() == "517 898 378 886 622 439:517 898");
    REQUIRE(with_target.sep_pos.has_value());
    CHECK(with_target.ids[static_cast<size_t>(*with_target.sep_pos)] == vocab::kSep);
    CHECK(static_cast<int>(with_target.ids.size()) == 31);
    CHECK(static_cast<int>(with_target.ids.size()) == sequence_length(6, 3, true));

    TokenSeq no_target = encode_sequence({{0.0, 0.0}}, std::nullopt, d3);
    CHECK(no_target.str() == "000 000");
    CHECK_FALSE(no_target.sep_pos.has_value());

    CHECK_THROWS_AS(encode_sequence({}, std::nullopt, d3), std::invalid_argument);
}

TEST_CASE("sequence length is constant across samples") {
    FormatSpec d3{3};
    Rng rng(5);
    size_t expect = 31;
    for (int i = 0; i < 200; ++i) {
        std::vector<Point> ctx = {{rng.uniform(), rng.uniform()},
                                  {rng.uniform(), rng.uniform()},
                                  {rng.uniform(), rng.uniform()}};
        TokenSeq seq = encode_sequence(ctx, Point{rng.uniform(), rng.uniform()}, d3);
        CHECK(seq.ids.size() == expect);
        for (int id : seq.ids) {
            CHECK(id >= 0);
            CHECK(id < vocab::kSize);
            CHECK(id != vocab::kMinus);  // reserved symbols never emitted
            CHECK(id != vocab::kExp);
        }
    }
}

TEST_CASE("parse_target_tokens inverts the target layout") {
    FormatSpec d3{3};
    std::vector<int> good = {5, 1, 7, vocab::kSpace, 8, 9, 8};
    auto p = parse_target_tokens(good, d3);
    REQUIRE(p.has_value());
    CHECK(p->x == doctest::Approx(0.517));
    CHECK(p->y == doctest::Approx(0.898));
    CHECK_FALSE(parse_target_tokens({5, 1, 7, 8, 9, 8, vocab::kSpace}, d3).has_value());
    CHECK_FALSE(parse_target_tokens({5, 1, vocab::kSep, vocab::kSpace, 8, 9, 8}, d3).has_value());
    CHECK_FALSE(parse_target_tokens({5, 1}, d3).has_value());
}

TEST_CASE("soft digit hard path matches the codec on rounded values") {
    FormatSpec d3{3};
    CHECK(digit_at(0.622, 1) == 6);
    CHECK(digit_at(0.622, 2) == 2);
    CHECK(digit_at(0.622, 3) == 2);

    Rng rng(99);
    for (int decimals : {3, 6}) {
        FormatSpec spec{decimals};
        double scale = std::pow(10.0, decimals);
        for (int i = 0; i < 1000; ++i) {
            double v = rng.uniform(-0.05, 1.05);
            double rounded = static_cast<double>(quantize(v, decimals)) / scale;
            std::vector<int> codec = encode_value(rounded, spec);
            for (int slot = 1; slot <= decimals; ++slot) {
                REQUIRE(digit_at(rounded, slot) == codec[static_cast<size_t>(slot - 1)]);
                REQUIRE(soft_digit(rounded, slot, kDefaultTau).hard_digit ==
                        codec[static_cast<size_t>(slot - 1)]);
            }
        }
    }
}

TEST_CASE("soft digit weights approach one-hot as tau shrinks") {
    SoftDigit sd = soft_digit(0.622, 1, 1e-3);
    CHECK(sd.weights[6] == doctest::Approx(1.0).epsilon(1e-9));
    double sum = 0;
    for (double w : sd.weights) sum += w;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("soft digit jacobian matches finite differences away from boundaries") {
    // surrogate "loss": L(v) = sum_d w_d(v) * c_d for fixed random c
    Rng rng(7);
    std::array<double, 10> c{};
    for (auto& x : c) x = rng.uniform(-1.0, 1.0);
    const double tau = kDefaultTau;

    int checked = 0;
    for (int slot = 1; slot <= 3; ++slot) {
        for (double v : {0.234, 0.347, 0.762, 0.583}) {
            // keep the probed slot's phase off digit boundaries and centers
            SoftDigit sd = soft_digit(v, slot, tau);
            double analytic = 0.0;
            for (int d = 0; d < 10; ++d) analytic += sd.d_weights_dv[static_cast<size_t>(d)] * c[static_cast<size_t>(d)];

            const double eps = 1e-7;
            SoftDigit hi = soft_digit(v + eps, slot, tau);
            SoftDigit lo = soft_digit(v - eps, slot, tau);
            double fd = 0.0;
            for (int d = 0; d < 10; ++d)
                fd += (hi.weights[static_cast<size_t>(d)] - lo.weights[static_cast<size_t>(d)]) / (2 * eps) * c[static_cast<size_t>(d)];
            if (std::abs(fd) < 1e-10 && std::abs(analytic) < 1e-10) continue;
            REQUIRE(std::abs(analytic - fd) / std::max(std::abs(fd), 1e-8) < 1e-3);
            ++checked;
        }
    }
    CHECK(checked > 6);
}
