#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pipebench/scenegen.hpp"

namespace pipebench {

// Fixed 14-symbol vocabulary: '0'-'9' -> 0-9, ' ' -> 10, '-' -> 11,
// 'e' -> 12, ':' -> 13. '-' and 'e' are reserved; the codec never emits them.
namespace vocab {
inline constexpr int kSize = 14;
inline constexpr int kSpace = 10;
inline constexpr int kMinus = 11;
inline constexpr int kExp = 12;
inline constexpr int kSep = 13;
inline constexpr std::array<char, kSize> kSymbols = {'0', '1', '2', '3', '4', '5', '6',
                                                     '7', '8', '9', ' ', '-', 'e', ':'};
char symbol(int id);
int id(char symbol);  // throws std::invalid_argument for unknown symbols
}  // namespace vocab

struct TokenSeq {
    std::vector<int> ids;
    std::optional<int> sep_pos;  // index of ':' when a target section exists

    std::string str() const;  // character rendering, for logs and golden tests
};

struct FormatSpec {
    int decimals = 3;  // D
};

struct DecodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Values live in [0,1] and are printed as fixed-point digit strings with an
// implicit leading "0." (the vocabulary has no '.'). Out-of-range input is
// clamped; q = round(v*10^D) half-up, capped at 10^D - 1.
std::vector<int> encode_value(double v, const FormatSpec& spec);

// Inverse: digits/10^D. Throws DecodeError naming the offending position when
// a non-digit token sits in a digit slot.
double decode_value(const std::vector<int>& ids, const FormatSpec& spec);

// Integer form of the codec rounding, shared with the soft-digit path.
int64_t quantize(double v, int decimals);

// Layout: context values joined by single spaces, ':' when a target follows,
// then target x, space, target y. Each point contributes x then y.
TokenSeq encode_sequence(const std::vector<Point>& context, const std::optional<Point>& target,
                         const FormatSpec& spec);

// Raw-value variant used when the context is not point-structured (e.g. a
// feature vector feeding the end-to-end model).
TokenSeq encode_values(const std::vector<double>& context, const std::optional<Point>& target,
                       const FormatSpec& spec);

// Fixed sequence length for a given layout; identical across samples.
int sequence_length(int context_values, int decimals, bool with_target);

// Parses the 2D+1 target tokens (x digits, space, y digits); nullopt on any
// malformed slot so the caller can score a decode failure.
std::optional<Point> parse_target_tokens(const std::vector<int>& ids, const FormatSpec& spec);

// Digit of v at 1-based decimal slot. Floor-based with an epsilon-compensated
// phase so values that were already rounded to <= 8 decimals extract exactly;
// diverges from the half-up codec by at most one unit in the last digit.
int digit_at(double v, int slot);

// Soft digit distribution for the straight-through connector: weights are a
// softmax over digit proximity at temperature tau.
//   phase = frac(v*10^(slot-1)) * 10            in [0, 10)
//   w_d  propto exp(-|phase - (d+0.5)| / tau)
// d_weights_dv is the analytic Jacobian row (includes the 10^slot chain factor).
struct SoftDigit {
    std::array<double, 10> weights;
    std::array<double, 10> d_weights_dv;
    int hard_digit;
};
SoftDigit soft_digit(double v, int slot, double tau);

inline constexpr double kDefaultTau = 0.1;

}  // namespace pipebench
