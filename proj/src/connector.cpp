#include "pipebench/connector.hpp"

#include <cmath>
#include <sstream>

namespace pipebench {

namespace vocab {

char symbol(int id) {
    if (id < 0 || id >= kSize) throw std::invalid_argument("token id out of range");
    return kSymbols[static_cast<size_t>(id)];
}

int id(char symbol) {
    for (int i = 0; i < kSize; ++i)
        if (kSymbols[static_cast<size_t>(i)] == symbol) return i;
    throw std::invalid_argument(std::string("symbol not in vocabulary: '") + symbol + "'");
}

}  // namespace vocab

std::string TokenSeq::str() const {
    std::string s;
    s.reserve(ids.size());
    for (int id : ids) s.push_back(vocab::symbol(id));
    return s;
}

// Phase-space epsilon absorbs the representation error of decimal literals
// (~1e-8 at D=8) without moving genuine values across a rounding boundary.
namespace {
constexpr double kPhaseEps = 1e-6;

double pow10i(int n) {
    double p = 1.0;
    while (n-- > 0) p *= 10.0;
    return p;
}
}  // namespace

int64_t quantize(double v, int decimals) {
    double c = std::min(1.0, std::max(0.0, v));
    double scale = pow10i(decimals);
    auto q = static_cast<int64_t>(std::floor(c * scale + 0.5 + kPhaseEps));
    int64_t cap = static_cast<int64_t>(scale) - 1;
    return std::min(q, cap);
}

std::vector<int> encode_value(double v, const FormatSpec& spec) {
    const int d = spec.decimals;
    int64_t q = quantize(v, d);
    std::vector<int> ids(static_cast<size_t>(d));
    for (int i = d - 1; i >= 0; --i) {
        ids[static_cast<size_t>(i)] = static_cast<int>(q % 10);
        q /= 10;
    }
    return ids;
}

double decode_value(const std::vector<int>& ids, const FormatSpec& spec) {
    if (static_cast<int>(ids.size()) != spec.decimals)
        throw DecodeError("expected " + std::to_string(spec.decimals) + " digit tokens, got " +
                          std::to_string(ids.size()));
    int64_t q = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] > 9)
            throw DecodeError("non-digit token at position " + std::to_string(i));
        q = q * 10 + ids[i];
    }
    return static_cast<double>(q) / pow10i(spec.decimals);
}

TokenSeq encode_values(const std::vector<double>& context, const std::optional<Point>& target,
                       const FormatSpec& spec) {
    if (context.empty()) throw std::invalid_argument("encode: empty context");
    TokenSeq seq;
    seq.ids.reserve(static_cast<size_t>(
        sequence_length(static_cast<int>(context.size()), spec.decimals, target.has_value())));
    for (size_t i = 0; i < context.size(); ++i) {
        if (i > 0) seq.ids.push_back(vocab::kSpace);
        for (int id : encode_value(context[i], spec)) seq.ids.push_back(id);
    }
    if (target) {
        seq.sep_pos = static_cast<int>(seq.ids.size());
        seq.ids.push_back(vocab::kSep);
        for (int id : encode_value(target->x, spec)) seq.ids.push_back(id);
        seq.ids.push_back(vocab::kSpace);
        for (int id : encode_value(target->y, spec)) seq.ids.push_back(id);
    }
    return seq;
}

TokenSeq encode_sequence(const std::vector<Point>& context, const std::optional<Point>& target,
                         const FormatSpec& spec) {
    std::vector<double> values;
    values.reserve(context.size() * 2);
    for (const Point& p : context) {
        values.push_back(p.x);
        values.push_back(p.y);
    }
    return encode_values(values, target, spec);
}

int sequence_length(int context_values, int decimals, bool with_target) {
    int n = context_values * decimals + (context_values - 1);
    if (with_target) n += 1 + 2 * decimals + 1;
    return n;
}

std::optional<Point> parse_target_tokens(const std::vector<int>& ids, const FormatSpec& spec) {
    const int d = spec.decimals;
    if (static_cast<int>(ids.size()) != 2 * d + 1) return std::nullopt;
    if (ids[static_cast<size_t>(d)] != vocab::kSpace) return std::nullopt;
    std::vector<int> xs(ids.begin(), ids.begin() + d);
    std::vector<int> ys(ids.begin() + d + 1, ids.end());
    for (int t : xs)
        if (t < 0 || t > 9) return std::nullopt;
    for (int t : ys)
        if (t < 0 || t > 9) return std::nullopt;
    return Point{decode_value(xs, spec), decode_value(ys, spec)};
}

int digit_at(double v, int slot) {
    double c = std::min(1.0, std::max(0.0, v));
    double p = c * pow10i(slot);
    auto q = static_cast<int64_t>(std::floor(p + kPhaseEps));
    int64_t cap = static_cast<int64_t>(pow10i(slot)) - 1;
    q = std::min(q, cap);
    return static_cast<int>(q % 10);
}

SoftDigit soft_digit(double v, int slot, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("soft_digit: tau must be positive");
    SoftDigit out;
    out.hard_digit = digit_at(v, slot);

    double c = std::min(1.0, std::max(0.0, v));
    double u = c * pow10i(slot - 1);
    double phase = (u - std::floor(u)) * 10.0;  // digit phase in [0, 10)

    // softmax over -|phase - (d+0.5)|/tau
    std::array<double, 10> score{};
    std::array<double, 10> dscore{};  // d(score)/d(phase)
    double mx = -1e300;
    for (int d = 0; d < 10; ++d) {
        double delta = phase - (d + 0.5);
        score[static_cast<size_t>(d)] = -std::abs(delta) / tau;
        dscore[static_cast<size_t>(d)] = (delta >= 0.0 ? -1.0 : 1.0) / tau;
        mx = std::max(mx, score[static_cast<size_t>(d)]);
    }
    double z = 0.0;
    for (int d = 0; d < 10; ++d) {
        out.weights[static_cast<size_t>(d)] = std::exp(score[static_cast<size_t>(d)] - mx);
        z += out.weights[static_cast<size_t>(d)];
    }
    double mean_ds = 0.0;
    for (int d = 0; d < 10; ++d) {
        out.weights[static_cast<size_t>(d)] /= z;
        mean_ds += out.weights[static_cast<size_t>(d)] * dscore[static_cast<size_t>(d)];
    }
    // dw_d/dv = w_d (s_d - sum_e w_e s_e) * dphase/dv, with dphase/dv = 10^slot
    double chain = pow10i(slot);
    for (int d = 0; d < 10; ++d)
        out.d_weights_dv[static_cast<size_t>(d)] =
            out.weights[static_cast<size_t>(d)] * (dscore[static_cast<size_t>(d)] - mean_ds) * chain;
    return out;
}

}  // namespace pipebench
