#pragma once

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pipebench/checkpoint.hpp"
#include "pipebench/connector.hpp"
#include "pipebench/nn.hpp"

namespace pipebench {

// ------------------------------------------------------------------ specs

struct CnnSpec {
    int in_h = 64;
    int in_w = 64;
    int in_c = 1;
    std::vector<int> widths = {16, 32, 64, 128};  // four 3x3+pool stages
    int head_hidden = 256;
    int outputs = 6;  // M

    nlohmann::json to_json() const {
        return {{"kind", "cnn"},       {"in_h", in_h},
                {"in_w", in_w},        {"in_c", in_c},
                {"widths", widths},    {"head_hidden", head_hidden},
                {"outputs", outputs}};
    }
};

struct TransformerSpec {
    int vocab = vocab::kSize;
    int d_model = 128;
    int heads = 4;
    int layers = 4;
    int d_ff = 512;
    int max_len = 31;

    nlohmann::json to_json() const {
        return {{"kind", "transformer"}, {"vocab", vocab},   {"d_model", d_model},
                {"heads", heads},        {"layers", layers}, {"d_ff", d_ff},
                {"max_len", max_len}};
    }
};

struct CompositeSpec {
    CnnSpec cnn;              // cnn.outputs = M
    FormatSpec format;        // D decimals per value
    TransformerSpec transformer;
    double tau = kDefaultTau;

    // context = M values with spaces, then ':'
    int context_tokens() const { return sequence_length(cnn.outputs, format.decimals, false) + 1; }
    int total_tokens() const { return sequence_length(cnn.outputs, format.decimals, true); }

    nlohmann::json to_json() const {
        return {{"kind", "composite"},
                {"cnn", cnn.to_json()},
                {"decimals", format.decimals},
                {"transformer", transformer.to_json()},
                {"tau", tau}};
    }
};

// ------------------------------------------------------------------ CNN

// Four 3x3 conv + ReLU + 2x2 maxpool stages, then dense head with sigmoid
// outputs in (0,1).
template <typename T>
class Cnn {
  public:
    Cnn(const CnnSpec& spec, uint64_t seed) : spec_(spec) {
        check_shape(spec.widths.size() == 4, "cnn", "4 conv stages",
                    std::to_string(spec.widths.size()));
        check_shape(spec.in_h % 16 == 0 && spec.in_w % 16 == 0, "cnn",
                    "H,W divisible by 16 (four pool stages)",
                    std::to_string(spec.in_h) + "x" + std::to_string(spec.in_w));
        Rng rng(seed);
        int c = spec.in_c;
        for (int i = 0; i < 4; ++i) {
            conv_[i].init(c, spec.widths[static_cast<size_t>(i)], "conv" + std::to_string(i + 1), rng);
            c = spec.widths[static_cast<size_t>(i)];
        }
        flat_dim_ = c * (spec.in_h / 16) * (spec.in_w / 16);
        fc1_.init(flat_dim_, spec.head_hidden, "fc1", rng);
        fc2_.init(spec.head_hidden, spec.outputs, "fc2", rng);
        // near-zero head: outputs start at sigmoid(0)=0.5 with live gradients
        normal_init(fc2_.weight.w, 0.01, rng);
    }

    const CnnSpec& spec() const { return spec_; }

    ParamRefs<T> params() {
        ParamRefs<T> out;
        for (auto& c : conv_) c.params(out);
        fc1_.params(out);
        fc2_.params(out);
        return out;
    }

    size_t param_count() {
        size_t n = 0;
        for (auto* p : params()) n += p->w.numel();
        return n;
    }

    // x [N,C,H,W] scaled to [0,1] -> [N,M] in (0,1)
    const Tensor<T>& forward(const Tensor<T>& x) {
        check_shape(x.shape.size() == 4 && x.dim(1) == spec_.in_c && x.dim(2) == spec_.in_h &&
                        x.dim(3) == spec_.in_w,
                    "cnn.forward",
                    "[N," + std::to_string(spec_.in_c) + "," + std::to_string(spec_.in_h) + "," +
                        std::to_string(spec_.in_w) + "]",
                    x.shape_str());
        const Tensor<T>* cur = &x;
        for (int i = 0; i < 4; ++i) {
            conv_[i].forward(*cur, a_conv_[i]);
            relu_[i].forward(a_conv_[i], a_relu_[i]);
            pool_[i].forward(a_relu_[i], a_pool_[i]);
            cur = &a_pool_[i];
        }
        flat_ = *cur;
        flat_.shape = {cur->dim(0), flat_dim_};
        fc1_.forward(flat_, a_fc1_);
        relu_head_.forward(a_fc1_, a_hrelu_);
        fc2_.forward(a_hrelu_, a_fc2_);
        sigmoid_.forward(a_fc2_, out_);
        return out_;
    }

    // gy [N,M] at the sigmoid output; param grads accumulate
    void backward(const Tensor<T>& gy, Tensor<T>* gx_out = nullptr) {
        Tensor<T> g;
        sigmoid_.backward(gy, g);
        Tensor<T> g2;
        fc2_.backward(g, g2);
        relu_head_.backward(g2, g);
        fc1_.backward(g, g2);
        g2.shape = a_pool_[3].shape;
        for (int i = 3; i >= 0; --i) {
            pool_[i].backward(g2, g);
            relu_[i].backward(g, g2);
            conv_[i].backward(g2, g);
            g2 = std::move(g);
        }
        if (gx_out) *gx_out = std::move(g2);
    }

    const Param<T>& first_conv_weight() { return conv_[0].weight; }

  private:
    CnnSpec spec_;
    int flat_dim_ = 0;
    Conv3x3<T> conv_[4];
    ReLU<T> relu_[4];
    MaxPool2<T> pool_[4];
    Dense<T> fc1_, fc2_;
    ReLU<T> relu_head_;
    Sigmoid<T> sigmoid_;
    Tensor<T> a_conv_[4], a_relu_[4], a_pool_[4], flat_, a_fc1_, a_hrelu_, a_fc2_, out_;
};

// ------------------------------------------------------------ transformer

template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    CausalSelfAttention<T> attn;
    Dense<T> ff1, ff2;
    ReLU<T> act;

    void init(int d, int heads, int d_ff, const std::string& name, Rng& rng) {
        ln1.init(d, name + ".ln1");
        ln2.init(d, name + ".ln2");
        attn.init(d, heads, name + ".attn", rng);
        ff1.init(d, d_ff, name + ".ff1", rng);
        ff2.init(d_ff, d, name + ".ff2", rng);
    }

    void params(ParamRefs<T>& out) {
        ln1.params(out);
        attn.params(out);
        ln2.params(out);
        ff1.params(out);
        ff2.params(out);
    }

    // pre-norm residual: x + attn(ln1(x)), then x + ff(ln2(x))
    void forward(const Tensor<T>& x, int n, int s, Tensor<T>& y) {
        ln1.forward(x, t1_);
        attn.forward(t1_, n, s, t2_);
        x1_.resize(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) x1_.v[i] = x.v[i] + t2_.v[i];
        ln2.forward(x1_, t1_);
        ff1.forward(t1_, t3_);
        act.forward(t3_, t4_);
        ff2.forward(t4_, t2_);
        y.resize(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) y.v[i] = x1_.v[i] + t2_.v[i];
    }

    void backward(const Tensor<T>& gy, Tensor<T>& gx) {
        ff2.backward(gy, g1_);
        act.backward(g1_, g2_);
        ff1.backward(g2_, g1_);
        ln2.backward(g1_, g2_);
        gx1_.resize(gy.shape);
        for (size_t i = 0; i < gy.numel(); ++i) gx1_.v[i] = gy.v[i] + g2_.v[i];
        attn.backward(gx1_, g1_);
        ln1.backward(g1_, g2_);
        gx.resize(gy.shape);
        for (size_t i = 0; i < gy.numel(); ++i) gx.v[i] = gx1_.v[i] + g2_.v[i];
    }

  private:
    Tensor<T> t1_, t2_, t3_, t4_, x1_, g1_, g2_, gx1_;
};

// Decoder-only causal transformer over the 14-symbol vocabulary.
template <typename T>
class Transformer {
  public:
    Transformer(const TransformerSpec& spec, uint64_t seed) : spec_(spec) {
        Rng rng(seed);
        tok_embed_.name = "tok_embed";
        tok_embed_.init_shape({spec.vocab, spec.d_model});
        normal_init(tok_embed_.w, 0.02, rng);
        pos_embed_.name = "pos_embed";
        pos_embed_.init_shape({spec.max_len, spec.d_model});
        normal_init(pos_embed_.w, 0.02, rng);
        blocks_.resize(static_cast<size_t>(spec.layers));
        for (int i = 0; i < spec.layers; ++i)
            blocks_[static_cast<size_t>(i)].init(spec.d_model, spec.heads, spec.d_ff,
                                                 "block" + std::to_string(i + 1), rng);
        ln_f_.init(spec.d_model, "ln_f");
        head_.init(spec.d_model, spec.vocab, "head", rng);
    }

    const TransformerSpec& spec() const { return spec_; }

    ParamRefs<T> params() {
        ParamRefs<T> out;
        out.push_back(&tok_embed_);
        out.push_back(&pos_embed_);
        for (auto& b : blocks_) b.params(out);
        ln_f_.params(out);
        head_.params(out);
        return out;
    }

    size_t param_count() {
        size_t n = 0;
        for (auto* p : params()) n += p->w.numel();
        return n;
    }

    // Embeds ids [N,S] (token + position) into rows [N*S, d].
    void embed(const std::vector<int>& ids, int n, int s, Tensor<T>& rows) const {
        rows.resize({n * s, spec_.d_model});
        const int d = spec_.d_model;
        for (int i = 0; i < n * s; ++i) {
            int id = ids[static_cast<size_t>(i)];
            int pos = i % s;
            const T* te = tok_embed_.w.data() + static_cast<size_t>(id) * d;
            const T* pe = pos_embed_.w.data() + static_cast<size_t>(pos) * d;
            T* r = rows.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) r[j] = te[j] + pe[j];
        }
    }

    // rows [N*S, d] -> logits [N*S, vocab]
    const Tensor<T>& forward_rows(const Tensor<T>& rows, int n, int s) {
        if (s > spec_.max_len)
            throw ShapeError("sequence length " + std::to_string(s) + " exceeds max_len " +
                             std::to_string(spec_.max_len));
        n_ = n;
        s_ = s;
        const Tensor<T>* cur = &rows;
        acts_.resize(blocks_.size() + 1);
        acts_[0] = rows;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            blocks_[i].forward(*cur, n, s, acts_[i + 1]);
            cur = &acts_[i + 1];
        }
        ln_f_.forward(*cur, normed_);
        head_.forward(normed_, logits_);
        return logits_;
    }

    // ids [N,S] -> logits [N*S, vocab]; records ids for embedding backward
    const Tensor<T>& forward_tokens(const std::vector<int>& ids, int n, int s) {
        ids_ = ids;
        embed(ids, n, s, rows_);
        return forward_rows(rows_, n, s);
    }

    // glogits [N*S, vocab] -> grows [N*S, d]; token path also scatters into
    // the embedding tables when forward_tokens was used.
    void backward(const Tensor<T>& glogits, Tensor<T>& grows, bool through_embeddings) {
        Tensor<T> g;
        head_.backward(glogits, g);
        Tensor<T> g2;
        ln_f_.backward(g, g2);
        for (size_t i = blocks_.size(); i-- > 0;) {
            blocks_[i].backward(g2, g);
            g2 = std::move(g);
        }
        grows = std::move(g2);
        if (through_embeddings) {
            const int d = spec_.d_model;
            for (int i = 0; i < n_ * s_; ++i) {
                int id = ids_[static_cast<size_t>(i)];
                int pos = i % s_;
                const T* gr = grows.data() + static_cast<size_t>(i) * d;
                T* gt = tok_embed_.g.data() + static_cast<size_t>(id) * d;
                T* gp = pos_embed_.g.data() + static_cast<size_t>(pos) * d;
                for (int j = 0; j < d; ++j) {
                    gt[j] += gr[j];
                    gp[j] += gr[j];
                }
            }
        }
    }

    const Param<T>& token_embedding() const { return tok_embed_; }
    Param<T>& token_embedding() { return tok_embed_; }
    const Param<T>& position_embedding() const { return pos_embed_; }
    Param<T>& position_embedding() { return pos_embed_; }

    // ---------------- incremental decoding with per-layer K/V caches

    struct DecodeState {
        std::vector<Tensor<T>> k, v;  // per layer, [max_len, d]
        int len = 0;
    };

    DecodeState make_state() const {
        DecodeState st;
        st.k.resize(blocks_.size());
        st.v.resize(blocks_.size());
        for (size_t i = 0; i < blocks_.size(); ++i) {
            st.k[i].resize({spec_.max_len, spec_.d_model});
            st.v[i].resize({spec_.max_len, spec_.d_model});
        }
        return st;
    }

    // Feeds one embedded row (token+position already summed) and returns the
    // logits for the next token. Mathematically identical to forward_rows at
    // the growing prefix; used for greedy decoding.
    void decode_step(DecodeState& st, const T* row_in, T* logits_out) const {
        const int d = spec_.d_model;
        const int hd = d / spec_.heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(hd));
        if (st.len >= spec_.max_len) throw ShapeError("decode past max_len");
        std::vector<T> x(row_in, row_in + d), tmp(static_cast<size_t>(d)), q(static_cast<size_t>(d));
        std::vector<T> ff(static_cast<size_t>(spec_.d_ff));
        const int pos = st.len;
        for (size_t li = 0; li < blocks_.size(); ++li) {
            const auto& b = blocks_[li];
            layernorm_row(b.ln1, x.data(), tmp.data(), d);
            // project to q,k,v for this position
            T* krow = st.k[li].data() + static_cast<size_t>(pos) * d;
            T* vrow = st.v[li].data() + static_cast<size_t>(pos) * d;
            project_row(b.attn.w_qkv.w, b.attn.b_qkv.w, tmp.data(), q.data(), krow, vrow, d);
            std::vector<T> ctx(static_cast<size_t>(d), T(0));
            for (int h = 0; h < spec_.heads; ++h) {
                const T* qh = q.data() + h * hd;
                std::vector<T> sc(static_cast<size_t>(pos + 1));
                T mx = -1e30;
                for (int j = 0; j <= pos; ++j) {
                    const T* kj = st.k[li].data() + static_cast<size_t>(j) * d + h * hd;
                    T dot = 0;
                    for (int e = 0; e < hd; ++e) dot += qh[e] * kj[e];
                    sc[static_cast<size_t>(j)] = dot * scale;
                    mx = std::max(mx, sc[static_cast<size_t>(j)]);
                }
                T z = 0;
                for (int j = 0; j <= pos; ++j) {
                    sc[static_cast<size_t>(j)] = std::exp(sc[static_cast<size_t>(j)] - mx);
                    z += sc[static_cast<size_t>(j)];
                }
                T* ch = ctx.data() + h * hd;
                for (int j = 0; j <= pos; ++j) {
                    const T* vj = st.v[li].data() + static_cast<size_t>(j) * d + h * hd;
                    T p = sc[static_cast<size_t>(j)] / z;
                    for (int e = 0; e < hd; ++e) ch[e] += p * vj[e];
                }
            }
            // output projection + residual
            for (int i = 0; i < d; ++i) {
                const T* wrow = b.attn.w_out.w.data() + static_cast<size_t>(i) * d;
                T acc = b.attn.b_out.w.v[static_cast<size_t>(i)];
                for (int j = 0; j < d; ++j) acc += wrow[j] * ctx[static_cast<size_t>(j)];
                x[static_cast<size_t>(i)] += acc;
            }
            // feed-forward + residual
            layernorm_row(b.ln2, x.data(), tmp.data(), d);
            dense_row(b.ff1.weight.w, b.ff1.bias.w, tmp.data(), ff.data(), d, spec_.d_ff);
            for (auto& v : ff) v = v > T(0) ? v : T(0);
            dense_row(b.ff2.weight.w, b.ff2.bias.w, ff.data(), tmp.data(), spec_.d_ff, d);
            for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += tmp[static_cast<size_t>(i)];
        }
        layernorm_row(ln_f_, x.data(), tmp.data(), d);
        dense_row(head_.weight.w, head_.bias.w, tmp.data(), logits_out, d, spec_.vocab);
        ++st.len;
    }

    // Greedy decode: feed `context_rows` ([ctx_len, d], embeddings already
    // summed), then generate `steps` tokens starting from the logits of the
    // last context row. Returns generated token ids.
    std::vector<int> greedy_decode(const Tensor<T>& context_rows, int steps) const {
        const int d = spec_.d_model;
        int ctx = context_rows.dim(0);
        DecodeState st = make_state();
        std::vector<T> logits(static_cast<size_t>(spec_.vocab));
        for (int i = 0; i < ctx; ++i)
            decode_step(st, context_rows.data() + static_cast<size_t>(i) * d, logits.data());
        std::vector<int> out;
        out.reserve(static_cast<size_t>(steps));
        std::vector<T> row(static_cast<size_t>(d));
        for (int t = 0; t < steps; ++t) {
            int best = 0;
            for (int j = 1; j < spec_.vocab; ++j)
                if (logits[static_cast<size_t>(j)] > logits[static_cast<size_t>(best)]) best = j;
            out.push_back(best);
            if (t + 1 == steps) break;
            const T* te = tok_embed_.w.data() + static_cast<size_t>(best) * d;
            const T* pe = pos_embed_.w.data() + static_cast<size_t>(st.len) * d;
            for (int j = 0; j < d; ++j) row[static_cast<size_t>(j)] = te[j] + pe[j];
            decode_step(st, row.data(), logits.data());
        }
        return out;
    }

  private:
    TransformerSpec spec_;
    Param<T> tok_embed_, pos_embed_;
    std::vector<TransformerBlock<T>> blocks_;
    LayerNorm<T> ln_f_;
    Dense<T> head_;
    Tensor<T> rows_, normed_, logits_;
    std::vector<Tensor<T>> acts_;
    std::vector<int> ids_;
    int n_ = 0, s_ = 0;

    static void layernorm_row(const LayerNorm<T>& ln, const T* x, T* y, int d) {
        T mu = 0;
        for (int j = 0; j < d; ++j) mu += x[j];
        mu /= d;
        T var = 0;
        for (int j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= d;
        T rstd = T(1) / std::sqrt(var + T(1e-5));
        for (int j = 0; j < d; ++j)
            y[j] = (x[j] - mu) * rstd * ln.gamma.w.v[static_cast<size_t>(j)] +
                   ln.beta.w.v[static_cast<size_t>(j)];
    }

    static void dense_row(const Tensor<T>& w, const Tensor<T>& b, const T* x, T* y, int in, int out) {
        for (int i = 0; i < out; ++i) {
            const T* wr = w.data() + static_cast<size_t>(i) * in;
            T acc = b.v[static_cast<size_t>(i)];
            for (int j = 0; j < in; ++j) acc += wr[j] * x[j];
            y[i] = acc;
        }
    }

    static void project_row(const Tensor<T>& w, const Tensor<T>& b, const T* x, T* q, T* k, T* v,
                            int d) {
        for (int i = 0; i < 3 * d; ++i) {
            const T* wr = w.data() + static_cast<size_t>(i) * d;
            T acc = b.v[static_cast<size_t>(i)];
            for (int j = 0; j < d; ++j) acc += wr[j] * x[j];
            if (i < d)
                q[i] = acc;
            else if (i < 2 * d)
                k[i - d] = acc;
            else
                v[i - 2 * d] = acc;
        }
    }
};

// ------------------------------------------------------------- grad check

// Central-difference check over a probed subset of parameters. Returns the
// max relative error |g - fd| / max(|fd|, 1e-8). Run with T = double.
//
// Probes whose +/-eps interval crosses a kink (ReLU state flip, pool argmax
// change) are detected by comparing the eps and eps/2 secants and excluded;
// subgradients are only meaningful away from those points.
struct GradCheckStats {
    double max_rel = 0.0;
    int probed = 0;
    int skipped = 0;
};

template <typename T, typename LossFn>
GradCheckStats grad_check_stats(const ParamRefs<T>& params, LossFn loss_fn, int max_probes,
                                double eps, uint64_t seed) {
    zero_grads(params);
    loss_fn(true);  // forward + backward fills analytic grads

    std::vector<std::pair<size_t, size_t>> index;  // (param, element)
    for (size_t p = 0; p < params.size(); ++p)
        for (size_t j = 0; j < params[p]->w.numel(); ++j) index.emplace_back(p, j);
    Rng rng(seed);
    rng.shuffle(index.data(), index.size());
    size_t probes = std::min(index.size(), static_cast<size_t>(max_probes));

    GradCheckStats stats;
    for (size_t i = 0; i < probes; ++i) {
        auto [p, j] = index[i];
        T* w = &params[p]->w.v[j];
        T saved = *w;
        auto central = [&](double h) {
            *w = saved + static_cast<T>(h);
            double lp = loss_fn(false);
            *w = saved - static_cast<T>(h);
            double lm = loss_fn(false);
            *w = saved;
            return (lp - lm) / (2.0 * h);
        };
        double fd1 = central(eps);
        double fd2 = central(eps * 0.5);
        if (std::abs(fd1 - fd2) > 0.02 * std::max(std::abs(fd2), 1e-8)) {
            ++stats.skipped;
            continue;
        }
        double g = static_cast<double>(params[p]->g.v[j]);
        double rel = std::abs(g - fd2) / std::max(std::abs(fd2), 1e-8);
        stats.max_rel = std::max(stats.max_rel, rel);
        ++stats.probed;
    }
    return stats;
}

template <typename T, typename LossFn>
double grad_check(const ParamRefs<T>& params, LossFn loss_fn, int max_probes, double eps,
                  uint64_t seed) {
    return grad_check_stats(params, loss_fn, max_probes, eps, seed).max_rel;
}

}  // namespace pipebench
