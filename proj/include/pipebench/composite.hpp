#pragma once

#include <optional>
#include <vector>

#include "pipebench/models.hpp"

namespace pipebench {

// End-to-end model: CNN -> rounded digit tokens -> causal transformer.
// Forward tokenization is hard (identical to the codec); the backward pass
// routes gradients to the CNN through the soft digit distribution.
template <typename T>
class Composite {
  public:
    Composite(const CompositeSpec& spec, uint64_t seed)
        : spec_(spec), cnn_(spec.cnn, seed), transformer_(adjust(spec), seed + 1) {
        build_layout();
    }

    const CompositeSpec& spec() const { return spec_; }
    Cnn<T>& cnn() { return cnn_; }
    Transformer<T>& transformer() { return transformer_; }

    ParamRefs<T> params() {
        ParamRefs<T> out = cnn_.params();
        for (auto* p : transformer_.params()) out.push_back(p);
        return out;
    }

    // Hard context tokens for a value vector, exactly the codec's digits.
    std::vector<int> tokenize_values(const std::vector<double>& vals) const {
        TokenSeq seq = encode_values(vals, std::nullopt, spec_.format);
        seq.ids.push_back(vocab::kSep);
        return seq.ids;
    }

    // Teacher-forced pass; returns mean cross-entropy over the target slots.
    T train_forward(const Tensor<T>& images, const std::vector<Point>& targets) {
        const Tensor<T>& vals = cnn_.forward(images);
        const int n = vals.dim(0);
        const int m = spec_.cnn.outputs;
        const int s = spec_.total_tokens();
        n_ = n;

        ids_.assign(static_cast<size_t>(n) * s, 0);
        soft_.assign(static_cast<size_t>(n) * m * spec_.format.decimals, SoftDigit{});
        for (int i = 0; i < n; ++i) {
            std::vector<double> v(static_cast<size_t>(m));
            for (int j = 0; j < m; ++j) v[static_cast<size_t>(j)] = static_cast<double>(vals.v[static_cast<size_t>(i) * m + j]);
            fill_sample_ids(v, targets[static_cast<size_t>(i)], &ids_[static_cast<size_t>(i) * s]);
            for (int j = 0; j < m; ++j)
                for (int slot = 1; slot <= spec_.format.decimals; ++slot)
                    soft_[soft_index(i, j, slot)] = soft_digit(v[static_cast<size_t>(j)], slot, spec_.tau);
        }

        transformer_.embed(ids_, n, s, rows_);
        const Tensor<T>& logits = transformer_.forward_rows(rows_, n, s);

        // loss on rows predicting the target slots
        std::vector<int> next(static_cast<size_t>(n) * s, 0);
        std::vector<T> weight(static_cast<size_t>(n) * s, T(0));
        const int sep = spec_.context_tokens() - 1;
        const int tgt_tokens = 2 * spec_.format.decimals + 1;
        for (int i = 0; i < n; ++i) {
            for (int p = 0; p + 1 < s; ++p) next[static_cast<size_t>(i) * s + p] = ids_[static_cast<size_t>(i) * s + p + 1];
            for (int p = sep; p < sep + tgt_tokens; ++p) weight[static_cast<size_t>(i) * s + p] = T(1);
        }
        return ce_.forward(logits, next, weight);
    }

    void train_backward() {
        Tensor<T> glogits;
        ce_.backward(glogits);
        Tensor<T> grows;
        transformer_.backward(glogits, grows, false);

        const int n = n_;
        const int m = spec_.cnn.outputs;
        const int s = spec_.total_tokens();
        const int d_model = transformer_.spec().d_model;
        Tensor<T> gvals({n, m});
        T* g_tok = transformer_.token_embedding().g.data();

        for (int i = 0; i < n; ++i) {
            for (int p = 0; p < s; ++p) {
                const T* gr = grows.data() + (static_cast<size_t>(i) * s + p) * d_model;
                // positions share the learned position table
                T* gp = position_grad() + static_cast<size_t>(p) * d_model;
                for (int j = 0; j < d_model; ++j) gp[j] += gr[j];

                const SlotRef& ref = layout_[static_cast<size_t>(p)];
                if (ref.value < 0) {
                    T* gt = g_tok + static_cast<size_t>(ids_[static_cast<size_t>(i) * s + p]) * d_model;
                    for (int j = 0; j < d_model; ++j) gt[j] += gr[j];
                    continue;
                }
                // digit position: spread embedding grad over the soft weights
                // and push the proximity jacobian into the CNN value grad
                const SoftDigit& sd = soft_[soft_index(i, ref.value, ref.slot)];
                double gv = 0.0;
                for (int d = 0; d < 10; ++d) {
                    const T* e = transformer_.token_embedding().w.data() + static_cast<size_t>(d) * d_model;
                    T* gt = g_tok + static_cast<size_t>(d) * d_model;
                    double dot = 0.0;
                    T w = static_cast<T>(sd.weights[static_cast<size_t>(d)]);
                    for (int j = 0; j < d_model; ++j) {
                        gt[j] += w * gr[j];
                        dot += static_cast<double>(e[j]) * static_cast<double>(gr[j]);
                    }
                    gv += sd.d_weights_dv[static_cast<size_t>(d)] * dot;
                }
                gvals.v[static_cast<size_t>(i) * m + ref.value] += static_cast<T>(gv);
            }
        }
        cnn_.backward(gvals);
    }

    // max |dL/dw| over the first conv kernel, after a backward pass
    double grad_probe() {
        double mx = 0.0;
        for (T g : cnn_.first_conv_weight().g.v) mx = std::max(mx, std::abs(static_cast<double>(g)));
        return mx;
    }

    struct Prediction {
        std::optional<Point> point;
        std::vector<int> tokens;          // generated target tokens
        std::vector<double> cnn_values;   // raw CNN outputs
    };

    // Greedy decode for a batch of images.
    std::vector<Prediction> predict(const Tensor<T>& images) {
        const Tensor<T>& vals = cnn_.forward(images);
        const int n = vals.dim(0);
        const int m = spec_.cnn.outputs;
        const int d_model = transformer_.spec().d_model;
        const int ctx = spec_.context_tokens();
        const int tgt_tokens = 2 * spec_.format.decimals + 1;
        std::vector<Prediction> out(static_cast<size_t>(n));
        const int nt = std::max(1, std::min(threads(), n));
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int i = 0; i < n; ++i) {
            std::vector<double> v(static_cast<size_t>(m));
            for (int j = 0; j < m; ++j) v[static_cast<size_t>(j)] = static_cast<double>(vals.v[static_cast<size_t>(i) * m + j]);
            std::vector<int> ids = tokenize_values(v);
            Tensor<T> rows;
            transformer_.embed(ids, 1, ctx, rows);
            std::vector<int> gen = transformer_.greedy_decode(rows, tgt_tokens);
            out[static_cast<size_t>(i)].point = parse_target_tokens(gen, spec_.format);
            out[static_cast<size_t>(i)].tokens = std::move(gen);
            out[static_cast<size_t>(i)].cnn_values = std::move(v);
        }
        return out;
    }

  private:
    struct SlotRef {
        int value = -1;  // CNN output index, -1 for structural/target tokens
        int slot = 0;    // 1-based digit slot
    };

    CompositeSpec spec_;
    Cnn<T> cnn_;
    Transformer<T> transformer_;
    SoftmaxCrossEntropy<T> ce_;
    std::vector<SlotRef> layout_;
    std::vector<int> ids_;
    std::vector<SoftDigit> soft_;
    Tensor<T> rows_;
    int n_ = 0;

    static TransformerSpec adjust(const CompositeSpec& spec) {
        TransformerSpec t = spec.transformer;
        t.max_len = std::max(t.max_len, spec.total_tokens());
        return t;
    }

    size_t soft_index(int sample, int value, int slot) const {
        const int d = spec_.format.decimals;
        return (static_cast<size_t>(sample) * spec_.cnn.outputs + value) * d + (slot - 1);
    }

    T* position_grad() { return transformer_.position_embedding().g.data(); }

    void build_layout() {
        const int m = spec_.cnn.outputs;
        const int d = spec_.format.decimals;
        layout_.clear();
        for (int j = 0; j < m; ++j) {
            if (j > 0) layout_.push_back({});  // space
            for (int slot = 1; slot <= d; ++slot) layout_.push_back({j, slot});
        }
        layout_.push_back({});                       // ':'
        for (int t = 0; t < 2 * d + 1; ++t) layout_.push_back({});  // target slots
    }

    void fill_sample_ids(const std::vector<double>& vals, const Point& target, int* ids) const {
        TokenSeq ctx = encode_values(vals, std::nullopt, spec_.format);
        int p = 0;
        for (int id : ctx.ids) ids[p++] = id;
        ids[p++] = vocab::kSep;
        for (int id : encode_value(target.x, spec_.format)) ids[p++] = id;
        ids[p++] = vocab::kSpace;
        for (int id : encode_value(target.y, spec_.format)) ids[p++] = id;
    }
};

}  // namespace pipebench
