#include <doctest.h>

#include <filesystem>

#include "pipebench/composite.hpp"
#include "pipebench/models.hpp"

using namespace pipebench;
namespace fs = std::filesystem;

namespace {

// quadratic loss against a fixed target, gradient written by the caller
template <typename T>
double mse_and_grad(const Tensor<T>& y, const Tensor<T>& target, Tensor<T>* gy) {
    double loss = 0;
    for (size_t i = 0; i < y.numel(); ++i) {
        double e = static_cast<double>(y.v[i]) - static_cast<double>(target.v[i]);
        loss += e * e;
    }
    loss /= static_cast<double>(y.numel());
    if (gy) {
        gy->resize(y.shape);
        for (size_t i = 0; i < y.numel(); ++i)
            gy->v[i] = static_cast<T>(2.0 * (static_cast<double>(y.v[i]) - static_cast<double>(target.v[i])) /
                                      static_cast<double>(y.numel()));
    }
    return loss;
}

}  // namespace

TEST_CASE("grad check: isolated dense layer under 1e-4") {
    Rng rng(11);
    Dense<double> dense;
    dense.init(12, 7, "dense", rng);
    Tensor<double> x({5, 12});
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    Tensor<double> target({5, 7});
    for (auto& v : target.v) v = rng.uniform(0.0, 1.0);
    ParamRefs<double> ps;
    dense.params(ps);
    Tensor<double> y, gy, gx;
    auto loss_fn = [&](bool with_grad) {
        dense.forward(x, y);
        double loss = mse_and_grad(y, target, with_grad ? &gy : nullptr);
        if (with_grad) dense.backward(gy, gx);
        return loss;
    };
    CHECK(grad_check(ps, loss_fn, 2000, 1e-3, 5) < 1e-4);
}

TEST_CASE("grad check: conv + pool stack") {
    Rng rng(21);
    Conv3x3<double> conv;
    conv.init(2, 3, "conv", rng);
    MaxPool2<double> pool;
    Tensor<double> x({2, 2, 8, 8});
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    Tensor<double> target({2, 3, 4, 4});
    for (auto& v : target.v) v = rng.uniform(-1.0, 1.0);
    ParamRefs<double> ps;
    conv.params(ps);
    Tensor<double> a, y, gy, ga, gx;
    auto loss_fn = [&](bool with_grad) {
        conv.forward(x, a);
        pool.forward(a, y);
        double loss = mse_and_grad(y, target, with_grad ? &gy : nullptr);
        if (with_grad) {
            pool.backward(gy, ga);
            conv.backward(ga, gx);
        }
        return loss;
    };
    CHECK(grad_check(ps, loss_fn, 1200, 1e-3, 6) < 1e-3);
}

TEST_CASE("grad check: layer norm") {
    Rng rng(31);
    LayerNorm<double> ln;
    ln.init(16, "ln");
    for (auto& v : ln.gamma.w.v) v = rng.uniform(0.5, 1.5);
    for (auto& v : ln.beta.w.v) v = rng.uniform(-0.2, 0.2);
    Tensor<double> x({6, 16});
    for (auto& v : x.v) v = rng.uniform(-2.0, 2.0);
    Tensor<double> target({6, 16});
    for (auto& v : target.v) v = rng.uniform(-1.0, 1.0);
    ParamRefs<double> ps;
    ln.params(ps);
    Tensor<double> y, gy, gx;
    auto loss_fn = [&](bool with_grad) {
        ln.forward(x, y);
        double loss = mse_and_grad(y, target, with_grad ? &gy : nullptr);
        if (with_grad) ln.backward(gy, gx);
        return loss;
    };
    CHECK(grad_check(ps, loss_fn, 64, 1e-4, 7) < 1e-3);
}

TEST_CASE("grad check: attention layer") {
    Rng rng(41);
    CausalSelfAttention<double> attn;
    attn.init(16, 4, "attn", rng);
    Tensor<double> x({8, 16});  // one sequence of length 8
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    Tensor<double> target({8, 16});
    for (auto& v : target.v) v = rng.uniform(-1.0, 1.0);
    ParamRefs<double> ps;
    attn.params(ps);
    Tensor<double> y, gy, gx;
    auto loss_fn = [&](bool with_grad) {
        attn.forward(x, 1, 8, y);
        double loss = mse_and_grad(y, target, with_grad ? &gy : nullptr);
        if (with_grad) attn.backward(gy, gx);
        return loss;
    };
    CHECK(grad_check(ps, loss_fn, 900, 1e-3, 8) < 1e-3);
}

TEST_CASE("grad check: four-stage CNN on 16x16 input") {
    CnnSpec spec;
    spec.in_h = 16;
    spec.in_w = 16;
    spec.outputs = 4;
    Cnn<double> cnn(spec, 3);
    Rng rng(12);
    Tensor<double> x({2, 1, 16, 16});
    for (auto& v : x.v) v = rng.uniform(0.0, 1.0);
    Tensor<double> target({2, 4});
    for (auto& v : target.v) v = rng.uniform(0.1, 0.9);
    Tensor<double> gy;
    auto loss_fn = [&](bool with_grad) {
        const Tensor<double>& y = cnn.forward(x);
        double loss = mse_and_grad(y, target, with_grad ? &gy : nullptr);
        if (with_grad) cnn.backward(gy);
        return loss;
    };
    CHECK(grad_check(cnn.params(), loss_fn, 1200, 1e-3, 6) < 1e-3);
}

TEST_CASE("grad check: two-layer transformer on a length-8 sequence") {
    TransformerSpec spec;
    spec.layers = 2;
    spec.d_model = 32;
    spec.heads = 4;
    spec.d_ff = 64;
    spec.max_len = 8;
    Transformer<double> tf(spec, 4);
    std::vector<int> ids = {5, 1, 7, 10, 8, 13, 5, 1};
    std::vector<int> next = {1, 7, 10, 8, 13, 5, 1, 0};
    std::vector<double> w = {0, 0, 0, 0, 0, 1, 1, 1};
    SoftmaxCrossEntropy<double> ce;
    Tensor<double> glogits, grows;
    auto loss_fn = [&](bool with_grad) {
        const Tensor<double>& logits = tf.forward_tokens(ids, 1, 8);
        double loss = ce.forward(logits, next, w);
        if (with_grad) {
            ce.backward(glogits);
            tf.backward(glogits, grows, true);
        }
        return loss;
    };
    CHECK(grad_check(tf.params(), loss_fn, 1200, 1e-3, 7) < 1e-3);
}

TEST_CASE("cnn forward contract") {
    CnnSpec spec;
    spec.in_h = 32;
    spec.in_w = 32;
    spec.outputs = 6;
    Cnn<float> cnn(spec, 9);

    // zero image, near-zero head: every output at sigmoid(0) = 0.5
    Tensor<float> zero({1, 1, 32, 32});
    const Tensor<float>& y0 = cnn.forward(zero);
    CHECK(y0.shape == std::vector<int>{1, 6});
    for (float v : y0.v) CHECK(v == doctest::Approx(0.5).epsilon(0.02));

    Rng rng(10);
    Tensor<float> x({3, 1, 32, 32});
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());
    Tensor<float> y1 = cnn.forward(x);
    for (float v : y1.v) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    // purity: repeated call is bit-identical
    Tensor<float> y2 = cnn.forward(x);
    CHECK(y1.v == y2.v);

    Tensor<float> bad({1, 1, 16, 16});
    CHECK_THROWS_AS(cnn.forward(bad), ShapeError);
}

TEST_CASE("cnn parameter count is pinned") {
    CnnSpec spec;  // 64x64, M=6 default
    spec.outputs = 6;
    Cnn<float> cnn(spec, 1);
    CHECK(cnn.param_count() == 623238);
}

TEST_CASE("transformer parameter count is pinned") {
    TransformerSpec spec;  // 4 layers, d=128, ff=512, max_len=31
    Transformer<float> tf(spec, 1);
    CHECK(tf.param_count() == 800910);
}

TEST_CASE("transformer causality and normalization") {
    TransformerSpec spec;
    spec.max_len = 16;
    Transformer<float> tf(spec, 5);
    Rng rng(6);
    std::vector<int> ids(16);
    for (auto& id : ids) id = static_cast<int>(rng.below(14));
    Tensor<float> base = tf.forward_tokens(ids, 1, 16);

    for (int trial = 0; trial < 100; ++trial) {
        int t = 1 + static_cast<int>(rng.below(15));
        std::vector<int> mut = ids;
        mut[static_cast<size_t>(t)] = static_cast<int>(rng.below(14));
        const Tensor<float>& out = tf.forward_tokens(mut, 1, 16);
        // prefix logits bit-identical, suffix may change
        for (int p = 0; p < t; ++p)
            for (int vcb = 0; vcb < 14; ++vcb)
                REQUIRE(out.v[static_cast<size_t>(p) * 14 + vcb] == base.v[static_cast<size_t>(p) * 14 + vcb]);
    }

    // softmax over each position sums to one
    const Tensor<float>& logits = tf.forward_tokens(ids, 1, 16);
    for (int p = 0; p < 16; ++p) {
        double mx = -1e30;
        for (int vcb = 0; vcb < 14; ++vcb) mx = std::max(mx, static_cast<double>(logits.v[static_cast<size_t>(p) * 14 + vcb]));
        double z = 0;
        for (int vcb = 0; vcb < 14; ++vcb) z += std::exp(static_cast<double>(logits.v[static_cast<size_t>(p) * 14 + vcb]) - mx);
        double sum = 0;
        for (int vcb = 0; vcb < 14; ++vcb)
            sum += std::exp(static_cast<double>(logits.v[static_cast<size_t>(p) * 14 + vcb]) - mx) / z;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }

    std::vector<int> too_long(17, 0);
    CHECK_THROWS_AS(tf.forward_tokens(too_long, 1, 17), ShapeError);
}

TEST_CASE("incremental decoding matches the batched forward pass") {
    TransformerSpec spec;
    spec.layers = 3;
    spec.max_len = 20;
    Transformer<float> tf(spec, 8);
    Rng rng(17);
    std::vector<int> ids(20);
    for (auto& id : ids) id = static_cast<int>(rng.below(14));

    const Tensor<float>& full = tf.forward_tokens(ids, 1, 20);
    Tensor<float> full_copy = full;
    Tensor<float> rows;
    tf.embed(ids, 1, 20, rows);
    auto st = tf.make_state();
    std::vector<float> logits(14);
    for (int p = 0; p < 20; ++p) {
        tf.decode_step(st, rows.data() + static_cast<size_t>(p) * spec.d_model, logits.data());
        int full_arg = 0, inc_arg = 0;
        for (int vcb = 1; vcb < 14; ++vcb) {
            if (full_copy.v[static_cast<size_t>(p) * 14 + vcb] > full_copy.v[static_cast<size_t>(p) * 14 + full_arg]) full_arg = vcb;
            if (logits[static_cast<size_t>(vcb)] > logits[static_cast<size_t>(inc_arg)]) inc_arg = vcb;
        }
        REQUIRE(inc_arg == full_arg);
        for (int vcb = 0; vcb < 14; ++vcb)
            REQUIRE(std::abs(logits[static_cast<size_t>(vcb)] - full_copy.v[static_cast<size_t>(p) * 14 + vcb]) < 2e-3);
    }
}

TEST_CASE("cnn single-sample overfit reaches tiny loss") {
    CnnSpec spec;
    spec.in_h = 32;
    spec.in_w = 32;
    spec.outputs = 6;
    Cnn<float> cnn(spec, 13);
    Rng rng(14);
    Tensor<float> x({1, 1, 32, 32});
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());
    Tensor<float> target({1, 6});
    for (auto& v : target.v) v = static_cast<float>(rng.uniform(0.2, 0.8));

    Adam<float> opt(1e-3);
    ParamRefs<float> ps = cnn.params();
    double loss = 1.0;
    Tensor<float> gy;
    for (int step = 0; step < 500; ++step) {
        const Tensor<float>& y = cnn.forward(x);
        loss = mse_and_grad(y, target, &gy);
        zero_grads(ps);
        cnn.backward(gy);
        opt.step(ps);
    }
    CHECK(loss < 1e-4);
}

TEST_CASE("transformer single-sequence overfit reaches exact target tokens") {
    FormatSpec d3{3};
    std::vector<Point> ctx = {{0.517, 0.898}, {0.378, 0.886}, {0.622, 0.439}};
    TokenSeq seq = encode_sequence(ctx, Point{0.517, 0.898}, d3);
    const int s = static_cast<int>(seq.ids.size());

    TransformerSpec spec;
    spec.max_len = s;
    Transformer<float> tf(spec, 15);
    Adam<float> opt(1e-3);
    ParamRefs<float> ps = tf.params();

    std::vector<int> next(static_cast<size_t>(s), 0);
    std::vector<float> w(static_cast<size_t>(s), 0.0f);
    for (int p = 0; p + 1 < s; ++p) next[static_cast<size_t>(p)] = seq.ids[static_cast<size_t>(p) + 1];
    int sep = *seq.sep_pos;
    for (int p = sep; p < s - 1; ++p) w[static_cast<size_t>(p)] = 1.0f;

    SoftmaxCrossEntropy<float> ce;
    Tensor<float> glogits, grows;
    for (int step = 0; step < 300; ++step) {
        const Tensor<float>& logits = tf.forward_tokens(seq.ids, 1, s);
        ce.forward(logits, next, w);
        ce.backward(glogits);
        zero_grads(ps);
        tf.backward(glogits, grows, true);
        opt.step(ps);
    }
    // greedy decode from the context reproduces the target tokens exactly
    std::vector<int> context(seq.ids.begin(), seq.ids.begin() + sep + 1);
    Tensor<float> rows;
    tf.embed(context, 1, static_cast<int>(context.size()), rows);
    std::vector<int> gen = tf.greedy_decode(rows, 7);
    std::vector<int> want(seq.ids.begin() + sep + 1, seq.ids.end());
    CHECK(gen == want);
}

TEST_CASE("checkpoint round trip and spec mismatch") {
    fs::path dir = fs::temp_directory_path() / "pipebench_ckpt_test";
    fs::create_directories(dir);
    std::string path = (dir / "model.bin").string();

    CnnSpec spec;
    spec.in_h = 32;
    spec.in_w = 32;
    spec.outputs = 4;
    Cnn<float> a(spec, 77);
    save_checkpoint(path, spec.to_json().dump(), a.params());

    Cnn<float> b(spec, 78);  // different init
    std::string got = load_checkpoint(path, b.params());
    CHECK(nlohmann::json::parse(got) == spec.to_json());
    Rng rng(5);
    Tensor<float> x({1, 1, 32, 32});
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());
    Tensor<float> ya = a.forward(x);
    Tensor<float> yb = b.forward(x);
    CHECK(ya.v == yb.v);

    // a different architecture must be rejected before any tensor loads
    CnnSpec other = spec;
    other.outputs = 6;
    Cnn<float> c(other, 79);
    CHECK_THROWS_AS(load_checkpoint(path, c.params()), DataError);
    fs::remove_all(dir);
}

TEST_CASE("composite tokenization equals the codec and gradients reach the first conv") {
    CompositeSpec spec;
    spec.cnn.in_h = 16;
    spec.cnn.in_w = 16;
    spec.cnn.outputs = 4;
    spec.format.decimals = 3;
    Composite<float> model(spec, 33);

    // hard context tokens == codec tokens, value by value
    Rng rng(34);
    for (int probe = 0; probe < 100; ++probe) {
        std::vector<double> vals(4);
        for (auto& v : vals) v = rng.uniform();
        std::vector<int> got = model.tokenize_values(vals);
        std::vector<int> want;
        for (size_t i = 0; i < vals.size(); ++i) {
            if (i) want.push_back(vocab::kSpace);
            for (int id : encode_value(vals[i], spec.format)) want.push_back(id);
        }
        want.push_back(vocab::kSep);
        REQUIRE(got == want);
    }

    // gradient-flow probe after a single backward pass
    Tensor<float> images({2, 1, 16, 16});
    for (auto& v : images.v) v = static_cast<float>(rng.uniform());
    std::vector<Point> targets = {{0.25, 0.75}, {0.6, 0.4}};
    float loss = model.train_forward(images, targets);
    CHECK(std::isfinite(loss));
    zero_grads(model.params());
    model.train_backward();
    CHECK(model.grad_probe() > 0.0);

    // structural identity: with M=6 the context layout equals the chained one
    CompositeSpec spec6;
    spec6.cnn.in_h = 16;
    spec6.cnn.in_w = 16;
    spec6.cnn.outputs = 6;
    spec6.format.decimals = 3;
    Composite<float> model6(spec6, 35);
    std::vector<Point> pts = {{0.517, 0.898}, {0.378, 0.886}, {0.622, 0.439}};
    std::vector<double> flat;
    for (const Point& p : pts) {
        flat.push_back(p.x);
        flat.push_back(p.y);
    }
    std::vector<int> ctx_ids = model6.tokenize_values(flat);
    TokenSeq chained = encode_sequence(pts, std::nullopt, FormatSpec{3});
    chained.ids.push_back(vocab::kSep);
    CHECK(ctx_ids == chained.ids);
}
