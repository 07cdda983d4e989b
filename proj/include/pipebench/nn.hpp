#pragma once

#include <omp.h>

#include <cmath>
#include <string>
#include <vector>

#include "pipebench/gemm.hpp"
#include "pipebench/rng.hpp"
#include "pipebench/tensor.hpp"

namespace pipebench {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> w;
    Tensor<T> g;

    void init_shape(std::vector<int> s) {
        w.resize(s);
        g.resize(std::move(s));
    }
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

template <typename T>
inline void kaiming_uniform(Tensor<T>& w, int fan_in, Rng& rng) {
    double bound = std::sqrt(6.0 / fan_in);
    for (auto& x : w.v) x = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
inline void normal_init(Tensor<T>& w, double stddev, Rng& rng) {
    for (auto& x : w.v) x = static_cast<T>(rng.normal() * stddev);
}

// ---------------------------------------------------------------- dense

template <typename T>
class Dense {
  public:
    Param<T> weight, bias;  // weight [out,in]

    void init(int in, int out, const std::string& name, Rng& rng) {
        in_ = in;
        out_ = out;
        weight.name = name + ".weight";
        bias.name = name + ".bias";
        weight.init_shape({out, in});
        bias.init_shape({out});
        kaiming_uniform(weight.w, in, rng);
    }

    void params(ParamRefs<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    // x [N,in] -> y [N,out]
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        check_shape(x.shape.size() == 2 && x.dim(1) == in_, "dense", "[N," + std::to_string(in_) + "]",
                    x.shape_str());
        x_ = x;
        int n = x.dim(0);
        y.resize({n, out_});
        gemm_nt(x.data(), weight.w.data(), y.data(), n, in_, out_);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_; ++j) y.v[static_cast<size_t>(i) * out_ + j] += bias.w.v[static_cast<size_t>(j)];
    }

    void backward(const Tensor<T>& gy, Tensor<T>& gx) {
        int n = gy.dim(0);
        gx.resize({n, in_});
        gemm_nn(gy.data(), weight.w.data(), gx.data(), n, out_, in_);
        gemm_tn(gy.data(), x_.data(), weight.g.data(), out_, n, in_, true);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_; ++j) bias.g.v[static_cast<size_t>(j)] += gy.v[static_cast<size_t>(i) * out_ + j];
    }

  private:
    int in_ = 0, out_ = 0;
    Tensor<T> x_;
};

// ---------------------------------------------------------------- conv 3x3

// 3x3, stride 1, zero 'same' padding; feature maps are [N,C,H,W].
template <typename T>
class Conv3x3 {
  public:
    Param<T> weight, bias;  // weight [out, in*9]

    void init(int in_c, int out_c, const std::string& name, Rng& rng) {
        in_c_ = in_c;
        out_c_ = out_c;
        weight.name = name + ".weight";
        bias.name = name + ".bias";
        weight.init_shape({out_c, in_c * 9});
        bias.init_shape({out_c});
        kaiming_uniform(weight.w, in_c * 9, rng);
    }

    void params(ParamRefs<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    void forward(const Tensor<T>& x, Tensor<T>& y) {
        check_shape(x.shape.size() == 4 && x.dim(1) == in_c_, "conv",
                    "[N," + std::to_string(in_c_) + ",H,W]", x.shape_str());
        x_ = x;
        int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        y.resize({n, out_c_, h, w});
        const int nt = std::max(1, std::min(threads(), n));
        ensure_col_buffers(nt, h * w);
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int i = 0; i < n; ++i) {
            Tensor<T>& col = col_buf_[static_cast<size_t>(omp_get_thread_num())];
            im2col(x, i, col);
            T* yi = y.data() + static_cast<size_t>(i) * out_c_ * h * w;
            gemm_nn(weight.w.data(), col.data(), yi, out_c_, in_c_ * 9, h * w);
            for (int c = 0; c < out_c_; ++c) {
                T b = bias.w.v[static_cast<size_t>(c)];
                for (int p = 0; p < h * w; ++p) yi[static_cast<size_t>(c) * h * w + p] += b;
            }
        }
    }

    void backward(const Tensor<T>& gy, Tensor<T>& gx) {
        int n = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
        gx.resize({n, in_c_, h, w});
        const int nt = std::max(1, std::min(threads(), n));
        ensure_col_buffers(nt, h * w);
        std::vector<Tensor<T>> gw_local(static_cast<size_t>(nt)), gb_local(static_cast<size_t>(nt)),
            gcol_local(static_cast<size_t>(nt));
        for (int t = 0; t < nt; ++t) {
            gw_local[static_cast<size_t>(t)].resize({out_c_, in_c_ * 9});
            gb_local[static_cast<size_t>(t)].resize({out_c_});
            gcol_local[static_cast<size_t>(t)].resize({in_c_ * 9, h * w});
        }
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int i = 0; i < n; ++i) {
            int t = omp_get_thread_num();
            Tensor<T>& col = col_buf_[static_cast<size_t>(t)];
            Tensor<T>& gcol = gcol_local[static_cast<size_t>(t)];
            im2col(x_, i, col);
            const T* gyi = gy.data() + static_cast<size_t>(i) * out_c_ * h * w;
            gemm_nt(gyi, col.data(), gw_local[static_cast<size_t>(t)].data(), out_c_, h * w, in_c_ * 9,
                    true);
            for (int c = 0; c < out_c_; ++c) {
                T s = 0;
                for (int p = 0; p < h * w; ++p) s += gyi[static_cast<size_t>(c) * h * w + p];
                gb_local[static_cast<size_t>(t)].v[static_cast<size_t>(c)] += s;
            }
            gemm_tn(weight.w.data(), gyi, gcol.data(), in_c_ * 9, out_c_, h * w);
            col2im(gcol, i, gx);
        }
        for (int t = 0; t < nt; ++t) {
            for (size_t j = 0; j < weight.g.numel(); ++j) weight.g.v[j] += gw_local[static_cast<size_t>(t)].v[j];
            for (size_t j = 0; j < bias.g.numel(); ++j) bias.g.v[j] += gb_local[static_cast<size_t>(t)].v[j];
        }
    }

  private:
    int in_c_ = 0, out_c_ = 0;
    Tensor<T> x_;
    std::vector<Tensor<T>> col_buf_;

    void ensure_col_buffers(int nt, int hw) {
        col_buf_.resize(static_cast<size_t>(nt));
        for (auto& b : col_buf_)
            if (b.shape.empty() || b.dim(1) != hw) b.resize({in_c_ * 9, hw});
    }

    void im2col(const Tensor<T>& x, int sample, Tensor<T>& col) const {
        int h = x.dim(2), w = x.dim(3);
        const T* xp = x.data() + static_cast<size_t>(sample) * in_c_ * h * w;
        T* cp = col.data();
        for (int c = 0; c < in_c_; ++c) {
            const T* plane = xp + static_cast<size_t>(c) * h * w;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    for (int r = 0; r < h; ++r) {
                        int rr = r + dr;
                        if (rr < 0 || rr >= h) {
                            std::fill(cp, cp + w, T(0));
                            cp += w;
                            continue;
                        }
                        const T* src = plane + static_cast<size_t>(rr) * w;
                        for (int cw = 0; cw < w; ++cw) {
                            int cc = cw + dc;
                            *cp++ = (cc < 0 || cc >= w) ? T(0) : src[cc];
                        }
                    }
                }
            }
        }
    }

    void col2im(const Tensor<T>& gcol, int sample, Tensor<T>& gx) const {
        int h = gx.dim(2), w = gx.dim(3);
        T* xp = gx.data() + static_cast<size_t>(sample) * in_c_ * h * w;
        const T* cp = gcol.data();
        std::fill(xp, xp + static_cast<size_t>(in_c_) * h * w, T(0));
        for (int c = 0; c < in_c_; ++c) {
            T* plane = xp + static_cast<size_t>(c) * h * w;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    for (int r = 0; r < h; ++r) {
                        int rr = r + dr;
                        if (rr < 0 || rr >= h) {
                            cp += w;
                            continue;
                        }
                        T* dst = plane + static_cast<size_t>(rr) * w;
                        for (int cw = 0; cw < w; ++cw) {
                            int cc = cw + dc;
                            if (cc >= 0 && cc < w) dst[cc] += cp[cw];
                        }
                        cp += w;
                    }
                }
            }
        }
    }
};

// ---------------------------------------------------------------- pooling

template <typename T>
class MaxPool2 {
  public:
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        check_shape(h % 2 == 0 && w % 2 == 0, "maxpool", "even H,W", x.shape_str());
        in_shape_ = x.shape;
        int oh = h / 2, ow = w / 2;
        y.resize({n, c, oh, ow});
        arg_.assign(y.numel(), 0);
        const int planes = n * c;
        const int nt = std::max(1, std::min(threads(), planes));
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int pc = 0; pc < planes; ++pc) {
            const T* xp = x.data() + static_cast<size_t>(pc) * h * w;
            T* yp = y.data() + static_cast<size_t>(pc) * oh * ow;
            uint32_t* ap = arg_.data() + static_cast<size_t>(pc) * oh * ow;
            for (int r = 0; r < oh; ++r) {
                for (int cw = 0; cw < ow; ++cw) {
                    int base = (2 * r) * w + 2 * cw;
                    int idx[4] = {base, base + 1, base + w, base + w + 1};
                    int best = idx[0];
                    for (int j = 1; j < 4; ++j)
                        if (xp[idx[j]] > xp[best]) best = idx[j];
                    yp[r * ow + cw] = xp[best];
                    ap[r * ow + cw] = static_cast<uint32_t>(best);
                }
            }
        }
    }

    void backward(const Tensor<T>& gy, Tensor<T>& gx) {
        gx.resize(in_shape_);
        int h = in_shape_[2], w = in_shape_[3];
        int oh = h / 2, ow = w / 2;
        int planes = in_shape_[0] * in_shape_[1];
        for (int pc = 0; pc < planes; ++pc) {
            const T* gyp = gy.data() + static_cast<size_t>(pc) * oh * ow;
            const uint32_t* ap = arg_.data() + static_cast<size_t>(pc) * oh * ow;
            T* gxp = gx.data() + static_cast<size_t>(pc) * h * w;
            for (int p = 0; p < oh * ow; ++p) gxp[ap[p]] += gyp[p];
        }
    }

  private:
    std::vector<int> in_shape_;
    std::vector<uint32_t> arg_;
};

// ---------------------------------------------------------------- pointwise

template <typename T>
class ReLU {
  public:
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        y.resize(x.shape);
        mask_.assign(x.numel(), 0);
        for (size_t i = 0; i < x.numel(); ++i) {
            bool pos = x.v[i] > T(0);
            mask_[i] = pos;
            y.v[i] = pos ? x.v[i] : T(0);
        }
    }
    void backward(const Tensor<T>& gy, Tensor<T>& gx) {
        gx.resize(gy.shape);
        for (size_t i = 0; i < gy.numel(); ++i) gx.v[i] = mask_[i] ? gy.v[i] : T(0);
    }

  private:
    std::vector<uint8_t> mask_;
};

template <typename T>
class Sigmoid {
  public:
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        y.resize(x.shape);
        for (size_t i = 0; i < x.numel(); ++i) y.v[i] = T(1) / (T(1) + std::exp(-x.v[i]));
        y_ = y;
    }
    void backward(const Tensor<T>& gy, Tensor<T>& gx) {
        gx.resize(gy.shape);
        for (size_t i = 0; i < gy.numel(); ++i) gx.v[i] = gy.v[i] * y_.v[i] * (T(1) - y_.v[i]);
    }

  private:
    Tensor<T> y_;
};

// ---------------------------------------------------------------- layer norm

template <typename T>
class LayerNorm {
  public:
    Param<T> gamma, beta;

    void init(int d, const std::string& name) {
        d_ = d;
        gamma.name = name + ".gamma";
        beta.name = name + ".beta";
        gamma.init_shape({d});
        beta.init_shape({d});
        std::fill(gamma.w.v.begin(), gamma.w.v.end(), T(1));
    }

    void params(ParamRefs<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    // x [R,d]
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        int r = x.dim(0);
        y.resize({r, d_});
        xhat_.resize({r, d_});
        rstd_.assign(static_cast<size_t>(r), T(0));
        for (int i = 0; i < r; ++i) {
            const T* xp = x.data() + static_cast<size_t>(i) * d_;
            T mu = 0;
            for (int j = 0; j < d_; ++j) mu += xp[j];
            mu /= d_;
            T var = 0;
            for (int j = 0; j < d_; ++j) var += (xp[j] - mu) * (xp[j] - mu);
            var /= d_;
            T rstd = T(1) / std::sqrt(var + T(1e-5));
            rstd_[static_cast<size_t>(i)] = rstd;
            T* xh = xhat_.data() + static_cast<size_t>(i) * d_;
            T* yp = y.data() + static_cast<size_t>(i) * d_;
            for (int j = 0; j < d_; ++j) {
                xh[j] = (xp[j] - mu) * rstd;
                yp[j] = xh[j] * gamma.w.v[static_cast<size_t>(j)] + beta.w.v[static_cast<size_t>(j)];
            }
        }
    }

    void backward(const Tensor<T>& gy, Tensor<T>& gx) {
        int r = gy.dim(0);
        gx.resize({r, d_});
        for (int i = 0; i < r; ++i) {
            const T* gyp = gy.data() + static_cast<size_t>(i) * d_;
            const T* xh = xhat_.data() + static_cast<size_t>(i) * d_;
            T sum_g = 0, sum_gx = 0;
            for (int j = 0; j < d_; ++j) {
                T gh = gyp[j] * gamma.w.v[static_cast<size_t>(j)];
                sum_g += gh;
                sum_gx += gh * xh[j];
                gamma.g.v[static_cast<size_t>(j)] += gyp[j] * xh[j];
                beta.g.v[static_cast<size_t>(j)] += gyp[j];
            }
            T* gxp = gx.data() + static_cast<size_t>(i) * d_;
            T rstd = rstd_[static_cast<size_t>(i)];
            for (int j = 0; j < d_; ++j) {
                T gh = gyp[j] * gamma.w.v[static_cast<size_t>(j)];
                gxp[j] = rstd * (gh - sum_g / d_ - xh[j] * sum_gx / d_);
            }
        }
    }

  private:
    int d_ = 0;
    Tensor<T> xhat_;
    std::vector<T> rstd_;
};

// ---------------------------------------------------------------- attention

// Multi-head causal self-attention over rows [N*S, d].
template <typename T>
class CausalSelfAttention {
  public:
    Param<T> w_qkv, b_qkv, w_out, b_out;  // w_qkv [3d,d], w_out [d,d]

    void init(int d, int heads, const std::string& name, Rng& rng) {
        d_ = d;
        heads_ = heads;
        hd_ = d / heads;
        check_shape(d % heads == 0, "attention", "d_model divisible by heads", std::to_string(d));
        w_qkv.name = name + ".w_qkv";
        b_qkv.name = name + ".b_qkv";
        w_out.name = name + ".w_out";
        b_out.name = name + ".b_out";
        w_qkv.init_shape({3 * d, d});
        b_qkv.init_shape({3 * d});
        w_out.init_shape({d, d});
        b_out.init_shape({d});
        kaiming_uniform(w_qkv.w, d, rng);
        kaiming_uniform(w_out.w, d, rng);
    }

    void params(ParamRefs<T>& out) {
        out.push_back(&w_qkv);
        out.push_back(&b_qkv);
        out.push_back(&w_out);
        out.push_back(&b_out);
    }

    void forward(const Tensor<T>& x, int n, int s, Tensor<T>& y) {
        n_ = n;
        s_ = s;
        x_ = x;
        int rows = n * s;
        qkv_.resize({rows, 3 * d_});
        gemm_nt(x.data(), w_qkv.w.data(), qkv_.data(), rows, d_, 3 * d_);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < 3 * d_; ++j)
                qkv_.v[static_cast<size_t>(i) * 3 * d_ + j] += b_qkv.w.v[static_cast<size_t>(j)];

        probs_.resize({n, heads_, s, s});
        ctx_.resize({rows, d_});
        const T scale = T(1) / std::sqrt(static_cast<T>(hd_));
        const int jobs = n * heads_;
        const int nt = std::max(1, std::min(threads(), jobs));
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int job = 0; job < jobs; ++job) {
            int b = job / heads_, h = job % heads_;
            attend_one(b, h, scale);
        }
        y.resize({rows, d_});
        gemm_nt(ctx_.data(), w_out.w.data(), y.data(), rows, d_, d_);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < d_; ++j) y.v[static_cast<size_t>(i) * d_ + j] += b_out.w.v[static_cast<size_t>(j)];
    }

    void backward(const Tensor<T>& gy, Tensor<T>& gx) {
        int rows = n_ * s_;
        // through output projection
        Tensor<T> gctx({rows, d_});
        gemm_nn(gy.data(), w_out.w.data(), gctx.data(), rows, d_, d_);
        gemm_tn(gy.data(), ctx_.data(), w_out.g.data(), d_, rows, d_, true);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < d_; ++j) b_out.g.v[static_cast<size_t>(j)] += gy.v[static_cast<size_t>(i) * d_ + j];

        gqkv_.resize({rows, 3 * d_});
        gqkv_.zero();
        const T scale = T(1) / std::sqrt(static_cast<T>(hd_));
        const int jobs = n_ * heads_;
        const int nt = std::max(1, std::min(threads(), jobs));
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int job = 0; job < jobs; ++job) {
            int b = job / heads_, h = job % heads_;
            attend_one_backward(b, h, scale, gctx);
        }

        gx.resize({rows, d_});
        gemm_nn(gqkv_.data(), w_qkv.w.data(), gx.data(), rows, 3 * d_, d_);
        gemm_tn(gqkv_.data(), x_.data(), w_qkv.g.data(), 3 * d_, rows, d_, true);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < 3 * d_; ++j)
                b_qkv.g.v[static_cast<size_t>(j)] += gqkv_.v[static_cast<size_t>(i) * 3 * d_ + j];
    }

  private:
    int d_ = 0, heads_ = 0, hd_ = 0, n_ = 0, s_ = 0;
    Tensor<T> x_, qkv_, probs_, ctx_, gqkv_;

    T* qkv_at(Tensor<T>& t, int b, int pos, int part, int h) {
        return t.data() + (static_cast<size_t>(b) * s_ + pos) * 3 * d_ + part * d_ + h * hd_;
    }

    void attend_one(int b, int h, T scale) {
        // scores row by row; causal mask keeps j <= i
        T* pr = probs_.data() + ((static_cast<size_t>(b) * heads_ + h) * s_) * s_;
        for (int i = 0; i < s_; ++i) {
            const T* q = qkv_at(qkv_, b, i, 0, h);
            T* row = pr + static_cast<size_t>(i) * s_;
            T mx = -1e30;
            for (int j = 0; j <= i; ++j) {
                const T* k = qkv_at(qkv_, b, j, 1, h);
                T dot = 0;
                for (int e = 0; e < hd_; ++e) dot += q[e] * k[e];
                row[j] = dot * scale;
                if (row[j] > mx) mx = row[j];
            }
            T z = 0;
            for (int j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            for (int j = 0; j <= i; ++j) row[j] /= z;
            for (int j = i + 1; j < s_; ++j) row[j] = 0;

            T* out = ctx_.data() + (static_cast<size_t>(b) * s_ + i) * d_ + h * hd_;
            std::fill(out, out + hd_, T(0));
            for (int j = 0; j <= i; ++j) {
                const T* v = qkv_at(qkv_, b, j, 2, h);
                T p = row[j];
                for (int e = 0; e < hd_; ++e) out[e] += p * v[e];
            }
        }
    }

    void attend_one_backward(int b, int h, T scale, const Tensor<T>& gctx) {
        const T* pr = probs_.data() + ((static_cast<size_t>(b) * heads_ + h) * s_) * s_;
        std::vector<T> gs(static_cast<size_t>(s_));
        for (int i = 0; i < s_; ++i) {
            const T* go = gctx.data() + (static_cast<size_t>(b) * s_ + i) * d_ + h * hd_;
            const T* row = pr + static_cast<size_t>(i) * s_;

            // dL/dprobs then softmax jacobian
            T dot_sum = 0;
            for (int j = 0; j <= i; ++j) {
                const T* v = qkv_at(qkv_, b, j, 2, h);
                T gp = 0;
                for (int e = 0; e < hd_; ++e) gp += go[e] * v[e];
                gs[static_cast<size_t>(j)] = gp;
                dot_sum += gp * row[j];
            }
            for (int j = 0; j <= i; ++j)
                gs[static_cast<size_t>(j)] = row[j] * (gs[static_cast<size_t>(j)] - dot_sum);

            const T* q = qkv_at(qkv_, b, i, 0, h);
            T* gq = qkv_at(gqkv_, b, i, 0, h);
            for (int j = 0; j <= i; ++j) {
                const T* k = qkv_at(qkv_, b, j, 1, h);
                const T* v = qkv_at(qkv_, b, j, 2, h);
                T* gk = qkv_at(gqkv_, b, j, 1, h);
                T* gv = qkv_at(gqkv_, b, j, 2, h);
                T w = gs[static_cast<size_t>(j)] * scale;
                T p = row[j];
                for (int e = 0; e < hd_; ++e) {
                    gq[e] += w * k[e];
                    gk[e] += w * q[e];
                    gv[e] += p * go[e];
                }
            }
        }
    }
};

// ---------------------------------------------------------------- adam

template <typename T>
class Adam {
  public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(const ParamRefs<T>& params) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->w.shape);
                v_.emplace_back(p->w.shape);
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(b1_, t_);
        double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            auto& w = params[i]->w.v;
            auto& g = params[i]->g.v;
            auto& m = m_[i].v;
            auto& v = v_[i].v;
            for (size_t j = 0; j < w.size(); ++j) {
                m[j] = static_cast<T>(b1_ * m[j] + (1.0 - b1_) * g[j]);
                v[j] = static_cast<T>(b2_ * v[j] + (1.0 - b2_) * g[j] * g[j]);
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                w[j] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void set_lr(double lr) { lr_ = lr; }

  private:
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

template <typename T>
inline void zero_grads(const ParamRefs<T>& params) {
    for (auto* p : params) p->g.zero();
}

// ------------------------------------------------- softmax cross-entropy

// Loss over selected rows of logits [R,V]; weight 0 drops a row. Returns
// sum(w*ce)/sum(w) and writes d(loss)/d(logits).
template <typename T>
class SoftmaxCrossEntropy {
  public:
    T forward(const Tensor<T>& logits, const std::vector<int>& targets, const std::vector<T>& row_weight) {
        int r = logits.dim(0), v = logits.dim(1);
        probs_.resize({r, v});
        T total = 0, wsum = 0;
        for (int i = 0; i < r; ++i) {
            const T* lp = logits.data() + static_cast<size_t>(i) * v;
            T* pp = probs_.data() + static_cast<size_t>(i) * v;
            T mx = lp[0];
            for (int j = 1; j < v; ++j) mx = std::max(mx, lp[j]);
            T z = 0;
            for (int j = 0; j < v; ++j) {
                pp[j] = std::exp(lp[j] - mx);
                z += pp[j];
            }
            for (int j = 0; j < v; ++j) pp[j] /= z;
            T w = row_weight[static_cast<size_t>(i)];
            if (w > 0) {
                total -= w * std::log(std::max(pp[targets[static_cast<size_t>(i)]], T(1e-30)));
                wsum += w;
            }
        }
        wsum_ = std::max(wsum, T(1e-30));
        targets_ = targets;
        weights_ = row_weight;
        return total / wsum_;
    }

    void backward(Tensor<T>& glogits) {
        int r = probs_.dim(0), v = probs_.dim(1);
        glogits.resize({r, v});
        for (int i = 0; i < r; ++i) {
            T w = weights_[static_cast<size_t>(i)];
            T* gp = glogits.data() + static_cast<size_t>(i) * v;
            if (w <= 0) {
                std::fill(gp, gp + v, T(0));
                continue;
            }
            const T* pp = probs_.data() + static_cast<size_t>(i) * v;
            T f = w / wsum_;
            for (int j = 0; j < v; ++j) gp[j] = f * pp[j];
            gp[targets_[static_cast<size_t>(i)]] -= f;
        }
    }

    const Tensor<T>& probs() const { return probs_; }

  private:
    Tensor<T> probs_;
    std::vector<int> targets_;
    std::vector<T> weights_;
    T wsum_ = 1;
};

}  // namespace pipebench
