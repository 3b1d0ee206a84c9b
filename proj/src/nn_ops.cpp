#include "iris3d/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "iris3d/error.hpp"
#include "iris3d/runtime.hpp"

namespace iris3d::nn {

namespace {

constexpr std::int64_t kParallelThreshold = 1 << 14;

struct Node {
    TensorImplPtr out;
    bool record;  // graph edges + backward closure wanted
    TensorImpl* self() const { return out.get(); }
};

Node new_node(Shape shape, const char* op, const std::vector<const Tensor*>& inputs) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<std::size_t>(shape_numel(impl->shape)), 0.0f);
    impl->op = op;
    bool needs_grad = false;
    for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
    const bool record = grad_enabled() && needs_grad;
    impl->requires_grad = record;
    if (record) {
        for (const Tensor* t : inputs) impl->parents.push_back(t->impl());
    }
    return {std::move(impl), record};
}

void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) +
                             ", got shape " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

// inclusive output index range [o0, o1] for which o*stride + k - pad lands
// inside [0, extent)
inline void tap_range(int extent, int out_extent, int stride, int pad, int k, int& o0, int& o1) {
    const int lo = pad - k;
    o0 = lo > 0 ? (lo + stride - 1) / stride : 0;
    const int hi = extent - 1 + pad - k;
    o1 = hi >= 0 ? std::min(out_extent - 1, hi / stride) : -1;
}

}  // namespace

int conv_output_extent(int in, int kernel, int stride, Padding padding) {
    if (padding == Padding::Same) return (in + stride - 1) / stride;
    return (in - kernel) / stride + 1;
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, Dim3 stride, Padding padding) {
    apply_thread_cap();
    require_rank(input, 5, "conv3d input");
    require_rank(kernel, 5, "conv3d kernel");
    if (stride.d < 1 || stride.h < 1 || stride.w < 1) {
        throw DimensionError("conv3d: stride components must be >= 1");
    }
    const int N = input.dim(0), C = input.dim(1), D = input.dim(2), H = input.dim(3),
              W = input.dim(4);
    const int F = kernel.dim(0), Ck = kernel.dim(1), kd = kernel.dim(2), kh = kernel.dim(3),
              kw = kernel.dim(4);
    if (Ck != C) {
        throw DimensionError("conv3d: channel axis 1 mismatch, input C=" + std::to_string(C) +
                             " vs kernel C=" + std::to_string(Ck));
    }
    if (padding == Padding::Valid) {
        const int ext[3] = {D, H, W}, ker[3] = {kd, kh, kw};
        const char* axis_name[3] = {"depth axis 2", "height axis 3", "width axis 4"};
        for (int i = 0; i < 3; ++i) {
            if (ker[i] > ext[i]) {
                throw DimensionError(std::string("conv3d: kernel exceeds input on ") +
                                     axis_name[i] + " (" + std::to_string(ker[i]) + " > " +
                                     std::to_string(ext[i]) + ")");
            }
        }
    }
    const int Do = conv_output_extent(D, kd, stride.d, padding);
    const int Ho = conv_output_extent(H, kh, stride.h, padding);
    const int Wo = conv_output_extent(W, kw, stride.w, padding);
    int pd = 0, ph = 0, pw = 0;
    if (padding == Padding::Same) {
        pd = std::max(0, (Do - 1) * stride.d + kd - D) / 2;
        ph = std::max(0, (Ho - 1) * stride.h + kh - H) / 2;
        pw = std::max(0, (Wo - 1) * stride.w + kw - W) / 2;
    }

    Node node = new_node({N, F, Do, Ho, Wo}, "conv3d", {&input, &kernel});
    const float* x = input.data();
    float* y = node.out->data.data();
    const int sd = stride.d, sh = stride.h, sw = stride.w;
    const std::int64_t out_spatial = static_cast<std::int64_t>(Do) * Ho * Wo;
    const std::int64_t in_spatial = static_cast<std::int64_t>(D) * H * W;
    const std::int64_t taps = static_cast<std::int64_t>(C) * kd * kh * kw;

    // kernel repacked channels-last so the innermost loops run a unit-stride
    // vector over the output (or input) channel axis
    std::vector<float> kpack_f(static_cast<std::size_t>(taps) * F);
    {
        const float* k = kernel.data();
        for (int f = 0; f < F; ++f) {
            for (std::int64_t t = 0; t < taps; ++t) {
                kpack_f[static_cast<std::size_t>(t) * F + f] = k[f * taps + t];
            }
        }
    }

#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(N) * F * out_spatial > kParallelThreshold)
    for (int nod = 0; nod < N * Do; ++nod) {
        const int n = nod / Do, od = nod % Do;
        std::vector<float> tile(static_cast<std::size_t>(Wo) * F);
        int zk0, zk1;
        {
            const int lo = pd - od * sd;
            zk0 = std::max(0, lo);
            zk1 = std::min(kd - 1, D - 1 + pd - od * sd);
        }
        for (int oh = 0; oh < Ho; ++oh) {
            std::fill(tile.begin(), tile.end(), 0.0f);
            const int yk0 = std::max(0, ph - oh * sh);
            const int yk1 = std::min(kh - 1, H - 1 + ph - oh * sh);
            for (int c = 0; c < C; ++c) {
                const float* xc = x + (static_cast<std::int64_t>(n) * C + c) * in_spatial;
                for (int zk = zk0; zk <= zk1; ++zk) {
                    const int id = od * sd + zk - pd;
                    for (int yk = yk0; yk <= yk1; ++yk) {
                        const int ih = oh * sh + yk - ph;
                        const float* xrow = xc + (static_cast<std::int64_t>(id) * H + ih) * W;
                        const std::int64_t tap_base =
                            ((static_cast<std::int64_t>(c) * kd + zk) * kh + yk) * kw;
                        for (int xk = 0; xk < kw; ++xk) {
                            int ow0, ow1;
                            tap_range(W, Wo, sw, pw, xk, ow0, ow1);
                            if (ow1 < ow0) continue;
                            const float* kv = kpack_f.data() + (tap_base + xk) * F;
                            const int off = xk - pw;
                            for (int ow = ow0; ow <= ow1; ++ow) {
                                const float xv = xrow[ow * sw + off];
                                float* trow = tile.data() + static_cast<std::int64_t>(ow) * F;
                                for (int f = 0; f < F; ++f) trow[f] += xv * kv[f];
                            }
                        }
                    }
                }
            }
            for (int f = 0; f < F; ++f) {
                float* yr = y + ((static_cast<std::int64_t>(n) * F + f) * Do + od) * Ho * Wo +
                            static_cast<std::int64_t>(oh) * Wo;
                for (int ow = 0; ow < Wo; ++ow) yr[ow] = tile[static_cast<std::size_t>(ow) * F + f];
            }
        }
    }

    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr xi = input.impl(), ki = kernel.impl();
        node.out->backward_fn = [self, xi, ki, N, C, D, H, W, F, kd, kh, kw, sd, sh, sw, pd, ph,
                                 pw, Do, Ho, Wo, out_spatial, in_spatial, taps] {
            const float* g = self->grad.data();
            if (xi->requires_grad) {
                float* gx = xi->ensure_grad().data();
                // repack: K2[((f*kd+zk)*kh+yk)*kw+xk][c]
                std::vector<float> kpack_c(static_cast<std::size_t>(F) * kd * kh * kw * C);
                {
                    const float* k = ki->data.data();
                    const std::int64_t per_f = static_cast<std::int64_t>(kd) * kh * kw;
                    for (int f = 0; f < F; ++f) {
                        for (int c = 0; c < C; ++c) {
                            for (std::int64_t t = 0; t < per_f; ++t) {
                                kpack_c[static_cast<std::size_t>((f * per_f + t)) * C + c] =
                                    k[(static_cast<std::int64_t>(f) * C + c) * per_f + t];
                            }
                        }
                    }
                }
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(N) * C * in_spatial > kParallelThreshold)
                for (int nid = 0; nid < N * D; ++nid) {
                    const int n = nid / D, id = nid % D;
                    std::vector<float> tile(static_cast<std::size_t>(W) * C);
                    for (int ih = 0; ih < H; ++ih) {
                        std::fill(tile.begin(), tile.end(), 0.0f);
                        bool touched = false;
                        for (int f = 0; f < F; ++f) {
                            const float* gb =
                                g + (static_cast<std::int64_t>(n) * F + f) * out_spatial;
                            for (int zk = 0; zk < kd; ++zk) {
                                const int od_num = id + pd - zk;
                                if (od_num < 0 || od_num % sd != 0) continue;
                                const int od = od_num / sd;
                                if (od >= Do) continue;
                                for (int yk = 0; yk < kh; ++yk) {
                                    const int oh_num = ih + ph - yk;
                                    if (oh_num < 0 || oh_num % sh != 0) continue;
                                    const int oh = oh_num / sh;
                                    if (oh >= Ho) continue;
                                    const float* grow =
                                        gb + (static_cast<std::int64_t>(od) * Ho + oh) * Wo;
                                    const std::int64_t tap_base =
                                        (static_cast<std::int64_t>(f) * kd + zk) * kh * kw +
                                        static_cast<std::int64_t>(yk) * kw;
                                    for (int xk = 0; xk < kw; ++xk) {
                                        int ow0, ow1;
                                        tap_range(W, Wo, sw, pw, xk, ow0, ow1);
                                        if (ow1 < ow0) continue;
                                        touched = true;
                                        const float* kv =
                                            kpack_c.data() + (tap_base + xk) * C;
                                        const int off = xk - pw;
                                        for (int ow = ow0; ow <= ow1; ++ow) {
                                            const float gv = grow[ow];
                                            float* trow =
                                                tile.data() +
                                                static_cast<std::int64_t>(ow * sw + off) * C;
                                            for (int c = 0; c < C; ++c) trow[c] += gv * kv[c];
                                        }
                                    }
                                }
                            }
                        }
                        if (!touched) continue;
                        for (int c = 0; c < C; ++c) {
                            float* gxr = gx +
                                         ((static_cast<std::int64_t>(n) * C + c) * D + id) * H * W +
                                         static_cast<std::int64_t>(ih) * W;
                            for (int iw = 0; iw < W; ++iw) {
                                gxr[iw] += tile[static_cast<std::size_t>(iw) * C + c];
                            }
                        }
                    }
                }
            }
            if (ki->requires_grad) {
                float* gk = ki->ensure_grad().data();
                const float* x = xi->data.data();
                // output gradient transposed channels-last once: gt[n,od,oh,ow][f]
                std::vector<float> gt(static_cast<std::size_t>(N) * out_spatial * F);
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(N) * F * out_spatial > kParallelThreshold)
                for (int nod = 0; nod < N * Do; ++nod) {
                    const int n = nod / Do, od = nod % Do;
                    for (int f = 0; f < F; ++f) {
                        const float* gr = g + ((static_cast<std::int64_t>(n) * F + f) * Do + od) *
                                              Ho * Wo;
                        float* dst = gt.data() +
                                     (static_cast<std::int64_t>(n) * Do + od) * Ho * Wo * F + f;
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(Ho) * Wo; ++i) {
                            dst[i * F] = gr[i];
                        }
                    }
                }
                const std::int64_t ker_per_f = static_cast<std::int64_t>(kd) * kh * kw;
#pragma omp parallel for schedule(dynamic) if (taps * F > 64)
                for (int czk = 0; czk < C * kd; ++czk) {
                    const int c = czk / kd, zk = czk % kd;
                    int od0, od1;
                    tap_range(D, Do, sd, pd, zk, od0, od1);
                    std::vector<float> acc(static_cast<std::size_t>(F));
                    for (int yk = 0; yk < kh; ++yk) {
                        int oh0, oh1;
                        tap_range(H, Ho, sh, ph, yk, oh0, oh1);
                        for (int xk = 0; xk < kw; ++xk) {
                            int ow0, ow1;
                            tap_range(W, Wo, sw, pw, xk, ow0, ow1);
                            if (ow1 < ow0 || oh1 < oh0 || od1 < od0) continue;
                            std::fill(acc.begin(), acc.end(), 0.0f);
                            const int off = xk - pw;
                            for (int n = 0; n < N; ++n) {
                                const float* xc =
                                    x + (static_cast<std::int64_t>(n) * C + c) * in_spatial;
                                for (int od = od0; od <= od1; ++od) {
                                    const int id = od * sd + zk - pd;
                                    for (int oh = oh0; oh <= oh1; ++oh) {
                                        const int ih = oh * sh + yk - ph;
                                        const float* xrow =
                                            xc + (static_cast<std::int64_t>(id) * H + ih) * W;
                                        const float* gtrow =
                                            gt.data() +
                                            ((static_cast<std::int64_t>(n) * Do + od) * Ho + oh) *
                                                Wo * F;
                                        for (int ow = ow0; ow <= ow1; ++ow) {
                                            const float xv = xrow[ow * sw + off];
                                            const float* gv =
                                                gtrow + static_cast<std::int64_t>(ow) * F;
                                            for (int f = 0; f < F; ++f) acc[static_cast<std::size_t>(f)] += xv * gv[f];
                                        }
                                    }
                                }
                            }
                            const std::int64_t tap =
                                (static_cast<std::int64_t>(zk) * kh + yk) * kw + xk;
                            for (int f = 0; f < F; ++f) {
                                gk[(static_cast<std::int64_t>(f) * C + c) * ker_per_f + tap] +=
                                    acc[static_cast<std::size_t>(f)];
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor(node.out);
}

Tensor maxpool3d(const Tensor& input, Dim3 window, Dim3 stride) {
    apply_thread_cap();
    require_rank(input, 5, "maxpool3d input");
    if (stride.d < 1 || stride.h < 1 || stride.w < 1) {
        throw DimensionError("maxpool3d: stride components must be >= 1");
    }
    const int N = input.dim(0), C = input.dim(1), D = input.dim(2), H = input.dim(3),
              W = input.dim(4);
    const int ext[3] = {D, H, W}, win[3] = {window.d, window.h, window.w};
    const char* axis_name[3] = {"depth axis 2", "height axis 3", "width axis 4"};
    for (int i = 0; i < 3; ++i) {
        if (win[i] < 1 || win[i] > ext[i]) {
            throw DimensionError(std::string("maxpool3d: window exceeds input on ") + axis_name[i] +
                                 " (" + std::to_string(win[i]) + " > " + std::to_string(ext[i]) +
                                 ")");
        }
    }
    const int Do = (D - window.d) / stride.d + 1;
    const int Ho = (H - window.h) / stride.h + 1;
    const int Wo = (W - window.w) / stride.w + 1;

    Node node = new_node({N, C, Do, Ho, Wo}, "maxpool3d", {&input});
    const float* x = input.data();
    float* y = node.out->data.data();
    const std::int64_t out_spatial = static_cast<std::int64_t>(Do) * Ho * Wo;
    const std::int64_t in_spatial = static_cast<std::int64_t>(D) * H * W;
    auto argmax = std::make_shared<std::vector<std::int64_t>>(node.out->data.size());

#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(N) * C * out_spatial > kParallelThreshold)
    for (int nc = 0; nc < N * C; ++nc) {
        const float* xc = x + nc * in_spatial;
        float* yc = y + nc * out_spatial;
        std::int64_t* ac = argmax->data() + nc * out_spatial;
        for (int od = 0; od < Do; ++od) {
            for (int oh = 0; oh < Ho; ++oh) {
                for (int ow = 0; ow < Wo; ++ow) {
                    const int id0 = od * stride.d, ih0 = oh * stride.h, iw0 = ow * stride.w;
                    float best = -std::numeric_limits<float>::infinity();
                    std::int64_t best_idx = 0;
                    for (int zd = 0; zd < window.d; ++zd) {
                        for (int zh = 0; zh < window.h; ++zh) {
                            const std::int64_t base =
                                (static_cast<std::int64_t>(id0 + zd) * H + (ih0 + zh)) * W + iw0;
                            for (int zw = 0; zw < window.w; ++zw) {
                                const float v = xc[base + zw];
                                if (v > best) {  // strict: first (lowest) index wins ties
                                    best = v;
                                    best_idx = base + zw;
                                }
                            }
                        }
                    }
                    const std::int64_t o = (static_cast<std::int64_t>(od) * Ho + oh) * Wo + ow;
                    yc[o] = best;
                    ac[o] = nc * in_spatial + best_idx;
                }
            }
        }
    }

    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr xi = input.impl();
        node.out->backward_fn = [self, xi, argmax] {
            if (!xi->requires_grad) return;
            float* gx = xi->ensure_grad().data();
            const float* g = self->grad.data();
            const auto& am = *argmax;
            for (std::size_t i = 0; i < am.size(); ++i) gx[am[i]] += g[i];
        };
    }
    return Tensor(node.out);
}

void BatchNormState::init(int channels) {
    running_mean.assign(static_cast<std::size_t>(channels), 0.0f);
    running_var.assign(static_cast<std::size_t>(channels), 1.0f);
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, float eps, Mode mode, float momentum) {
    apply_thread_cap();
    if (input.rank() < 2) {
        throw DimensionError("batchnorm input must have rank >= 2, got " +
                             shape_str(input.shape()));
    }
    const int N = input.dim(0), C = input.dim(1);
    if (N < 1 || input.numel() == 0) throw InputError("batchnorm: zero-size batch");
    require_rank(gamma, 1, "batchnorm gamma");
    require_rank(beta, 1, "batchnorm beta");
    if (gamma.dim(0) != C || beta.dim(0) != C) {
        throw DimensionError("batchnorm: gamma/beta length must equal channel extent " +
                             std::to_string(C));
    }
    if (state.running_mean.empty()) state.init(C);
    std::int64_t S = 1;
    for (int a = 2; a < input.rank(); ++a) S *= input.dim(a);
    const std::int64_t M = static_cast<std::int64_t>(N) * S;

    Node node = new_node(input.shape(), "batchnorm", {&input, &gamma, &beta});
    const float* x = input.data();
    const float* gm = gamma.data();
    const float* bt = beta.data();
    float* y = node.out->data.data();

    auto mean = std::make_shared<std::vector<float>>(C);
    auto inv_std = std::make_shared<std::vector<float>>(C);

    if (mode == Mode::Train) {
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(C) * M > kParallelThreshold)
        for (int c = 0; c < C; ++c) {
            double s1 = 0.0, s2 = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* row = x + (static_cast<std::int64_t>(n) * C + c) * S;
                for (std::int64_t i = 0; i < S; ++i) {
                    const double v = row[i];
                    s1 += v;
                    s2 += v * v;
                }
            }
            const double mu = s1 / static_cast<double>(M);
            const double var = std::max(0.0, s2 / static_cast<double>(M) - mu * mu);
            (*mean)[c] = static_cast<float>(mu);
            (*inv_std)[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
            state.running_mean[c] =
                (1.0f - momentum) * state.running_mean[c] + momentum * static_cast<float>(mu);
            state.running_var[c] =
                (1.0f - momentum) * state.running_var[c] + momentum * static_cast<float>(var);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[c] = state.running_mean[c];
            (*inv_std)[c] = 1.0f / std::sqrt(state.running_var[c] + eps);
        }
    }

#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(N) * C * S > kParallelThreshold)
    for (int nc = 0; nc < N * C; ++nc) {
        const int c = nc % C;
        const float mu = (*mean)[c], r = (*inv_std)[c], gmc = gm[c], btc = bt[c];
        const float* row = x + nc * S;
        float* out = y + nc * S;
        for (std::int64_t i = 0; i < S; ++i) out[i] = gmc * (row[i] - mu) * r + btc;
    }

    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr xi = input.impl(), gi = gamma.impl(), bi = beta.impl();
        const bool train = mode == Mode::Train;
        node.out->backward_fn = [self, xi, gi, bi, mean, inv_std, N, C, S, M, train] {
            const float* g = self->grad.data();
            const float* x = xi->data.data();
            const float* gm = gi->data.data();
            const bool need_dx = xi->requires_grad;
            const bool need_dg = gi->requires_grad;
            const bool need_db = bi->requires_grad;
            float* dx = need_dx ? xi->ensure_grad().data() : nullptr;
            float* dg = need_dg ? gi->ensure_grad().data() : nullptr;
            float* db = need_db ? bi->ensure_grad().data() : nullptr;
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(C) * N * S > kParallelThreshold)
            for (int c = 0; c < C; ++c) {
                const float mu = (*mean)[c], r = (*inv_std)[c];
                double s_g = 0.0, s_gx = 0.0;
                for (int n = 0; n < N; ++n) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * S;
                    const float* grow = g + off;
                    const float* xrow = x + off;
                    for (std::int64_t i = 0; i < S; ++i) {
                        s_g += grow[i];
                        s_gx += grow[i] * static_cast<double>((xrow[i] - mu) * r);
                    }
                }
                if (need_dg) dg[c] += static_cast<float>(s_gx);
                if (need_db) db[c] += static_cast<float>(s_g);
                if (need_dx) {
                    const float gmr = gm[c] * r;
                    if (train) {
                        const float mg = static_cast<float>(s_g / static_cast<double>(M));
                        const float mgx = static_cast<float>(s_gx / static_cast<double>(M));
                        for (int n = 0; n < N; ++n) {
                            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * S;
                            const float* grow = g + off;
                            const float* xrow = x + off;
                            float* drow = dx + off;
                            for (std::int64_t i = 0; i < S; ++i) {
                                const float xh = (xrow[i] - mu) * r;
                                drow[i] += gmr * (grow[i] - mg - xh * mgx);
                            }
                        }
                    } else {
                        for (int n = 0; n < N; ++n) {
                            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * S;
                            const float* grow = g + off;
                            float* drow = dx + off;
                            for (std::int64_t i = 0; i < S; ++i) drow[i] += gmr * grow[i];
                        }
                    }
                }
            }
        };
    }
    return Tensor(node.out);
}

Tensor global_avg_pool3d(const Tensor& input) {
    apply_thread_cap();
    require_rank(input, 5, "global_avg_pool3d input");
    const int N = input.dim(0), C = input.dim(1);
    const std::int64_t S =
        static_cast<std::int64_t>(input.dim(2)) * input.dim(3) * input.dim(4);
    Node node = new_node({N, C}, "global_avg_pool3d", {&input});
    const float* x = input.data();
    float* y = node.out->data.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(N) * C * S > kParallelThreshold)
    for (int nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        const float* row = x + nc * S;
        for (std::int64_t i = 0; i < S; ++i) acc += row[i];
        y[nc] = static_cast<float>(acc / static_cast<double>(S));
    }
    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr xi = input.impl();
        node.out->backward_fn = [self, xi, N, C, S] {
            if (!xi->requires_grad) return;
            float* gx = xi->ensure_grad().data();
            const float* g = self->grad.data();
            const float inv = 1.0f / static_cast<float>(S);
            for (int nc = 0; nc < N * C; ++nc) {
                const float gv = g[nc] * inv;
                float* row = gx + nc * S;
                for (std::int64_t i = 0; i < S; ++i) row[i] += gv;
            }
        };
    }
    return Tensor(node.out);
}

Tensor dense(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias) {
    apply_thread_cap();
    require_rank(input, 2, "dense input");
    require_rank(weight, 2, "dense weight");
    const int N = input.dim(0), din = input.dim(1);
    const int dout = weight.dim(0), win = weight.dim(1);
    if (win != din) {
        throw DimensionError("dense: inner extents disagree, input axis 1 is " +
                             std::to_string(din) + " but weight axis 1 is " + std::to_string(win));
    }
    if (bias) {
        require_rank(*bias, 1, "dense bias");
        if (bias->dim(0) != dout) {
            throw DimensionError("dense: bias length " + std::to_string(bias->dim(0)) +
                                 " != output extent " + std::to_string(dout));
        }
    }
    std::vector<const Tensor*> deps = {&input, &weight};
    if (bias) deps.push_back(&*bias);
    Node node = new_node({N, dout}, "dense", deps);
    const float* x = input.data();
    const float* w = weight.data();
    const float* b = bias ? bias->data() : nullptr;
    float* y = node.out->data.data();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(N) * dout * din > kParallelThreshold)
    for (int n = 0; n < N; ++n) {
        const float* xr = x + static_cast<std::int64_t>(n) * din;
        float* yr = y + static_cast<std::int64_t>(n) * dout;
        for (int o = 0; o < dout; ++o) {
            const float* wr = w + static_cast<std::int64_t>(o) * din;
            float acc = b ? b[o] : 0.0f;
            for (int i = 0; i < din; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr xi = input.impl(), wi = weight.impl();
        TensorImplPtr bi = bias ? bias->impl() : nullptr;
        node.out->backward_fn = [self, xi, wi, bi, N, din, dout] {
            const float* g = self->grad.data();
            if (xi->requires_grad) {
                float* dx = xi->ensure_grad().data();
                const float* w = wi->data.data();
                for (int n = 0; n < N; ++n) {
                    const float* gr = g + static_cast<std::int64_t>(n) * dout;
                    float* dxr = dx + static_cast<std::int64_t>(n) * din;
                    for (int o = 0; o < dout; ++o) {
                        const float gv = gr[o];
                        const float* wr = w + static_cast<std::int64_t>(o) * din;
                        for (int i = 0; i < din; ++i) dxr[i] += gv * wr[i];
                    }
                }
            }
            if (wi->requires_grad) {
                float* dw = wi->ensure_grad().data();
                const float* x = xi->data.data();
                for (int n = 0; n < N; ++n) {
                    const float* gr = g + static_cast<std::int64_t>(n) * dout;
                    const float* xr = x + static_cast<std::int64_t>(n) * din;
                    for (int o = 0; o < dout; ++o) {
                        const float gv = gr[o];
                        float* dwr = dw + static_cast<std::int64_t>(o) * din;
                        for (int i = 0; i < din; ++i) dwr[i] += gv * xr[i];
                    }
                }
            }
            if (bi && bi->requires_grad) {
                float* dbv = bi->ensure_grad().data();
                for (int n = 0; n < N; ++n) {
                    const float* gr = g + static_cast<std::int64_t>(n) * dout;
                    for (int o = 0; o < dout; ++o) dbv[o] += gr[o];
                }
            }
        };
    }
    return Tensor(node.out);
}

Tensor relu(const Tensor& input) {
    Node node = new_node(input.shape(), "relu", {&input});
    const float* x = input.data();
    float* y = node.out->data.data();
    const std::int64_t n = input.numel();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
    for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr xi = input.impl();
        node.out->backward_fn = [self, xi, n] {
            if (!xi->requires_grad) return;
            float* dx = xi->ensure_grad().data();
            const float* g = self->grad.data();
            const float* x = xi->data.data();
            for (std::int64_t i = 0; i < n; ++i) {
                if (x[i] > 0.0f) dx[i] += g[i];
            }
        };
    }
    return Tensor(node.out);
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InputError("concat_channels: no inputs");
    const int rank = parts[0].rank();
    if (rank < 2) throw DimensionError("concat_channels: inputs must have rank >= 2");
    int total_c = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank) throw DimensionError("concat_channels: rank mismatch");
        for (int a = 0; a < rank; ++a) {
            if (a == 1) continue;
            if (p.dim(a) != parts[0].dim(a)) {
                throw DimensionError("concat_channels: axis " + std::to_string(a) +
                                     " mismatch, " + std::to_string(p.dim(a)) + " vs " +
                                     std::to_string(parts[0].dim(a)));
            }
        }
        total_c += p.dim(1);
    }
    Shape out_shape = parts[0].shape();
    out_shape[1] = total_c;
    std::vector<const Tensor*> deps;
    deps.reserve(parts.size());
    for (const Tensor& p : parts) deps.push_back(&p);

    auto impl = std::make_shared<TensorImpl>();
    impl->shape = out_shape;
    impl->data.assign(static_cast<std::size_t>(shape_numel(out_shape)), 0.0f);
    impl->op = "concat_channels";
    bool needs = false;
    for (const Tensor& p : parts) needs = needs || p.requires_grad();
    const bool record = grad_enabled() && needs;
    impl->requires_grad = record;
    if (record) {
        for (const Tensor& p : parts) impl->parents.push_back(p.impl());
    }

    const int N = out_shape[0];
    std::int64_t S = 1;
    for (int a = 2; a < rank; ++a) S *= out_shape[a];
    float* y = impl->data.data();
    std::vector<int> offsets;
    {
        int off = 0;
        for (const Tensor& p : parts) {
            offsets.push_back(off);
            off += p.dim(1);
        }
    }
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& p = parts[pi];
        const int Ci = p.dim(1);
        const float* x = p.data();
        for (int n = 0; n < N; ++n) {
            std::memcpy(y + ((static_cast<std::int64_t>(n) * total_c + offsets[pi]) * S),
                        x + (static_cast<std::int64_t>(n) * Ci * S),
                        static_cast<std::size_t>(Ci * S) * sizeof(float));
        }
    }

    if (record) {
        TensorImpl* self = impl.get();
        std::vector<TensorImplPtr> srcs;
        for (const Tensor& p : parts) srcs.push_back(p.impl());
        impl->backward_fn = [self, srcs, offsets, N, total_c, S] {
            const float* g = self->grad.data();
            for (std::size_t pi = 0; pi < srcs.size(); ++pi) {
                if (!srcs[pi]->requires_grad) continue;
                const int Ci = srcs[pi]->shape[1];
                float* dx = srcs[pi]->ensure_grad().data();
                for (int n = 0; n < N; ++n) {
                    const float* gr = g + ((static_cast<std::int64_t>(n) * total_c + offsets[pi]) * S);
                    float* dr = dx + (static_cast<std::int64_t>(n) * Ci * S);
                    for (std::int64_t i = 0; i < Ci * S; ++i) dr[i] += gr[i];
                }
            }
        };
    }
    return Tensor(impl);
}

Tensor l2_normalize(const Tensor& input) {
    const bool vector_input = input.rank() == 1;
    if (input.rank() != 1 && input.rank() != 2) {
        throw DimensionError("l2_normalize expects rank 1 or 2, got " + shape_str(input.shape()));
    }
    const int N = vector_input ? 1 : input.dim(0);
    const int d = vector_input ? input.dim(0) : input.dim(1);
    Node node = new_node(input.shape(), "l2_normalize", {&input});
    const float* x = input.data();
    float* y = node.out->data.data();
    auto inv_norm = std::make_shared<std::vector<float>>(N);
    for (int n = 0; n < N; ++n) {
        const float* row = x + static_cast<std::int64_t>(n) * d;
        double acc = 0.0;
        for (int i = 0; i < d; ++i) acc += static_cast<double>(row[i]) * row[i];
        const double norm = std::sqrt(acc);
        if (norm < 1e-12) {
            throw DegenerateInputError("l2_normalize: row " + std::to_string(n) +
                                       " has norm below 1e-12");
        }
        const float inv = static_cast<float>(1.0 / norm);
        (*inv_norm)[n] = inv;
        float* out = y + static_cast<std::int64_t>(n) * d;
        for (int i = 0; i < d; ++i) out[i] = row[i] * inv;
    }
    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr xi = input.impl();
        node.out->backward_fn = [self, xi, inv_norm, N, d] {
            if (!xi->requires_grad) return;
            float* dx = xi->ensure_grad().data();
            const float* g = self->grad.data();
            const float* y = self->data.data();
            for (int n = 0; n < N; ++n) {
                const float* gr = g + static_cast<std::int64_t>(n) * d;
                const float* yr = y + static_cast<std::int64_t>(n) * d;
                float* dr = dx + static_cast<std::int64_t>(n) * d;
                double dot = 0.0;
                for (int i = 0; i < d; ++i) dot += static_cast<double>(gr[i]) * yr[i];
                const float dotf = static_cast<float>(dot);
                const float inv = (*inv_norm)[n];
                for (int i = 0; i < d; ++i) dr[i] += (gr[i] - yr[i] * dotf) * inv;
            }
        };
    }
    return Tensor(node.out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt lhs");
    require_rank(b, 2, "matmul_nt rhs");
    const int N = a.dim(0), d = a.dim(1), C = b.dim(0);
    if (b.dim(1) != d) {
        throw DimensionError("matmul_nt: inner extents disagree, " + std::to_string(d) + " vs " +
                             std::to_string(b.dim(1)));
    }
    Node node = new_node({N, C}, "matmul_nt", {&a, &b});
    const float* av = a.data();
    const float* bv = b.data();
    float* y = node.out->data.data();
    for (int n = 0; n < N; ++n) {
        const float* ar = av + static_cast<std::int64_t>(n) * d;
        float* yr = y + static_cast<std::int64_t>(n) * C;
        for (int c = 0; c < C; ++c) {
            const float* br = bv + static_cast<std::int64_t>(c) * d;
            float acc = 0.0f;
            for (int i = 0; i < d; ++i) acc += ar[i] * br[i];
            yr[c] = acc;
        }
    }
    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr ai = a.impl(), bi = b.impl();
        node.out->backward_fn = [self, ai, bi, N, d, C] {
            const float* g = self->grad.data();
            if (ai->requires_grad) {
                float* da = ai->ensure_grad().data();
                const float* bvv = bi->data.data();
                for (int n = 0; n < N; ++n) {
                    const float* gr = g + static_cast<std::int64_t>(n) * C;
                    float* dr = da + static_cast<std::int64_t>(n) * d;
                    for (int c = 0; c < C; ++c) {
                        const float gv = gr[c];
                        const float* br = bvv + static_cast<std::int64_t>(c) * d;
                        for (int i = 0; i < d; ++i) dr[i] += gv * br[i];
                    }
                }
            }
            if (bi->requires_grad) {
                float* db = bi->ensure_grad().data();
                const float* avv = ai->data.data();
                for (int n = 0; n < N; ++n) {
                    const float* gr = g + static_cast<std::int64_t>(n) * C;
                    const float* ar = avv + static_cast<std::int64_t>(n) * d;
                    for (int c = 0; c < C; ++c) {
                        const float gv = gr[c];
                        float* dr = db + static_cast<std::int64_t>(c) * d;
                        for (int i = 0; i < d; ++i) dr[i] += gv * ar[i];
                    }
                }
            }
        };
    }
    return Tensor(node.out);
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, op);
    Node node = new_node(a.shape(), op, {&a, &b});
    const float* av = a.data();
    const float* bv = b.data();
    float* y = node.out->data.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) y[i] = fwd(av[i], bv[i]);
    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr ai = a.impl(), bi = b.impl();
        node.out->backward_fn = [self, ai, bi, n, bwd] {
            const float* g = self->grad.data();
            const float* av = ai->data.data();
            const float* bv = bi->data.data();
            float* da = ai->requires_grad ? ai->ensure_grad().data() : nullptr;
            float* db = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
            for (std::int64_t i = 0; i < n; ++i) bwd(g[i], av[i], bv[i], da ? da + i : nullptr,
                                                    db ? db + i : nullptr);
        };
    }
    return Tensor(node.out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "add", [](float x, float y) { return x + y; },
        [](float g, float, float, float* da, float* db) {
            if (da) *da += g;
            if (db) *db += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "sub", [](float x, float y) { return x - y; },
        [](float g, float, float, float* da, float* db) {
            if (da) *da += g;
            if (db) *db -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "mul", [](float x, float y) { return x * y; },
        [](float g, float x, float y, float* da, float* db) {
            if (da) *da += g * y;
            if (db) *db += g * x;
        });
}

Tensor scale(const Tensor& a, float c) {
    Node node = new_node(a.shape(), "scale", {&a});
    const float* av = a.data();
    float* y = node.out->data.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) y[i] = av[i] * c;
    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr ai = a.impl();
        node.out->backward_fn = [self, ai, n, c] {
            if (!ai->requires_grad) return;
            float* da = ai->ensure_grad().data();
            const float* g = self->grad.data();
            for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * c;
        };
    }
    return Tensor(node.out);
}

Tensor sum(const Tensor& a) {
    Node node = new_node({1}, "sum", {&a});
    const float* av = a.data();
    double acc = 0.0;
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += av[i];
    node.out->data[0] = static_cast<float>(acc);
    if (node.record) {
        TensorImpl* self = node.self();
        TensorImplPtr ai = a.impl();
        node.out->backward_fn = [self, ai, n] {
            if (!ai->requires_grad) return;
            float* da = ai->ensure_grad().data();
            const float g = self->grad[0];
            for (std::int64_t i = 0; i < n; ++i) da[i] += g;
        };
    }
    return Tensor(node.out);
}

}  // namespace iris3d::nn
