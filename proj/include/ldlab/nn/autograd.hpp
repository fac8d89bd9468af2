#pragma once

// Minimal tape-based reverse-mode autodiff over Tensor<S>, sized for the
// small convolutional nets in this project. Ops build a pointer graph of
// shared nodes; backward() walks it in reverse topological order and then
// drops the closures so activation memory is released per training step.
//
// Templating on the scalar lets the unit tests run the exact same graph code
// in double for finite-difference checks while training runs in float.
//
// All heavy lifting (conv im2col products, linear layers) goes through Eigen
// single-threaded GEMMs, one sample at a time, so batched evaluation is
// bitwise identical to running the samples individually.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ldlab/core/error.hpp"
#include "ldlab/core/tensor.hpp"

namespace ldlab::nn {

using ldlab::Tensor;

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

// RAII guard: disables graph construction inside its scope (inference).
struct NoGrad {
    bool prev;
    NoGrad() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGrad() { grad_mode() = prev; }
};

template <typename S>
struct Node {
    Tensor<S> val;
    Tensor<S> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.v.empty()) {
            grad.dims = val.dims;
            grad.v.assign(val.v.size(), S(0));
        }
    }
};

template <typename S>
struct Var {
    std::shared_ptr<Node<S>> node;

    Var() = default;
    explicit Var(std::shared_ptr<Node<S>> n) : node(std::move(n)) {}

    const Tensor<S>& val() const { return node->val; }
    Tensor<S>& val() { return node->val; }
    Tensor<S>& grad() {
        node->ensure_grad();
        return node->grad;
    }
    bool defined() const { return static_cast<bool>(node); }
};

template <typename S>
Var<S> leaf(Tensor<S> v, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return Var<S>(std::move(n));
}

namespace detail {

template <typename S>
bool tracking(std::initializer_list<const Var<S>*> parents) {
    if (!grad_mode()) return false;
    for (const Var<S>* p : parents)
        if (p->node->requires_grad) return true;
    return false;
}

template <typename S>
Var<S> result(Tensor<S> v, bool track, std::vector<std::shared_ptr<Node<S>>> parents,
              std::function<void(Node<S>&)> bwd) {
    auto n = std::make_shared<Node<S>>();
    n->val = std::move(v);
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(bwd);
    }
    return Var<S>(std::move(n));
}

template <typename S>
void accumulate(Node<S>& dst, const S* src, std::size_t count) {
    dst.ensure_grad();
    S* g = dst.grad.v.data();
    for (std::size_t i = 0; i < count; ++i) g[i] += src[i];
}

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using MapC = Eigen::Map<const MatRM<S>>;

// Gathers conv patches of one sample into a (C*kh*kw) x (Ho*Wo) matrix.
template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, S* cols) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                S* row = cols + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ky) * k + kx) *
                                    static_cast<std::size_t>(Ho) * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = S(0);
                        continue;
                    }
                    const S* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        row[oy * Wo + ox] = (ix < 0 || ix >= W) ? S(0) : src[ix];
                    }
                }
            }
        }
    }
}

// Scatter-adds patch gradients back into one sample's input gradient.
template <typename S>
void col2im(const S* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, S* dx) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const S* row = cols + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ky) * k + kx) *
                                          static_cast<std::size_t>(Ho) * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    S* dst = dx + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// --- ops ----------------------------------------------------------------------

// x: (N,C,H,W), w: (Cout,Cin,k,k), b: (Cout). Square kernel, symmetric pad.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride = 1, int pad = -1) {
    const auto& xd = x.val().dims;
    const auto& wd = w.val().dims;
    require(xd.size() == 4 && wd.size() == 4, Err::ShapeMismatch, "conv2d wants NCHW input and OIKK weight");
    const int N = xd[0], C = xd[1], H = xd[2], W = xd[3];
    const int Cout = wd[0], k = wd[2];
    require(wd[1] == C && wd[3] == k, Err::ShapeMismatch, "conv2d weight shape mismatch");
    require(b.val().dims == std::vector<int>{Cout}, Err::ShapeMismatch, "conv2d bias shape mismatch");
    if (pad < 0) pad = k / 2;
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    require(Ho >= 1 && Wo >= 1, Err::ShapeMismatch, "conv2d output collapsed to zero size");

    const int ckk = C * k * k;
    const int owo = Ho * Wo;
    Tensor<S> out({N, Cout, Ho, Wo});
    std::vector<S> cols(static_cast<std::size_t>(ckk) * owo);
    detail::MapC<S> wm(w.val().data(), Cout, ckk);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.val().data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride, pad, Ho, Wo,
                       cols.data());
        detail::MapC<S> cm(cols.data(), ckk, owo);
        detail::MapM<S> ym(out.data() + static_cast<std::size_t>(n) * Cout * owo, Cout, owo);
        ym.noalias() = wm * cm;
        for (int co = 0; co < Cout; ++co) ym.row(co).array() += b.val().v[static_cast<std::size_t>(co)];
    }

    const bool track = detail::tracking<S>({&x, &w, &b});
    auto xp = x.node, wp = w.node, bp = b.node;
    return detail::result<S>(
        std::move(out), track, {xp, wp, bp},
        [xp, wp, bp, N, C, H, W, Cout, k, stride, pad, Ho, Wo, ckk, owo](Node<S>& self) {
            std::vector<S> cols(static_cast<std::size_t>(ckk) * owo);
            std::vector<S> dcols(static_cast<std::size_t>(ckk) * owo);
            detail::MapC<S> wm(wp->val.data(), Cout, ckk);
            const bool need_dx = xp->requires_grad;
            const bool need_dw = wp->requires_grad;
            const bool need_db = bp->requires_grad;
            if (need_dx) xp->ensure_grad();
            if (need_dw) wp->ensure_grad();
            if (need_db) bp->ensure_grad();
            for (int n = 0; n < N; ++n) {
                detail::MapC<S> gy(self.grad.data() + static_cast<std::size_t>(n) * Cout * owo, Cout, owo);
                if (need_dw || need_dx) {
                    // im2col is recomputed rather than cached: the buffers are
                    // large relative to everything else in these nets
                    detail::im2col(xp->val.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride,
                                   pad, Ho, Wo, cols.data());
                }
                if (need_dw) {
                    detail::MapC<S> cm(cols.data(), ckk, owo);
                    detail::MapM<S> gw(wp->grad.data(), Cout, ckk);
                    gw.noalias() += gy * cm.transpose();
                }
                if (need_db) {
                    for (int co = 0; co < Cout; ++co)
                        bp->grad.v[static_cast<std::size_t>(co)] += gy.row(co).sum();
                }
                if (need_dx) {
                    detail::MapM<S> dc(dcols.data(), ckk, owo);
                    dc.noalias() = wm.transpose() * gy;
                    detail::col2im(dcols.data(), C, H, W, k, stride, pad, Ho, Wo,
                                   xp->grad.data() + static_cast<std::size_t>(n) * C * H * W);
                }
            }
        });
}

// x: (N,In), w: (Out,In), b: (Out) -> (N,Out)
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
    const auto& xd = x.val().dims;
    const auto& wd = w.val().dims;
    require(xd.size() == 2 && wd.size() == 2 && xd[1] == wd[1], Err::ShapeMismatch, "linear shape mismatch");
    const int N = xd[0], In = xd[1], Out = wd[0];
    require(b.val().dims == std::vector<int>{Out}, Err::ShapeMismatch, "linear bias shape mismatch");
    Tensor<S> out({N, Out});
    detail::MapC<S> xm(x.val().data(), N, In);
    detail::MapC<S> wm(w.val().data(), Out, In);
    detail::MapM<S> ym(out.data(), N, Out);
    ym.noalias() = xm * wm.transpose();
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Out; ++o) ym(n, o) += b.val().v[static_cast<std::size_t>(o)];

    const bool track = detail::tracking<S>({&x, &w, &b});
    auto xp = x.node, wp = w.node, bp = b.node;
    return detail::result<S>(std::move(out), track, {xp, wp, bp}, [xp, wp, bp, N, In, Out](Node<S>& self) {
        detail::MapC<S> gy(self.grad.data(), N, Out);
        detail::MapC<S> xm(xp->val.data(), N, In);
        detail::MapC<S> wm(wp->val.data(), Out, In);
        if (xp->requires_grad) {
            xp->ensure_grad();
            detail::MapM<S> gx(xp->grad.data(), N, In);
            gx.noalias() += gy * wm;
        }
        if (wp->requires_grad) {
            wp->ensure_grad();
            detail::MapM<S> gw(wp->grad.data(), Out, In);
            gw.noalias() += gy.transpose() * xm;
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < Out; ++o) bp->grad.v[static_cast<std::size_t>(o)] += gy(n, o);
        }
    });
}

template <typename S>
Var<S> silu(const Var<S>& x) {
    Tensor<S> out = x.val();
    for (auto& v : out.v) {
        const S sg = S(1) / (S(1) + std::exp(-v));
        v = v * sg;
    }
    const bool track = detail::tracking<S>({&x});
    auto xp = x.node;
    return detail::result<S>(std::move(out), track, {xp}, [xp](Node<S>& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
            const S v = xp->val.v[i];
            const S sg = S(1) / (S(1) + std::exp(-v));
            xp->grad.v[i] += self.grad.v[i] * sg * (S(1) + v * (S(1) - sg));
        }
    });
}

// GroupNorm over (N,C,H,W); gamma/beta are per-channel.
template <typename S>
Var<S> group_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, int groups, double eps = 1e-5) {
    const auto& xd = x.val().dims;
    require(xd.size() == 4, Err::ShapeMismatch, "group_norm wants NCHW");
    const int N = xd[0], C = xd[1], H = xd[2], W = xd[3];
    require(groups >= 1 && C % groups == 0, Err::BadConfig, "group count must divide channels");
    require(gamma.val().dims == std::vector<int>{C} && beta.val().dims == std::vector<int>{C}, Err::ShapeMismatch,
            "group_norm affine shape mismatch");
    const int cg = C / groups;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t gsz = static_cast<std::size_t>(cg) * plane;

    Tensor<S> out({N, C, H, W});
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * groups * 2);
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < groups; ++g) {
            const S* src = x.val().data() + (static_cast<std::size_t>(n) * C + static_cast<std::size_t>(g) * cg) * plane;
            double sum = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < gsz; ++i) {
                const double v = static_cast<double>(src[i]);
                sum += v;
                sq += v * v;
            }
            const double mean = sum / static_cast<double>(gsz);
            const double var = std::max(0.0, sq / static_cast<double>(gsz) - mean * mean);
            const double istd = 1.0 / std::sqrt(var + eps);
            (*stats)[(static_cast<std::size_t>(n) * groups + g) * 2] = mean;
            (*stats)[(static_cast<std::size_t>(n) * groups + g) * 2 + 1] = istd;
            S* dst = out.data() + (static_cast<std::size_t>(n) * C + static_cast<std::size_t>(g) * cg) * plane;
            for (int c = 0; c < cg; ++c) {
                const S ga = gamma.val().v[static_cast<std::size_t>(g * cg + c)];
                const S be = beta.val().v[static_cast<std::size_t>(g * cg + c)];
                for (std::size_t i = 0; i < plane; ++i) {
                    const double y = (static_cast<double>(src[c * plane + i]) - mean) * istd;
                    dst[c * plane + i] = static_cast<S>(ga * static_cast<S>(y) + be);
                }
            }
        }
    }

    const bool track = detail::tracking<S>({&x, &gamma, &beta});
    auto xp = x.node, gp = gamma.node, bp = beta.node;
    return detail::result<S>(
        std::move(out), track, {xp, gp, bp}, [xp, gp, bp, stats, N, C, H, W, groups, cg, plane, gsz](Node<S>& self) {
            const bool need_dx = xp->requires_grad;
            if (need_dx) xp->ensure_grad();
            if (gp->requires_grad) gp->ensure_grad();
            if (bp->requires_grad) bp->ensure_grad();
            for (int n = 0; n < N; ++n) {
                for (int g = 0; g < groups; ++g) {
                    const double mean = (*stats)[(static_cast<std::size_t>(n) * groups + g) * 2];
                    const double istd = (*stats)[(static_cast<std::size_t>(n) * groups + g) * 2 + 1];
                    const std::size_t base = (static_cast<std::size_t>(n) * C + static_cast<std::size_t>(g) * cg) * plane;
                    const S* xv = xp->val.data() + base;
                    const S* go = self.grad.data() + base;
                    // per-channel gamma/beta grads plus the two group sums
                    double s1 = 0.0, s2 = 0.0;
                    for (int c = 0; c < cg; ++c) {
                        const double ga = static_cast<double>(gp->val.v[static_cast<std::size_t>(g * cg + c)]);
                        double dg = 0.0, db = 0.0;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double y = (static_cast<double>(xv[c * plane + i]) - mean) * istd;
                            const double d = static_cast<double>(go[c * plane + i]);
                            dg += d * y;
                            db += d;
                            const double dy = d * ga;
                            s1 += dy;
                            s2 += dy * y;
                        }
                        if (gp->requires_grad) gp->grad.v[static_cast<std::size_t>(g * cg + c)] += static_cast<S>(dg);
                        if (bp->requires_grad) bp->grad.v[static_cast<std::size_t>(g * cg + c)] += static_cast<S>(db);
                    }
                    if (need_dx) {
                        const double inv_m = 1.0 / static_cast<double>(gsz);
                        S* gx = xp->grad.data() + base;
                        for (int c = 0; c < cg; ++c) {
                            const double ga = static_cast<double>(gp->val.v[static_cast<std::size_t>(g * cg + c)]);
                            for (std::size_t i = 0; i < plane; ++i) {
                                const double y = (static_cast<double>(xv[c * plane + i]) - mean) * istd;
                                const double dy = static_cast<double>(go[c * plane + i]) * ga;
                                gx[c * plane + i] += static_cast<S>(istd * (dy - (s1 + y * s2) * inv_m));
                            }
                        }
                    }
                }
            }
        });
}

// table: (V,D) parameter, idx: row per batch element -> (N,D)
template <typename S>
Var<S> embedding(const Var<S>& table, const std::vector<int>& idx) {
    const auto& td = table.val().dims;
    require(td.size() == 2, Err::ShapeMismatch, "embedding table must be 2-d");
    const int V = td[0], D = td[1];
    const int N = static_cast<int>(idx.size());
    for (int i : idx) require(i >= 0 && i < V, Err::OutOfRange, "embedding index outside table");
    Tensor<S> out({N, D});
    for (int n = 0; n < N; ++n)
        std::copy_n(table.val().data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(n)]) * D, D,
                    out.data() + static_cast<std::size_t>(n) * D);
    const bool track = detail::tracking<S>({&table});
    auto tp = table.node;
    auto ids = std::make_shared<std::vector<int>>(idx);
    return detail::result<S>(std::move(out), track, {tp}, [tp, ids, D](Node<S>& self) {
        if (!tp->requires_grad) return;
        tp->ensure_grad();
        for (std::size_t n = 0; n < ids->size(); ++n) {
            S* dst = tp->grad.data() + static_cast<std::size_t>((*ids)[n]) * D;
            const S* src = self.grad.data() + n * static_cast<std::size_t>(D);
            for (int d = 0; d < D; ++d) dst[d] += src[d];
        }
    });
}

template <typename S>
Var<S> upsample_nearest2(const Var<S>& x) {
    const auto& xd = x.val().dims;
    require(xd.size() == 4, Err::ShapeMismatch, "upsample_nearest2 wants NCHW");
    const int N = xd[0], C = xd[1], H = xd[2], W = xd[3];
    Tensor<S> out({N, C, 2 * H, 2 * W});
    for (int nc = 0; nc < N * C; ++nc) {
        const S* src = x.val().data() + static_cast<std::size_t>(nc) * H * W;
        S* dst = out.data() + static_cast<std::size_t>(nc) * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int xq = 0; xq < W; ++xq) {
                const S v = src[y * W + xq];
                S* d = dst + (2 * y) * (2 * W) + 2 * xq;
                d[0] = v;
                d[1] = v;
                d[2 * W] = v;
                d[2 * W + 1] = v;
            }
    }
    const bool track = detail::tracking<S>({&x});
    auto xp = x.node;
    return detail::result<S>(std::move(out), track, {xp}, [xp, N, C, H, W](Node<S>& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (int nc = 0; nc < N * C; ++nc) {
            S* gx = xp->grad.data() + static_cast<std::size_t>(nc) * H * W;
            const S* gy = self.grad.data() + static_cast<std::size_t>(nc) * 4 * H * W;
            for (int y = 0; y < H; ++y)
                for (int xq = 0; xq < W; ++xq) {
                    const S* g = gy + (2 * y) * (2 * W) + 2 * xq;
                    gx[y * W + xq] += g[0] + g[1] + g[2 * W] + g[2 * W + 1];
                }
        }
    });
}

template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
    const auto& ad = a.val().dims;
    const auto& bd = b.val().dims;
    require(ad.size() == 4 && bd.size() == 4 && ad[0] == bd[0] && ad[2] == bd[2] && ad[3] == bd[3],
            Err::ShapeMismatch, "concat_channels shape mismatch");
    const int N = ad[0], Ca = ad[1], Cb = bd[1], H = ad[2], W = ad[3];
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor<S> out({N, Ca + Cb, H, W});
    for (int n = 0; n < N; ++n) {
        std::copy_n(a.val().data() + static_cast<std::size_t>(n) * Ca * plane, static_cast<std::size_t>(Ca) * plane,
                    out.data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane);
        std::copy_n(b.val().data() + static_cast<std::size_t>(n) * Cb * plane, static_cast<std::size_t>(Cb) * plane,
                    out.data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane);
    }
    const bool track = detail::tracking<S>({&a, &b});
    auto apn = a.node, bpn = b.node;
    return detail::result<S>(std::move(out), track, {apn, bpn}, [apn, bpn, N, Ca, Cb, plane](Node<S>& self) {
        for (int n = 0; n < N; ++n) {
            if (apn->requires_grad) {
                apn->ensure_grad();
                S* dst = apn->grad.data() + static_cast<std::size_t>(n) * Ca * plane;
                const S* src = self.grad.data() + static_cast<std::size_t>(n) * (Ca + Cb) * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(Ca) * plane; ++i) dst[i] += src[i];
            }
            if (bpn->requires_grad) {
                bpn->ensure_grad();
                S* dst = bpn->grad.data() + static_cast<std::size_t>(n) * Cb * plane;
                const S* src = self.grad.data() + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(Cb) * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.val(), b.val(), "add");
    Tensor<S> out = a.val();
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.val().v[i];
    const bool track = detail::tracking<S>({&a, &b});
    auto apn = a.node, bpn = b.node;
    return detail::result<S>(std::move(out), track, {apn, bpn}, [apn, bpn](Node<S>& self) {
        if (apn->requires_grad) detail::accumulate(*apn, self.grad.data(), self.grad.v.size());
        if (bpn->requires_grad) detail::accumulate(*bpn, self.grad.data(), self.grad.v.size());
    });
}

// x: (N,C,H,W), e: (N,C); adds e[n,c] across the spatial plane.
template <typename S>
Var<S> add_channel_map(const Var<S>& x, const Var<S>& e) {
    const auto& xd = x.val().dims;
    const auto& ed = e.val().dims;
    require(xd.size() == 4 && ed.size() == 2 && xd[0] == ed[0] && xd[1] == ed[1], Err::ShapeMismatch,
            "add_channel_map shape mismatch");
    const int N = xd[0], C = xd[1];
    const std::size_t plane = static_cast<std::size_t>(xd[2]) * xd[3];
    Tensor<S> out = x.val();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S v = e.val().v[static_cast<std::size_t>(n) * C + c];
            S* dst = out.data() + (static_cast<std::size_t>(n) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
        }
    const bool track = detail::tracking<S>({&x, &e});
    auto xp = x.node, ep = e.node;
    return detail::result<S>(std::move(out), track, {xp, ep}, [xp, ep, N, C, plane](Node<S>& self) {
        if (xp->requires_grad) detail::accumulate(*xp, self.grad.data(), self.grad.v.size());
        if (ep->requires_grad) {
            ep->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const S* src = self.grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
                    S acc = S(0);
                    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                    ep->grad.v[static_cast<std::size_t>(n) * C + c] += acc;
                }
        }
    });
}

template <typename S>
Var<S> scale(const Var<S>& x, double c) {
    Tensor<S> out = x.val();
    const S cs = static_cast<S>(c);
    for (auto& v : out.v) v *= cs;
    const bool track = detail::tracking<S>({&x});
    auto xp = x.node;
    return detail::result<S>(std::move(out), track, {xp}, [xp, cs](Node<S>& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (std::size_t i = 0; i < self.grad.v.size(); ++i) xp->grad.v[i] += cs * self.grad.v[i];
    });
}

// Mean-squared error against a constant target; returns a scalar node.
template <typename S>
Var<S> mse_loss(const Var<S>& pred, const Tensor<S>& target) {
    check_same_shape(pred.val(), target, "mse_loss");
    const std::size_t n = pred.val().v.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred.val().v[i]) - static_cast<double>(target.v[i]);
        acc += d * d;
    }
    Tensor<S> out({1});
    out.v[0] = static_cast<S>(acc / static_cast<double>(n));
    const bool track = detail::tracking<S>({&pred});
    auto pp = pred.node;
    auto tgt = std::make_shared<Tensor<S>>(target);
    return detail::result<S>(std::move(out), track, {pp}, [pp, tgt, n](Node<S>& self) {
        if (!pp->requires_grad) return;
        pp->ensure_grad();
        const S g = self.grad.v[0];
        const S k = static_cast<S>(2.0 / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) pp->grad.v[i] += g * k * (pp->val.v[i] - tgt->v[i]);
    });
}

// --- backward ------------------------------------------------------------------

// Reverse-topological sweep from root. Seeds root grad with ones, runs every
// closure once, then severs the graph so activations free immediately.
template <typename S>
void backward(const Var<S>& root) {
    require(root.defined(), Err::BadConfig, "backward on empty var");
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    stack.push_back({root.node.get(), 0});
    seen.insert(root.node.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<S>* next = node->parents[idx].get();
            ++idx;
            if (next->backward && seen.insert(next).second) stack.push_back({next, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node->ensure_grad();
    for (auto& g : root.node->grad.v) g = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backward) n->backward(*n);
    }
    // release closures and parent links; values and grads stay
    for (Node<S>* n : order) {
        n->backward = nullptr;
        n->parents.clear();
    }
}

}  // namespace ldlab::nn
