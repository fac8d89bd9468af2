#pragma once

// Conditional noise predictor: a small U-Net over latents, a convolutional
// control branch over the rasterized landmark image whose features enter the
// backbone through zero-initialized 1x1 projections, and a learned style
// token table added to the timestep embedding.
//
// Architecture, with w = base_width, D = depth, c_i = w * 2^i:
//   embedding  sinusoidal(t) + style_table[style_id] -> linear -> silu -> linear
//   backbone   stem conv 3x3 -> D encoder levels (ResBlock to c_i, then
//              stride-2 conv between levels) -> middle ResBlock ->
//              D decoder levels (concat skip, ResBlock 2*c_i -> c_i, then
//              nearest-x2 upsample + conv c_i -> c_{i-1}) ->
//              GroupNorm -> silu -> output conv 3x3
//   control    stem conv -> per level two 3x3 convs (silu) mirroring encoder
//              widths, stride-2 conv between levels; a zero-init 1x1
//              projection per level is added to the backbone encoder feature
//   ResBlock   gn -> silu -> conv 3x3 -> (+ per-channel time bias) ->
//              gn -> silu -> conv 3x3, plus identity/1x1 skip
//
// At initialization every control projection (weight and bias) is exactly
// zero, so the condition image cannot influence the output; style row 0 is
// exactly zero so the null token reproduces the unconditional embedding.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldlab/checkpoint.hpp"
#include "ldlab/core/error.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/core/tensor.hpp"
#include "ldlab/nn/autograd.hpp"
#include "ldlab/nn/modules.hpp"

namespace ldlab {

struct DenoiserConfig {
    int latent_channels = 3;
    int base_width = 32;
    int depth = 2;
    int timestep_embedding_dim = 64;
    int style_vocab_size = 26;  // 25 styles + null token 0
    int condition_channels = 3;

    bool operator==(const DenoiserConfig&) const = default;
};

inline void validate(const DenoiserConfig& cfg) {
    require(cfg.latent_channels > 0, Err::BadConfig, "latent_channels must be positive");
    require(cfg.base_width > 0, Err::BadConfig, "base_width must be positive");
    require(cfg.depth > 0, Err::BadConfig, "depth must be positive");
    require(cfg.timestep_embedding_dim >= 2 && cfg.timestep_embedding_dim % 2 == 0,
            Err::BadConfig, "timestep_embedding_dim must be even and >= 2");
    require(cfg.style_vocab_size > 0, Err::BadConfig, "style_vocab_size must be positive");
    require(cfg.condition_channels > 0, Err::BadConfig, "condition_channels must be positive");
}

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
    j = nlohmann::json{{"latent_channels", c.latent_channels},
                       {"base_width", c.base_width},
                       {"depth", c.depth},
                       {"timestep_embedding_dim", c.timestep_embedding_dim},
                       {"style_vocab_size", c.style_vocab_size},
                       {"condition_channels", c.condition_channels}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("base_width").get_to(c.base_width);
    j.at("depth").get_to(c.depth);
    j.at("timestep_embedding_dim").get_to(c.timestep_embedding_dim);
    j.at("style_vocab_size").get_to(c.style_vocab_size);
    j.at("condition_channels").get_to(c.condition_channels);
}

// Rasterized landmark image plus the style token accompanying one sample.
struct ConditionBundle {
    Tensor<float> image;  // (condition_channels, H, W), values in [0,1]
    int style_id = 0;
};

template <typename S>
struct Denoiser {
    DenoiserConfig cfg;
    nn::ParamStore<S> params;
};

namespace detail {

// Largest group count <= 8 that divides the channel count.
inline int norm_groups(int channels) {
    for (int g = std::min(8, channels); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

inline int level_width(const DenoiserConfig& cfg, int level) {
    return cfg.base_width << level;
}

// Channel count entering encoder level i (stem output for i=0).
inline int level_in_width(const DenoiserConfig& cfg, int level) {
    return level == 0 ? cfg.base_width : level_width(cfg, level - 1);
}

template <typename S>
void add_resblock(nn::ParamStore<S>& ps, const std::string& prefix, int cin, int cout, int edim, Rng& rng) {
    ps.add(prefix + ".gn1.g", Tensor<S>({cin}, S(1)));
    ps.add(prefix + ".gn1.b", Tensor<S>({cin}));
    ps.add(prefix + ".c1.w", nn::conv_init<S>(cout, cin, 3, rng));
    ps.add(prefix + ".c1.b", Tensor<S>({cout}));
    ps.add(prefix + ".emb.w", nn::linear_init<S>(cout, edim, rng));
    ps.add(prefix + ".emb.b", Tensor<S>({cout}));
    ps.add(prefix + ".gn2.g", Tensor<S>({cout}, S(1)));
    ps.add(prefix + ".gn2.b", Tensor<S>({cout}));
    ps.add(prefix + ".c2.w", nn::conv_init<S>(cout, cout, 3, rng));
    ps.add(prefix + ".c2.b", Tensor<S>({cout}));
    if (cin != cout) {
        ps.add(prefix + ".skip.w", nn::conv_init<S>(cout, cin, 1, rng));
        ps.add(prefix + ".skip.b", Tensor<S>({cout}));
    }
}

template <typename S>
nn::Var<S> resblock(const nn::ParamStore<S>& ps, const std::string& prefix, const nn::Var<S>& x,
                    const nn::Var<S>& emb) {
    using namespace nn;
    const int cin = x.node->val.dim(1);
    Var<S> h = group_norm(x, ps.get(prefix + ".gn1.g"), ps.get(prefix + ".gn1.b"),
                          norm_groups(cin));
    h = conv2d(silu(h), ps.get(prefix + ".c1.w"), ps.get(prefix + ".c1.b"));
    Var<S> tb = linear(silu(emb), ps.get(prefix + ".emb.w"), ps.get(prefix + ".emb.b"));
    h = add_channel_map(h, tb);
    const int cout = h.node->val.dim(1);
    h = group_norm(h, ps.get(prefix + ".gn2.g"), ps.get(prefix + ".gn2.b"), norm_groups(cout));
    h = conv2d(silu(h), ps.get(prefix + ".c2.w"), ps.get(prefix + ".c2.b"));
    Var<S> sk = ps.has(prefix + ".skip.w")
                    ? conv2d(x, ps.get(prefix + ".skip.w"), ps.get(prefix + ".skip.b"))
                    : x;
    return add(sk, h);
}

}  // namespace detail

// Scalar parameter count implied by the architecture above; used both by the
// initializer (implicitly, via registration) and by tests as a tally oracle.
template <typename S>
std::size_t count_parameters(const Denoiser<S>& net) {
    return net.params.count_scalars();
}

template <typename S = float>
Denoiser<S> init_denoiser(const DenoiserConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Denoiser<S> net;
    net.cfg = cfg;
    Rng rng(derive_seed(seed, "denoiser-init"));
    auto& ps = net.params;
    const int E = cfg.timestep_embedding_dim;
    const int D = cfg.depth;

    // style table: row 0 stays exactly zero (null token)
    Tensor<S> table = randn<S>({cfg.style_vocab_size, E}, rng, 0.02);
    for (int j = 0; j < E; ++j) table.v[static_cast<std::size_t>(j)] = S(0);
    ps.add("style.table", std::move(table));
    ps.add("temb.l1.w", nn::linear_init<S>(E, E, rng));
    ps.add("temb.l1.b", Tensor<S>({E}));
    ps.add("temb.l2.w", nn::linear_init<S>(E, E, rng));
    ps.add("temb.l2.b", Tensor<S>({E}));

    ps.add("stem.w", nn::conv_init<S>(cfg.base_width, cfg.latent_channels, 3, rng));
    ps.add("stem.b", Tensor<S>({cfg.base_width}));
    for (int i = 0; i < D; ++i) {
        const int cin = detail::level_in_width(cfg, i);
        const int ci = detail::level_width(cfg, i);
        detail::add_resblock(ps, "enc" + std::to_string(i), cin, ci, E, rng);
        if (i < D - 1) {
            ps.add("enc" + std::to_string(i) + ".down.w", nn::conv_init<S>(ci, ci, 3, rng));
            ps.add("enc" + std::to_string(i) + ".down.b", Tensor<S>({ci}));
        }
    }
    const int cmid = detail::level_width(cfg, D - 1);
    detail::add_resblock(ps, "mid", cmid, cmid, E, rng);
    for (int i = D - 1; i >= 0; --i) {
        const int ci = detail::level_width(cfg, i);
        detail::add_resblock(ps, "dec" + std::to_string(i), 2 * ci, ci, E, rng);
        if (i > 0) {
            ps.add("dec" + std::to_string(i) + ".up.w",
                   nn::conv_init<S>(detail::level_width(cfg, i - 1), ci, 3, rng));
            ps.add("dec" + std::to_string(i) + ".up.b",
                   Tensor<S>({detail::level_width(cfg, i - 1)}));
        }
    }
    ps.add("out.gn.g", Tensor<S>({cfg.base_width}, S(1)));
    ps.add("out.gn.b", Tensor<S>({cfg.base_width}));
    ps.add("out.w", nn::conv_init<S>(cfg.latent_channels, cfg.base_width, 3, rng));
    ps.add("out.b", Tensor<S>({cfg.latent_channels}));

    // control branch; projections are exactly zero so a fresh net ignores
    // the condition image
    ps.add("ctrl.stem.w", nn::conv_init<S>(cfg.base_width, cfg.condition_channels, 3, rng));
    ps.add("ctrl.stem.b", Tensor<S>({cfg.base_width}));
    for (int i = 0; i < D; ++i) {
        const std::string p = "ctrl" + std::to_string(i);
        const int cin = detail::level_in_width(cfg, i);
        const int ci = detail::level_width(cfg, i);
        ps.add(p + ".c1.w", nn::conv_init<S>(ci, cin, 3, rng));
        ps.add(p + ".c1.b", Tensor<S>({ci}));
        ps.add(p + ".c2.w", nn::conv_init<S>(ci, ci, 3, rng));
        ps.add(p + ".c2.b", Tensor<S>({ci}));
        ps.add(p + ".proj.w", Tensor<S>({ci, ci, 1, 1}));
        ps.add(p + ".proj.b", Tensor<S>({ci}));
        if (i < D - 1) {
            ps.add(p + ".down.w", nn::conv_init<S>(ci, ci, 3, rng));
            ps.add(p + ".down.b", Tensor<S>({ci}));
        }
    }
    return net;
}

// Batched forward pass used by both training (tracked parameters) and
// inference (NoGrad). x: (N, latent_channels, H, W); cond: (N,
// condition_channels, H, W); ts and styles give one entry per sample.
template <typename S>
nn::Var<S> predict_noise_batch(const Denoiser<S>& net, const nn::Var<S>& x,
                               const std::vector<int>& ts, const std::vector<int>& styles,
                               const nn::Var<S>& cond) {
    using namespace nn;
    const DenoiserConfig& cfg = net.cfg;
    const auto& xd = x.node->val;
    require(xd.rank() == 4, Err::ShapeMismatch, "latent batch must be (N,C,H,W)");
    const int N = xd.dim(0), H = xd.dim(2), W = xd.dim(3);
    require(xd.dim(1) == cfg.latent_channels, Err::ShapeMismatch, "latent channel count mismatch");
    const int div = 1 << (cfg.depth - 1);
    require(H % div == 0 && W % div == 0, Err::ShapeMismatch,
            "latent resolution must be divisible by 2^(depth-1)");
    const auto& cd = cond.node->val;
    require(cd.rank() == 4 && cd.dim(0) == N && cd.dim(1) == cfg.condition_channels &&
                cd.dim(2) == H && cd.dim(3) == W,
            Err::ShapeMismatch, "condition image shape mismatch");
    require(static_cast<int>(ts.size()) == N && static_cast<int>(styles.size()) == N,
            Err::ShapeMismatch, "one timestep and style id per sample required");
    for (int s : styles)
        require(s >= 0 && s < cfg.style_vocab_size, Err::OutOfRange, "style_id out of range");
    for (int t : ts) require(t >= 0, Err::TimestepOutOfRange, "timestep must be >= 0");

    const auto& ps = net.params;
    const int D = cfg.depth;

    Var<S> emb = leaf(nn::timestep_embedding<S>(ts, cfg.timestep_embedding_dim));
    emb = add(emb, embedding(ps.get("style.table"), styles));
    emb = linear(emb, ps.get("temb.l1.w"), ps.get("temb.l1.b"));
    emb = linear(silu(emb), ps.get("temb.l2.w"), ps.get("temb.l2.b"));

    std::vector<Var<S>> ctrl_feats;
    ctrl_feats.reserve(static_cast<std::size_t>(D));
    Var<S> hc = silu(conv2d(cond, ps.get("ctrl.stem.w"), ps.get("ctrl.stem.b")));
    for (int i = 0; i < D; ++i) {
        const std::string p = "ctrl" + std::to_string(i);
        hc = silu(conv2d(hc, ps.get(p + ".c1.w"), ps.get(p + ".c1.b")));
        hc = silu(conv2d(hc, ps.get(p + ".c2.w"), ps.get(p + ".c2.b")));
        ctrl_feats.push_back(conv2d(hc, ps.get(p + ".proj.w"), ps.get(p + ".proj.b")));
        if (i < D - 1) hc = conv2d(hc, ps.get(p + ".down.w"), ps.get(p + ".down.b"), 2);
    }

    Var<S> h = conv2d(x, ps.get("stem.w"), ps.get("stem.b"));
    std::vector<Var<S>> skips;
    skips.reserve(static_cast<std::size_t>(D));
    for (int i = 0; i < D; ++i) {
        const std::string p = "enc" + std::to_string(i);
        h = ldlab::detail::resblock(ps, p, h, emb);
        h = add(h, ctrl_feats[static_cast<std::size_t>(i)]);
        skips.push_back(h);
        if (i < D - 1) h = conv2d(h, ps.get(p + ".down.w"), ps.get(p + ".down.b"), 2);
    }
    h = ldlab::detail::resblock(ps, "mid", h, emb);
    for (int i = D - 1; i >= 0; --i) {
        const std::string p = "dec" + std::to_string(i);
        h = concat_channels(h, skips[static_cast<std::size_t>(i)]);
        h = ldlab::detail::resblock(ps, p, h, emb);
        if (i > 0) {
            h = upsample_nearest2(h);
            h = conv2d(h, ps.get(p + ".up.w"), ps.get(p + ".up.b"));
        }
    }
    h = group_norm(h, ps.get("out.gn.g"), ps.get("out.gn.b"),
                   ldlab::detail::norm_groups(cfg.base_width));
    return conv2d(silu(h), ps.get("out.w"), ps.get("out.b"));
}

// Single-sample inference entry point. z_t: (latent_channels, H, W).
template <typename S>
Tensor<S> predict_noise(const Denoiser<S>& net, const Tensor<S>& z_t, int t,
                        const ConditionBundle& cond) {
    require(z_t.rank() == 3, Err::ShapeMismatch, "latent must be (C,H,W)");
    nn::NoGrad guard;
    Tensor<S> xb({1, z_t.dim(0), z_t.dim(1), z_t.dim(2)});
    xb.v = z_t.v;
    Tensor<S> cb({1, cond.image.dim(0), cond.image.dim(1), cond.image.dim(2)});
    cb.v.assign(cond.image.v.begin(), cond.image.v.end());
    nn::Var<S> out = predict_noise_batch(net, nn::leaf(std::move(xb)), {t}, {cond.style_id},
                                         nn::leaf(std::move(cb)));
    Tensor<S> res(z_t.dims);
    res.v = out.node->val.v;
    return res;
}

inline Checkpoint denoiser_to_checkpoint(const Denoiser<float>& net, nlohmann::json meta) {
    Checkpoint ckpt;
    ckpt.kind = "denoiser";
    ckpt.config = net.cfg;
    ckpt.meta = std::move(meta);
    store_params(ckpt, net.params);
    return ckpt;
}

inline Denoiser<float> denoiser_from_checkpoint(const Checkpoint& ckpt) {
    require(ckpt.kind == "denoiser", Err::CheckpointMismatch,
            "expected a denoiser checkpoint, found kind=" + ckpt.kind);
    DenoiserConfig cfg;
    try {
        cfg = ckpt.config.get<DenoiserConfig>();
    } catch (const nlohmann::json::exception& e) {
        fail(Err::CheckpointMismatch, std::string("denoiser config unreadable: ") + e.what());
    }
    Denoiser<float> net = init_denoiser<float>(cfg, 0);
    load_params(ckpt, net.params);
    return net;
}

}  // namespace ldlab
