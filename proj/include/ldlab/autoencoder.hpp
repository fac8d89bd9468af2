#pragma once

// Image <-> latent codec. Factor 1 is the identity map (plus the [0,1] ->
// [-1,1] remap every path shares); factors 2 and 4 are a small strided conv
// encoder and nearest-upsample decoder trained with plain L2 reconstruction.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <limits>

#include "ldlab/checkpoint.hpp"
#include "ldlab/core/error.hpp"
#include "ldlab/core/image.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/core/runlog.hpp"
#include "ldlab/core/tensor.hpp"
#include "ldlab/nn/autograd.hpp"
#include "ldlab/nn/modules.hpp"

namespace ldlab {

struct AutoencoderConfig {
    int downsample_factor = 1;  // 1 = identity mode
    int latent_channels = 3;
    int base_width = 16;

    bool operator==(const AutoencoderConfig&) const = default;
};

inline void validate(const AutoencoderConfig& cfg) {
    require(cfg.downsample_factor == 1 || cfg.downsample_factor == 2 || cfg.downsample_factor == 4,
            Err::BadConfig, "downsample_factor must be 1, 2, or 4");
    require(cfg.latent_channels > 0, Err::BadConfig, "latent_channels must be positive");
    require(cfg.base_width > 0, Err::BadConfig, "base_width must be positive");
    if (cfg.downsample_factor == 1)
        require(cfg.latent_channels == 3, Err::BadConfig,
                "identity mode requires latent_channels == image channels (3)");
}

inline void to_json(nlohmann::json& j, const AutoencoderConfig& c) {
    j = nlohmann::json{{"downsample_factor", c.downsample_factor},
                       {"latent_channels", c.latent_channels},
                       {"base_width", c.base_width}};
}

inline void from_json(const nlohmann::json& j, AutoencoderConfig& c) {
    j.at("downsample_factor").get_to(c.downsample_factor);
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("base_width").get_to(c.base_width);
}

template <typename S>
struct Autoencoder {
    AutoencoderConfig cfg;
    nn::ParamStore<S> params;  // empty in identity mode
};

template <typename S = float>
Autoencoder<S> init_autoencoder(const AutoencoderConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Autoencoder<S> net;
    net.cfg = cfg;
    if (cfg.downsample_factor == 1) return net;
    Rng rng(derive_seed(seed, "autoencoder-init"));
    auto& ps = net.params;
    const int w = cfg.base_width;
    const int levels = cfg.downsample_factor == 2 ? 1 : 2;
    ps.add("enc.stem.w", nn::conv_init<S>(w, 3, 3, rng));
    ps.add("enc.stem.b", Tensor<S>({w}));
    for (int l = 0; l < levels; ++l) {
        ps.add("enc.d" + std::to_string(l) + ".w", nn::conv_init<S>(w, w, 3, rng));
        ps.add("enc.d" + std::to_string(l) + ".b", Tensor<S>({w}));
    }
    ps.add("enc.head.w", nn::conv_init<S>(cfg.latent_channels, w, 3, rng));
    ps.add("enc.head.b", Tensor<S>({cfg.latent_channels}));
    ps.add("dec.stem.w", nn::conv_init<S>(w, cfg.latent_channels, 3, rng));
    ps.add("dec.stem.b", Tensor<S>({w}));
    for (int l = 0; l < levels; ++l) {
        ps.add("dec.u" + std::to_string(l) + ".w", nn::conv_init<S>(w, w, 3, rng));
        ps.add("dec.u" + std::to_string(l) + ".b", Tensor<S>({w}));
    }
    ps.add("dec.head.w", nn::conv_init<S>(3, w, 3, rng));
    ps.add("dec.head.b", Tensor<S>({3}));
    return net;
}

namespace detail {

// (N,3,H,W) in [-1,1] -> (N,latent,H/f,W/f)
template <typename S>
nn::Var<S> ae_encode_batch(const Autoencoder<S>& net, const nn::Var<S>& x) {
    using nn::conv2d, nn::silu;
    if (net.cfg.downsample_factor == 1) return x;
    const auto& ps = net.params;
    const int levels = net.cfg.downsample_factor == 2 ? 1 : 2;
    auto h = silu(conv2d(x, ps.get("enc.stem.w"), ps.get("enc.stem.b")));
    for (int l = 0; l < levels; ++l)
        h = silu(conv2d(h, ps.get("enc.d" + std::to_string(l) + ".w"),
                        ps.get("enc.d" + std::to_string(l) + ".b"), 2));
    return conv2d(h, ps.get("enc.head.w"), ps.get("enc.head.b"));
}

// (N,latent,H/f,W/f) -> (N,3,H,W) in [-1,1] (unclamped)
template <typename S>
nn::Var<S> ae_decode_batch(const Autoencoder<S>& net, const nn::Var<S>& z) {
    using nn::conv2d, nn::silu, nn::upsample_nearest2;
    if (net.cfg.downsample_factor == 1) return z;
    const auto& ps = net.params;
    const int levels = net.cfg.downsample_factor == 2 ? 1 : 2;
    auto h = silu(conv2d(z, ps.get("dec.stem.w"), ps.get("dec.stem.b")));
    for (int l = 0; l < levels; ++l)
        h = silu(conv2d(upsample_nearest2(h), ps.get("dec.u" + std::to_string(l) + ".w"),
                        ps.get("dec.u" + std::to_string(l) + ".b")));
    return conv2d(h, ps.get("dec.head.w"), ps.get("dec.head.b"));
}

template <typename S>
Tensor<S> image_to_signed_chw(const ImageF& img) {
    Tensor<S> t = image_to_chw<S>(img);
    for (auto& x : t.v) x = S(2) * x - S(1);
    return t;
}

}  // namespace detail

// image in [0,1] -> latent (latent_channels, H/f, W/f)
template <typename S>
Tensor<S> encode(const Autoencoder<S>& net, const ImageF& img) {
    require(img.c == 3, Err::ShapeMismatch, "encoder expects RGB images");
    const int f = net.cfg.downsample_factor;
    require(img.h % f == 0 && img.w % f == 0, Err::BadResolution,
            "image resolution must be divisible by the downsample factor");
    for (float v : img.px)
        require(v >= 0.0f && v <= 1.0f, Err::OutOfRange, "image values must lie in [0,1]");
    Tensor<S> x = detail::image_to_signed_chw<S>(img);
    if (f == 1) return x;
    nn::NoGrad guard;
    Tensor<S> xb({1, 3, img.h, img.w});
    xb.v = x.v;
    auto z = detail::ae_encode_batch(net, nn::leaf(std::move(xb)));
    const auto& zd = z.node->val;
    Tensor<S> out({zd.dim(1), zd.dim(2), zd.dim(3)});
    out.v = zd.v;
    return out;
}

// latent -> image in [0,1] (clamped)
template <typename S>
ImageF decode(const Autoencoder<S>& net, const Tensor<S>& z) {
    require(z.rank() == 3 && z.dim(0) == net.cfg.latent_channels, Err::ShapeMismatch,
            "latent shape does not match the autoencoder config");
    Tensor<S> y;
    if (net.cfg.downsample_factor == 1) {
        y = z;
    } else {
        nn::NoGrad guard;
        Tensor<S> zb({1, z.dim(0), z.dim(1), z.dim(2)});
        zb.v = z.v;
        auto out = detail::ae_decode_batch(net, nn::leaf(std::move(zb)));
        const auto& od = out.node->val;
        y = Tensor<S>({od.dim(1), od.dim(2), od.dim(3)});
        y.v = od.v;
    }
    for (auto& x : y.v) x = (x + S(1)) / S(2);
    return clamp01(chw_to_image<S>(y));
}

struct AeTrainConfig {
    int steps = 2000;
    int batch_size = 4;
    double learning_rate = 2e-4;

    bool operator==(const AeTrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const AeTrainConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate}};
}

inline void from_json(const nlohmann::json& j, AeTrainConfig& c) {
    j.at("steps").get_to(c.steps);
    j.at("batch_size").get_to(c.batch_size);
    j.at("learning_rate").get_to(c.learning_rate);
}

struct AeTrainResult {
    Autoencoder<float> net;
    std::vector<double> losses;  // one entry per step
};

inline AeTrainResult train_autoencoder(const std::vector<ImageF>& images,
                                       const AutoencoderConfig& cfg, const AeTrainConfig& tcfg,
                                       std::uint64_t seed, RunLog* log = nullptr) {
    require(!images.empty(), Err::EmptyCorpus, "autoencoder training corpus is empty");
    require(tcfg.steps >= 0 && tcfg.batch_size > 0 && tcfg.learning_rate > 0, Err::BadConfig,
            "bad autoencoder training config");
    const int f = cfg.downsample_factor;
    for (const auto& img : images)
        require(img.c == 3 && img.h % f == 0 && img.w % f == 0, Err::BadResolution,
                "corpus image resolution incompatible with the downsample factor");

    AeTrainResult res{init_autoencoder<float>(cfg, seed), {}};
    if (cfg.downsample_factor == 1 || tcfg.steps == 0) return res;

    std::vector<Tensor<float>> signed_imgs;
    signed_imgs.reserve(images.size());
    for (const auto& img : images) signed_imgs.push_back(detail::image_to_signed_chw<float>(img));

    Rng rng(derive_seed(seed, "ae-train"));
    nn::Adam<float> opt;
    opt.lr = tcfg.learning_rate;
    opt.attach(res.net.params);
    res.losses.reserve(static_cast<std::size_t>(tcfg.steps));

    const int h = images[0].h, w = images[0].w;
    for (int step = 0; step < tcfg.steps; ++step) {
        const auto tick = std::chrono::steady_clock::now();
        Tensor<float> batch({tcfg.batch_size, 3, h, w});
        for (int b = 0; b < tcfg.batch_size; ++b) {
            const auto& src = signed_imgs[static_cast<std::size_t>(
                rng.below(static_cast<std::uint64_t>(signed_imgs.size())))];
            std::copy(src.v.begin(), src.v.end(),
                      batch.v.begin() + static_cast<std::ptrdiff_t>(b) * src.numel());
        }
        res.net.params.zero_grad();
        auto x = nn::leaf(batch);
        auto recon = detail::ae_decode_batch(res.net, detail::ae_encode_batch(res.net, x));
        auto loss = nn::mse_loss(recon, batch);
        res.losses.push_back(static_cast<double>(loss.node->val.v[0]));
        nn::backward(loss);
        opt.step(res.net.params);
        if (log) log->line(step + 1, res.losses.back(), tcfg.learning_rate, wall_ms_since(tick));
    }
    return res;
}

inline double psnr(const ImageF& a, const ImageF& b) {
    require(a.h == b.h && a.w == b.w && a.c == b.c, Err::ShapeMismatch, "psnr needs equal shapes");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double d = static_cast<double>(a.px[i]) - static_cast<double>(b.px[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.px.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

inline Checkpoint autoencoder_to_checkpoint(const Autoencoder<float>& net, nlohmann::json meta) {
    Checkpoint ckpt;
    ckpt.kind = "autoencoder";
    ckpt.config = net.cfg;
    ckpt.meta = std::move(meta);
    store_params(ckpt, net.params);
    return ckpt;
}

inline Autoencoder<float> autoencoder_from_checkpoint(const Checkpoint& ckpt) {
    require(ckpt.kind == "autoencoder", Err::CheckpointMismatch,
            "expected an autoencoder checkpoint, found kind=" + ckpt.kind);
    AutoencoderConfig cfg;
    try {
        cfg = ckpt.config.get<AutoencoderConfig>();
    } catch (const nlohmann::json::exception& e) {
        fail(Err::CheckpointMismatch, std::string("autoencoder config unreadable: ") + e.what());
    }
    Autoencoder<float> net = init_autoencoder<float>(cfg, 0);
    load_params(ckpt, net.params);
    return net;
}

}  // namespace ldlab
