#pragma once

// Heatmap-regression landmark detector: Gaussian target encoding, argmax
// decoding with quadratic sub-pixel refinement, and a single-hourglass
// predictor emitting maps at 1/4 of the input resolution.
//
// Architecture (W = base_width, all convs 3x3 pad-same unless noted):
//   stem0   conv 3   -> W,  stride 2        input -> input/2
//   stem1   conv W   -> 2W, stride 2        -> input/4 (heatmap grid)
//   enc0    conv 2W  -> 2W                  skip A
//   down0   conv 2W  -> 4W, stride 2        -> input/8
//   enc1    conv 4W  -> 4W                  skip B
//   down1   conv 4W  -> 4W, stride 2        -> input/16
//   mid     conv 4W  -> 4W
//   up1     upsample + conv 4W -> 4W, add skip B
//   up0     upsample + conv 4W -> 2W, add skip A
//   head0   conv 2W  -> 2W
//   head1   conv 2W  -> n_landmarks, 1x1 (raw maps, no activation)
// Every conv is followed by SiLU except head1. Weights are He-normal.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ldlab/checkpoint.hpp"
#include "ldlab/core/error.hpp"
#include "ldlab/core/image.hpp"
#include "ldlab/core/png_io.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/core/runlog.hpp"
#include "ldlab/core/tensor.hpp"
#include "ldlab/dataset.hpp"
#include "ldlab/landmarks.hpp"
#include "ldlab/nn/autograd.hpp"
#include "ldlab/nn/modules.hpp"

namespace ldlab {

struct DetectorConfig {
    int input_resolution = 128;
    int n_landmarks = kNumLandmarks;
    int base_width = 16;
    float sigma_px = 2.0f;  // Gaussian std of the training targets, heatmap pixels

    int heatmap_resolution() const { return input_resolution / 4; }

    bool operator==(const DetectorConfig&) const = default;

    void validate() const {
        require(input_resolution >= 16 && input_resolution <= 1024 && input_resolution % 16 == 0,
                Err::BadConfig, "input_resolution must be a multiple of 16 in [16, 1024]");
        require(n_landmarks >= 1, Err::BadConfig, "n_landmarks must be positive");
        require(base_width >= 1, Err::BadConfig, "base_width must be positive");
        require(std::isfinite(sigma_px) && sigma_px > 0.0f, Err::BadConfig,
                "sigma_px must be positive");
    }
};

inline void to_json(nlohmann::json& j, const DetectorConfig& c) {
    j = nlohmann::json{{"input_resolution", c.input_resolution},
                       {"n_landmarks", c.n_landmarks},
                       {"base_width", c.base_width},
                       {"sigma_px", c.sigma_px}};
}

inline void from_json(const nlohmann::json& j, DetectorConfig& c) {
    try {
        c.input_resolution = j.at("input_resolution").get<int>();
        c.n_landmarks = j.at("n_landmarks").get<int>();
        c.base_width = j.at("base_width").get<int>();
        c.sigma_px = j.at("sigma_px").get<float>();
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad detector config: ") + e.what());
    }
}

// --- heatmap encode / decode ------------------------------------------------

struct HeatmapStack {
    Tensor<float> maps;       // (n_landmarks, res, res)
    float sigma_px = 2.0f;    // encode-time std; predictions carry the config value
};

// Pixel centers sit at normalized (k + 0.5) / res, so a landmark exactly on a
// grid point encodes to a map whose argmax value is 1.
inline HeatmapStack encode_heatmaps(const LandmarkSet& lm, int resolution, float sigma_px) {
    require(resolution >= 2 && resolution <= 4096, Err::BadResolution,
            "heatmap resolution out of range");
    require(std::isfinite(sigma_px) && sigma_px > 0.0f, Err::OutOfRange,
            "sigma_px must be positive");
    require(lm.n >= 1 && lm.points.size() == static_cast<std::size_t>(lm.n), Err::WrongCount,
            "landmark set is empty or inconsistent");
    HeatmapStack hm;
    hm.sigma_px = sigma_px;
    hm.maps = Tensor<float>({lm.n, resolution, resolution});
    const double inv = 1.0 / (2.0 * static_cast<double>(sigma_px) * static_cast<double>(sigma_px));
    for (int i = 0; i < lm.n; ++i) {
        const double cx = lm.points[static_cast<std::size_t>(i)].x * resolution - 0.5;
        const double cy = lm.points[static_cast<std::size_t>(i)].y * resolution - 0.5;
        float* map = hm.maps.v.data() +
                     static_cast<std::ptrdiff_t>(i) * resolution * resolution;
        for (int r = 0; r < resolution; ++r)
            for (int c = 0; c < resolution; ++c) {
                const double dx = c - cx, dy = r - cy;
                map[r * resolution + c] =
                    static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
            }
    }
    return hm;
}

namespace detail {

// Vertex of the parabola through (-1, a), (0, b), (1, c) in log space; exact
// for a sampled Gaussian, which is what makes the sub-pixel round trip tight.
inline double quad_refine(double vm1, double v0, double vp1) {
    if (vm1 <= 0.0 || vp1 <= 0.0 || v0 <= 0.0) return 0.0;
    const double a = std::log(vm1), b = std::log(v0), c = std::log(vp1);
    const double den = a - 2.0 * b + c;
    if (den >= 0.0) return 0.0;  // not a strict local max in log space
    const double off = (a - c) / (2.0 * den);
    return std::min(0.5, std::max(-0.5, off));
}

}  // namespace detail

// Per map: argmax pixel plus quadratic refinement from the 3x3 neighborhood,
// returned as normalized coordinates. Refinement is skipped on an axis when
// the argmax touches the border or a neighbor is non-positive.
inline LandmarkSet decode_heatmaps(const HeatmapStack& hm) {
    require(hm.maps.rank() == 3, Err::ShapeMismatch, "heatmap stack must be rank 3");
    const int n = hm.maps.dim(0), h = hm.maps.dim(1), w = hm.maps.dim(2);
    require(n >= 1 && h >= 1 && w >= 1, Err::ShapeMismatch, "empty heatmap stack");
    std::vector<P2> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* map =
            hm.maps.v.data() + static_cast<std::ptrdiff_t>(i) * h * w;
        int mr = 0, mc = 0;
        float best = map[0];
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const float v = map[r * w + c];
                require(std::isfinite(v), Err::DegenerateMap, "heatmap contains non-finite values");
                if (v > best) {
                    best = v;
                    mr = r;
                    mc = c;
                }
            }
        require(best > 0.0f, Err::DegenerateMap, "heatmap has no positive peak");
        double ox = 0.0, oy = 0.0;
        if (mc >= 1 && mc + 1 < w)
            ox = detail::quad_refine(map[mr * w + mc - 1], best, map[mr * w + mc + 1]);
        if (mr >= 1 && mr + 1 < h)
            oy = detail::quad_refine(map[(mr - 1) * w + mc], best, map[(mr + 1) * w + mc]);
        pts.push_back(P2{(mc + ox + 0.5) / w, (mr + oy + 0.5) / h});
    }
    LandmarkSet lm;
    lm.points = std::move(pts);
    lm.n = n;
    return lm;
}

// Plain MSE over two stacks; the training loop uses the autograd twin.
inline double detector_loss(const HeatmapStack& pred, const HeatmapStack& target) {
    require(pred.maps.dims == target.maps.dims, Err::ShapeMismatch,
            "heatmap stacks differ in shape");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.maps.v.size(); ++i) {
        const double d =
            static_cast<double>(pred.maps.v[i]) - static_cast<double>(target.maps.v[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.maps.v.size());
}

// --- predictor ----------------------------------------------------------------

template <typename S>
struct Detector {
    DetectorConfig cfg;
    nn::ParamStore<S> params;
};

template <typename S>
Detector<S> init_detector(const DetectorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "detector-init"));
    Detector<S> net;
    net.cfg = cfg;
    auto& ps = net.params;
    const int W = cfg.base_width, N = cfg.n_landmarks;
    const auto conv = [&](const std::string& name, int cout, int cin, int k) {
        ps.add(name + ".w", nn::conv_init<S>(cout, cin, k, rng));
        ps.add(name + ".b", Tensor<S>({cout}));
    };
    conv("stem0", W, 3, 3);
    conv("stem1", 2 * W, W, 3);
    conv("enc0", 2 * W, 2 * W, 3);
    conv("down0", 4 * W, 2 * W, 3);
    conv("enc1", 4 * W, 4 * W, 3);
    conv("down1", 4 * W, 4 * W, 3);
    conv("mid", 4 * W, 4 * W, 3);
    conv("up1", 4 * W, 4 * W, 3);
    conv("up0", 2 * W, 4 * W, 3);
    conv("head0", 2 * W, 2 * W, 3);
    conv("head1", N, 2 * W, 1);
    return net;
}

namespace detail {

template <typename S>
nn::Var<S> detector_forward(const Detector<S>& net, const nn::Var<S>& x) {
    using nn::add, nn::conv2d, nn::silu, nn::upsample_nearest2;
    const auto& ps = net.params;
    const auto cs = [&](const nn::Var<S>& h, const std::string& name, int stride) {
        return silu(conv2d(h, ps.get(name + ".w"), ps.get(name + ".b"), stride));
    };
    auto h = cs(x, "stem0", 2);
    h = cs(h, "stem1", 2);
    auto a = cs(h, "enc0", 1);
    auto b = cs(cs(a, "down0", 2), "enc1", 1);
    auto m = cs(cs(b, "down1", 2), "mid", 1);
    auto u = add(cs(upsample_nearest2(m), "up1", 1), b);
    u = add(cs(upsample_nearest2(u), "up0", 1), a);
    u = cs(u, "head0", 1);
    return conv2d(u, ps.get("head1.w"), ps.get("head1.b"));
}

template <typename S>
Tensor<S> detector_input(const ImageF& img, int resolution) {
    const ImageF scaled =
        (img.h == resolution && img.w == resolution) ? img
                                                     : resize_bilinear(img, resolution, resolution);
    Tensor<S> t = image_to_chw<S>(scaled);
    for (auto& v : t.v) v = S(2) * v - S(1);
    return t;
}

}  // namespace detail

// Raw heatmaps for one image already at the detector input resolution.
template <typename S>
HeatmapStack predict(const Detector<S>& net, const ImageF& img) {
    require(img.c == 3, Err::ShapeMismatch, "detector expects RGB images");
    require(img.h == net.cfg.input_resolution && img.w == net.cfg.input_resolution,
            Err::ShapeMismatch, "image is not at the detector input resolution");
    nn::NoGrad guard;
    Tensor<S> x = detail::detector_input<S>(img, net.cfg.input_resolution);
    Tensor<S> xb({1, 3, img.h, img.w});
    xb.v = x.v;
    const auto out = detail::detector_forward(net, nn::leaf(std::move(xb)));
    const auto& od = out.node->val;
    HeatmapStack hm;
    hm.sigma_px = net.cfg.sigma_px;
    hm.maps = Tensor<float>({od.dim(1), od.dim(2), od.dim(3)});
    for (std::size_t i = 0; i < od.v.size(); ++i) hm.maps.v[i] = static_cast<float>(od.v[i]);
    return hm;
}

// Full image -> landmarks path: bilinear resize to the input resolution,
// predict, decode. Corpus images at any square-ish resolution are accepted.
template <typename S>
LandmarkSet detect_landmarks(const Detector<S>& net, const ImageF& img) {
    require(img.c == 3, Err::ShapeMismatch, "detector expects RGB images");
    const int res = net.cfg.input_resolution;
    const ImageF scaled =
        (img.h == res && img.w == res) ? img : resize_bilinear(img, res, res);
    return decode_heatmaps(predict(net, scaled));
}

// --- checkpoints --------------------------------------------------------------

inline Checkpoint detector_to_checkpoint(const Detector<float>& net, nlohmann::json meta) {
    Checkpoint ckpt;
    ckpt.kind = "detector";
    ckpt.config = net.cfg;
    ckpt.meta = std::move(meta);
    store_params(ckpt, net.params);
    return ckpt;
}

inline Detector<float> detector_from_checkpoint(const Checkpoint& ckpt) {
    require(ckpt.kind == "detector", Err::CheckpointMismatch,
            "checkpoint kind is not 'detector'");
    const DetectorConfig cfg = ckpt.config.get<DetectorConfig>();
    Detector<float> net = init_detector<float>(cfg, 0);
    load_params(ckpt, net.params);
    return net;
}

// --- pretraining ----------------------------------------------------------------

struct DetectorTrainConfig {
    int steps = 1500;
    int batch_size = 8;
    double learning_rate = 1e-3;

    bool operator==(const DetectorTrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DetectorTrainConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate}};
}

inline void from_json(const nlohmann::json& j, DetectorTrainConfig& c) {
    try {
        c.steps = j.at("steps").get<int>();
        c.batch_size = j.at("batch_size").get<int>();
        c.learning_rate = j.at("learning_rate").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad detector training config: ") + e.what());
    }
}

struct DetectorTrainResult {
    Detector<float> net;
    std::vector<double> losses;  // one entry per step
    Checkpoint checkpoint;       // stamped with the training provenance
};

namespace detail {

// Loads every (image, landmarks) pair a manifest references.
inline void load_detector_corpus(const std::string& manifest_path, int n_landmarks,
                                 std::vector<ImageF>& imgs, std::vector<LandmarkSet>& gts) {
    const auto records = read_manifest(manifest_path);
    require(!records.empty(), Err::EmptyCorpus, "detector training corpus is empty");
    imgs.reserve(records.size());
    gts.reserve(records.size());
    for (const auto& rec : records) {
        imgs.push_back(png_read(resolve_path(manifest_path, rec.image_path)));
        gts.push_back(load_landmarks_json(resolve_path(manifest_path, rec.landmarks_path)));
        require(gts.back().n == n_landmarks, Err::CountMismatch,
                "corpus landmark count does not match the detector config");
    }
}

// Mini-batch heatmap regression; shared by pre-training and fine-tuning.
// Draw order per step: one corpus index per batch slot.
inline std::vector<double> fit_detector(Detector<float>& net, const std::vector<ImageF>& imgs,
                                        const std::vector<LandmarkSet>& gts,
                                        const DetectorTrainConfig& tcfg, Rng& rng,
                                        RunLog* log = nullptr) {
    const int in = net.cfg.input_resolution, hr = net.cfg.heatmap_resolution();
    const int N = net.cfg.n_landmarks, B = tcfg.batch_size;
    nn::Adam<float> opt;
    opt.lr = tcfg.learning_rate;
    opt.attach(net.params);
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(tcfg.steps));

    for (int step = 0; step < tcfg.steps; ++step) {
        const auto tick = std::chrono::steady_clock::now();
        Tensor<float> batch({B, 3, in, in});
        Tensor<float> target({B, N, hr, hr});
        for (int b = 0; b < B; ++b) {
            const auto idx =
                static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(imgs.size())));
            const Tensor<float> x = detector_input<float>(imgs[idx], in);
            std::copy(x.v.begin(), x.v.end(),
                      batch.v.begin() + static_cast<std::ptrdiff_t>(b) * x.numel());
            const HeatmapStack hm = encode_heatmaps(gts[idx], hr, net.cfg.sigma_px);
            std::copy(hm.maps.v.begin(), hm.maps.v.end(),
                      target.v.begin() + static_cast<std::ptrdiff_t>(b) * hm.maps.numel());
        }
        net.params.zero_grad();
        auto pred = detector_forward(net, nn::leaf(std::move(batch)));
        auto loss = nn::mse_loss(pred, target);
        losses.push_back(static_cast<double>(loss.node->val.v[0]));
        nn::backward(loss);
        opt.step(net.params);
        if (log) log->line(step + 1, losses.back(), tcfg.learning_rate, wall_ms_since(tick));
    }
    return losses;
}

}  // namespace detail

// Supervised heatmap regression on (image, landmarks) pairs from a corpus
// manifest. Deterministic in the seed; single-threaded.
inline DetectorTrainResult pretrain_detector(const std::string& manifest_path,
                                             const DetectorConfig& dcfg,
                                             const DetectorTrainConfig& tcfg, std::uint64_t seed,
                                             const std::string& run_dir = {}) {
    require(tcfg.steps >= 0 && tcfg.batch_size > 0 && tcfg.learning_rate > 0, Err::BadConfig,
            "bad detector training config");
    std::vector<ImageF> imgs;
    std::vector<LandmarkSet> gts;
    detail::load_detector_corpus(manifest_path, dcfg.n_landmarks, imgs, gts);

    DetectorTrainResult res{init_detector<float>(dcfg, seed), {}, {}};
    Rng rng(derive_seed(seed, "detector-pretrain"));
    RunLog log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        log = RunLog((std::filesystem::path(run_dir) / "run_log.jsonl").string());
    }
    res.losses = detail::fit_detector(res.net, imgs, gts, tcfg, rng, log.active() ? &log : nullptr);

    res.checkpoint = detector_to_checkpoint(
        res.net, {{"pretrained", true}, {"finetuned", false}, {"steps", tcfg.steps}});
    return res;
}

}  // namespace ldlab
