#pragma once

// Two-stage training orchestration and synthetic dataset generation.
//
// Stage 1 trains the conditional denoiser on the base domain with the null
// style token. Stage 2 fine-tunes every parameter on a small multi-style
// corpus, replacing the style token with 0 at rate cfg_drop_prob so
// classifier-free guidance works at inference. Generation samples landmarks
// from the stage-2 pool, applies a fresh two-op edit plan, runs guided DDIM,
// and writes records whose provenance (source landmarks, edit plan, style,
// seed) replays to identical bytes. Everything here is single-threaded and
// deterministic in the seeds.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ldlab/autoencoder.hpp"
#include "ldlab/checkpoint.hpp"
#include "ldlab/core/error.hpp"
#include "ldlab/core/image.hpp"
#include "ldlab/core/png_io.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/core/runlog.hpp"
#include "ldlab/core/tensor.hpp"
#include "ldlab/dataset.hpp"
#include "ldlab/denoiser.hpp"
#include "ldlab/detector.hpp"
#include "ldlab/diffusion.hpp"
#include "ldlab/editing.hpp"
#include "ldlab/landmarks.hpp"
#include "ldlab/nn/autograd.hpp"
#include "ldlab/nn/modules.hpp"

namespace ldlab {

// --- configs -----------------------------------------------------------------

struct TrainConfig {
    int steps = 2000;
    int batch_size = 4;
    double learning_rate = 1e-5;
    int T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    ScheduleKind schedule = ScheduleKind::cosine;
    double cfg_drop_prob = 0.1;  // stage 2 only
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0 = final checkpoint only

    bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& c) {
    require(c.steps >= 0, Err::BadConfig, "steps must be >= 0");
    require(c.batch_size > 0, Err::BadConfig, "batch_size must be positive");
    require(c.learning_rate > 0, Err::BadConfig, "learning_rate must be positive");
    require(c.T >= 1, Err::BadConfig, "T must be >= 1");
    require(c.beta_start > 0 && c.beta_start <= c.beta_end && c.beta_end < 1, Err::BadConfig,
            "betas must satisfy 0 < beta_start <= beta_end < 1");
    require(c.cfg_drop_prob >= 0.0 && c.cfg_drop_prob <= 0.5, Err::BadConfig,
            "cfg_drop_prob must lie in [0, 0.5]");
    require(c.checkpoint_every >= 0, Err::BadConfig, "checkpoint_every must be >= 0");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"T", c.T},
                       {"beta_start", c.beta_start},
                       {"beta_end", c.beta_end},
                       {"schedule", schedule_kind_name(c.schedule)},
                       {"cfg_drop_prob", c.cfg_drop_prob},
                       {"seed", c.seed},
                       {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    try {
        j.at("steps").get_to(c.steps);
        j.at("batch_size").get_to(c.batch_size);
        j.at("learning_rate").get_to(c.learning_rate);
        j.at("T").get_to(c.T);
        j.at("beta_start").get_to(c.beta_start);
        j.at("beta_end").get_to(c.beta_end);
        c.schedule = schedule_kind_from_name(j.at("schedule").get<std::string>());
        j.at("cfg_drop_prob").get_to(c.cfg_drop_prob);
        j.at("seed").get_to(c.seed);
        j.at("checkpoint_every").get_to(c.checkpoint_every);
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad train config: ") + e.what());
    }
}

struct SamplerConfig {
    int ddim_steps = 50;
    double guidance_w = 2.0;
    int resolution = 64;  // output image side; the latent side is resolution / downsample factor

    bool operator==(const SamplerConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const SamplerConfig& c) {
    j = nlohmann::json{
        {"ddim_steps", c.ddim_steps}, {"guidance_w", c.guidance_w}, {"resolution", c.resolution}};
}

inline void from_json(const nlohmann::json& j, SamplerConfig& c) {
    try {
        j.at("ddim_steps").get_to(c.ddim_steps);
        j.at("guidance_w").get_to(c.guidance_w);
        j.at("resolution").get_to(c.resolution);
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad sampler config: ") + e.what());
    }
}

// --- sampling primitives shared by both stages --------------------------------

// Uniform over 1..T inclusive.
inline int draw_timestep(Rng& rng, int T) {
    require(T >= 1, Err::BadRange, "draw_timestep needs T >= 1");
    return 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
}

// Classifier-free drop: keeps style_id with probability 1 - drop_prob, else
// returns the null token. Always consumes exactly one uniform draw.
inline int dropped_style(Rng& rng, int style_id, double drop_prob) {
    return rng.uniform() < drop_prob ? 0 : style_id;
}

// --- training ------------------------------------------------------------------

struct StageResult {
    Denoiser<float> net;
    std::vector<double> losses;  // one entry per step
    Checkpoint checkpoint;       // stamped with stage and schedule
    int style_drops = 0;         // stage 2: samples whose style token was nulled
};

namespace detail {

struct LatentRecord {
    Tensor<float> z0;    // (latent_channels, h, w)
    Tensor<float> cond;  // (3, h, w) rasterized landmarks in [0,1]
    int style_id = 0;
};

// Encodes every corpus image and rasterizes its landmarks at the latent
// resolution, so the training loop only copies slices.
inline std::vector<LatentRecord> load_latent_corpus(const std::string& manifest_path,
                                                    const Autoencoder<float>& ae) {
    const auto records = read_manifest(manifest_path);
    require(!records.empty(), Err::EmptyCorpus, "training corpus is empty");
    std::vector<LatentRecord> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        LatentRecord lr;
        lr.z0 = encode(ae, png_read(resolve_path(manifest_path, rec.image_path)));
        RasterSpec spec;
        spec.height = lr.z0.dim(1);
        spec.width = lr.z0.dim(2);
        lr.cond = image_to_chw<float>(
            rasterize(load_landmarks_json(resolve_path(manifest_path, rec.landmarks_path)), spec));
        lr.style_id = rec.style_id;
        out.push_back(std::move(lr));
    }
    return out;
}

inline void stamp_schedule(nlohmann::json& meta, const TrainConfig& c) {
    meta["T"] = c.T;
    meta["beta_start"] = c.beta_start;
    meta["beta_end"] = c.beta_end;
    meta["schedule"] = schedule_kind_name(c.schedule);
}

inline NoiseSchedule schedule_from_meta(const nlohmann::json& meta) {
    try {
        return build_schedule(meta.at("T").get<int>(), meta.at("beta_start").get<double>(),
                              meta.at("beta_end").get<double>(),
                              schedule_kind_from_name(meta.at("schedule").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        fail(Err::CheckpointMismatch, std::string("checkpoint lacks schedule metadata: ") + e.what());
    }
}

// Denoising-loss gradient steps shared by both stages. style_of(record_index)
// picks the token for each drawn sample; draws per batch slot happen in the
// fixed order index, timestep, style, noise. Writes the run log and periodic
// {stage}-{step}.ckpt checkpoints when run_dir is set.
template <typename StyleFn>
std::vector<double> run_stage_training(Denoiser<float>& net,
                                       const std::vector<LatentRecord>& corpus,
                                       const NoiseSchedule& sched, const TrainConfig& tcfg,
                                       Rng& rng, int stage, const std::string& run_dir,
                                       const nlohmann::json& base_meta, StyleFn&& style_of) {
    const int B = tcfg.batch_size;
    const int C = corpus[0].z0.dim(0), H = corpus[0].z0.dim(1), W = corpus[0].z0.dim(2);
    const auto plane = static_cast<std::ptrdiff_t>(corpus[0].z0.numel());
    const auto cplane = static_cast<std::ptrdiff_t>(corpus[0].cond.numel());

    nn::Adam<float> opt;
    opt.lr = tcfg.learning_rate;
    opt.attach(net.params);

    RunLog log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        log = RunLog((std::filesystem::path(run_dir) / "run_log.jsonl").string());
    }

    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(tcfg.steps));
    for (int step = 1; step <= tcfg.steps; ++step) {
        const auto tick = std::chrono::steady_clock::now();
        Tensor<float> xb({B, C, H, W});
        Tensor<float> eps_b({B, C, H, W});
        Tensor<float> cb({B, 3, H, W});
        std::vector<int> ts(static_cast<std::size_t>(B));
        std::vector<int> styles(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
            const auto idx =
                static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(corpus.size())));
            const LatentRecord& r = corpus[idx];
            const int t = draw_timestep(rng, tcfg.T);
            ts[static_cast<std::size_t>(b)] = t;
            styles[static_cast<std::size_t>(b)] = style_of(idx, rng);
            const Tensor<float> eps = randn<float>(r.z0.dims, rng);
            const Tensor<float> zt = forward_sample(r.z0, t, eps, sched);
            std::copy(zt.v.begin(), zt.v.end(), xb.v.begin() + b * plane);
            std::copy(eps.v.begin(), eps.v.end(), eps_b.v.begin() + b * plane);
            std::copy(r.cond.v.begin(), r.cond.v.end(), cb.v.begin() + b * cplane);
        }
        net.params.zero_grad();
        auto pred =
            predict_noise_batch(net, nn::leaf(std::move(xb)), ts, styles, nn::leaf(std::move(cb)));
        auto loss = nn::mse_loss(pred, eps_b);
        losses.push_back(static_cast<double>(loss.node->val.v[0]));
        nn::backward(loss);
        opt.step(net.params);
        log.line(step, losses.back(), tcfg.learning_rate, wall_ms_since(tick));
        if (!run_dir.empty() && tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0 &&
            step < tcfg.steps) {
            nlohmann::json meta = base_meta;
            meta["steps"] = step;
            const auto path = std::filesystem::path(run_dir) /
                              (std::to_string(stage) + "-" + std::to_string(step) + ".ckpt");
            save_checkpoint(path.string(), denoiser_to_checkpoint(net, std::move(meta)));
        }
    }
    return losses;
}

}  // namespace detail

// Base-domain training: every sample carries the null style token.
inline StageResult train_stage1(const std::string& corpus_manifest,
                                const Checkpoint& autoencoder_ckpt, const DenoiserConfig& dcfg,
                                const TrainConfig& tcfg, const std::string& run_dir = {}) {
    validate(dcfg);
    validate(tcfg);
    require(dcfg.condition_channels == 3, Err::BadConfig,
            "rasterized landmark conditioning carries 3 channels");
    const Autoencoder<float> ae = autoencoder_from_checkpoint(autoencoder_ckpt);
    require(ae.cfg.latent_channels == dcfg.latent_channels, Err::IncompatibleAutoencoder,
            "autoencoder latent channels disagree with the denoiser config");
    const auto corpus = detail::load_latent_corpus(corpus_manifest, ae);

    StageResult res{init_denoiser<float>(dcfg, tcfg.seed), {}, {}, 0};
    nlohmann::json meta{{"stage", 1}, {"steps", tcfg.steps}};
    detail::stamp_schedule(meta, tcfg);
    if (tcfg.steps > 0) {
        const NoiseSchedule sched =
            build_schedule(tcfg.T, tcfg.beta_start, tcfg.beta_end, tcfg.schedule);
        Rng rng(derive_seed(tcfg.seed, "stage1-train"));
        res.losses = detail::run_stage_training(res.net, corpus, sched, tcfg, rng, 1, run_dir,
                                                meta, [](std::size_t, Rng&) { return 0; });
    }
    res.checkpoint = denoiser_to_checkpoint(res.net, std::move(meta));
    if (!run_dir.empty()) {
        const auto path =
            std::filesystem::path(run_dir) / ("1-" + std::to_string(tcfg.steps) + ".ckpt");
        save_checkpoint(path.string(), res.checkpoint);
    }
    return res;
}

// Multi-style fine-tune of everything, with classifier-free style drop.
inline StageResult train_stage2(const Checkpoint& stage1_ckpt,
                                const std::string& corpus_manifest,
                                const Checkpoint& autoencoder_ckpt, const TrainConfig& tcfg,
                                const std::string& run_dir = {}) {
    validate(tcfg);
    Denoiser<float> net = denoiser_from_checkpoint(stage1_ckpt);
    require(stage1_ckpt.meta.value("stage", 0) == 1, Err::WrongStage,
            "stage-2 training requires a stage-1 checkpoint");
    require(net.cfg.condition_channels == 3, Err::BadConfig,
            "rasterized landmark conditioning carries 3 channels");
    const Autoencoder<float> ae = autoencoder_from_checkpoint(autoencoder_ckpt);
    require(ae.cfg.latent_channels == net.cfg.latent_channels, Err::IncompatibleAutoencoder,
            "autoencoder latent channels disagree with the denoiser config");
    const auto corpus = detail::load_latent_corpus(corpus_manifest, ae);
    for (const auto& r : corpus)
        require(r.style_id >= 1 && r.style_id < net.cfg.style_vocab_size, Err::OutOfRange,
                "stage-2 corpus needs style ids in 1..vocab-1");

    StageResult res{std::move(net), {}, {}, 0};
    nlohmann::json meta{{"stage", 2}, {"steps", tcfg.steps}};
    detail::stamp_schedule(meta, tcfg);
    if (tcfg.steps > 0) {
        const NoiseSchedule sched =
            build_schedule(tcfg.T, tcfg.beta_start, tcfg.beta_end, tcfg.schedule);
        Rng rng(derive_seed(tcfg.seed, "stage2-train"));
        res.losses = detail::run_stage_training(
            res.net, corpus, sched, tcfg, rng, 2, run_dir, meta,
            [&](std::size_t idx, Rng& r) {
                const int s = dropped_style(r, corpus[idx].style_id, tcfg.cfg_drop_prob);
                if (s == 0) ++res.style_drops;
                return s;
            });
    }
    res.checkpoint = denoiser_to_checkpoint(res.net, std::move(meta));
    if (!run_dir.empty()) {
        const auto path =
            std::filesystem::path(run_dir) / ("2-" + std::to_string(tcfg.steps) + ".ckpt");
        save_checkpoint(path.string(), res.checkpoint);
    }
    return res;
}

// --- synthetic dataset generation ---------------------------------------------

struct SyntheticSample {
    ImageF image;
    LandmarkSet landmarks;  // post-edit, the supervision target
};

namespace detail {

inline void validate_sampler(const SamplerConfig& scfg, const Autoencoder<float>& ae,
                             const DenoiserConfig& dcfg, int T) {
    require(scfg.ddim_steps >= 1 && scfg.ddim_steps <= T, Err::BadConfig,
            "ddim_steps must lie in 1..T");
    require(std::isfinite(scfg.guidance_w), Err::BadConfig, "guidance_w must be finite");
    require(dcfg.condition_channels == 3, Err::BadConfig,
            "rasterized landmark conditioning carries 3 channels");
    const int f = ae.cfg.downsample_factor;
    require(scfg.resolution >= 8 * f && scfg.resolution % f == 0, Err::BadConfig,
            "resolution must be a multiple of the downsample factor, latent side >= 8");
    const int div = 1 << (dcfg.depth - 1);
    require((scfg.resolution / f) % div == 0, Err::BadConfig,
            "latent side must be divisible by 2^(depth-1)");
}

// One guided DDIM rollout from a record seed. The condition raster, the
// initial noise, and the chain are all functions of (edited, style, seed).
inline SyntheticSample sample_one(const Denoiser<float>& net, const Autoencoder<float>& ae,
                                  const NoiseSchedule& sched, const LandmarkSet& edited,
                                  int style_id, const SamplerConfig& scfg,
                                  std::uint64_t rec_seed) {
    const int hw = scfg.resolution / ae.cfg.downsample_factor;
    RasterSpec spec;
    spec.height = hw;
    spec.width = hw;
    const Tensor<float> craster = image_to_chw<float>(rasterize(edited, spec));
    const ConditionBundle cond{craster, style_id};
    const ConditionBundle uncond{craster, 0};

    Rng noise_rng(derive_seed(rec_seed, "ddim-noise"));
    const Tensor<float> zT = randn<float>({net.cfg.latent_channels, hw, hw}, noise_rng);
    const auto eps_fn = [&](const Tensor<float>& z, int t) {
        return cfg_combine(predict_noise(net, z, t, cond), predict_noise(net, z, t, uncond),
                           scfg.guidance_w);
    };
    const Tensor<float> z0 = run_ddim_chain(zT, sched, ddim_timesteps(sched.T, scfg.ddim_steps),
                                            std::function<Tensor<float>(const Tensor<float>&, int)>(eps_fn));
    return {decode(ae, z0), edited};
}

}  // namespace detail

// Renders per_style images for every listed style into out_dir (images/,
// landmarks/, manifest.jsonl) and returns the manifest path. Record order is
// style-major; every record replays bit-identically from its provenance.
inline std::string generate_synthetic_dataset(const Checkpoint& stage2_ckpt,
                                              const Checkpoint& autoencoder_ckpt,
                                              const std::string& pool_manifest,
                                              const std::vector<int>& style_ids, int per_style,
                                              const EditConfig& edit_cfg,
                                              const SamplerConfig& scfg, std::uint64_t rng_seed,
                                              const std::string& out_dir) {
    const Denoiser<float> net = denoiser_from_checkpoint(stage2_ckpt);
    require(stage2_ckpt.meta.value("stage", 0) == 2, Err::WrongStage,
            "synthetic generation requires a stage-2 checkpoint");
    const Autoencoder<float> ae = autoencoder_from_checkpoint(autoencoder_ckpt);
    require(ae.cfg.latent_channels == net.cfg.latent_channels, Err::IncompatibleAutoencoder,
            "autoencoder latent channels disagree with the denoiser config");
    const NoiseSchedule sched = detail::schedule_from_meta(stage2_ckpt.meta);
    detail::validate_sampler(scfg, ae, net.cfg, sched.T);
    require(per_style >= 1, Err::BadConfig, "per_style must be positive");
    require(!style_ids.empty(), Err::BadConfig, "style list is empty");
    for (int s : style_ids)
        require(s >= 1 && s < net.cfg.style_vocab_size, Err::OutOfRange,
                "style id outside 1..vocab-1");

    const auto pool = read_manifest(pool_manifest);
    require(!pool.empty(), Err::EmptyCorpus, "landmark pool manifest is empty");
    std::vector<LandmarkSet> pool_lms;
    pool_lms.reserve(pool.size());
    for (const auto& r : pool)
        pool_lms.push_back(load_landmarks_json(resolve_path(pool_manifest, r.landmarks_path)));

    std::error_code ec;
    std::filesystem::create_directories(std::filesystem::path(out_dir) / "images", ec);
    std::filesystem::create_directories(std::filesystem::path(out_dir) / "landmarks", ec);
    require(!ec, Err::IoError, "cannot create output directories under " + out_dir);

    std::vector<DatasetRecord> records;
    records.reserve(style_ids.size() * static_cast<std::size_t>(per_style));
    int gi = 0;
    for (int s : style_ids) {
        for (int k = 0; k < per_style; ++k, ++gi) {
            const std::uint64_t rec_seed =
                derive_seed(rng_seed, "synthetic-record", static_cast<std::uint64_t>(gi));
            Rng rec_rng(rec_seed);
            const int pool_idx =
                static_cast<int>(rec_rng.below(static_cast<std::uint64_t>(pool_lms.size())));
            const EditPlan plan = sample_edit_plan(derive_seed(rec_seed, "edit-plan"), edit_cfg);
            const LandmarkSet edited =
                apply_plan(pool_lms[static_cast<std::size_t>(pool_idx)], plan, edit_cfg);
            const SyntheticSample sample =
                detail::sample_one(net, ae, sched, edited, s, scfg, rec_seed);

            DatasetRecord rec;
            rec.image_path = "images/" + detail::index_name(gi, ".png");
            rec.landmarks_path = "landmarks/" + detail::index_name(gi, ".json");
            rec.style_id = s;
            rec.seed = rec_seed;
            rec.edit_plan = plan;
            rec.landmark_source = pool_idx;
            rec.source_landmarks = pool_lms[static_cast<std::size_t>(pool_idx)];
            png_write((std::filesystem::path(out_dir) / rec.image_path).string(), sample.image);
            save_landmarks_json((std::filesystem::path(out_dir) / rec.landmarks_path).string(),
                                sample.landmarks);
            records.push_back(std::move(rec));
        }
    }
    const std::string manifest = (std::filesystem::path(out_dir) / "manifest.jsonl").string();
    write_manifest(manifest, records);
    return manifest;
}

// Regenerates one synthetic sample purely from its manifest provenance; the
// pool is not needed because records carry their source landmarks inline.
inline SyntheticSample replay_synthetic_record(const Denoiser<float>& net,
                                               const Autoencoder<float>& ae,
                                               const NoiseSchedule& sched,
                                               const DatasetRecord& rec, const SamplerConfig& scfg,
                                               const EditConfig& edit_cfg = {}) {
    require(rec.edit_plan.has_value() && rec.source_landmarks.has_value(), Err::BadFormat,
            "record lacks synthetic provenance (edit_plan / source_landmarks)");
    const LandmarkSet edited = apply_plan(*rec.source_landmarks, *rec.edit_plan, edit_cfg);
    return detail::sample_one(net, ae, sched, edited, rec.style_id, scfg, rec.seed);
}

// --- detector fine-tuning -------------------------------------------------------

// Supervised fine-tune of a pretrained detector on a synthetic manifest.
inline DetectorTrainResult finetune_detector(const Checkpoint& detector_ckpt,
                                             const std::string& synthetic_manifest,
                                             const DetectorTrainConfig& tcfg, std::uint64_t seed,
                                             const std::string& run_dir = {}) {
    require(tcfg.steps >= 0 && tcfg.batch_size > 0 && tcfg.learning_rate > 0, Err::BadConfig,
            "bad detector training config");
    Detector<float> net = detector_from_checkpoint(detector_ckpt);
    require(detector_ckpt.meta.value("pretrained", false), Err::CheckpointMismatch,
            "fine-tuning requires a pretrained detector checkpoint");
    std::vector<ImageF> imgs;
    std::vector<LandmarkSet> gts;
    detail::load_detector_corpus(synthetic_manifest, net.cfg.n_landmarks, imgs, gts);

    DetectorTrainResult res{std::move(net), {}, {}};
    Rng rng(derive_seed(seed, "detector-finetune"));
    RunLog log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        log = RunLog((std::filesystem::path(run_dir) / "run_log.jsonl").string());
    }
    res.losses = detail::fit_detector(res.net, imgs, gts, tcfg, rng, log.active() ? &log : nullptr);
    res.checkpoint = detector_to_checkpoint(
        res.net, {{"pretrained", true}, {"finetuned", true}, {"steps", tcfg.steps}});
    return res;
}

}  // namespace ldlab
