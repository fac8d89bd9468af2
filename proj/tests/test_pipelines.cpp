#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "ldlab/faces.hpp"
#include "ldlab/pipelines.hpp"

using namespace ldlab;
using Catch::Approx;

namespace {

template <typename F>
bool throws_code(Err want, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code() == want;
    }
    return false;
}

bool params_bitwise(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b) {
    if (a.items.size() != b.items.size()) return false;
    for (std::size_t i = 0; i < a.items.size(); ++i) {
        if (a.items[i].first != b.items[i].first) return false;
        if (a.items[i].second.node->val.v != b.items[i].second.node->val.v) return false;
    }
    return true;
}

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

DenoiserConfig tiny_denoiser_cfg() {
    DenoiserConfig dc;
    dc.base_width = 4;
    dc.timestep_embedding_dim = 8;
    return dc;
}

TrainConfig tiny_train_cfg(int steps) {
    TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = 2;
    tc.learning_rate = 1e-3;
    tc.T = 20;
    tc.seed = 4;
    return tc;
}

Checkpoint identity_ae_ckpt() {
    return autoencoder_to_checkpoint(init_autoencoder<float>(AutoencoderConfig{}, 0),
                                     {{"trained", false}});
}

// Built once; 16 px renders keep the tiny trainings fast.
const std::string& stage1_manifest() {
    static const std::string m = [] {
        const auto dir = std::filesystem::temp_directory_path() / "ldlab_pipe_s1";
        std::filesystem::remove_all(dir);
        return build_stage1_corpus(6, 31, dir.string(), 16);
    }();
    return m;
}

const std::string& stage2_manifest() {
    static const std::string m = [] {
        const auto dir = std::filesystem::temp_directory_path() / "ldlab_pipe_s2";
        std::filesystem::remove_all(dir);
        return build_stage2_corpus(3, {1, 2}, 7, dir.string(), 16);
    }();
    return m;
}

const Checkpoint& quick_stage1_ckpt() {
    static const Checkpoint c =
        train_stage1(stage1_manifest(), identity_ae_ckpt(), tiny_denoiser_cfg(), tiny_train_cfg(3))
            .checkpoint;
    return c;
}

const Checkpoint& quick_stage2_ckpt() {
    static const Checkpoint c =
        train_stage2(quick_stage1_ckpt(), stage2_manifest(), identity_ae_ckpt(), tiny_train_cfg(3))
            .checkpoint;
    return c;
}

}  // namespace

TEST_CASE("train config validates and round trips", "[pipelines]") {
    TrainConfig c;
    validate(c);  // defaults are legal

    nlohmann::json j = c;
    REQUIRE(j.at("schedule").get<std::string>() == "cosine");
    REQUIRE(j.get<TrainConfig>() == c);

    auto bad = [](auto&& mutate) {
        TrainConfig t;
        mutate(t);
        return throws_code(Err::BadConfig, [&] { validate(t); });
    };
    REQUIRE(bad([](TrainConfig& t) { t.steps = -1; }));
    REQUIRE(bad([](TrainConfig& t) { t.batch_size = 0; }));
    REQUIRE(bad([](TrainConfig& t) { t.learning_rate = 0.0; }));
    REQUIRE(bad([](TrainConfig& t) { t.T = 0; }));
    REQUIRE(bad([](TrainConfig& t) { t.beta_end = 1.0; }));
    REQUIRE(bad([](TrainConfig& t) { t.cfg_drop_prob = 0.51; }));
    REQUIRE(bad([](TrainConfig& t) { t.cfg_drop_prob = -0.01; }));
    REQUIRE(bad([](TrainConfig& t) { t.checkpoint_every = -1; }));

    j.erase("T");
    REQUIRE(throws_code(Err::BadFormat, [&] { (void)j.get<TrainConfig>(); }));

    SamplerConfig s;
    nlohmann::json js = s;
    REQUIRE(js.get<SamplerConfig>() == s);
    js.erase("guidance_w");
    REQUIRE(throws_code(Err::BadFormat, [&] { (void)js.get<SamplerConfig>(); }));
}

TEST_CASE("timestep draws are uniform over 1..T", "[pipelines]") {
    const int T = 200;
    const int n = 100000;
    Rng rng(derive_seed(42, "timestep-chi2"));
    std::vector<int> counts(static_cast<std::size_t>(T), 0);
    for (int i = 0; i < n; ++i) {
        const int t = draw_timestep(rng, T);
        REQUIRE(t >= 1);
        REQUIRE(t <= T);
        ++counts[static_cast<std::size_t>(t - 1)];
    }
    const double expected = static_cast<double>(n) / T;
    double chi2 = 0.0;
    for (int c : counts) {
        const double d = c - expected;
        chi2 += d * d / expected;
    }
    // chi-square critical value at alpha=0.01 for df=199 (Wilson-Hilferty)
    REQUIRE(chi2 < 248.3);
    REQUIRE(*std::min_element(counts.begin(), counts.end()) > 0);

    Rng one(1);
    for (int i = 0; i < 10; ++i) REQUIRE(draw_timestep(one, 1) == 1);
    REQUIRE(throws_code(Err::BadRange, [&] { draw_timestep(one, 0); }));
}

TEST_CASE("style drop matches its probability", "[pipelines]") {
    SECTION("probability zero keeps every token") {
        Rng rng(derive_seed(9, "drop-zero"));
        for (int i = 0; i < 10000; ++i) REQUIRE(dropped_style(rng, 7, 0.0) == 7);
    }
    SECTION("frequency tracks cfg_drop_prob") {
        Rng rng(derive_seed(9, "drop-freq"));
        int drops = 0;
        for (int i = 0; i < 10000; ++i)
            if (dropped_style(rng, 7, 0.1) == 0) ++drops;
        const double freq = drops / 10000.0;
        REQUIRE(freq >= 0.09);
        REQUIRE(freq <= 0.11);
    }
    SECTION("half rate") {
        Rng rng(derive_seed(9, "drop-half"));
        int drops = 0;
        for (int i = 0; i < 10000; ++i)
            if (dropped_style(rng, 3, 0.5) == 0) ++drops;
        REQUIRE(std::abs(drops / 10000.0 - 0.5) < 0.02);
    }
}

TEST_CASE("stage-1 training initializes, repeats, and stamps", "[pipelines]") {
    const DenoiserConfig dc = tiny_denoiser_cfg();
    const Checkpoint ae = identity_ae_ckpt();

    SECTION("zero steps returns the initialization") {
        const auto res = train_stage1(stage1_manifest(), ae, dc, tiny_train_cfg(0));
        REQUIRE(res.losses.empty());
        REQUIRE(params_bitwise(res.net.params, init_denoiser<float>(dc, 4).params));
        REQUIRE(res.checkpoint.kind == "denoiser");
        REQUIRE(res.checkpoint.meta.at("stage").get<int>() == 1);
        REQUIRE(res.checkpoint.meta.at("T").get<int>() == 20);
        REQUIRE(res.checkpoint.meta.at("schedule").get<std::string>() == "cosine");
    }

    SECTION("seed-fixed runs are identical") {
        const auto a = train_stage1(stage1_manifest(), ae, dc, tiny_train_cfg(10));
        const auto b = train_stage1(stage1_manifest(), ae, dc, tiny_train_cfg(10));
        REQUIRE(a.losses.size() == 10);
        REQUIRE(a.losses == b.losses);
        REQUIRE(params_bitwise(a.net.params, b.net.params));
        TrainConfig other = tiny_train_cfg(10);
        other.seed = 5;
        const auto c = train_stage1(stage1_manifest(), ae, dc, other);
        REQUIRE_FALSE(a.losses == c.losses);
    }

    SECTION("corpus and autoencoder contracts") {
        const auto dir = std::filesystem::temp_directory_path() / "ldlab_pipe_empty";
        std::filesystem::create_directories(dir);
        const auto empty = (dir / "manifest.jsonl").string();
        write_manifest(empty, {});
        REQUIRE(throws_code(Err::EmptyCorpus,
                            [&] { train_stage1(empty, ae, dc, tiny_train_cfg(1)); }));

        DenoiserConfig four = dc;
        four.latent_channels = 4;
        REQUIRE(throws_code(Err::IncompatibleAutoencoder, [&] {
            train_stage1(stage1_manifest(), ae, four, tiny_train_cfg(1));
        }));

        DenoiserConfig two = dc;
        two.condition_channels = 2;
        REQUIRE(throws_code(Err::BadConfig, [&] {
            train_stage1(stage1_manifest(), ae, two, tiny_train_cfg(1));
        }));

        const auto det = init_detector<float>(DetectorConfig{}, 0);
        REQUIRE(throws_code(Err::CheckpointMismatch, [&] {
            train_stage1(stage1_manifest(), detector_to_checkpoint(det, {{"pretrained", true}}),
                         dc, tiny_train_cfg(1));
        }));
    }

    SECTION("run directory carries log and periodic checkpoints") {
        const auto dir = std::filesystem::temp_directory_path() / "ldlab_pipe_run";
        std::filesystem::remove_all(dir);
        TrainConfig tc = tiny_train_cfg(10);
        tc.checkpoint_every = 4;
        const auto res = train_stage1(stage1_manifest(), ae, dc, tc, dir.string());

        for (const char* name : {"1-4.ckpt", "1-8.ckpt", "1-10.ckpt"})
            REQUIRE(std::filesystem::exists(dir / name));
        REQUIRE_FALSE(std::filesystem::exists(dir / "1-12.ckpt"));
        const Checkpoint mid = load_checkpoint((dir / "1-4.ckpt").string());
        REQUIRE(mid.kind == "denoiser");
        REQUIRE(mid.meta.at("stage").get<int>() == 1);
        REQUIRE(mid.meta.at("steps").get<int>() == 4);

        std::ifstream log((dir / "run_log.jsonl").string());
        REQUIRE(log.good());
        std::string line;
        int step = 0;
        while (std::getline(log, line)) {
            const auto j = nlohmann::json::parse(line);
            ++step;
            REQUIRE(j.at("step").get<int>() == step);
            REQUIRE(j.at("loss").get<double>() == Approx(res.losses[step - 1]));
            REQUIRE(j.at("lr").get<double>() == Approx(tc.learning_rate));
            REQUIRE(j.at("wall_ms").get<double>() >= 0.0);
        }
        REQUIRE(step == 10);
        std::filesystem::remove_all(dir);
    }
}

TEST_CASE("stage-2 gates its input and instruments the drop", "[pipelines]") {
    const Checkpoint ae = identity_ae_ckpt();

    SECTION("requires a stage-1 checkpoint") {
        REQUIRE(throws_code(Err::WrongStage, [&] {
            train_stage2(quick_stage2_ckpt(), stage2_manifest(), ae, tiny_train_cfg(1));
        }));
        Checkpoint unstaged = quick_stage1_ckpt();
        unstaged.meta.erase("stage");
        REQUIRE(throws_code(Err::WrongStage, [&] {
            train_stage2(unstaged, stage2_manifest(), ae, tiny_train_cfg(1));
        }));
        const auto det = init_detector<float>(DetectorConfig{}, 0);
        REQUIRE(throws_code(Err::CheckpointMismatch, [&] {
            train_stage2(detector_to_checkpoint(det, {{"pretrained", true}}), stage2_manifest(),
                         ae, tiny_train_cfg(1));
        }));
    }

    SECTION("requires styled records") {
        REQUIRE(throws_code(Err::OutOfRange, [&] {
            train_stage2(quick_stage1_ckpt(), stage1_manifest(), ae, tiny_train_cfg(1));
        }));
        const auto dir = std::filesystem::temp_directory_path() / "ldlab_pipe_empty2";
        std::filesystem::create_directories(dir);
        const auto empty = (dir / "manifest.jsonl").string();
        write_manifest(empty, {});
        REQUIRE(throws_code(Err::EmptyCorpus, [&] {
            train_stage2(quick_stage1_ckpt(), empty, ae, tiny_train_cfg(1));
        }));
    }

    SECTION("drop accounting and stamps") {
        TrainConfig keep = tiny_train_cfg(10);
        keep.cfg_drop_prob = 0.0;
        const auto a = train_stage2(quick_stage1_ckpt(), stage2_manifest(), ae, keep);
        REQUIRE(a.style_drops == 0);
        REQUIRE(a.checkpoint.meta.at("stage").get<int>() == 2);

        TrainConfig half = tiny_train_cfg(10);
        half.cfg_drop_prob = 0.5;
        const auto b = train_stage2(quick_stage1_ckpt(), stage2_manifest(), ae, half);
        REQUIRE(b.style_drops > 0);

        const auto c = train_stage2(quick_stage1_ckpt(), stage2_manifest(), ae, half);
        REQUIRE(b.losses == c.losses);
        REQUIRE(b.style_drops == c.style_drops);
        REQUIRE(params_bitwise(b.net.params, c.net.params));
    }
}

TEST_CASE("synthetic generation writes replayable provenance", "[pipelines]") {
    const Checkpoint ae_ckpt = identity_ae_ckpt();
    const Checkpoint& s2 = quick_stage2_ckpt();
    SamplerConfig scfg;
    scfg.ddim_steps = 2;
    scfg.resolution = 16;

    const auto base = std::filesystem::temp_directory_path() / "ldlab_pipe_gen";
    std::filesystem::remove_all(base);

    const std::string manifest = generate_synthetic_dataset(
        s2, ae_ckpt, stage2_manifest(), {1, 2}, 3, EditConfig{}, scfg, 9, (base / "a").string());
    const auto records = read_manifest(manifest);

    SECTION("records carry full provenance") {
        REQUIRE(records.size() == 6);
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            REQUIRE(r.style_id == (i < 3 ? 1 : 2));
            REQUIRE(r.edit_plan.has_value());
            REQUIRE(r.edit_plan->ops[0].kind != r.edit_plan->ops[1].kind);
            REQUIRE(r.landmark_source.has_value());
            REQUIRE(*r.landmark_source >= 0);
            REQUIRE(*r.landmark_source < 6);
            REQUIRE(r.source_landmarks.has_value());
            REQUIRE(r.source_landmarks->n == 68);
            REQUIRE(std::filesystem::exists(resolve_path(manifest, r.image_path)));
            REQUIRE(std::filesystem::exists(resolve_path(manifest, r.landmarks_path)));
        }
    }

    SECTION("saved landmarks are the edited ones") {
        for (const auto& r : {records[0], records[5]}) {
            const LandmarkSet saved = load_landmarks_json(resolve_path(manifest, r.landmarks_path));
            const LandmarkSet edited = apply_plan(*r.source_landmarks, *r.edit_plan);
            REQUIRE(saved.n == edited.n);
            for (int k = 0; k < saved.n; ++k) {
                REQUIRE(saved.points[k].x == Approx(edited.points[k].x).margin(1e-12));
                REQUIRE(saved.points[k].y == Approx(edited.points[k].y).margin(1e-12));
            }
        }
    }

    SECTION("same seed reproduces bytes, other seeds differ") {
        const std::string again = generate_synthetic_dataset(
            s2, ae_ckpt, stage2_manifest(), {1, 2}, 3, EditConfig{}, scfg, 9, (base / "b").string());
        REQUIRE(read_bytes(again) == read_bytes(manifest));
        for (const auto& r : read_manifest(again))
            REQUIRE(read_bytes(resolve_path(again, r.image_path)) ==
                    read_bytes(resolve_path(manifest, r.image_path)));

        const std::string other = generate_synthetic_dataset(
            s2, ae_ckpt, stage2_manifest(), {1, 2}, 3, EditConfig{}, scfg, 10, (base / "c").string());
        REQUIRE_FALSE(read_bytes(other) == read_bytes(manifest));
    }

    SECTION("replay regenerates identical image bytes") {
        const Denoiser<float> net = denoiser_from_checkpoint(s2);
        const Autoencoder<float> dec = autoencoder_from_checkpoint(ae_ckpt);
        const NoiseSchedule sched = detail::schedule_from_meta(s2.meta);
        for (const auto& r : {records[1], records[4]}) {
            const SyntheticSample s = replay_synthetic_record(net, dec, sched, r, scfg);
            REQUIRE(png_encode(s.image) ==
                    read_file_bytes(resolve_path(manifest, r.image_path)));
        }
        DatasetRecord bare = records[0];
        bare.edit_plan.reset();
        REQUIRE(throws_code(Err::BadFormat,
                            [&] { replay_synthetic_record(net, dec, sched, bare, scfg); }));
    }

    SECTION("input gating") {
        REQUIRE(throws_code(Err::WrongStage, [&] {
            generate_synthetic_dataset(quick_stage1_ckpt(), ae_ckpt, stage2_manifest(), {1}, 1,
                                       EditConfig{}, scfg, 0, (base / "x").string());
        }));
        REQUIRE(throws_code(Err::OutOfRange, [&] {
            generate_synthetic_dataset(s2, ae_ckpt, stage2_manifest(), {0}, 1, EditConfig{}, scfg,
                                       0, (base / "x").string());
        }));
        REQUIRE(throws_code(Err::OutOfRange, [&] {
            generate_synthetic_dataset(s2, ae_ckpt, stage2_manifest(), {26}, 1, EditConfig{}, scfg,
                                       0, (base / "x").string());
        }));
        REQUIRE(throws_code(Err::BadConfig, [&] {
            generate_synthetic_dataset(s2, ae_ckpt, stage2_manifest(), {1}, 0, EditConfig{}, scfg,
                                       0, (base / "x").string());
        }));
        const auto dir = std::filesystem::temp_directory_path() / "ldlab_pipe_empty3";
        std::filesystem::create_directories(dir);
        const auto empty = (dir / "manifest.jsonl").string();
        write_manifest(empty, {});
        REQUIRE(throws_code(Err::EmptyCorpus, [&] {
            generate_synthetic_dataset(s2, ae_ckpt, empty, {1}, 1, EditConfig{}, scfg, 0,
                                       (base / "x").string());
        }));
    }
}

TEST_CASE("detector fine-tune stamps and validates", "[pipelines]") {
    DetectorConfig dcfg;
    dcfg.input_resolution = 32;
    dcfg.base_width = 2;
    DetectorTrainConfig tc;
    tc.steps = 3;
    tc.batch_size = 2;
    const auto pre = pretrain_detector(stage1_manifest(), dcfg, tc, 1);

    SECTION("zero steps keeps parameters, flips the stamp") {
        DetectorTrainConfig zero = tc;
        zero.steps = 0;
        const auto res = finetune_detector(pre.checkpoint, stage2_manifest(), zero, 2);
        REQUIRE(res.losses.empty());
        REQUIRE(params_bitwise(res.net.params, pre.net.params));
        REQUIRE(res.checkpoint.meta.at("finetuned").get<bool>() == true);
        REQUIRE(res.checkpoint.meta.at("pretrained").get<bool>() == true);
    }

    SECTION("seed-fixed runs are identical") {
        const auto a = finetune_detector(pre.checkpoint, stage2_manifest(), tc, 2);
        const auto b = finetune_detector(pre.checkpoint, stage2_manifest(), tc, 2);
        REQUIRE(a.losses == b.losses);
        REQUIRE(params_bitwise(a.net.params, b.net.params));
        const auto c = finetune_detector(pre.checkpoint, stage2_manifest(), tc, 3);
        REQUIRE_FALSE(a.losses == c.losses);
    }

    SECTION("input contracts") {
        const auto dir = std::filesystem::temp_directory_path() / "ldlab_pipe_empty4";
        std::filesystem::create_directories(dir);
        const auto empty = (dir / "manifest.jsonl").string();
        write_manifest(empty, {});
        REQUIRE(throws_code(Err::EmptyCorpus,
                            [&] { finetune_detector(pre.checkpoint, empty, tc, 0); }));

        const auto raw = init_detector<float>(dcfg, 0);
        REQUIRE(throws_code(Err::CheckpointMismatch, [&] {
            finetune_detector(detector_to_checkpoint(raw, {{"pretrained", false}}),
                              stage2_manifest(), tc, 0);
        }));
        REQUIRE(throws_code(Err::CheckpointMismatch, [&] {
            finetune_detector(identity_ae_ckpt(), stage2_manifest(), tc, 0);
        }));
    }
}

TEST_CASE("generation scales to the paper's record count", "[pipelines][slow]") {
    std::vector<int> styles(25);
    for (int i = 0; i < 25; ++i) styles[i] = i + 1;
    SamplerConfig scfg;
    scfg.ddim_steps = 1;
    scfg.resolution = 8;

    const auto dir = std::filesystem::temp_directory_path() / "ldlab_pipe_10k";
    std::filesystem::remove_all(dir);
    const std::string manifest =
        generate_synthetic_dataset(quick_stage2_ckpt(), identity_ae_ckpt(), stage2_manifest(),
                                   styles, 400, EditConfig{}, scfg, 123, dir.string());
    const auto records = read_manifest(manifest);
    REQUIRE(records.size() == 10000);
    REQUIRE(records.front().style_id == 1);
    REQUIRE(records.back().style_id == 25);
    for (std::size_t i : {std::size_t(0), std::size_t(4999), std::size_t(9999)}) {
        REQUIRE(records[i].edit_plan.has_value());
        REQUIRE(records[i].source_landmarks.has_value());
        REQUIRE(std::filesystem::exists(resolve_path(manifest, records[i].image_path)));
    }
    std::filesystem::remove_all(dir);
}
