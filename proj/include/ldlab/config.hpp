#pragma once

// Merged run configuration: one JSON document covering every module's knobs
// plus the global seed and output root. Parsing is strict (unknown keys are
// rejected) and partial (absent keys keep their defaults). The reserved top
// level keys "command" and "args" are ignored so a frozen config written by
// the CLI can be fed back in unchanged.
//
// All randomness flows from the single global seed: the parser copies it into
// the stage training config, and the CLI passes it to every module entry
// point, which derive their streams via tagged seed derivation.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldlab/autoencoder.hpp"
#include "ldlab/core/error.hpp"
#include "ldlab/denoiser.hpp"
#include "ldlab/detector.hpp"
#include "ldlab/editing.hpp"
#include "ldlab/pipelines.hpp"

namespace ldlab {

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_root = "runs";
    AutoencoderConfig autoencoder;
    AeTrainConfig autoencoder_train;
    DenoiserConfig denoiser;
    TrainConfig train;  // train.seed always mirrors the global seed
    DetectorConfig detector;
    DetectorTrainConfig detector_train;
    SamplerConfig sampler;
    EditConfig edit;
};

inline nlohmann::json edit_config_to_json(const EditConfig& c) {
    nlohmann::json strength = nlohmann::json::array();
    for (const auto& r : c.strength) strength.push_back({r.lo, r.hi});
    return nlohmann::json{{"enabled", c.enabled},
                          {"strength", strength},
                          {"max_rotation_rad", c.max_rotation_rad},
                          {"scale_range", {c.scale_range.lo, c.scale_range.hi}},
                          {"max_shear", c.max_shear},
                          {"max_offset", c.max_offset}};
}

inline EditConfig edit_config_from_json(const nlohmann::json& j) {
    EditConfig c;
    try {
        j.at("enabled").get_to(c.enabled);
        const auto& s = j.at("strength");
        require(s.is_array() && s.size() == kNumEditKinds, Err::BadFormat,
                "edit.strength needs one [lo,hi] pair per kind");
        for (std::size_t i = 0; i < c.strength.size(); ++i) {
            c.strength[i].lo = s.at(i).at(0).get<double>();
            c.strength[i].hi = s.at(i).at(1).get<double>();
        }
        j.at("max_rotation_rad").get_to(c.max_rotation_rad);
        c.scale_range.lo = j.at("scale_range").at(0).get<double>();
        c.scale_range.hi = j.at("scale_range").at(1).get<double>();
        j.at("max_shear").get_to(c.max_shear);
        j.at("max_offset").get_to(c.max_offset);
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad edit config: ") + e.what());
    }
    return c;
}

namespace detail {

inline void require_known_keys(const nlohmann::json& j,
                               std::initializer_list<const char*> allowed, const char* what) {
    require(j.is_object(), Err::BadFormat, std::string("config section ") + what +
                                               " must be a JSON object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                known = true;
                break;
            }
        require(known, Err::BadFormat,
                std::string("unknown config key ") + what + "." + item.key());
    }
}

// Overlay the user's keys onto the section's defaults so partial sections work
// while the section's from_json can keep requiring every field.
template <typename Cfg>
Cfg merged_section(const Cfg& defaults, const nlohmann::json& user) {
    nlohmann::json base = defaults;
    for (const auto& item : user.items()) base[item.key()] = item.value();
    return base.template get<Cfg>();
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return nlohmann::json{{"seed", c.seed},
                          {"out_root", c.out_root},
                          {"autoencoder", c.autoencoder},
                          {"autoencoder_train", c.autoencoder_train},
                          {"denoiser", c.denoiser},
                          {"train", c.train},
                          {"detector", c.detector},
                          {"detector_train", c.detector_train},
                          {"sampler", c.sampler},
                          {"edit", edit_config_to_json(c.edit)}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::require_known_keys(
        j,
        {"seed", "out_root", "autoencoder", "autoencoder_train", "denoiser", "train", "detector",
         "detector_train", "sampler", "edit", "command", "args"},
        "<top>");
    RunConfig c;
    try {
        if (j.contains("seed")) j.at("seed").get_to(c.seed);
        if (j.contains("out_root")) j.at("out_root").get_to(c.out_root);
        if (j.contains("autoencoder")) {
            detail::require_known_keys(j.at("autoencoder"),
                                       {"downsample_factor", "latent_channels", "base_width"},
                                       "autoencoder");
            c.autoencoder = detail::merged_section(c.autoencoder, j.at("autoencoder"));
        }
        if (j.contains("autoencoder_train")) {
            detail::require_known_keys(j.at("autoencoder_train"),
                                       {"steps", "batch_size", "learning_rate"},
                                       "autoencoder_train");
            c.autoencoder_train = detail::merged_section(c.autoencoder_train,
                                                         j.at("autoencoder_train"));
        }
        if (j.contains("denoiser")) {
            detail::require_known_keys(j.at("denoiser"),
                                       {"latent_channels", "base_width", "depth",
                                        "timestep_embedding_dim", "style_vocab_size",
                                        "condition_channels"},
                                       "denoiser");
            c.denoiser = detail::merged_section(c.denoiser, j.at("denoiser"));
        }
        if (j.contains("train")) {
            // the global seed is the only seed; a per-stage one is not a key
            detail::require_known_keys(j.at("train"),
                                       {"steps", "batch_size", "learning_rate", "T", "beta_start",
                                        "beta_end", "schedule", "cfg_drop_prob",
                                        "checkpoint_every"},
                                       "train");
            nlohmann::json merged = c.train;
            for (const auto& item : j.at("train").items()) merged[item.key()] = item.value();
            c.train = merged.get<TrainConfig>();
        }
        if (j.contains("detector")) {
            detail::require_known_keys(
                j.at("detector"), {"input_resolution", "n_landmarks", "base_width", "sigma_px"},
                "detector");
            c.detector = detail::merged_section(c.detector, j.at("detector"));
        }
        if (j.contains("detector_train")) {
            detail::require_known_keys(j.at("detector_train"),
                                       {"steps", "batch_size", "learning_rate"},
                                       "detector_train");
            c.detector_train = detail::merged_section(c.detector_train, j.at("detector_train"));
        }
        if (j.contains("sampler")) {
            detail::require_known_keys(j.at("sampler"),
                                       {"ddim_steps", "guidance_w", "resolution"}, "sampler");
            c.sampler = detail::merged_section(c.sampler, j.at("sampler"));
        }
        if (j.contains("edit")) {
            detail::require_known_keys(j.at("edit"),
                                       {"enabled", "strength", "max_rotation_rad", "scale_range",
                                        "max_shear", "max_offset"},
                                       "edit");
            nlohmann::json merged = edit_config_to_json(c.edit);
            for (const auto& item : j.at("edit").items()) merged[item.key()] = item.value();
            c.edit = edit_config_from_json(merged);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad run config: ") + e.what());
    }
    c.train.seed = c.seed;
    return c;
}

// Every validator that exists runs before any work starts.
inline void validate(const RunConfig& c) {
    validate(c.autoencoder);
    validate(c.denoiser);
    validate(c.train);
    validate(c.detector);
    require(c.autoencoder_train.steps >= 0 && c.autoencoder_train.batch_size > 0 &&
                c.autoencoder_train.learning_rate > 0,
            Err::BadConfig, "bad autoencoder training config");
    require(c.detector_train.steps >= 0 && c.detector_train.batch_size > 0 &&
                c.detector_train.learning_rate > 0,
            Err::BadConfig, "bad detector training config");
    require(c.sampler.ddim_steps >= 1, Err::BadConfig, "ddim_steps must be >= 1");
    require(std::isfinite(c.sampler.guidance_w), Err::BadConfig, "guidance_w must be finite");
    require(c.sampler.resolution >= 8, Err::BadConfig, "sampler resolution must be >= 8");
}

// "a.b=value" overrides, applied to the JSON tree before parsing; values are
// parsed as JSON scalars and fall back to plain strings.
inline void apply_override(nlohmann::json& tree, const std::string& spec) {
    const auto eq = spec.find('=');
    require(eq != std::string::npos && eq > 0, Err::BadFormat,
            "override must look like key.path=value: " + spec);
    std::string path = "/" + spec.substr(0, eq);
    for (auto& ch : path)
        if (ch == '.') ch = '/';
    const std::string raw = spec.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    try {
        tree[nlohmann::json::json_pointer(path)] = value;
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad override path: ") + spec + ": " + e.what());
    }
}

inline nlohmann::json load_config_tree(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), Err::IoError, "cannot open config file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("config file unparsable: ") + e.what());
    }
    return j;
}

}  // namespace ldlab
