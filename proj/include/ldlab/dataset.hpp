#pragma once

// Dataset records and JSON-lines manifest IO. A record ties an image file to
// its landmark file, style token, and (for synthetic data) the full
// provenance needed to regenerate the image byte-for-byte: the pre-edit
// landmarks, the pool index they came from, the edit plan, and the seed.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldlab/core/error.hpp"
#include "ldlab/editing.hpp"
#include "ldlab/landmarks.hpp"

namespace ldlab {

namespace detail {

// Zero-padded stem for corpus files: 000042.png, 000042.json, ...
inline std::string index_name(int i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d%s", i, ext);
    return buf;
}

}  // namespace detail

struct DatasetRecord {
    std::string image_path;      // relative to the manifest's directory
    std::string landmarks_path;  // relative to the manifest's directory
    int style_id = 0;            // 0 = base domain
    std::uint64_t seed = 0;
    std::optional<EditPlan> edit_plan;             // synthetic records only
    std::optional<int> landmark_source;            // pool index the landmarks came from
    std::optional<LandmarkSet> source_landmarks;   // pre-edit landmarks, inline
};

inline nlohmann::json record_to_json(const DatasetRecord& r) {
    nlohmann::json j = {{"image_path", r.image_path},
                        {"landmarks_path", r.landmarks_path},
                        {"style_id", r.style_id},
                        {"seed", r.seed}};
    if (r.edit_plan) j["edit_plan"] = edit_plan_to_json(*r.edit_plan);
    if (r.landmark_source) j["landmark_source"] = *r.landmark_source;
    if (r.source_landmarks) j["source_landmarks"] = landmarks_to_json(*r.source_landmarks);
    return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord r;
    try {
        j.at("image_path").get_to(r.image_path);
        j.at("landmarks_path").get_to(r.landmarks_path);
        j.at("style_id").get_to(r.style_id);
        j.at("seed").get_to(r.seed);
        if (j.contains("edit_plan")) r.edit_plan = edit_plan_from_json(j.at("edit_plan"));
        if (j.contains("landmark_source")) r.landmark_source = j.at("landmark_source").get<int>();
        if (j.contains("source_landmarks"))
            r.source_landmarks = landmarks_from_json(j.at("source_landmarks"));
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad dataset record: ") + e.what());
    }
    return r;
}

inline void write_manifest(const std::string& path, const std::vector<DatasetRecord>& records) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), Err::IoError, "cannot open manifest for write: " + path);
    for (const auto& r : records) f << record_to_json(r).dump() << "\n";
    f.flush();
    require(f.good(), Err::IoError, "manifest write failed: " + path);
}

inline std::vector<DatasetRecord> read_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), Err::IoError, "cannot open manifest: " + path);
    std::vector<DatasetRecord> records;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(Err::BadFormat, std::string("manifest line unparsable: ") + e.what());
        }
        records.push_back(record_from_json(j));
    }
    return records;
}

inline std::string manifest_dir(const std::string& manifest_path) {
    const auto p = std::filesystem::path(manifest_path).parent_path();
    return p.empty() ? std::string(".") : p.string();
}

inline std::string resolve_path(const std::string& manifest_path, const std::string& rel) {
    return (std::filesystem::path(manifest_dir(manifest_path)) / rel).string();
}

// Existence + parse check for one record's referenced files.
inline void validate_record(const std::string& manifest_path, const DatasetRecord& r) {
    const std::string img = resolve_path(manifest_path, r.image_path);
    const std::string lmp = resolve_path(manifest_path, r.landmarks_path);
    require(std::filesystem::exists(img), Err::IoError, "missing image file: " + img);
    require(std::filesystem::exists(lmp), Err::IoError, "missing landmarks file: " + lmp);
    std::ifstream f(lmp, std::ios::binary);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("landmarks file unparsable: ") + e.what());
    }
    (void)landmarks_from_json(j);  // throws if the set does not validate
}

inline void save_landmarks_json(const std::string& path, const LandmarkSet& lm) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), Err::IoError, "cannot open landmarks file for write: " + path);
    f << landmarks_to_json(lm).dump() << "\n";
    f.flush();
    require(f.good(), Err::IoError, "landmarks write failed: " + path);
}

inline LandmarkSet load_landmarks_json(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), Err::IoError, "cannot open landmarks file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("landmarks file unparsable: ") + e.what());
    }
    return landmarks_from_json(j);
}

}  // namespace ldlab
