#pragma once

// Alignment metrics (NME / FR / AUC), cumulative-error-distribution reports,
// and manifest-driven evaluation runs. The CED is integrated exactly over the
// sorted sample; AUC is that integral over [0, threshold] divided by the
// threshold, so a perfect detector scores 1.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ldlab/core/error.hpp"
#include "ldlab/core/image.hpp"
#include "ldlab/core/png_io.hpp"
#include "ldlab/dataset.hpp"
#include "ldlab/landmarks.hpp"

namespace ldlab {

namespace detail {

// FNV-1a over raw bytes; reports embed these as short content fingerprints.
inline std::string fnv1a_hex(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline std::string fnv1a_hex(const std::string& s) { return fnv1a_hex(s.data(), s.size()); }

inline std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes) {
    return fnv1a_hex(bytes.data(), bytes.size());
}

}  // namespace detail

// Normalized mean error with an explicit normalizer. The two-argument form
// below uses the ground-truth inter-ocular distance; this one exists for
// small test fixtures and for alternative normalizers (bounding-box diagonal
// on external data).
inline double nme(const LandmarkSet& pred, const LandmarkSet& gt, double normalizer) {
    require(pred.n == gt.n, Err::CountMismatch, "prediction and ground truth differ in size");
    require(pred.n > 0, Err::CountMismatch, "nme needs at least one point");
    require(std::isfinite(normalizer) && normalizer > 0.0, Err::DegenerateFace,
            "nme normalizer must be positive");
    double acc = 0.0;
    for (int i = 0; i < gt.n; ++i) {
        const auto& a = pred.points[static_cast<std::size_t>(i)];
        const auto& b = gt.points[static_cast<std::size_t>(i)];
        acc += std::hypot(a.x - b.x, a.y - b.y);
    }
    return acc / static_cast<double>(gt.n) / normalizer;
}

inline double nme(const LandmarkSet& pred, const LandmarkSet& gt) {
    return nme(pred, gt, interocular_distance(gt));
}

// Fraction of samples whose error exceeds the threshold. Strict inequality:
// a sample sitting exactly on the threshold counts as a success.
inline double failure_rate(const std::vector<double>& nmes, double threshold) {
    require(!nmes.empty(), Err::EmptyList, "failure_rate over an empty list");
    std::size_t failures = 0;
    for (double e : nmes)
        if (e > threshold) ++failures;
    return static_cast<double>(failures) / static_cast<double>(nmes.size());
}

// Exact step-function integral of CED(e) = fraction{nme <= e} over
// [0, threshold], divided by the threshold:
//   auc = (1/M) sum_i max(0, threshold - nme_i) / threshold.
inline double auc(const std::vector<double>& nmes, double threshold) {
    require(!nmes.empty(), Err::EmptyList, "auc over an empty list");
    require(std::isfinite(threshold) && threshold > 0.0, Err::OutOfRange,
            "auc threshold must be positive");
    double acc = 0.0;
    for (double e : nmes) acc += std::max(0.0, 1.0 - e / threshold);
    return acc / static_cast<double>(nmes.size());
}

// Sorted (error, fraction <= error) support points of the CED step curve,
// one entry per distinct error value.
inline std::vector<std::pair<double, double>> ced_points(std::vector<double> nmes) {
    require(!nmes.empty(), Err::EmptyList, "ced over an empty list");
    std::sort(nmes.begin(), nmes.end());
    std::vector<std::pair<double, double>> pts;
    const double m = static_cast<double>(nmes.size());
    for (std::size_t i = 0; i < nmes.size(); ++i) {
        const double frac = static_cast<double>(i + 1) / m;
        if (!pts.empty() && pts.back().first == nmes[i])
            pts.back().second = frac;
        else
            pts.emplace_back(nmes[i], frac);
    }
    return pts;
}

struct MetricsReport {
    double nme_mean = 0.0;
    double fr_at_threshold = 0.0;
    double auc_at_threshold = 0.0;
    double threshold = 0.10;
    std::vector<double> per_sample_nme;
    std::vector<std::pair<double, double>> ced;
    std::string config_hash;   // fingerprint of the detector config JSON
    std::string dataset_hash;  // fingerprint of the manifest bytes
};

inline MetricsReport aggregate_metrics(std::vector<double> per_sample, double threshold = 0.10) {
    require(!per_sample.empty(), Err::EmptyList, "metrics over an empty sample list");
    MetricsReport r;
    r.threshold = threshold;
    r.fr_at_threshold = failure_rate(per_sample, threshold);
    r.auc_at_threshold = auc(per_sample, threshold);
    r.ced = ced_points(per_sample);
    double acc = 0.0;
    for (double e : per_sample) acc += e;
    r.nme_mean = acc / static_cast<double>(per_sample.size());
    r.per_sample_nme = std::move(per_sample);
    return r;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json ced = nlohmann::json::array();
    for (const auto& [e, f] : r.ced) ced.push_back({e, f});
    return nlohmann::json{{"nme_mean", r.nme_mean},
                          {"fr_at_threshold", r.fr_at_threshold},
                          {"auc_at_threshold", r.auc_at_threshold},
                          {"threshold", r.threshold},
                          {"per_sample_nme", r.per_sample_nme},
                          {"ced", std::move(ced)},
                          {"config_hash", r.config_hash},
                          {"dataset_hash", r.dataset_hash}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    try {
        r.nme_mean = j.at("nme_mean").get<double>();
        r.fr_at_threshold = j.at("fr_at_threshold").get<double>();
        r.auc_at_threshold = j.at("auc_at_threshold").get<double>();
        r.threshold = j.at("threshold").get<double>();
        r.per_sample_nme = j.at("per_sample_nme").get<std::vector<double>>();
        for (const auto& p : j.at("ced"))
            r.ced.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        r.config_hash = j.at("config_hash").get<std::string>();
        r.dataset_hash = j.at("dataset_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("bad metrics report: ") + e.what());
    }
    return r;
}

// Runs a predictor over every record in a manifest and aggregates metrics.
// The predictor maps a corpus image to a landmark set; the detector-backed
// form lives next to the detector so test stubs can plug in here directly.
using LandmarkPredictor = std::function<LandmarkSet(const ImageF&)>;

inline MetricsReport evaluate_with(const LandmarkPredictor& predictor,
                                   const std::string& manifest_path, double threshold = 0.10) {
    const auto records = read_manifest(manifest_path);
    require(!records.empty(), Err::EmptyList, "manifest has no records to evaluate");
    std::vector<double> errs;
    errs.reserve(records.size());
    for (const auto& rec : records) {
        const ImageF img = png_read(resolve_path(manifest_path, rec.image_path));
        const LandmarkSet gt = load_landmarks_json(resolve_path(manifest_path, rec.landmarks_path));
        errs.push_back(nme(predictor(img), gt));
    }
    MetricsReport r = aggregate_metrics(std::move(errs), threshold);
    r.dataset_hash = detail::fnv1a_hex(read_file_bytes(manifest_path));
    return r;
}

// --- CED curve output -------------------------------------------------------

inline std::string ced_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "error,fraction\n";
    os << std::setprecision(17);
    for (const auto& [e, f] : r.ced) os << e << ',' << f << '\n';
    return os.str();
}

inline void write_ced_csv(const std::string& path, const MetricsReport& r) {
    const std::string text = ced_csv(r);
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// Staircase plot of the CED over [0, threshold]. Self-contained SVG with
// fixed geometry so reruns produce identical bytes.
inline std::string ced_svg(const MetricsReport& r) {
    const double w = 480.0, h = 360.0, l = 56.0, rt = 16.0, tp = 16.0, bt = 44.0;
    const double pw = w - l - rt, ph = h - tp - bt;
    const double t = r.threshold;
    const auto sx = [&](double e) { return l + pw * std::min(e, t) / t; };
    const auto sy = [&](double f) { return tp + ph * (1.0 - f); };
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" "
          "viewBox=\"0 0 480 360\">\n";
    os << "<rect width=\"480\" height=\"360\" fill=\"white\"/>\n";
    // axes
    os << "<line x1=\"" << l << "\" y1=\"" << tp << "\" x2=\"" << l << "\" y2=\"" << (tp + ph)
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << l << "\" y1=\"" << (tp + ph) << "\" x2=\"" << (l + pw) << "\" y2=\""
       << (tp + ph) << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 5; ++k) {
        const double fx = t * k / 5.0, fy = k / 5.0;
        os << "<line x1=\"" << sx(fx) << "\" y1=\"" << (tp + ph) << "\" x2=\"" << sx(fx)
           << "\" y2=\"" << (tp + ph + 4) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << sx(fx) << "\" y=\"" << (tp + ph + 18)
           << "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">"
           << std::setprecision(3) << fx << std::setprecision(2) << "</text>\n";
        os << "<line x1=\"" << (l - 4) << "\" y1=\"" << sy(fy) << "\" x2=\"" << l << "\" y2=\""
           << sy(fy) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << (l - 8) << "\" y=\"" << (sy(fy) + 4)
           << "\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">"
           << std::setprecision(1) << fy << std::setprecision(2) << "</text>\n";
    }
    os << "<text x=\"" << (l + pw / 2) << "\" y=\"" << (h - 8)
       << "\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">NME</text>\n";
    // staircase
    os << "<path d=\"M" << sx(0.0) << ' ' << sy(0.0);
    for (const auto& [e, f] : r.ced) {
        if (e > t) break;
        os << " H" << sx(e) << " V" << sy(f);
    }
    os << " H" << sx(t) << "\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\"/>\n";
    os << "</svg>\n";
    return os.str();
}

inline void write_ced_svg(const std::string& path, const MetricsReport& r) {
    const std::string text = ced_svg(r);
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace ldlab
