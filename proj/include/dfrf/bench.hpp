/**
 * @file bench.hpp
 * @brief Noise-robustness benchmark: Gaussian contamination, F1 scoring,
 * corpus loading and report emission (JSON + CSV).
 */
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "inference.hpp"
#include "png_io.hpp"
#include "unary.hpp"

namespace dfrf {

/// 2TP / (2TP + FN + FP) with gt as the reference; 1 when both are all background.
inline double f1_score(const LabelField& pred, const LabelField& gt) {
    if (pred.width() != gt.width() || pred.height() != gt.height())
        throw Error(ErrorCode::DimensionMismatch, "prediction and ground truth differ in size");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        const bool p = pred[i] == kForeground, g = gt[i] == kForeground;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    if (tp == 0 && fp == 0 && fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fn + fp);
}

/// The raw zero-mean noise stream add_noise draws from, in 8-bit units.
inline std::vector<double> noise_samples(std::size_t count, double fraction, std::uint64_t rng_seed) {
    if (!(fraction >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise fraction must be >= 0");
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> gauss(0.0, fraction * 255.0);
    std::vector<double> out(count);
    for (double& v : out) v = fraction > 0.0 ? gauss(rng) : 0.0;
    return out;
}

/// Adds i.i.d. Gaussian noise with sigma = fraction * 255 to every 8-bit
/// channel value, clips to [0, 255] and renormalizes.
inline ImageObservation add_noise(const ImageObservation& image, double fraction, std::uint64_t rng_seed) {
    if (!(fraction >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise fraction must be >= 0");
    if (fraction == 0.0) return image;
    const auto values = image.values();
    const auto noise = noise_samples(values.size(), fraction, rng_seed);
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = std::clamp(values[i] * 255.0 + noise[i], 0.0, 255.0) / 255.0;
    return ImageObservation(image.width(), image.height(), std::move(out));
}

struct CorpusEntry {
    std::string id;
    std::filesystem::path image_path;
    std::filesystem::path gt_path;
    std::filesystem::path seed_path;
    ImageObservation image;
    LabelField ground_truth;
    SeedMask seeds;
};

struct EntryError {
    std::string id;
    std::string message;
    std::optional<double> noise;
};

struct CorpusLoad {
    std::vector<CorpusEntry> entries;  ///< sorted by id
    std::vector<EntryError> errors;
};

/// Reads root/{images,gt,seeds}/<id>.png triples. Problems with a single id
/// are collected rather than thrown.
inline CorpusLoad load_corpus(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, "corpus directory " + root.string() + " not found");
    CorpusLoad out;
    const fs::path images = root / "images";
    if (!fs::is_directory(images)) return out;

    std::vector<std::string> ids;
    for (const auto& item : fs::directory_iterator(images))
        if (item.is_regular_file() && item.path().extension() == ".png") ids.push_back(item.path().stem().string());
    std::sort(ids.begin(), ids.end());

    for (const auto& id : ids) {
        CorpusEntry entry;
        entry.id = id;
        entry.image_path = images / (id + ".png");
        entry.gt_path = root / "gt" / (id + ".png");
        entry.seed_path = root / "seeds" / (id + ".png");
        try {
            for (const auto* p : {&entry.gt_path, &entry.seed_path})
                if (!fs::exists(*p)) throw Error(ErrorCode::MissingFile, "missing " + p->string());
            auto decode = [](const fs::path& p) {
                try {
                    return png::decode_rgb(png::read_file(p));
                } catch (const Error& e) {
                    throw Error(e.code(), p.string() + ": " + e.what());
                }
            };
            const auto img = decode(entry.image_path);
            const auto gt = decode(entry.gt_path);
            const auto seeds = decode(entry.seed_path);
            if (gt.width != img.width || gt.height != img.height || seeds.width != img.width ||
                seeds.height != img.height)
                throw Error(ErrorCode::DimensionMismatch, "image, ground truth and seeds differ in size");
            entry.image = png::to_image(img);
            entry.ground_truth = png::to_labels(gt);
            entry.seeds = png::to_seeds(seeds);
            out.entries.push_back(std::move(entry));
        } catch (const Error& e) {
            out.errors.push_back({id, e.what(), std::nullopt});
        }
    }
    return out;
}

inline constexpr const char* kMethodDfrf = "dfrf";
inline constexpr const char* kMethodUnary = "unary";

struct BenchCell {
    std::string id;
    double noise = 0.0;
    std::string method;
    double f1 = 0.0;
    double seconds = 0.0;
};

struct BenchReport {
    DfrfConfig config;
    std::uint64_t rng_seed = 0;
    std::vector<double> noise_fractions;
    std::vector<BenchCell> cells;
    std::vector<EntryError> errors;

    /// Mean F1 of a method at a noise level over the entries that succeeded.
    double mean_f1(const std::string& method, double noise) const {
        double total = 0.0;
        std::size_t n = 0;
        for (const auto& c : cells)
            if (c.method == method && c.noise == noise) {
                total += c.f1;
                ++n;
            }
        return n ? total / static_cast<double>(n) : 0.0;
    }
};

inline std::uint64_t noise_seed(std::uint64_t rng_seed, std::size_t entry, std::size_t level) {
    return detail::mix_seed(detail::mix_seed(rng_seed, entry), level + 1000);
}

/// For every entry and noise level: contaminate, run DFRF and the unary
/// argmax on the same noisy input and seeds, score both against the clean
/// ground truth. Entries are processed by up to `jobs` threads.
inline BenchReport run_bench(const std::vector<CorpusEntry>& corpus, const DfrfConfig& config,
                             const std::vector<double>& noise_fractions, std::uint64_t rng_seed, unsigned jobs = 1) {
    if (corpus.empty()) throw Error(ErrorCode::InvalidArgument, "benchmark corpus is empty");
    config.validate();
    for (double f : noise_fractions)
        if (!(f >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise fraction must be >= 0");

    using clock = std::chrono::steady_clock;
    struct Slot {
        std::vector<BenchCell> cells;
        std::vector<EntryError> errors;
    };
    std::vector<Slot> slots(corpus.size());

    auto process = [&](std::size_t e) {
        const auto& entry = corpus[e];
        for (std::size_t level = 0; level < noise_fractions.size(); ++level) {
            const double noise = noise_fractions[level];
            try {
                const auto noisy = add_noise(entry.image, noise, noise_seed(rng_seed, e, level));
                const DfrfConfig& run_config = config;

                auto t0 = clock::now();
                const auto baseline = seed_unary(noisy, entry.seeds, run_config.seed_components, run_config.rng_seed);
                const double baseline_seconds = std::chrono::duration<double>(clock::now() - t0).count();

                t0 = clock::now();
                const auto result = run_dfrf(noisy, entry.seeds, run_config);
                const double dfrf_seconds = std::chrono::duration<double>(clock::now() - t0).count();

                slots[e].cells.push_back(
                    {entry.id, noise, kMethodDfrf, f1_score(result.labels, entry.ground_truth), dfrf_seconds});
                slots[e].cells.push_back(
                    {entry.id, noise, kMethodUnary, f1_score(baseline.second, entry.ground_truth), baseline_seconds});
            } catch (const std::exception& ex) {
                slots[e].errors.push_back({entry.id, ex.what(), noise});
            }
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(corpus.size())));
    if (workers == 1) {
        for (std::size_t e = 0; e < corpus.size(); ++e) process(e);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t e = w; e < corpus.size(); e += workers) process(e);
            });
    }

    BenchReport report;
    report.config = config;
    report.rng_seed = rng_seed;
    report.noise_fractions = noise_fractions;
    for (auto& s : slots) {
        for (auto& c : s.cells) report.cells.push_back(std::move(c));
        for (auto& err : s.errors) report.errors.push_back(std::move(err));
    }
    return report;
}

inline nlohmann::json config_to_json(const DfrfConfig& c) {
    return {{"n_layers", c.n_layers},       {"nev_start", c.nev_start},   {"nev_step", c.nev_step},
            {"alpha", c.alpha},             {"beta", c.beta},             {"top_k", c.top_k},
            {"spatial_scale", c.spatial_scale}, {"icm_sweeps", c.icm_sweeps}, {"rng_seed", c.rng_seed},
            {"seed_components", c.seed_components}};
}

/// Overlays the fields present in `j` onto `base`; unknown keys are rejected.
inline DfrfConfig config_from_json(const nlohmann::json& j, DfrfConfig base) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "n_layers") base.n_layers = value.get<int>();
            else if (key == "nev_start") base.nev_start = value.get<int>();
            else if (key == "nev_step") base.nev_step = value.get<int>();
            else if (key == "alpha") base.alpha = value.get<double>();
            else if (key == "beta") base.beta = value.get<double>();
            else if (key == "top_k") base.top_k = value.get<int>();
            else if (key == "spatial_scale") base.spatial_scale = value.get<double>();
            else if (key == "icm_sweeps") base.icm_sweeps = value.get<int>();
            else if (key == "rng_seed") base.rng_seed = value.get<std::uint64_t>();
            else if (key == "seed_components") base.seed_components = value.get<int>();
            else throw Error(ErrorCode::InvalidArgument, "unknown config field '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("bad config value: ") + e.what());
    }
    base.validate();
    return base;
}

/// Per-layer records without wall times, which live in trace_timing_to_json.
inline nlohmann::json trace_to_json(const LayerTrace& trace) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : trace)
        out.push_back({{"layer", r.layer},
                       {"n_ev", r.n_ev},
                       {"energy_before", r.energy_before},
                       {"energy_after", r.energy_after},
                       {"flips", r.flips},
                       {"sweeps", r.sweeps}});
    return out;
}

inline nlohmann::json trace_timing_to_json(const LayerTrace& trace) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : trace) out.push_back({{"layer", r.layer}, {"seconds", r.seconds}});
    return out;
}

/// JSON report. Everything except the "timing" member is a pure function of
/// the corpus, config and seeds.
inline nlohmann::json report_to_json(const BenchReport& report) {
    nlohmann::json entries = nlohmann::json::array();
    nlohmann::json timing = nlohmann::json::array();
    for (const auto& c : report.cells) {
        entries.push_back({{"id", c.id}, {"noise", c.noise}, {"method", c.method}, {"f1", c.f1}});
        timing.push_back({{"id", c.id}, {"noise", c.noise}, {"method", c.method}, {"seconds", c.seconds}});
    }
    nlohmann::json errors = nlohmann::json::array();
    for (const auto& e : report.errors) {
        nlohmann::json item{{"id", e.id}, {"message", e.message}};
        if (e.noise) item["noise"] = *e.noise;
        errors.push_back(item);
    }
    nlohmann::json summary = nlohmann::json::array();
    for (double noise : report.noise_fractions)
        for (const char* method : {kMethodDfrf, kMethodUnary})
            summary.push_back({{"noise", noise}, {"method", method}, {"mean_f1", report.mean_f1(method, noise)}});
    return {{"config", config_to_json(report.config)},
            {"rng_seed", report.rng_seed},
            {"noise_fractions", report.noise_fractions},
            {"entries", entries},
            {"summary", summary},
            {"errors", errors},
            {"timing", timing}};
}

/// CSV mirror of the deterministic part of the report.
inline std::string report_to_csv(const BenchReport& report) {
    std::ostringstream out;
    out.precision(17);
    out << "id,noise,method,f1\n";
    for (const auto& c : report.cells) out << c.id << ',' << c.noise << ',' << c.method << ',' << c.f1 << '\n';
    return out.str();
}

}  // namespace dfrf
