/**
 * @file synth.hpp
 * @brief Two-region synthetic scenes with ground truth and scribble seeds,
 * so the benchmark runs without external data.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "core.hpp"
#include "png_io.hpp"

namespace dfrf {

struct SyntheticScene {
    ImageObservation image;
    LabelField ground_truth;
    SeedMask seeds;
};

struct SynthOptions {
    int width = 96;
    int height = 72;
    bool texture = true;
};

namespace detail {

struct Ellipse {
    double cx, cy, rx, ry, angle;

    bool contains(double x, double y) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = ((x - cx) * c + (y - cy) * s) / rx;
        const double v = (-(x - cx) * s + (y - cy) * c) / ry;
        return u * u + v * v <= 1.0;
    }
};

inline std::array<double, 3> random_color(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.15, 0.85);
    return {u(rng), u(rng), u(rng)};
}

inline double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

// true when every pixel within `margin` (Chebyshev) has the given label
inline bool interior(const LabelField& gt, int x, int y, int margin, Label label) {
    for (int dy = -margin; dy <= margin; ++dy)
        for (int dx = -margin; dx <= margin; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= gt.width() || yy >= gt.height()) return false;
            if (gt[static_cast<std::size_t>(yy) * gt.width() + xx] != label) return false;
        }
    return true;
}

}  // namespace detail

/// Random blob foreground (union of ellipses) over a background of a
/// different colour distribution; each region has a colour gradient, pixel
/// jitter and optionally a stripe texture. Seeds are short strokes well
/// inside each region.
inline SyntheticScene make_synthetic_scene(std::uint64_t seed, const SynthOptions& options = {}) {
    const int w = options.width, h = options.height;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 0.03);

    auto fg_color = detail::random_color(rng);
    auto bg_color = detail::random_color(rng);
    while (detail::color_distance(fg_color, bg_color) < 0.35) bg_color = detail::random_color(rng);
    auto fg_alt = fg_color, bg_alt = bg_color;
    for (int c = 0; c < 3; ++c) {
        fg_alt[c] = std::clamp(fg_color[c] + (unit(rng) - 0.5) * 0.15, 0.0, 1.0);
        bg_alt[c] = std::clamp(bg_color[c] + (unit(rng) - 0.5) * 0.15, 0.0, 1.0);
    }

    std::vector<detail::Ellipse> blob;
    const int parts = 1 + static_cast<int>(unit(rng) * 3.0);
    const double cx = w * (0.4 + 0.2 * unit(rng)), cy = h * (0.4 + 0.2 * unit(rng));
    blob.push_back({cx, cy, w * (0.15 + 0.1 * unit(rng)), h * (0.15 + 0.1 * unit(rng)), unit(rng) * std::numbers::pi});
    for (int p = 1; p < parts; ++p)
        blob.push_back({cx + w * (unit(rng) - 0.5) * 0.3, cy + h * (unit(rng) - 0.5) * 0.3, w * (0.08 + 0.1 * unit(rng)),
                        h * (0.08 + 0.1 * unit(rng)), unit(rng) * std::numbers::pi});

    const double stripe_freq = 0.3 + 0.4 * unit(rng), stripe_phase = unit(rng) * 6.28;
    SyntheticScene scene;
    scene.ground_truth = LabelField(w, h);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y) * w + x;
            bool inside = false;
            for (const auto& e : blob) inside = inside || e.contains(x + 0.5, y + 0.5);
            scene.ground_truth.set(i, inside ? kForeground : kBackground);
            const auto& a = inside ? fg_color : bg_color;
            const auto& b = inside ? fg_alt : bg_alt;
            const double t = (static_cast<double>(x) / w + static_cast<double>(y) / h) * 0.5;
            const double stripe = options.texture ? 0.04 * std::sin(stripe_freq * (x + y) + stripe_phase) : 0.0;
            for (int c = 0; c < 3; ++c) {
                const double v = (1.0 - t) * a[c] + t * b[c] + stripe + jitter(rng);
                bytes[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        }
    }
    scene.image = ImageObservation::from_bytes(w, h, bytes);

    // Seeds: a short horizontal stroke through the blob core, and two strokes
    // near the top and bottom borders for the background.
    scene.seeds = SeedMask(w, h);
    const int sx = static_cast<int>(blob[0].cx), sy = static_cast<int>(blob[0].cy);
    const int half = std::max(2, static_cast<int>(std::min(blob[0].rx, blob[0].ry) * 0.5));
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
            const int x = sx + dx, y = sy + dy;
            if (detail::interior(scene.ground_truth, x, y, 2, kForeground)) scene.seeds.set(x, y, SeedState::Foreground);
        }
    for (int row : {3, h - 4})
        for (int x = w / 5; x < w - w / 5; ++x)
            if (detail::interior(scene.ground_truth, x, row, 2, kBackground)) scene.seeds.set(x, row, SeedState::Background);
    return scene;
}

/// Writes count scenes as root/{images,gt,seeds}/synth_NNN.png.
inline void write_synthetic_corpus(const std::filesystem::path& root, int count, std::uint64_t seed,
                                   const SynthOptions& options = {}) {
    namespace fs = std::filesystem;
    for (const char* sub : {"images", "gt", "seeds"}) fs::create_directories(root / sub);
    for (int i = 0; i < count; ++i) {
        const auto scene = make_synthetic_scene(seed * 1000003ULL + static_cast<std::uint64_t>(i), options);
        char name[32];
        std::snprintf(name, sizeof name, "synth_%03d.png", i);
        png::save_image(root / "images" / name, scene.image);
        png::save_labels(root / "gt" / name, scene.ground_truth);
        png::save_seeds(root / "seeds" / name, scene.seeds);
    }
}

}  // namespace dfrf
