/**
 * @file unary.hpp
 * @brief Seed-trained colour models and the per-pixel unary costs they induce.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "core.hpp"
#include "mixture.hpp"

namespace dfrf {

/// Negative log posterior per pixel and class, clamped to stay finite.
class UnaryField {
public:
    static constexpr double kMaxCost = 50.0;

    UnaryField() = default;
    UnaryField(int width, int height)
        : width_(width), height_(height),
          costs_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), {0.0, 0.0}) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept { return costs_.size(); }

    double cost(std::size_t pixel, Label label) const { return costs_[pixel][label]; }
    void set(std::size_t pixel, double background_cost, double foreground_cost) {
        costs_[pixel] = {std::min(background_cost, kMaxCost), std::min(foreground_cost, kMaxCost)};
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::array<double, 2>> costs_;
};

struct SeedModels {
    MixtureModel foreground;
    MixtureModel background;
};

inline Matrix seed_colors(const ImageObservation& image, const SeedMask& seeds, SeedState cls) {
    Matrix out(seeds.count(cls), ImageObservation::kChannels);
    std::size_t r = 0;
    for (std::size_t i = 0; i < image.pixel_count(); ++i) {
        if (seeds[i] != cls) continue;
        const auto px = image.pixel(i);
        for (std::size_t c = 0; c < ImageObservation::kChannels; ++c) out(r, c) = px[c];
        ++r;
    }
    return out;
}

inline SeedModels fit_seed_models(const ImageObservation& image, const SeedMask& seeds, int components,
                                  std::uint64_t rng_seed) {
    validate_inputs(image, seeds);
    const auto k = static_cast<std::size_t>(components);
    // both classes share the seed so identical seed sets yield identical models
    return {fit_fmm(seed_colors(image, seeds, SeedState::Foreground), k, rng_seed),
            fit_fmm(seed_colors(image, seeds, SeedState::Background), k, rng_seed)};
}

/// Unary costs from two class models with equal priors, plus the argmax
/// labeling (ties go to background).
inline std::pair<UnaryField, LabelField> unary_from_models(const ImageObservation& image, const SeedModels& models) {
    const detail::ComponentScorer fg(models.foreground);
    const detail::ComponentScorer bg(models.background);
    UnaryField unary(image.width(), image.height());
    LabelField labels(image.width(), image.height());
    std::vector<double> scratch_fg(fg.components()), scratch_bg(bg.components());
    for (std::size_t i = 0; i < image.pixel_count(); ++i) {
        const double log_fg = detail::log_sum_exp(scratch_fg, fg.score(image.pixel(i), scratch_fg));
        const double log_bg = detail::log_sum_exp(scratch_bg, bg.score(image.pixel(i), scratch_bg));
        // -log p(c|x) = log(1 + exp(log_other - log_c)), evaluated without overflow
        const double diff = log_fg - log_bg;
        const double cost_bg = std::max(diff, 0.0) + std::log1p(std::exp(-std::abs(diff)));
        const double cost_fg = std::max(-diff, 0.0) + std::log1p(std::exp(-std::abs(diff)));
        unary.set(i, cost_bg, cost_fg);
        labels.set(i, log_fg > log_bg ? kForeground : kBackground);
    }
    return {std::move(unary), std::move(labels)};
}

/// Fits one colour mixture per seed class and returns the unary field and
/// the per-pixel argmax labeling Y_0.
inline std::pair<UnaryField, LabelField> seed_unary(const ImageObservation& image, const SeedMask& seeds,
                                                    int components = 5, std::uint64_t rng_seed = 0) {
    return unary_from_models(image, fit_seed_models(image, seeds, components, rng_seed));
}

}  // namespace dfrf
