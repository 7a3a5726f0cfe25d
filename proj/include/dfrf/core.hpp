/**
 * @file core.hpp
 * @brief Shared domain types for the deep-structured fully-connected random
 * field segmenter: observations, seed masks, label fields and configuration.
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dfrf {

enum class ErrorCode {
    InvalidArgument,
    DimensionMismatch,
    MissingSeedClass,
    InsufficientSamples,
    NonFiniteInput,
    InstanceTooLarge,
    MissingFile,
    DecodeError,
    TooLarge,
    UnknownSession,
    OutOfBounds,
    AlreadyRunning,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingSeedClass: return "MissingSeedClass";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::InstanceTooLarge: return "InstanceTooLarge";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::AlreadyRunning: return "AlreadyRunning";
    }
    return "Unknown";
}

/// Exception type carried by every fallible operation in the library.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Dense row-major matrix of doubles. Used for feature and responsibility tables.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<const double> values() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// RGB observation with channels normalized to [0,1] (8-bit value / 255).
class ImageObservation {
public:
    static constexpr std::size_t kChannels = 3;

    ImageObservation() = default;

    ImageObservation(int width, int height, std::vector<double> rgb)
        : width_(width), height_(height), rgb_(std::move(rgb)) {
        if (width < 1 || height < 1)
            throw Error(ErrorCode::InvalidArgument, "image dimensions must be at least 1x1");
        if (rgb_.size() != pixel_count() * kChannels)
            throw Error(ErrorCode::DimensionMismatch, "channel buffer does not match width*height*3");
        for (double v : rgb_) {
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw Error(ErrorCode::InvalidArgument, "channel values must lie in [0,1]");
        }
    }

    static ImageObservation from_bytes(int width, int height, std::span<const std::uint8_t> bytes) {
        std::vector<double> rgb(bytes.size());
        for (std::size_t i = 0; i < bytes.size(); ++i) rgb[i] = bytes[i] / 255.0;
        return ImageObservation(width, height, std::move(rgb));
    }

    /// Inverse of from_bytes; exact for any image that came from 8-bit data.
    std::vector<std::uint8_t> to_bytes() const {
        std::vector<std::uint8_t> out(rgb_.size());
        for (std::size_t i = 0; i < rgb_.size(); ++i)
            out[i] = static_cast<std::uint8_t>(std::lround(rgb_[i] * 255.0));
        return out;
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept {
        return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    }

    std::span<const double> pixel(std::size_t index) const {
        return {rgb_.data() + index * kChannels, kChannels};
    }
    std::span<const double> values() const noexcept { return rgb_; }

    bool operator==(const ImageObservation&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> rgb_;
};

enum class SeedState : std::uint8_t { Unlabeled = 0, Foreground = 1, Background = 2 };

/// Per-pixel user annotation.
class SeedMask {
public:
    SeedMask() = default;
    SeedMask(int width, int height, SeedState fill = SeedState::Unlabeled)
        : width_(width), height_(height),
          states_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
        if (width < 1 || height < 1)
            throw Error(ErrorCode::InvalidArgument, "seed mask dimensions must be at least 1x1");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept { return states_.size(); }

    SeedState operator[](std::size_t i) const { return states_[i]; }
    SeedState& operator[](std::size_t i) { return states_[i]; }
    SeedState at(int x, int y) const { return states_[index(x, y)]; }
    void set(int x, int y, SeedState s) { states_[index(x, y)] = s; }

    std::size_t count(SeedState s) const {
        std::size_t n = 0;
        for (SeedState v : states_) n += (v == s);
        return n;
    }

    std::span<const SeedState> states() const noexcept { return states_; }

    bool operator==(const SeedMask&) const = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<SeedState> states_;
};

using Label = std::uint8_t;
inline constexpr Label kBackground = 0;
inline constexpr Label kForeground = 1;

/// Binary labeling; every stored value is 0 (background) or 1 (foreground).
class LabelField {
public:
    LabelField() = default;
    LabelField(int width, int height, Label fill = kBackground)
        : width_(width), height_(height),
          labels_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
        if (fill > 1) throw Error(ErrorCode::InvalidArgument, "label must be 0 or 1");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept { return labels_.size(); }

    Label operator[](std::size_t i) const { return labels_[i]; }
    void set(std::size_t i, Label v) {
        if (v > 1) throw Error(ErrorCode::InvalidArgument, "label must be 0 or 1");
        labels_[i] = v;
    }
    void flip(std::size_t i) { labels_[i] ^= 1u; }

    std::size_t count_foreground() const {
        std::size_t n = 0;
        for (Label v : labels_) n += v;
        return n;
    }

    std::span<const Label> values() const noexcept { return labels_; }

    bool operator==(const LabelField&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<Label> labels_;
};

struct DfrfConfig {
    int n_layers = 15;
    int nev_start = 450;
    int nev_step = 15;
    // energy weights tuned on the synthetic corpus under noise
    double alpha = 0.25;
    double beta = 1.25;
    int top_k = 8;
    double spatial_scale = 20.0;
    int icm_sweeps = 5;
    std::uint64_t rng_seed = 0;
    /// Components per class in the seed colour models.
    int seed_components = 5;

    /// Schedule published with the method: 15 layers, 450 -> 660 nodes.
    static DfrfConfig paper() { return {}; }

    /// Scaled-down schedule for interactive use: 5 layers, 60 -> 140 nodes.
    static DfrfConfig desk() {
        DfrfConfig c;
        c.n_layers = 5;
        c.nev_start = 60;
        c.nev_step = 20;
        return c;
    }

    int nodes_at_layer(int layer) const { return nev_start + (layer - 1) * nev_step; }

    void validate() const {
        if (n_layers < 0) throw Error(ErrorCode::InvalidArgument, "n_layers must be >= 0");
        if (nev_start < 1) throw Error(ErrorCode::InvalidArgument, "nev_start must be >= 1");
        if (nev_step < 0) throw Error(ErrorCode::InvalidArgument, "nev_step must be >= 0");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0,1]");
        if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be >= 0");
        if (top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");
        if (!(spatial_scale >= 0.0)) throw Error(ErrorCode::InvalidArgument, "spatial_scale must be >= 0");
        if (icm_sweeps < 1) throw Error(ErrorCode::InvalidArgument, "icm_sweeps must be >= 1");
        if (seed_components < 1) throw Error(ErrorCode::InvalidArgument, "seed_components must be >= 1");
    }
};

/// Succeeds iff dimensions agree and both seed classes are non-empty.
inline void validate_inputs(const ImageObservation& image, const SeedMask& seeds) {
    if (image.width() != seeds.width() || image.height() != seeds.height())
        throw Error(ErrorCode::DimensionMismatch,
                    "image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                        " but seed mask is " + std::to_string(seeds.width()) + "x" +
                        std::to_string(seeds.height()));
    if (seeds.count(SeedState::Foreground) == 0)
        throw Error(ErrorCode::MissingSeedClass, "no foreground (FG) seed pixels");
    if (seeds.count(SeedState::Background) == 0)
        throw Error(ErrorCode::MissingSeedClass, "no background (BG) seed pixels");
}

}  // namespace dfrf
