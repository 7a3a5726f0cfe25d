/**
 * @file png_io.hpp
 * @brief PNG decode/encode for observations, seed masks and label masks.
 *
 * Seed masks use pure red (255,0,0) for foreground and pure blue (0,0,255)
 * for background; any other colour is unlabeled. Label masks are white for
 * foreground and black for background.
 */
#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace dfrf::png {

struct RgbBuffer {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bytes;  ///< width*height*3, row-major RGB
};

inline RgbBuffer decode_rgb(std::span<const std::uint8_t> data) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, data.data(), data.size()))
        throw Error(ErrorCode::DecodeError, std::string("not a readable PNG: ") + image.message);
    image.format = PNG_FORMAT_RGB;
    RgbBuffer out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.bytes.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.bytes.data(), 0, nullptr)) {
        std::string message = image.message;
        png_image_free(&image);
        throw Error(ErrorCode::DecodeError, "PNG decode failed: " + message);
    }
    if (out.width < 1 || out.height < 1) throw Error(ErrorCode::DecodeError, "PNG has zero size");
    return out;
}

inline std::vector<std::uint8_t> encode_rgb(const RgbBuffer& buffer) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(buffer.width);
    image.height = static_cast<png_uint_32>(buffer.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(image, size, 0, buffer.bytes.data(), 0, nullptr))
        throw Error(ErrorCode::DecodeError, std::string("PNG encode failed: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, buffer.bytes.data(), 0, nullptr))
        throw Error(ErrorCode::DecodeError, std::string("PNG encode failed: ") + image.message);
    out.resize(size);
    return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::MissingFile, "short write to " + path.string());
}

inline ImageObservation to_image(const RgbBuffer& buffer) {
    return ImageObservation::from_bytes(buffer.width, buffer.height, buffer.bytes);
}

inline RgbBuffer from_image(const ImageObservation& image) {
    return {image.width(), image.height(), image.to_bytes()};
}

inline SeedMask to_seeds(const RgbBuffer& buffer) {
    SeedMask seeds(buffer.width, buffer.height);
    for (std::size_t i = 0; i < seeds.pixel_count(); ++i) {
        const auto* px = &buffer.bytes[i * 3];
        if (px[0] == 255 && px[1] == 0 && px[2] == 0)
            seeds[i] = SeedState::Foreground;
        else if (px[0] == 0 && px[1] == 0 && px[2] == 255)
            seeds[i] = SeedState::Background;
    }
    return seeds;
}

inline RgbBuffer from_seeds(const SeedMask& seeds) {
    RgbBuffer out{seeds.width(), seeds.height(), std::vector<std::uint8_t>(seeds.pixel_count() * 3, 0)};
    for (std::size_t i = 0; i < seeds.pixel_count(); ++i) {
        if (seeds[i] == SeedState::Foreground) out.bytes[i * 3] = 255;
        if (seeds[i] == SeedState::Background) out.bytes[i * 3 + 2] = 255;
    }
    return out;
}

/// Foreground wherever the mean channel value is above mid-gray.
inline LabelField to_labels(const RgbBuffer& buffer) {
    LabelField labels(buffer.width, buffer.height);
    for (std::size_t i = 0; i < labels.pixel_count(); ++i) {
        const int sum = buffer.bytes[i * 3] + buffer.bytes[i * 3 + 1] + buffer.bytes[i * 3 + 2];
        labels.set(i, sum > 3 * 127 ? kForeground : kBackground);
    }
    return labels;
}

inline RgbBuffer from_labels(const LabelField& labels) {
    RgbBuffer out{labels.width(), labels.height(), std::vector<std::uint8_t>(labels.pixel_count() * 3, 0)};
    for (std::size_t i = 0; i < labels.pixel_count(); ++i)
        if (labels[i] == kForeground) out.bytes[i * 3] = out.bytes[i * 3 + 1] = out.bytes[i * 3 + 2] = 255;
    return out;
}

inline ImageObservation load_image(const std::filesystem::path& path) { return to_image(decode_rgb(read_file(path))); }
inline SeedMask load_seeds(const std::filesystem::path& path) { return to_seeds(decode_rgb(read_file(path))); }
inline LabelField load_labels(const std::filesystem::path& path) { return to_labels(decode_rgb(read_file(path))); }

inline void save_image(const std::filesystem::path& path, const ImageObservation& image) {
    write_file(path, encode_rgb(from_image(image)));
}
inline void save_seeds(const std::filesystem::path& path, const SeedMask& seeds) {
    write_file(path, encode_rgb(from_seeds(seeds)));
}
inline void save_labels(const std::filesystem::path& path, const LabelField& labels) {
    write_file(path, encode_rgb(from_labels(labels)));
}

}  // namespace dfrf::png
