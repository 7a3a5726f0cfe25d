#include <gtest/gtest.h>

#include <dfrf/png_io.hpp>
#include <dfrf/synth.hpp>

#include "temp_dir.hpp"

using namespace dfrf;

TEST(Png, ImageRoundTripPreservesBytes) {
    const auto scene = make_synthetic_scene(4);
    const auto bytes = png::encode_rgb(png::from_image(scene.image));
    const auto back = png::to_image(png::decode_rgb(bytes));
    EXPECT_EQ(back, scene.image);
    EXPECT_EQ(back.to_bytes(), scene.image.to_bytes());
}

TEST(Png, SeedColourConvention) {
    png::RgbBuffer buf{4, 1, {255, 0, 0, 0, 0, 255, 255, 0, 1, 0, 0, 0}};
    const auto seeds = png::to_seeds(buf);
    EXPECT_EQ(seeds[0], SeedState::Foreground);
    EXPECT_EQ(seeds[1], SeedState::Background);
    EXPECT_EQ(seeds[2], SeedState::Unlabeled);
    EXPECT_EQ(seeds[3], SeedState::Unlabeled);
    EXPECT_EQ(png::to_seeds(png::from_seeds(seeds)), seeds);
}

TEST(Png, LabelMasksAreWhiteOnBlack) {
    LabelField labels(3, 1);
    labels.set(1, kForeground);
    const auto buf = png::from_labels(labels);
    EXPECT_EQ(buf.bytes, (std::vector<std::uint8_t>{0, 0, 0, 255, 255, 255, 0, 0, 0}));
    EXPECT_EQ(png::to_labels(png::decode_rgb(png::encode_rgb(buf))), labels);
}

TEST(Png, CorruptBytesAreDecodeErrors) {
    const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5, 6, 7, 8, 9};
    try {
        png::decode_rgb(junk);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DecodeError);
    }
}

TEST(Png, FilesRoundTrip) {
    TempDir dir;
    const auto scene = make_synthetic_scene(8);
    png::save_image(dir.path() / "i.png", scene.image);
    png::save_seeds(dir.path() / "s.png", scene.seeds);
    png::save_labels(dir.path() / "g.png", scene.ground_truth);
    EXPECT_EQ(png::load_image(dir.path() / "i.png"), scene.image);
    EXPECT_EQ(png::load_seeds(dir.path() / "s.png"), scene.seeds);
    EXPECT_EQ(png::load_labels(dir.path() / "g.png"), scene.ground_truth);
    try {
        png::load_image(dir.path() / "absent.png");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingFile);
        EXPECT_NE(std::string(e.what()).find("absent.png"), std::string::npos);
    }
}
