#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include <dfrf/bench.hpp>
#include <dfrf/synth.hpp>

#include "temp_dir.hpp"

using namespace dfrf;
namespace fs = std::filesystem;

namespace {

LabelField labels_from(const std::vector<int>& bits) {
    LabelField out(static_cast<int>(bits.size()), 1);
    for (std::size_t i = 0; i < bits.size(); ++i) out.set(i, static_cast<Label>(bits[i]));
    return out;
}

std::vector<CorpusEntry> synthetic_entries(int count) {
    std::vector<CorpusEntry> out;
    for (int i = 0; i < count; ++i) {
        auto scene = make_synthetic_scene(100 + static_cast<std::uint64_t>(i));
        CorpusEntry e;
        e.id = "s" + std::to_string(i);
        e.image = scene.image;
        e.ground_truth = scene.ground_truth;
        e.seeds = scene.seeds;
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

TEST(F1Score, IdentityIsOne) {
    const auto gt = labels_from({0, 1, 1, 0});
    EXPECT_DOUBLE_EQ(f1_score(gt, gt), 1.0);
}

TEST(F1Score, HandCountedExample) {
    // TP=2, FN=1, FP=1
    const auto gt = labels_from({1, 1, 1, 0, 0});
    const auto pred = labels_from({1, 1, 0, 1, 0});
    EXPECT_NEAR(f1_score(pred, gt), 4.0 / 6.0, 1e-15);
}

TEST(F1Score, AllBackgroundPrediction) {
    EXPECT_DOUBLE_EQ(f1_score(labels_from({0, 0, 0}), labels_from({0, 1, 0})), 0.0);
    EXPECT_DOUBLE_EQ(f1_score(labels_from({0, 0}), labels_from({0, 0})), 1.0);
}

TEST(F1Score, SizeMismatch) {
    EXPECT_THROW(f1_score(labels_from({1, 0, 1}), labels_from({1, 0})), Error);
}

TEST(AddNoise, ZeroFractionIsBitExact) {
    const auto scene = make_synthetic_scene(1);
    EXPECT_EQ(add_noise(scene.image, 0.0, 5), scene.image);
}

TEST(AddNoise, SeedControlsOutput) {
    const auto scene = make_synthetic_scene(1);
    EXPECT_EQ(add_noise(scene.image, 0.25, 5), add_noise(scene.image, 0.25, 5));
    EXPECT_NE(add_noise(scene.image, 0.25, 5), add_noise(scene.image, 0.25, 6));
}

TEST(AddNoise, ClipsToValidRange) {
    const ImageObservation flat(64, 64, std::vector<double>(64 * 64 * 3, 0.5));
    const auto noisy = add_noise(flat, 0.5, 3);
    for (double v : noisy.values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    EXPECT_NE(std::count(noisy.values().begin(), noisy.values().end(), 0.0), 0);
}

TEST(AddNoise, FollowedByZeroEqualsSingleApplication) {
    const auto scene = make_synthetic_scene(2);
    const auto once = add_noise(scene.image, 0.25, 8);
    EXPECT_EQ(add_noise(once, 0.0, 9), once);
}

TEST(AddNoise, NoiseFieldStandardDeviation) {
    const auto samples = noise_samples(1'000'000, 0.25, 77);
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / samples.size();
    double var = 0.0;
    for (double v : samples) var += (v - mean) * (v - mean);
    const double sigma = std::sqrt(var / samples.size());
    EXPECT_NEAR(sigma, 63.75, 0.02 * 63.75);
}

TEST(AddNoise, RejectsNegativeFraction) {
    const auto scene = make_synthetic_scene(1);
    EXPECT_THROW(add_noise(scene.image, -0.1, 0), Error);
}

TEST(LoadCorpus, EmptyDirectory) {
    TempDir dir;
    EXPECT_TRUE(load_corpus(dir.path()).entries.empty());
}

TEST(LoadCorpus, MissingRootFails) {
    try {
        load_corpus("/nonexistent/corpus/root");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingFile);
    }
}

TEST(LoadCorpus, OneTripleAndOneBrokenEntry) {
    TempDir dir;
    write_synthetic_corpus(dir.path(), 2, 4);
    fs::remove(dir.path() / "gt" / "synth_001.png");
    const auto corpus = load_corpus(dir.path());
    ASSERT_EQ(corpus.entries.size(), 1u);
    EXPECT_EQ(corpus.entries[0].id, "synth_000");
    ASSERT_EQ(corpus.errors.size(), 1u);
    EXPECT_EQ(corpus.errors[0].id, "synth_001");
    EXPECT_NE(corpus.errors[0].message.find("synth_001"), std::string::npos);
}

TEST(LoadCorpus, DecodesWhatWasWritten) {
    TempDir dir;
    write_synthetic_corpus(dir.path(), 1, 9);
    const auto corpus = load_corpus(dir.path());
    ASSERT_EQ(corpus.entries.size(), 1u);
    const auto scene = make_synthetic_scene(9 * 1000003ULL);
    EXPECT_EQ(corpus.entries[0].image, scene.image);
    EXPECT_EQ(corpus.entries[0].ground_truth, scene.ground_truth);
    EXPECT_EQ(corpus.entries[0].seeds, scene.seeds);
}

TEST(LoadCorpus, SizeMismatchIsReportedPerEntry) {
    TempDir dir;
    write_synthetic_corpus(dir.path(), 1, 9);
    png::save_labels(dir.path() / "gt" / "synth_000.png", LabelField(5, 5));
    const auto corpus = load_corpus(dir.path());
    EXPECT_TRUE(corpus.entries.empty());
    ASSERT_EQ(corpus.errors.size(), 1u);
    EXPECT_NE(corpus.errors[0].message.find("DimensionMismatch"), std::string::npos);
}

TEST(RunBench, NoiseFreeSyntheticIsPerfect) {
    const auto report = run_bench(synthetic_entries(3), DfrfConfig::desk(), {0.0}, 1);
    EXPECT_DOUBLE_EQ(report.mean_f1(kMethodDfrf, 0.0), 1.0);
    EXPECT_TRUE(report.errors.empty());
}

TEST(RunBench, EveryCellPresentAndReportsAreDeterministic) {
    const auto corpus = synthetic_entries(2);
    const std::vector<double> noise{0.0, 0.25, 0.5};
    const auto a = run_bench(corpus, DfrfConfig::desk(), noise, 3);
    ASSERT_EQ(a.cells.size(), corpus.size() * noise.size() * 2);
    for (const auto& c : a.cells) EXPECT_TRUE(c.f1 >= 0.0 && c.f1 <= 1.0);
    const auto b = run_bench(corpus, DfrfConfig::desk(), noise, 3, 2);
    auto strip = [](nlohmann::json j) {
        j.erase("timing");
        return j.dump();
    };
    EXPECT_EQ(strip(report_to_json(a)), strip(report_to_json(b)));
    EXPECT_EQ(report_to_csv(a), report_to_csv(b));

    const auto j = report_to_json(a);
    for (const char* key : {"config", "rng_seed", "noise_fractions", "entries", "summary", "errors", "timing"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["entries"].size(), a.cells.size());
    EXPECT_EQ(j["entries"][0].size(), 4u);
}

TEST(RunBench, NoisyBenchFavoursDfrf) {
    const auto report = run_bench(synthetic_entries(4), DfrfConfig::desk(), {0.25, 0.5}, 5);
    EXPECT_GE(report.mean_f1(kMethodDfrf, 0.25), report.mean_f1(kMethodUnary, 0.25));
    EXPECT_GE(report.mean_f1(kMethodDfrf, 0.5), report.mean_f1(kMethodUnary, 0.5));
}

TEST(RunBench, PerEntryFailuresDoNotAbort) {
    auto corpus = synthetic_entries(2);
    corpus[1].seeds = SeedMask(corpus[1].image.width(), corpus[1].image.height());
    corpus[1].seeds.set(5, 5, SeedState::Foreground);
    const auto report = run_bench(corpus, DfrfConfig::desk(), {0.0, 0.25}, 1);
    EXPECT_EQ(report.cells.size(), 4u);
    ASSERT_EQ(report.errors.size(), 2u);
    EXPECT_EQ(report.errors[0].id, "s1");
    EXPECT_TRUE(report.errors[0].noise.has_value());
}

TEST(RunBench, EmptyCorpusRejected) {
    EXPECT_THROW(run_bench({}, DfrfConfig::desk(), {0.0}, 1), Error);
}

TEST(ConfigJson, RoundTripAndUnknownFields) {
    DfrfConfig c = DfrfConfig::desk();
    c.beta = 3.5;
    c.rng_seed = 12;
    EXPECT_EQ(config_to_json(config_from_json(config_to_json(c), DfrfConfig{})), config_to_json(c));
    EXPECT_THROW(config_from_json({{"gamma", 1}}, c), Error);
    EXPECT_THROW(config_from_json({{"top_k", 0}}, c), Error);
    EXPECT_THROW(config_from_json({{"alpha", "high"}}, c), Error);
}
