#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include <dfrf/service.hpp>
#include <dfrf/synth.hpp>

#include "temp_dir.hpp"

using namespace dfrf;
using namespace dfrf::service;
using nlohmann::json;

namespace {

std::string png_base64(const ImageObservation& image) {
    return base64_encode(png::encode_rgb(png::from_image(image)));
}

// Store plus a live HTTP server on an ephemeral loopback port.
class ServiceFixture : public ::testing::Test {
protected:
    void start(StoreOptions options = {}) {
        store_ = std::make_unique<SessionStore>(std::move(options));
        install_routes(server_, *store_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        client_->set_read_timeout(30, 0);
    }

    void SetUp() override { start(); }

    void TearDown() override {
        server_.stop();
        if (thread_.joinable()) thread_.join();
        store_.reset();
    }

    void restart(StoreOptions options) {
        TearDown();
        start(std::move(options));
    }

    std::pair<int, json> post(const std::string& path, const json& body) {
        auto res = client_->Post(path, body.dump(), "application/json");
        if (!res) return {0, json()};
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }

    std::pair<int, json> get(const std::string& path) {
        auto res = client_->Get(path);
        if (!res) return {0, json()};
        return {res->status, json::parse(res->body)};
    }

    std::string create(const ImageObservation& image) {
        const auto [status, body] = post("/sessions", {{"image", png_base64(image)}});
        EXPECT_EQ(status, 201) << body.dump();
        return body.value("id", std::string{});
    }

    // FG stroke inside the blob and BG strokes near the borders, from the scene's seeds
    json scene_strokes(const SyntheticScene& scene) {
        json fg = json::array(), bg = json::array();
        for (int y = 0; y < scene.seeds.height(); ++y)
            for (int x = 0; x < scene.seeds.width(); ++x) {
                const auto s = scene.seeds.at(x, y);
                if (s == SeedState::Foreground) fg.push_back({{"class", "FG"}, {"points", {{x, y}}}});
                if (s == SeedState::Background) bg.push_back({{"class", "BG"}, {"points", {{x, y}}}});
            }
        json strokes = json::array();
        for (auto& s : fg) strokes.push_back(s);
        for (auto& s : bg) strokes.push_back(s);
        return {{"strokes", strokes}};
    }

    json wait_done(const std::string& id) {
        for (int i = 0; i < 600; ++i) {
            auto [status, body] = get("/sessions/" + id + "/result");
            if (body["status"] != "RUNNING") return body;
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        ADD_FAILURE() << "run did not finish";
        return {};
    }

    std::unique_ptr<SessionStore> store_;
    httplib::Server server_;
    std::thread thread_;
    std::unique_ptr<httplib::Client> client_;
    int port_ = 0;
};

}  // namespace

TEST(Base64, RoundTripAndRejectsGarbage) {
    const std::vector<std::uint8_t> bytes{0, 1, 2, 250, 251, 252, 253};
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
    EXPECT_THROW(base64_decode("@@@@"), Error);
}

TEST(Rasterize, LineAndRoundingAndDisc) {
    const SeedMask empty(10, 10);
    const auto line = rasterize_strokes(empty, {{SeedState::Foreground, 0, {{0, 0}, {4, 2}}}});
    EXPECT_EQ(line.count(SeedState::Foreground), 5u);
    EXPECT_EQ(line.at(4, 2), SeedState::Foreground);

    const auto rounded = rasterize_strokes(empty, {{SeedState::Background, 0, {{2.6, 3.4}}}});
    EXPECT_EQ(rounded.at(3, 3), SeedState::Background);

    const auto disc = rasterize_strokes(empty, {{SeedState::Foreground, 1, {{5, 5}}}});
    EXPECT_EQ(disc.count(SeedState::Foreground), 5u);
    const auto corner = rasterize_strokes(empty, {{SeedState::Foreground, 2, {{0, 0}}}});
    EXPECT_EQ(corner.count(SeedState::Foreground), 6u);

    const auto erased = rasterize_strokes(disc, {{SeedState::Unlabeled, 0, {{5, 5}}}});
    EXPECT_EQ(erased.count(SeedState::Foreground), 4u);
}

TEST(Rasterize, OutOfBoundsRejectsWholeBatch) {
    const SeedMask empty(10, 4);
    try {
        rasterize_strokes(empty, {{SeedState::Foreground, 0, {{1, 1}}}, {SeedState::Foreground, 0, {{10, 0}}}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
    }
    EXPECT_THROW(rasterize_strokes(empty, {{SeedState::Foreground, 0, {{-0.6, 0}}}}), Error);
    EXPECT_NO_THROW(rasterize_strokes(empty, {{SeedState::Foreground, 0, {{9.4, 3.4}}}}));
}

TEST_F(ServiceFixture, Healthz) {
    const auto [status, body] = get("/healthz");
    EXPECT_EQ(status, 200);
    EXPECT_EQ(body["status"], "ok");
}

TEST_F(ServiceFixture, CreateSessions) {
    SynthOptions o;
    o.width = 300;
    o.height = 200;
    const auto scene = make_synthetic_scene(1, o);
    const auto a = create(scene.image), b = create(scene.image);
    EXPECT_FALSE(a.empty());
    EXPECT_NE(a, b);
    const auto [status, body] = get("/sessions/" + a + "/result");
    EXPECT_EQ(status, 200);
    EXPECT_EQ(body["status"], "IDLE");
    EXPECT_FALSE(body.contains("mask"));
    EXPECT_EQ(body["width"], 300);
    EXPECT_EQ(body["height"], 200);
}

TEST_F(ServiceFixture, CorruptUploadsAreRejected) {
    auto [s1, b1] = post("/sessions", {{"image", base64_encode(std::vector<std::uint8_t>{1, 2, 3, 4})}});
    EXPECT_EQ(s1, 400);
    EXPECT_EQ(b1["error"], "DecodeError");
    auto [s2, b2] = post("/sessions", {{"image", "not base64!"}});
    EXPECT_EQ(s2, 400);
    auto [s3, b3] = post("/sessions", {{"picture", "x"}});
    EXPECT_EQ(s3, 400);
    auto res = client_->Post("/sessions", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
}

TEST_F(ServiceFixture, OversizedImagesAreRejected) {
    StoreOptions options;
    options.max_pixels = 1000;
    restart(options);
    const auto [status, body] = post("/sessions", {{"image", png_base64(make_synthetic_scene(1).image)}});
    EXPECT_EQ(status, 413);
    EXPECT_EQ(body["error"], "TooLarge");
}

TEST_F(ServiceFixture, ScribbleCountsAndIdempotence) {
    const auto id = create(make_synthetic_scene(2).image);
    json points = json::array();
    for (int x = 0; x < 10; ++x) points.push_back({x, 5});
    const json payload{{"strokes", {{{"class", "FG"}, {"radius", 0}, {"points", points}}}}};
    auto [s1, b1] = post("/sessions/" + id + "/scribbles", payload);
    EXPECT_EQ(s1, 200);
    EXPECT_EQ(b1["fg_count"], 10);
    EXPECT_EQ(b1["bg_count"], 0);
    auto [s2, b2] = post("/sessions/" + id + "/scribbles", payload);
    EXPECT_EQ(b2, b1);

    const json object_points{{"strokes", {{{"class", "BG"}, {"points", {{{"x", 50}, {"y", 50}}}}}}}};
    auto [s3, b3] = post("/sessions/" + id + "/scribbles", object_points);
    EXPECT_EQ(b3["bg_count"], 1);
}

TEST_F(ServiceFixture, ScribbleErrors) {
    const auto scene = make_synthetic_scene(2);
    const auto id = create(scene.image);
    const json outside{{"strokes", {{{"class", "FG"}, {"points", {{scene.image.width(), 0}}}}}}};
    auto [s1, b1] = post("/sessions/" + id + "/scribbles", outside);
    EXPECT_EQ(s1, 400);
    EXPECT_EQ(b1["error"], "OutOfBounds");
    auto [s2, b2] = post("/sessions/" + id + "/scribbles", {{"strokes", {{{"class", "PURPLE"}, {"points", {{1, 1}}}}}}});
    EXPECT_EQ(s2, 400);
    auto [s3, b3] = post("/sessions/0123abcd/scribbles", {{"strokes", json::array()}});
    EXPECT_EQ(s3, 404);
    EXPECT_EQ(b3["error"], "UnknownSession");
}

TEST_F(ServiceFixture, UnknownSessionResult) {
    const auto [status, body] = get("/sessions/deadbeef/result");
    EXPECT_EQ(status, 404);
}

TEST_F(ServiceFixture, SegmentRequiresBothClasses) {
    const auto id = create(make_synthetic_scene(2).image);
    json points = json::array();
    for (int x = 0; x < 10; ++x) points.push_back({x, 5});
    post("/sessions/" + id + "/scribbles", {{"strokes", {{{"class", "FG"}, {"points", points}}}}});
    auto [s1, b1] = post("/sessions/" + id + "/segment", json::object());
    EXPECT_EQ(s1, 400);
    EXPECT_EQ(b1["error"], "MissingSeedClass");
    post("/sessions/" + id + "/scribbles", {{"strokes", {{{"class", "BG"}, {"points", {{50, 50}, {52, 50}}}}}}});
    auto [s2, b2] = post("/sessions/" + id + "/segment", json::object());
    EXPECT_EQ(s2, 400);
    EXPECT_EQ(b2["error"], "InsufficientSamples");
}

TEST_F(ServiceFixture, SegmentRunsToDoneWithDecodableMask) {
    const auto scene = make_synthetic_scene(3);
    const auto id = create(scene.image);
    auto [s1, counts] = post("/sessions/" + id + "/scribbles", scene_strokes(scene));
    EXPECT_EQ(counts["fg_count"], scene.seeds.count(SeedState::Foreground));
    auto [s2, b2] = post("/sessions/" + id + "/segment", json::object());
    EXPECT_EQ(s2, 202);
    const auto done = wait_done(id);
    ASSERT_EQ(done["status"], "DONE") << done.dump();
    const auto mask = png::to_labels(png::decode_rgb(base64_decode(done["mask"].get<std::string>())));
    EXPECT_EQ(mask.width(), scene.image.width());
    EXPECT_EQ(mask.height(), scene.image.height());
    EXPECT_EQ(mask, run_dfrf(scene.image, scene.seeds, DfrfConfig::desk()).labels);
    ASSERT_EQ(done["trace"].size(), 5u);
    for (const auto& layer : done["trace"])
        EXPECT_LE(layer["energy_after"].get<double>(), layer["energy_before"].get<double>());
}

TEST_F(ServiceFixture, RunsAreExclusivePerSession) {
    SynthOptions o;
    o.width = 240;
    o.height = 180;
    const auto scene = make_synthetic_scene(4, o);
    const auto id = create(scene.image);
    post("/sessions/" + id + "/scribbles", scene_strokes(scene));
    auto [s1, b1] = post("/sessions/" + id + "/segment", json::object());
    ASSERT_EQ(s1, 202);
    auto [s2, b2] = post("/sessions/" + id + "/segment", json::object());
    EXPECT_EQ(s2, 409);
    EXPECT_EQ(b2["error"], "AlreadyRunning");
    auto [s3, b3] = post("/sessions/" + id + "/scribbles", scene_strokes(scene));
    EXPECT_EQ(s3, 409);
    EXPECT_EQ(wait_done(id)["status"], "DONE");
    // a finished session can run again
    auto [s4, b4] = post("/sessions/" + id + "/segment", {{"config", {{"n_layers", 1}}}});
    EXPECT_EQ(s4, 202);
    const auto again = wait_done(id);
    EXPECT_EQ(again["status"], "DONE");
    EXPECT_EQ(again["trace"].size(), 1u);
}

TEST_F(ServiceFixture, ConfigOverridesAreValidated) {
    const auto scene = make_synthetic_scene(3);
    const auto id = create(scene.image);
    post("/sessions/" + id + "/scribbles", scene_strokes(scene));
    auto [s1, b1] = post("/sessions/" + id + "/segment", {{"config", {{"top_k", 0}}}});
    EXPECT_EQ(s1, 400);
    auto [s2, b2] = post("/sessions/" + id + "/segment", {{"preset", "huge"}});
    EXPECT_EQ(s2, 400);
    auto [s3, b3] = post("/sessions/" + id + "/segment", {{"config", {{"nev_start", 7000}}}});
    EXPECT_EQ(s3, 400);
    EXPECT_EQ(get("/sessions/" + id + "/result").second["status"], "IDLE");
}

TEST_F(ServiceFixture, ConcurrentSessionsMatchSerialRuns) {
    std::vector<std::string> ids;
    std::vector<SyntheticScene> scenes;
    for (std::uint64_t seed : {5u, 6u, 7u}) {
        scenes.push_back(make_synthetic_scene(seed));
        ids.push_back(create(scenes.back().image));
        post("/sessions/" + ids.back() + "/scribbles", scene_strokes(scenes.back()));
    }
    for (const auto& id : ids) EXPECT_EQ(post("/sessions/" + id + "/segment", json::object()).first, 202);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto done = wait_done(ids[i]);
        ASSERT_EQ(done["status"], "DONE");
        const auto mask = png::to_labels(png::decode_rgb(base64_decode(done["mask"].get<std::string>())));
        EXPECT_EQ(mask, run_dfrf(scenes[i].image, scenes[i].seeds, DfrfConfig::desk()).labels);
    }
}

TEST_F(ServiceFixture, StateDirectorySnapshots) {
    TempDir dir;
    StoreOptions options;
    options.state_dir = dir.path();
    restart(options);
    const auto scene = make_synthetic_scene(3);
    const auto id = create(scene.image);
    post("/sessions/" + id + "/scribbles", scene_strokes(scene));
    post("/sessions/" + id + "/segment", json::object());
    ASSERT_EQ(wait_done(id)["status"], "DONE");
    store_->wait(id);
    const auto root = dir.path() / id;
    EXPECT_EQ(png::load_image(root / "image.png"), scene.image);
    EXPECT_EQ(png::load_seeds(root / "seeds.png"), scene.seeds);
    EXPECT_TRUE(std::filesystem::exists(root / "mask.png"));
    const auto bytes = png::read_file(root / "session.json");
    const auto meta = json::parse(bytes.begin(), bytes.end());
    EXPECT_EQ(meta["status"], "DONE");
    EXPECT_EQ(meta["trace"].size(), 5u);
}
