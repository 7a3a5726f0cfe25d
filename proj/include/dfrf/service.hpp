/**
 * @file service.hpp
 * @brief In-memory session store and its HTTP front end for interactive
 * scribble segmentation.
 *
 * Routes:
 *   POST /sessions                  {"image": base64 PNG}
 *   POST /sessions/{id}/scribbles   {"strokes": [{"class", "radius", "points"}]}
 *   POST /sessions/{id}/segment     {"preset"?, "config"?}  -> 202
 *   GET  /sessions/{id}/result
 *   GET  /healthz
 */
#pragma once

#include <httplib.h>
#include <json.hpp>

#include <boost/beast/core/detail/base64.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "bench.hpp"
#include "core.hpp"
#include "inference.hpp"
#include "png_io.hpp"

namespace dfrf::service {

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
    namespace b64 = boost::beast::detail::base64;
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
    namespace b64 = boost::beast::detail::base64;
    // the decoder stops at padding, so strip it before checking consumption
    std::size_t pad = 0;
    while (pad < 2 && text.size() > pad && text[text.size() - 1 - pad] == '=') ++pad;
    if (pad > 0 && text.size() % 4 != 0) throw Error(ErrorCode::DecodeError, "payload is not valid base64");
    text.remove_suffix(pad);
    std::vector<std::uint8_t> out(b64::decoded_size(text.size()) + 1);
    const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
    if (read != text.size() || text.size() % 4 == 1)
        throw Error(ErrorCode::DecodeError, "payload is not valid base64");
    out.resize(written);
    return out;
}

enum class Status { Idle, Running, Done, Failed };

inline const char* to_string(Status s) {
    switch (s) {
    case Status::Idle: return "IDLE";
    case Status::Running: return "RUNNING";
    case Status::Done: return "DONE";
    case Status::Failed: return "ERROR";
    }
    return "UNKNOWN";
}

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// One brush stroke. Unlabeled erases.
struct Stroke {
    SeedState label = SeedState::Foreground;
    int radius = 0;
    std::vector<Point> points;
};

struct SeedCounts {
    std::size_t foreground = 0;
    std::size_t background = 0;
};

struct SessionResult {
    Status status = Status::Idle;
    int width = 0;
    int height = 0;
    std::optional<LabelField> labels;
    LayerTrace trace;
    std::string error;
};

struct StoreOptions {
    std::size_t max_pixels = 4'000'000;
    std::optional<std::filesystem::path> state_dir;
    DfrfConfig default_config = DfrfConfig::desk();
};

namespace detail {

struct Pixel {
    int x, y;
};

// Integer points of the segment a-b, endpoints included.
inline void bresenham(Pixel a, Pixel b, std::vector<Pixel>& out) {
    const int dx = std::abs(b.x - a.x), dy = -std::abs(b.y - a.y);
    const int sx = a.x < b.x ? 1 : -1, sy = a.y < b.y ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        out.push_back(a);
        if (a.x == b.x && a.y == b.y) return;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            a.x += sx;
        }
        if (e2 <= dx) {
            err += dx;
            a.y += sy;
        }
    }
}

}  // namespace detail

/// Rasterizes strokes onto a copy of `seeds`: points are rounded to the
/// nearest pixel, consecutive points joined by lines, and every line pixel
/// stamped with a disc of the stroke radius (clipped to the image). Any
/// out-of-range point rejects the whole batch.
inline SeedMask rasterize_strokes(const SeedMask& seeds, const std::vector<Stroke>& strokes) {
    const int w = seeds.width(), h = seeds.height();
    std::vector<std::vector<detail::Pixel>> snapped;
    for (const auto& stroke : strokes) {
        if (stroke.radius < 0) throw Error(ErrorCode::InvalidArgument, "stroke radius must be >= 0");
        auto& pts = snapped.emplace_back();
        for (const auto& p : stroke.points) {
            if (!std::isfinite(p.x) || !std::isfinite(p.y))
                throw Error(ErrorCode::OutOfBounds, "stroke point is not finite");
            const double rx = std::round(p.x), ry = std::round(p.y);
            if (rx < 0 || ry < 0 || rx >= w || ry >= h)
                throw Error(ErrorCode::OutOfBounds, "point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                                        ") outside " + std::to_string(w) + "x" + std::to_string(h));
            pts.push_back({static_cast<int>(rx), static_cast<int>(ry)});
        }
    }

    SeedMask out = seeds;
    std::vector<detail::Pixel> line;
    for (std::size_t s = 0; s < strokes.size(); ++s) {
        const auto& pts = snapped[s];
        if (pts.empty()) continue;
        line.clear();
        line.push_back(pts[0]);
        for (std::size_t i = 1; i < pts.size(); ++i) detail::bresenham(pts[i - 1], pts[i], line);
        const int r = strokes[s].radius;
        for (const auto& c : line)
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int x = c.x + dx, y = c.y + dy;
                    if (dx * dx + dy * dy > r * r || x < 0 || y < 0 || x >= w || y >= h) continue;
                    out.set(x, y, strokes[s].label);
                }
    }
    return out;
}

/// Thread-safe session registry. Each session runs at most one segmentation
/// at a time on its own worker thread; results are published in one step
/// under the session lock.
class SessionStore {
public:
    explicit SessionStore(StoreOptions options = {}) : options_(std::move(options)) {
        if (options_.state_dir) std::filesystem::create_directories(*options_.state_dir);
    }

    ~SessionStore() {
        std::vector<std::shared_ptr<Session>> all;
        {
            std::lock_guard lock(mutex_);
            for (auto& [id, s] : sessions_) all.push_back(s);
        }
        for (auto& s : all) join_worker(*s);
    }

    SessionStore(const SessionStore&) = delete;
    SessionStore& operator=(const SessionStore&) = delete;

    const StoreOptions& options() const noexcept { return options_; }

    std::string create(std::span<const std::uint8_t> png_bytes) {
        auto buffer = png::decode_rgb(png_bytes);
        const auto pixels = static_cast<std::size_t>(buffer.width) * static_cast<std::size_t>(buffer.height);
        if (pixels > options_.max_pixels)
            throw Error(ErrorCode::TooLarge, std::to_string(pixels) + " pixels exceeds the limit of " +
                                                 std::to_string(options_.max_pixels));
        auto session = std::make_shared<Session>();
        session->image = png::to_image(buffer);
        session->seeds = SeedMask(buffer.width, buffer.height);
        session->created = session->updated = std::chrono::system_clock::now();

        std::string id;
        {
            std::lock_guard lock(mutex_);
            do id = fresh_id();
            while (sessions_.contains(id));
            session->id = id;
            sessions_.emplace(id, session);
        }
        if (options_.state_dir) {
            std::lock_guard lock(session->mutex);
            spill(*session, true);
        }
        return id;
    }

    SeedCounts set_scribbles(const std::string& id, const std::vector<Stroke>& strokes) {
        auto session = find(id);
        std::lock_guard lock(session->mutex);
        if (session->status == Status::Running)
            throw Error(ErrorCode::AlreadyRunning, "session " + id + " is segmenting; scribbles rejected");
        session->seeds = rasterize_strokes(session->seeds, strokes);
        session->updated = std::chrono::system_clock::now();
        spill(*session, false);
        return counts(*session);
    }

    SeedCounts seed_counts(const std::string& id) {
        auto session = find(id);
        std::lock_guard lock(session->mutex);
        return counts(*session);
    }

    /// Validates and launches a run; returns immediately.
    void start_segmentation(const std::string& id, std::optional<DfrfConfig> config = std::nullopt) {
        auto session = find(id);
        const DfrfConfig run_config = config.value_or(options_.default_config);
        run_config.validate();
        {
            std::lock_guard lock(session->mutex);
            if (session->status == Status::Running)
                throw Error(ErrorCode::AlreadyRunning, "session " + id + " already has a run in progress");
            const auto c = counts(*session);
            if (c.foreground == 0 || c.background == 0)
                throw Error(ErrorCode::MissingSeedClass, "both foreground and background scribbles are required");
            const auto needed = static_cast<std::size_t>(run_config.seed_components);
            if (c.foreground < needed || c.background < needed)
                throw Error(ErrorCode::InsufficientSamples,
                            "each class needs at least " + std::to_string(needed) + " seed pixels");
            const auto n = session->image.pixel_count();
            if (run_config.n_layers > 0 &&
                static_cast<std::size_t>(run_config.nodes_at_layer(run_config.n_layers)) >= n)
                throw Error(ErrorCode::InvalidArgument, "image too small for the requested node schedule");
            session->status = Status::Running;
            session->error.clear();
            session->updated = std::chrono::system_clock::now();
        }
        // the previous worker has finished (status was not RUNNING) but may not be joined yet
        join_worker(*session);
        std::lock_guard worker_lock(session->worker_mutex);
        session->worker = std::jthread([this, session, run_config] { run(session, run_config); });
    }

    SessionResult result(const std::string& id) {
        auto session = find(id);
        std::lock_guard lock(session->mutex);
        SessionResult out;
        out.status = session->status;
        out.width = session->image.width();
        out.height = session->image.height();
        if (session->status == Status::Done) out.labels = session->labels;
        out.trace = session->trace;
        out.error = session->error;
        return out;
    }

    /// Blocks until the session has no run in progress.
    void wait(const std::string& id) { join_worker(*find(id)); }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return sessions_.size();
    }

private:
    struct Session {
        std::string id;
        ImageObservation image;
        SeedMask seeds;
        std::optional<LabelField> labels;
        LayerTrace trace;
        DfrfConfig config;
        Status status = Status::Idle;
        std::string error;
        std::chrono::system_clock::time_point created, updated;
        std::mutex mutex;
        std::mutex worker_mutex;
        std::jthread worker;
    };

    static SeedCounts counts(const Session& s) {
        return {s.seeds.count(SeedState::Foreground), s.seeds.count(SeedState::Background)};
    }

    static void join_worker(Session& s) {
        std::lock_guard lock(s.worker_mutex);
        if (s.worker.joinable()) s.worker.join();
    }

    std::shared_ptr<Session> find(const std::string& id) const {
        std::lock_guard lock(mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session " + id);
        return it->second;
    }

    std::string fresh_id() {
        std::uniform_int_distribution<std::uint64_t> dist;
        char buf[33];
        std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(dist(id_rng_)),
                      static_cast<unsigned long long>(dist(id_rng_)));
        return buf;
    }

    void run(const std::shared_ptr<Session>& session, const DfrfConfig& config) {
        ImageObservation image;
        SeedMask seeds;
        {
            std::lock_guard lock(session->mutex);
            image = session->image;
            seeds = session->seeds;
        }
        std::optional<DfrfResult> outcome;
        std::string failure;
        try {
            outcome = run_dfrf(image, seeds, config);
        } catch (const std::exception& e) {
            failure = e.what();
        }
        std::lock_guard lock(session->mutex);
        session->config = config;
        session->updated = std::chrono::system_clock::now();
        if (outcome) {
            session->labels = std::move(outcome->labels);
            session->trace = std::move(outcome->trace);
            session->status = Status::Done;
        } else {
            session->error = failure;
            session->status = Status::Failed;
        }
        try {
            spill(*session, false);
        } catch (const std::exception&) {
            // spilling is best effort; the in-memory result stays authoritative
        }
    }

    // Caller holds the session lock.
    void spill(const Session& s, bool with_image) const {
        if (!options_.state_dir) return;
        const auto dir = *options_.state_dir / s.id;
        std::filesystem::create_directories(dir);
        if (with_image) png::save_image(dir / "image.png", s.image);
        png::save_seeds(dir / "seeds.png", s.seeds);
        if (s.labels) png::save_labels(dir / "mask.png", *s.labels);
        const auto stamp = [](std::chrono::system_clock::time_point t) {
            return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
        };
        const nlohmann::json meta{{"id", s.id},
                                  {"status", to_string(s.status)},
                                  {"width", s.image.width()},
                                  {"height", s.image.height()},
                                  {"config", config_to_json(s.config)},
                                  {"trace", trace_to_json(s.trace)},
                                  {"error", s.error},
                                  {"created_ms", stamp(s.created)},
                                  {"updated_ms", stamp(s.updated)}};
        const auto text = meta.dump(2);
        png::write_file(dir / "session.json",
                        std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }

    StoreOptions options_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::mt19937_64 id_rng_{std::random_device{}()};
};

inline int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::UnknownSession: return 404;
    case ErrorCode::AlreadyRunning: return 409;
    case ErrorCode::TooLarge: return 413;
    default: return 400;
    }
}

inline std::vector<Stroke> parse_strokes(const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("strokes") || !body["strokes"].is_array())
        throw Error(ErrorCode::InvalidArgument, "body must be {\"strokes\": [...]}");
    std::vector<Stroke> strokes;
    for (const auto& item : body["strokes"]) {
        Stroke s;
        const auto cls = item.value("class", std::string{});
        if (cls == "FG") s.label = SeedState::Foreground;
        else if (cls == "BG") s.label = SeedState::Background;
        else if (cls == "ERASE") s.label = SeedState::Unlabeled;
        else throw Error(ErrorCode::InvalidArgument, "stroke class must be FG, BG or ERASE");
        s.radius = item.value("radius", 0);
        for (const auto& p : item.value("points", nlohmann::json::array())) {
            if (p.is_array() && p.size() == 2) s.points.push_back({p[0].get<double>(), p[1].get<double>()});
            else if (p.is_object()) s.points.push_back({p.at("x").get<double>(), p.at("y").get<double>()});
            else throw Error(ErrorCode::InvalidArgument, "points are [x, y] pairs or {x, y} objects");
        }
        strokes.push_back(std::move(s));
    }
    return strokes;
}

/// Run config for a segment request: the store default, optionally replaced
/// by a named preset, then overlaid with explicit fields.
inline DfrfConfig parse_run_config(const nlohmann::json& body, const DfrfConfig& fallback) {
    DfrfConfig config = fallback;
    if (!body.is_object()) return config;
    if (body.contains("preset")) {
        const auto preset = body["preset"].get<std::string>();
        if (preset == "paper") config = DfrfConfig::paper();
        else if (preset == "desk") config = DfrfConfig::desk();
        else throw Error(ErrorCode::InvalidArgument, "preset must be paper or desk");
    }
    if (body.contains("config")) config = config_from_json(body["config"], config);
    return config;
}

inline nlohmann::json result_to_json(const SessionResult& r) {
    nlohmann::json out{{"status", to_string(r.status)},
                       {"width", r.width},
                       {"height", r.height},
                       {"trace", trace_to_json(r.trace)}};
    if (r.labels) out["mask"] = base64_encode(png::encode_rgb(png::from_labels(*r.labels)));
    if (!r.error.empty()) out["error"] = r.error;
    return out;
}

/// Registers the HTTP routes on `server`. The store must outlive the server.
inline void install_routes(httplib::Server& server, SessionStore& store) {
    using nlohmann::json;
    auto reply = [](httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    // wraps a handler so library errors map onto HTTP statuses
    auto guarded = [reply](auto handler) {
        return [reply, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const Error& e) {
                reply(res, http_status(e.code()), {{"error", to_string(e.code())}, {"message", e.what()}});
            } catch (const json::exception& e) {
                reply(res, 400, {{"error", "InvalidArgument"}, {"message", e.what()}});
            }
        };
    };
    auto parse_body = [](const httplib::Request& req) {
        if (req.body.empty()) return json::object();
        return json::parse(req.body);
    };

    server.Get("/healthz", [reply](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, {{"status", "ok"}});
    });

    server.Post("/sessions", guarded([&store, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        if (!body.contains("image") || !body["image"].is_string())
            throw Error(ErrorCode::InvalidArgument, "body must be {\"image\": <base64 PNG>}");
        const auto bytes = base64_decode(body["image"].get<std::string>());
        const auto id = store.create(bytes);
        const auto r = store.result(id);
        reply(res, 201, {{"id", id}, {"width", r.width}, {"height", r.height}, {"status", to_string(r.status)}});
    }));

    server.Post(R"(/sessions/([0-9a-f]+)/scribbles)",
                guarded([&store, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
                    const auto strokes = parse_strokes(parse_body(req));
                    const auto c = store.set_scribbles(req.matches[1], strokes);
                    reply(res, 200, {{"fg_count", c.foreground}, {"bg_count", c.background}});
                }));

    server.Post(R"(/sessions/([0-9a-f]+)/segment)",
                guarded([&store, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
                    const auto config = parse_run_config(parse_body(req), store.options().default_config);
                    store.start_segmentation(req.matches[1], config);
                    reply(res, 202, {{"status", to_string(Status::Running)}});
                }));

    server.Get(R"(/sessions/([0-9a-f]+)/result)",
               guarded([&store, reply](const httplib::Request& req, httplib::Response& res) {
                   reply(res, 200, result_to_json(store.result(req.matches[1])));
               }));
}

}  // namespace dfrf::service
