// dfrf: command-line front end (segment, bench, synth, serve).

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <dfrf/dfrf.hpp>
#include <dfrf/service.hpp>

namespace fs = std::filesystem;

namespace {

// Config flags bound to scratch values; only flags given on the command line
// are applied on top of the chosen preset.
struct ConfigFlags {
    std::string preset = "paper";
    dfrf::DfrfConfig values;
    std::vector<std::pair<CLI::Option*, void (*)(dfrf::DfrfConfig&, const dfrf::DfrfConfig&)>> bound;

    void attach(CLI::App& app) {
        app.add_option("--preset", preset, "Base schedule before individual overrides")
            ->check(CLI::IsMember({"paper", "desk"}))
            ->capture_default_str();
        auto add = [&](const std::string& names, auto& field, const std::string& help, auto apply) {
            auto* opt = app.add_option(names, field, help + " (default " + to_text(field) + ")");
            bound.emplace_back(opt, apply);
        };
        add("--n_layers,--layers", values.n_layers, "Number of encoding layers",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.n_layers = v.n_layers; });
        add("--nev_start", values.nev_start, "Nodes in the first layer",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.nev_start = v.nev_start; });
        add("--nev_step", values.nev_step, "Extra nodes per further layer",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.nev_step = v.nev_step; });
        add("--alpha", values.alpha, "Weight of the colour unary against previous-layer agreement",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.alpha = v.alpha; });
        add("--beta", values.beta, "Pairwise strength",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.beta = v.beta; });
        add("--top_k", values.top_k, "Encoding nodes kept per pixel",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.top_k = v.top_k; });
        add("--spatial_scale", values.spatial_scale, "Weight of pixel position in encoding features",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.spatial_scale = v.spatial_scale; });
        add("--icm_sweeps", values.icm_sweeps, "Maximum ICM sweeps per layer",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.icm_sweeps = v.icm_sweeps; });
        add("--rng_seed", values.rng_seed, "Seed for every random choice",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.rng_seed = v.rng_seed; });
        add("--seed_components", values.seed_components, "Mixture components per seed class",
            [](dfrf::DfrfConfig& c, const dfrf::DfrfConfig& v) { c.seed_components = v.seed_components; });
    }

    dfrf::DfrfConfig resolve() const {
        dfrf::DfrfConfig config = preset == "desk" ? dfrf::DfrfConfig::desk() : dfrf::DfrfConfig::paper();
        for (const auto& [opt, apply] : bound)
            if (opt->count() > 0) apply(config, values);
        config.validate();
        return config;
    }

    template <class T>
    static std::string to_text(const T& v) {
        std::ostringstream out;
        out << v;
        return out.str();
    }
};

std::vector<double> parse_noise(const std::string& text) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.find_first_not_of(" \t") == std::string::npos) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos)
            throw dfrf::Error(dfrf::ErrorCode::InvalidArgument, "bad noise level '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) out.push_back(0.0);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    dfrf::png::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void require_file(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw dfrf::Error(dfrf::ErrorCode::MissingFile, path.string() + " not found");
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interactive two-class segmentation with a deep-structured fully-connected random field"};
    app.require_subcommand(1);

    // segment
    auto* segment = app.add_subcommand("segment", "Segment one image from a scribble mask");
    fs::path image_path, seeds_path, out_path, trace_path;
    ConfigFlags segment_flags;
    segment->add_option("--image", image_path, "Input RGB PNG")->required();
    segment->add_option("--seeds", seeds_path, "Seed PNG (red foreground, blue background)")->required();
    segment->add_option("--out", out_path, "Output mask PNG (white foreground)")->required();
    segment->add_option("--trace", trace_path, "Trace JSON (default: <out>.json)");
    segment_flags.attach(*segment);

    // bench
    auto* bench = app.add_subcommand("bench", "Noise-robustness benchmark over a corpus");
    fs::path corpus_path, report_path = "bench_report.json";
    std::string noise_text = "0,0.25,0.5";
    std::uint64_t noise_seed = 1;
    unsigned jobs = 1;
    ConfigFlags bench_flags;
    bench->add_option("--corpus", corpus_path, "Directory with images/, gt/, seeds/")->required();
    bench->add_option("--noise", noise_text, "Comma-separated noise fractions; empty means noise-free only")
        ->capture_default_str();
    bench->add_option("--report", report_path, "JSON report path; the CSV goes next to it")->capture_default_str();
    bench->add_option("--noise_seed", noise_seed, "Seed for the noise fields")->capture_default_str();
    bench->add_option("--jobs", jobs, "Entries processed in parallel")->check(CLI::PositiveNumber)->capture_default_str();
    bench_flags.attach(*bench);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic two-region corpus");
    fs::path synth_out;
    int synth_count = 20;
    std::uint64_t synth_seed = 7;
    dfrf::SynthOptions synth_options;
    synth->add_option("--out", synth_out, "Corpus directory")->required();
    synth->add_option("--count", synth_count, "Number of scenes")->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
    synth->add_option("--width", synth_options.width, "Scene width")->check(CLI::Range(16, 4096))->capture_default_str();
    synth->add_option("--height", synth_options.height, "Scene height")->check(CLI::Range(16, 4096))->capture_default_str();

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
    int port = 8080;
    std::string host = "0.0.0.0";
    fs::path state_dir;
    std::size_t max_pixels = 4'000'000;
    serve->add_option("--port", port, "Listen port")->check(CLI::Range(0, 65535))->capture_default_str();
    serve->add_option("--host", host, "Listen address")->capture_default_str();
    serve->add_option("--state-dir", state_dir, "Directory for session snapshots (PNG + JSON)");
    serve->add_option("--max-pixels", max_pixels, "Largest accepted image")->check(CLI::PositiveNumber)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help exits 0; every usage error maps to 1
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*segment) {
            const auto config = segment_flags.resolve();
            require_file(image_path);
            require_file(seeds_path);
            const auto image = dfrf::png::load_image(image_path);
            const auto seeds = dfrf::png::load_seeds(seeds_path);
            const auto result = dfrf::run_dfrf(image, seeds, config);
            if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
            dfrf::png::save_labels(out_path, result.labels);
            if (trace_path.empty()) trace_path = fs::path(out_path.string() + ".json");
            const nlohmann::json trace{{"config", dfrf::config_to_json(config)},
                                       {"image", {{"width", image.width()}, {"height", image.height()}}},
                                       {"foreground_pixels", result.labels.count_foreground()},
                                       {"trace", dfrf::trace_to_json(result.trace)},
                                       {"timing", dfrf::trace_timing_to_json(result.trace)}};
            write_text(trace_path, trace.dump(2) + "\n");
            std::cout << "wrote " << out_path.string() << " and " << trace_path.string() << "\n";
        } else if (*bench) {
            const auto config = bench_flags.resolve();
            const auto noise = parse_noise(noise_text);
            const auto corpus = dfrf::load_corpus(corpus_path);
            auto report = dfrf::run_bench(corpus.entries, config, noise, noise_seed, jobs);
            report.errors.insert(report.errors.begin(), corpus.errors.begin(), corpus.errors.end());
            write_text(report_path, dfrf::report_to_json(report).dump(2) + "\n");
            auto csv_path = report_path;
            csv_path.replace_extension(".csv");
            write_text(csv_path, dfrf::report_to_csv(report));
            for (double f : noise)
                std::printf("noise %.2f  dfrf %.4f  unary %.4f\n", f, report.mean_f1(dfrf::kMethodDfrf, f),
                            report.mean_f1(dfrf::kMethodUnary, f));
            for (const auto& e : report.errors) std::cerr << "error: " << e.id << ": " << e.message << "\n";
            std::cout << "wrote " << report_path.string() << " and " << csv_path.string() << "\n";
        } else if (*synth) {
            dfrf::write_synthetic_corpus(synth_out, synth_count, synth_seed, synth_options);
            std::cout << "wrote " << synth_count << " scenes to " << synth_out.string() << "\n";
        } else if (*serve) {
            dfrf::service::StoreOptions options;
            options.max_pixels = max_pixels;
            if (!state_dir.empty()) options.state_dir = state_dir;
            dfrf::service::SessionStore store(options);
            httplib::Server server;
            server.set_payload_max_length(256u << 20);
            dfrf::service::install_routes(server, store);
            g_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            if (!server.bind_to_port(host, port))
                throw dfrf::Error(dfrf::ErrorCode::InvalidArgument, "cannot listen on " + host + ":" + std::to_string(port));
            std::cout << "listening on " << host << ":" << port << std::endl;
            server.listen_after_bind();
            g_server = nullptr;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
