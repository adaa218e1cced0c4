// Command-line front end: synthetic data, event simulation, blur synthesis, training,
// rendering and evaluation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "evsplat/checkpoint.hpp"
#include "evsplat/event_sim.hpp"
#include "evsplat/io.hpp"
#include "evsplat/synthetic.hpp"
#include "evsplat/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evsplat;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void set_threads(int threads) {
    if (threads <= 0) return;
#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
}

SyntheticConfig synthetic_config_from_file(const std::string& path) {
    try {
        return synthetic_config_from_json(read_file(path));
    } catch (const std::invalid_argument& e) {
        throw DataError(path + ": " + e.what());
    }
}

TrainConfig train_config_from_file(const std::string& path) {
    try {
        return config_from_json(read_file(path));
    } catch (const std::invalid_argument& e) {
        throw DataError(path + ": " + e.what());
    }
}

void require_valid(const std::function<void()>& check) {
    try {
        check();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evsplat: event-supervised Gaussian splatting of a moving figure and its static scene"};
    app.require_subcommand(1);

    // make-synthetic
    auto* mk = app.add_subcommand("make-synthetic", "Generate a synthetic scene bundle");
    std::string mk_out, mk_config;
    std::optional<std::uint64_t> mk_seed;
    std::optional<int> mk_frames, mk_size, mk_subsamples;
    std::optional<double> mk_speed, mk_contrast;
    mk->add_option("--out", mk_out, "Output bundle directory")->required();
    mk->add_option("--config", mk_config, "JSON file with generator settings")->check(CLI::ExistingFile);
    mk->add_option("--seed", mk_seed, "Random seed");
    mk->add_option("--frames", mk_frames, "Number of blurry frames")->check(CLI::PositiveNumber);
    mk->add_option("--motion-speed", mk_speed, "Motion speed multiplier (0 = static)")->check(CLI::NonNegativeNumber);
    mk->add_option("--size", mk_size, "Square image size in pixels")->check(CLI::Range(8, 4096));
    mk->add_option("--subsamples", mk_subsamples, "Sharp renders per exposure")->check(CLI::PositiveNumber);
    mk->add_option("--contrast", mk_contrast, "Event contrast threshold")->check(CLI::PositiveNumber);

    // simulate-events
    auto* sim = app.add_subcommand("simulate-events", "Simulate events from a directory of timed linear frames");
    std::string sim_frames, sim_out;
    double sim_contrast = kDefaultContrast;
    sim->add_option("--frames", sim_frames, "Frame directory (index.json + PFM files)")->required();
    sim->add_option("--contrast", sim_contrast, "Contrast threshold")->check(CLI::PositiveNumber);
    sim->add_option("--out", sim_out, "Output event stream (.evst)")->required();

    // synthesize-blur
    auto* blur = app.add_subcommand("synthesize-blur", "Average windows of linear frames into blurry sRGB images");
    std::string blur_frames, blur_out;
    int blur_window = 8;
    blur->add_option("--frames", blur_frames, "Frame directory (index.json + PFM files)")->required();
    blur->add_option("--window", blur_window, "Frames per blurry image")->check(CLI::PositiveNumber);
    blur->add_option("--out", blur_out, "Output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train on a scene bundle");
    std::string tr_scene, tr_config, tr_out;
    bool tr_no_event = false, tr_no_semantic = false;
    std::optional<int> tr_iters;
    std::optional<std::uint64_t> tr_seed;
    int tr_log_every = 100, tr_threads = 0;
    tr->add_option("--scene", tr_scene, "Bundle directory")->required();
    tr->add_option("--config", tr_config, "JSON training config")->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "Output checkpoint")->required();
    tr->add_flag("--no-event-loss", tr_no_event, "Disable the event loss");
    tr->add_flag("--no-semantic", tr_no_semantic, "Treat every Gaussian as static scene");
    tr->add_option("--iterations", tr_iters, "Override the iteration count")->check(CLI::NonNegativeNumber);
    tr->add_option("--seed", tr_seed, "Override the seed");
    tr->add_option("--log-every", tr_log_every, "Progress interval (0 = quiet)")->check(CLI::NonNegativeNumber);
    tr->add_option("--threads", tr_threads, "Worker threads (0 = default)")->check(CLI::NonNegativeNumber);

    // render
    auto* rd = app.add_subcommand("render", "Render a checkpoint under one camera and pose");
    std::string rd_ckpt, rd_camera, rd_pose, rd_out;
    rd->add_option("--ckpt", rd_ckpt, "Checkpoint file")->required();
    rd->add_option("--camera", rd_camera, "Camera JSON")->required();
    rd->add_option("--pose", rd_pose, "Pose JSON")->required();
    rd->add_option("--out", rd_out, "Output image (.ppm sRGB or .pfm linear)")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out frames of a bundle");
    std::string ev_ckpt, ev_scene, ev_report;
    int ev_threads = 0;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--scene", ev_scene, "Bundle directory")->required();
    ev->add_option("--report", ev_report, "Output JSON report")->required();
    ev->add_option("--threads", ev_threads, "Worker threads (0 = default)")->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (mk->parsed()) {
            SyntheticConfig c = mk_config.empty() ? SyntheticConfig{} : synthetic_config_from_file(mk_config);
            if (mk_seed) c.seed = *mk_seed;
            if (mk_frames) c.frames = *mk_frames;
            if (mk_speed) c.motion_speed = *mk_speed;
            if (mk_size) c.width = c.height = *mk_size;
            if (mk_subsamples) c.subsamples = *mk_subsamples;
            if (mk_contrast) c.contrast = *mk_contrast;
            require_valid([&] { c.validate(); });
            const SceneBundle b = make_synthetic(c);
            write_bundle(mk_out, b);
            std::printf("wrote %s: %zu frames, %zu points, %zu events\n", mk_out.c_str(), b.frames.size(),
                        b.points.size(), b.events.size());
        } else if (sim->parsed()) {
            const FrameSequence seq = read_frame_sequence(sim_frames);
            if (seq.frames.size() < 2) throw DataError("simulate-events: at least two frames are required");
            std::vector<TimedFrame> frames;
            for (size_t k = 0; k < seq.frames.size(); ++k) {
                if (seq.frames[k].channels != 3) throw DataError("simulate-events: frames must be RGB");
                frames.push_back({seq.times[k], seq.frames[k]});
            }
            std::vector<EventRecord> events;
            try {
                events = simulate_events(frames, sim_contrast);
            } catch (const std::invalid_argument& e) {
                throw DataError(e.what());
            }
            write_file(sim_out, encode_events({frames[0].linear_rgb.width, frames[0].linear_rgb.height, events}));
            std::printf("wrote %zu events to %s\n", events.size(), sim_out.c_str());
        } else if (blur->parsed()) {
            const FrameSequence seq = read_frame_sequence(blur_frames);
            const size_t window = static_cast<size_t>(blur_window);
            if (seq.frames.size() < window) throw DataError("synthesize-blur: fewer frames than one window");
            fs::create_directories(blur_out);
            json index;
            index["frames"] = json::array();
            size_t count = 0;
            for (size_t start = 0; start + window <= seq.frames.size(); start += window, ++count) {
                std::vector<Image> group(seq.frames.begin() + static_cast<long>(start),
                                         seq.frames.begin() + static_cast<long>(start + window));
                Image blurred;
                try {
                    blurred = synthesize_blur(group);
                } catch (const std::invalid_argument& e) {
                    throw DataError(e.what());
                }
                char name[32];
                std::snprintf(name, sizeof(name), "%04zu.ppm", count);
                write_file(fs::path(blur_out) / name, encode_ppm(blurred));
                index["frames"].push_back(
                    {{"file", name}, {"t_start", seq.times[start]}, {"t_end", seq.times[start + window - 1]}});
            }
            write_file(fs::path(blur_out) / "index.json", index.dump(2));
            std::printf("wrote %zu blurry frames to %s\n", count, blur_out.c_str());
        } else if (tr->parsed()) {
            set_threads(tr_threads);
            TrainConfig c = tr_config.empty() ? TrainConfig{} : train_config_from_file(tr_config);
            if (tr_no_event) c.use_event_loss = false;
            if (tr_no_semantic) c.use_semantic = false;
            if (tr_iters) c.iterations = *tr_iters;
            if (tr_seed) c.seed = *tr_seed;
            require_valid([&] { c.validate(); });
            const SceneBundle bundle = read_bundle(tr_scene);
            c.contrast = bundle.contrast;
            TrainState state = initialize_state(bundle.points, bundle.rest_bones, c);
            const auto t0 = std::chrono::steady_clock::now();
            train(state, bundle,
                  [&](const TrainLogEntry& e) {
                      const double secs =
                          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                      std::printf("iter %6lld  loss %.6f  photo %.6f  event %.6f  gaussians %zu  %.1fs\n",
                                  static_cast<long long>(e.iteration), e.loss.total, e.loss.photometric,
                                  e.loss.event, e.gaussians, secs);
                      std::fflush(stdout);
                  },
                  tr_log_every);
            write_file(tr_out, encode_checkpoint(state));
            std::printf("wrote %s (%zu gaussians)\n", tr_out.c_str(), state.gaussians.size());
        } else if (rd->parsed()) {
            const TrainState state = decode_checkpoint(read_file(rd_ckpt));
            const PinholeCamera cam = decode_camera(read_file(rd_camera));
            const SkeletonPose pose = decode_pose(read_file(rd_pose));
            if (pose.bone_count() != state.skinning.bones)
                throw DataError("render: pose bone count does not match the checkpoint");
            const RenderedFrame f = render_state(state, cam, pose);
            if (fs::path(rd_out).extension() == ".pfm")
                write_file(rd_out, encode_pfm(srgb_to_linear(f.rgb)));
            else
                write_file(rd_out, encode_ppm(f.rgb));
            std::printf("wrote %s\n", rd_out.c_str());
        } else if (ev->parsed()) {
            set_threads(ev_threads);
            const TrainState state = decode_checkpoint(read_file(ev_ckpt));
            const SceneBundle bundle = read_bundle(ev_scene);
            if (static_cast<int>(bundle.rest_bones.size()) != state.skinning.bones)
                throw DataError("eval: bundle skeleton does not match the checkpoint");
            const EvalReport report = evaluate(state, bundle);
            write_file(ev_report, report_to_json(report));
            std::printf("mean PSNR %.4f dB  mean SSIM %.5f  human-box PSNR %.4f dB over %zu frames\n",
                        report.mean_psnr, report.mean_ssim, report.mean_human_psnr, report.frames.size());
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return 0;
}
