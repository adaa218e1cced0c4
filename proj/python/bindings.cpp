#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evsplat/checkpoint.hpp"
#include "evsplat/event_sim.hpp"
#include "evsplat/io.hpp"
#include "evsplat/losses.hpp"
#include "evsplat/renderer.hpp"
#include "evsplat/synthetic.hpp"
#include "evsplat/trainer.hpp"

namespace py = pybind11;
using namespace evsplat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

/// (H, W) or (H, W, C) array to an interleaved image.
Image to_image(const Array& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw std::invalid_argument("image array must have shape (H, W) or (H, W, C)");
    const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    Image img(w, h, c);
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

Array from_image(const Image& img) {
    std::vector<py::ssize_t> shape{img.height, img.width};
    if (img.channels != 1) shape.push_back(img.channels);
    Array out(shape);
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

Array from_values(const std::vector<double>& v, int width, int height) {
    Array out({height, width});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

/// Events as an (N, 4) int64 array of t, x, y, p.
py::array_t<std::int64_t> events_to_array(const std::vector<EventRecord>& ev) {
    py::array_t<std::int64_t> out({static_cast<py::ssize_t>(ev.size()), py::ssize_t{4}});
    auto r = out.mutable_unchecked<2>();
    for (size_t k = 0; k < ev.size(); ++k) {
        r(k, 0) = static_cast<std::int64_t>(ev[k].t);
        r(k, 1) = ev[k].x;
        r(k, 2) = ev[k].y;
        r(k, 3) = ev[k].p;
    }
    return out;
}

std::vector<EventRecord> events_from_array(const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(1) != 4) throw std::invalid_argument("events must have shape (N, 4)");
    auto r = a.unchecked<2>();
    std::vector<EventRecord> ev(static_cast<size_t>(a.shape(0)));
    for (size_t k = 0; k < ev.size(); ++k) {
        if (r(k, 0) < 0 || r(k, 1) < 0 || r(k, 2) < 0 || (r(k, 3) != 1 && r(k, 3) != -1))
            throw std::invalid_argument("events need t, x, y >= 0 and p in {-1, 1}");
        ev[k] = {static_cast<std::uint64_t>(r(k, 0)), static_cast<std::uint16_t>(r(k, 1)),
                 static_cast<std::uint16_t>(r(k, 2)), static_cast<std::int8_t>(r(k, 3))};
    }
    return ev;
}

std::vector<RenderGaussian> gaussians_from_arrays(const Array& positions, const Array& rotations,
                                                  const Array& log_scales, const Array& opacity_logits,
                                                  const Array& colors) {
    const auto n = positions.shape(0);
    if (positions.ndim() != 2 || positions.shape(1) != 3 || rotations.ndim() != 2 || rotations.shape(0) != n ||
        rotations.shape(1) != 4 || log_scales.ndim() != 2 || log_scales.shape(0) != n || log_scales.shape(1) != 3 ||
        opacity_logits.ndim() != 1 || opacity_logits.shape(0) != n || colors.ndim() != 2 || colors.shape(0) != n ||
        colors.shape(1) != 3)
        throw std::invalid_argument("expected positions (N,3), quaternions (N,4) as w,x,y,z, log scales (N,3), "
                                    "opacity logits (N,) and colors (N,3)");
    auto p = positions.unchecked<2>();
    auto q = rotations.unchecked<2>();
    auto s = log_scales.unchecked<2>();
    auto o = opacity_logits.unchecked<1>();
    auto c = colors.unchecked<2>();
    std::vector<RenderGaussian> out(static_cast<size_t>(n));
    for (py::ssize_t i = 0; i < n; ++i) {
        RenderGaussian& g = out[static_cast<size_t>(i)];
        g.position = Vec3(p(i, 0), p(i, 1), p(i, 2));
        g.rotation = quat_to_rot(normalized(Quat(q(i, 0), q(i, 1), q(i, 2), q(i, 3))));
        g.log_scale = Vec3(s(i, 0), s(i, 1), s(i, 2));
        g.opacity_logit = o(i);
        g.color = Vec3(c(i, 0), c(i, 1), c(i, 2));
    }
    return out;
}

py::dict report_to_dict(const EvalReport& r) {
    py::list frames;
    for (const FrameMetrics& f : r.frames) {
        py::dict d;
        d["frame"] = f.frame;
        d["psnr"] = f.psnr;
        d["ssim"] = f.ssim;
        d["human_psnr"] = f.human_psnr;
        frames.append(d);
    }
    py::dict out;
    out["frames"] = frames;
    out["mean_psnr"] = r.mean_psnr;
    out["mean_ssim"] = r.mean_ssim;
    out["mean_human_psnr"] = r.mean_human_psnr;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Event-assisted Gaussian splatting of moving humans: rendering, event simulation, training.";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

    py::class_<PinholeCamera>(m, "Camera")
        .def(py::init([](double fx, double fy, double cx, double cy, int width, int height, const Mat4& world_to_camera) {
                 PinholeCamera c;
                 c.fx = fx;
                 c.fy = fy;
                 c.cx = cx;
                 c.cy = cy;
                 c.width = width;
                 c.height = height;
                 c.world_to_camera = world_to_camera;
                 c.validate();
                 return c;
             }),
             py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"), py::arg("height"),
             py::arg("world_to_camera") = Mat4::Identity())
        .def_readwrite("fx", &PinholeCamera::fx)
        .def_readwrite("fy", &PinholeCamera::fy)
        .def_readwrite("cx", &PinholeCamera::cx)
        .def_readwrite("cy", &PinholeCamera::cy)
        .def_readwrite("width", &PinholeCamera::width)
        .def_readwrite("height", &PinholeCamera::height)
        .def_readwrite("world_to_camera", &PinholeCamera::world_to_camera)
        .def("center", &PinholeCamera::center);

    m.def(
        "render",
        [](const Array& positions, const Array& rotations, const Array& log_scales, const Array& opacity_logits,
           const Array& colors, const PinholeCamera& cam, const Vec3& background, double sigma_extent) {
            const auto gs = gaussians_from_arrays(positions, rotations, log_scales, opacity_logits, colors);
            RenderOptions opts;
            opts.sigma_extent = sigma_extent;
            Renderer r(opts);
            RenderedFrame f;
            {
                py::gil_scoped_release release;
                f = r.forward(gs, cam, constant_background(cam.width, cam.height, background));
            }
            py::dict out;
            out["rgb"] = from_image(f.rgb);
            out["residual_transmittance"] = from_values(f.residual_transmittance, cam.width, cam.height);
            out["accumulated_weight"] = from_values(f.accumulated_weight, cam.width, cam.height);
            return out;
        },
        py::arg("positions"), py::arg("rotations"), py::arg("log_scales"), py::arg("opacity_logits"),
        py::arg("colors"), py::arg("camera"), py::arg("background") = Vec3::Zero(), py::arg("sigma_extent") = 3.0,
        "Renders Gaussians into a dict with 'rgb' (H, W, 3), 'residual_transmittance' and 'accumulated_weight'.");

    m.def(
        "simulate_events",
        [](const std::vector<Array>& frames, const std::vector<std::uint64_t>& times, double contrast) {
            if (frames.size() != times.size()) throw std::invalid_argument("need one timestamp per frame");
            std::vector<TimedFrame> seq;
            for (size_t k = 0; k < frames.size(); ++k) seq.push_back({times[k], to_image(frames[k])});
            return events_to_array(simulate_events(seq, contrast));
        },
        py::arg("frames"), py::arg("times"), py::arg("contrast") = kDefaultContrast,
        "Events (N, 4) of t, x, y, p from linear RGB frames (H, W, 3) with microsecond timestamps.");

    m.def(
        "accumulate",
        [](const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& events, std::uint64_t t_start,
           std::uint64_t t_end, double contrast, int width, int height) {
            const EventMap e = accumulate(events_from_array(events), t_start, t_end, contrast, width, height);
            return from_values(e.values, width, height);
        },
        py::arg("events"), py::arg("t_start"), py::arg("t_end"), py::arg("contrast"), py::arg("width"),
        py::arg("height"), "Signed event map C * sum(p) over [t_start, t_end).");

    m.def(
        "synthesize_blur", [](const std::vector<Array>& frames) {
            std::vector<Image> imgs;
            for (const Array& a : frames) imgs.push_back(to_image(a));
            return from_image(synthesize_blur(imgs));
        },
        py::arg("frames"), "Mean of linear frames, gamma encoded.");

    m.def(
        "delta_log_luma",
        [](const Array& a, const Array& b, double eps) { return from_image(delta_log_luma(to_image(a), to_image(b), eps)); },
        py::arg("a"), py::arg("b"), py::arg("eps") = kDefaultLogEps);
    m.def(
        "event_loss",
        [](const Array& delta, const Array& target, double weight) {
            if (delta.size() != target.size()) throw std::invalid_argument("event_loss: size mismatch");
            return event_loss(std::span<const double>(delta.data(), static_cast<size_t>(delta.size())),
                              std::span<const double>(target.data(), static_cast<size_t>(target.size())), weight);
        },
        py::arg("delta"), py::arg("target"), py::arg("weight") = kDefaultEventWeight);
    m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_image(a), to_image(b)); }, py::arg("a"),
          py::arg("b"));
    m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_image(a), to_image(b)); }, py::arg("a"),
          py::arg("b"));

    m.def("read_image", [](const std::string& path) {
        const std::string bytes = read_file(path);
        const bool pfm = bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == 'F' || bytes[1] == 'f');
        return from_image(pfm ? decode_pfm(bytes) : decode_ppm(bytes));
    }, py::arg("path"), "Loads a PPM (sRGB in [0, 1]) or PFM (linear) image.");
    m.def(
        "read_events",
        [](const std::string& path) {
            const EventStream s = decode_events(read_file(path));
            return py::make_tuple(events_to_array(s.events), s.width, s.height);
        },
        py::arg("path"), "Returns (events, width, height).");
    m.def(
        "write_events",
        [](const std::string& path, const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& ev,
           int width, int height) { write_file(path, encode_events({width, height, events_from_array(ev)})); },
        py::arg("path"), py::arg("events"), py::arg("width"), py::arg("height"));

    m.def(
        "make_synthetic",
        [](const std::string& out_dir, const std::string& config_json, std::optional<std::uint64_t> seed) {
            SyntheticConfig c = config_json.empty() ? SyntheticConfig{} : synthetic_config_from_json(config_json);
            if (seed) c.seed = *seed;
            c.validate();
            py::gil_scoped_release release;
            write_bundle(out_dir, make_synthetic(c));
        },
        py::arg("out_dir"), py::arg("config_json") = "", py::arg("seed") = py::none(),
        "Writes a synthetic scene bundle to out_dir.");

    m.def(
        "train",
        [](const std::string& scene_dir, const std::string& out_path, const std::string& config_json) {
            TrainConfig c = config_json.empty() ? TrainConfig{} : config_from_json(config_json);
            const SceneBundle bundle = read_bundle(scene_dir);
            c.contrast = bundle.contrast;
            std::vector<double> losses;
            {
                py::gil_scoped_release release;
                TrainState s = initialize_state(bundle.points, bundle.rest_bones, c);
                for (const TrainLogEntry& e : train(s, bundle, {}, 0)) losses.push_back(e.loss.total);
                write_file(out_path, encode_checkpoint(s));
            }
            return losses;
        },
        py::arg("scene_dir"), py::arg("out_path"), py::arg("config_json") = "",
        "Trains on a bundle, writes the checkpoint and returns the per-step total loss.");

    m.def(
        "evaluate",
        [](const std::string& ckpt_path, const std::string& scene_dir) {
            const TrainState s = decode_checkpoint(read_file(ckpt_path));
            return report_to_dict(evaluate(s, read_bundle(scene_dir)));
        },
        py::arg("checkpoint"), py::arg("scene_dir"), "Held-out metrics of a checkpoint on a bundle.");

    m.def("default_config", [] { return config_to_json(TrainConfig{}); }, "Default training config as JSON text.");
}
