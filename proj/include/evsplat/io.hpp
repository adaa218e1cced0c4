#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evsplat/image.hpp"
#include "evsplat/scene.hpp"
#include "evsplat/types.hpp"

namespace evsplat {

/// Malformed or inconsistent input data (as opposed to a programming error).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Point clouds: ASCII PLY, float x/y/z plus a uchar "label" per vertex.
std::string encode_ply(const PointCloud& cloud);
PointCloud decode_ply(std::string_view text);

// Event streams: "EVST", u32 version, u32 width, u32 height, then 13-byte little-endian
// records [t u64][x u16][y u16][p i8] in non-decreasing t.
inline constexpr std::uint32_t kEventFormatVersion = 1;
inline constexpr std::size_t kEventHeaderBytes = 16;
inline constexpr std::size_t kEventRecordBytes = 13;

struct EventStream {
    int width = 0;
    int height = 0;
    std::vector<EventRecord> events;
};

std::string encode_events(const EventStream& stream);
EventStream decode_events(std::string_view bytes);

// Images, rows top-down. PPM P6 holds 8-bit sRGB; PFM holds float32 little-endian linear values
// ("PF" for RGB, "Pf" for one channel; the scale line is -1).
std::string encode_ppm(const Image& srgb);
Image decode_ppm(std::string_view bytes);
std::string encode_pfm(const Image& linear);
Image decode_pfm(std::string_view bytes);

/// 8-bit quantization as written by encode_ppm.
Image quantize_8bit(const Image& srgb);
/// Rounds every value to float32 as written by encode_pfm.
Image quantize_float(const Image& img);

// Camera and pose fixtures: JSON with row-major 4x4 matrices.
std::string encode_camera(const PinholeCamera& cam);
PinholeCamera decode_camera(std::string_view text);
std::string encode_pose(const SkeletonPose& pose);
SkeletonPose decode_pose(std::string_view text);

/// A directory of timestamped linear frames: index.json lists {"file", "t_us"} per frame.
struct FrameSequence {
    std::vector<std::uint64_t> times;
    std::vector<Image> frames;
};

void write_frame_sequence(const std::filesystem::path& dir, const FrameSequence& seq);
FrameSequence read_frame_sequence(const std::filesystem::path& dir);

/// Bundle directory: points.ply, scene.json, events.evst, blurry/NNNN.ppm, sharp/NNNN.pfm.
void write_bundle(const std::filesystem::path& dir, const SceneBundle& bundle);
SceneBundle read_bundle(const std::filesystem::path& dir);

}  // namespace evsplat
