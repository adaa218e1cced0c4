#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "evsplat/image.hpp"
#include "evsplat/types.hpp"

namespace evsplat {

struct PointCloud {
    std::vector<Eigen::Vector3f> positions;
    std::vector<std::uint8_t> labels;  // 1 = human, 0 = scene

    std::size_t size() const { return positions.size(); }
};

/// Rest-pose bone segment in canonical coordinates.
struct BoneSegment {
    Vec3 head = Vec3::Zero();
    Vec3 tail = Vec3::Zero();
};

/// One exposure: samples[0] and samples.back() are the interval endpoints.
struct BundleFrame {
    std::uint64_t t_start = 0;
    std::uint64_t t_end = 0;
    std::vector<std::uint64_t> sample_times;
    std::vector<PinholeCamera> cameras;
    std::vector<SkeletonPose> poses;
    bool is_test = false;
    /// Human bounding box at the mid-exposure sample: x0, y0, x1, y1 (inclusive).
    std::array<int, 4> human_box{0, 0, -1, -1};

    std::size_t mid_index() const { return sample_times.size() / 2; }
};

/// Everything a training run or an evaluation needs.
struct SceneBundle {
    int width = 0;
    int height = 0;
    double contrast = 0.2;
    PointCloud points;
    std::vector<BoneSegment> rest_bones;
    std::vector<BundleFrame> frames;
    std::vector<Image> blurry;       // sRGB, one per frame
    std::vector<Image> sharp_mid;    // linear RGB ground truth at the mid-exposure sample
    std::vector<EventRecord> events;
};

}  // namespace evsplat
