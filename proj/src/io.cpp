#include "evsplat/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace evsplat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, size_t offset) {
    T value;
    std::memcpy(&value, bytes.data() + offset, sizeof(T));
    return value;
}

std::string format_float(float v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
    if (token.empty()) return false;
    if (token.front() == '+') token.remove_prefix(1);
    const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
    return res.ec == std::errc() && res.ptr == token.data() + token.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

// Line reader over a text buffer; strips a trailing '\r'.
class LineReader {
public:
    explicit LineReader(std::string_view text) : text_(text) {}
    bool next(std::string_view& line) {
        if (pos_ >= text_.size()) return false;
        size_t end = text_.find('\n', pos_);
        if (end == std::string_view::npos) end = text_.size();
        line = text_.substr(pos_, end - pos_);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos_ = end + 1;
        return true;
    }

private:
    std::string_view text_;
    size_t pos_ = 0;
};

// Header token reader for PPM/PFM: whitespace separated, '#' comments to end of line.
class HeaderReader {
public:
    explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}
    std::string_view token() {
        for (;;) {
            while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
            if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
                continue;
            }
            break;
        }
        const size_t start = pos_;
        while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_])) && bytes_[pos_] != '#')
            ++pos_;
        return bytes_.substr(start, pos_ - start);
    }
    /// Consumes the single whitespace byte that ends the header.
    size_t end_of_header(const char* what) {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
            throw DataError(std::string(what) + ": header not terminated");
        return pos_ + 1;
    }

private:
    std::string_view bytes_;
    size_t pos_ = 0;
};

int parse_dimension(std::string_view token, const char* what) {
    long long v = 0;
    if (!parse_number(token, v) || v <= 0 || v > 65535) throw DataError(std::string(what) + ": bad image dimension");
    return static_cast<int>(v);
}

// ---------------------------------------------------------------- json helpers

json mat4_to_json(const Mat4& m) {
    json rows = json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    return rows;
}

double number_of(const json& v, const char* what) {
    if (!v.is_number()) throw DataError(std::string(what) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw DataError(std::string(what) + " must be finite");
    return d;
}

Mat4 mat4_from_json(const json& v) {
    if (!v.is_array() || v.size() != 4) throw DataError("expected a 4x4 matrix (4 rows)");
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
        const json& row = v[static_cast<size_t>(r)];
        if (!row.is_array() || row.size() != 4) throw DataError("expected a 4x4 matrix (4 columns per row)");
        for (int c = 0; c < 4; ++c) m(r, c) = number_of(row[static_cast<size_t>(c)], "matrix entry");
    }
    return m;
}

json vec3_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec3_from_json(const json& v) {
    if (!v.is_array() || v.size() != 3) throw DataError("expected a 3-vector");
    return {number_of(v[0], "vector entry"), number_of(v[1], "vector entry"), number_of(v[2], "vector entry")};
}

const json& field(const json& obj, const char* key) {
    if (!obj.is_object()) throw DataError("expected a JSON object");
    const auto it = obj.find(key);
    if (it == obj.end()) throw DataError(std::string("missing key '") + key + "'");
    return *it;
}

std::int64_t integer_of(const json& v, const char* what) {
    if (!v.is_number_integer()) throw DataError(std::string(what) + " must be an integer");
    return v.get<std::int64_t>();
}

std::uint64_t time_of(const json& v, const char* what) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw DataError(std::string(what) + " must be a non-negative integer");
    return v.get<std::uint64_t>();
}

json camera_to_json(const PinholeCamera& c) {
    return {{"fx", c.fx},         {"fy", c.fy},
            {"cx", c.cx},         {"cy", c.cy},
            {"width", c.width},   {"height", c.height},
            {"world_to_camera", mat4_to_json(c.world_to_camera)}};
}

PinholeCamera camera_from_json(const json& j) {
    PinholeCamera c;
    c.fx = number_of(field(j, "fx"), "fx");
    c.fy = number_of(field(j, "fy"), "fy");
    c.cx = number_of(field(j, "cx"), "cx");
    c.cy = number_of(field(j, "cy"), "cy");
    const std::int64_t w = integer_of(field(j, "width"), "width"), h = integer_of(field(j, "height"), "height");
    if (w <= 0 || h <= 0 || w > 65535 || h > 65535) throw DataError("camera size out of range");
    c.width = static_cast<int>(w);
    c.height = static_cast<int>(h);
    c.world_to_camera = mat4_from_json(field(j, "world_to_camera"));
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
    return c;
}

json bones_to_json(const SkeletonPose& p) {
    json bones = json::array();
    for (const Mat4& b : p.bone_transforms) bones.push_back(mat4_to_json(b));
    return bones;
}

SkeletonPose pose_from_json(const json& bones_json, const json* code) {
    if (!bones_json.is_array() || bones_json.empty()) throw DataError("pose needs at least one bone");
    std::vector<Mat4> bones;
    for (const json& b : bones_json) bones.push_back(mat4_from_json(b));
    SkeletonPose pose;
    try {
        pose = SkeletonPose::from_bones(std::move(bones));
        pose.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
    if (code) {
        if (!code->is_array() || code->size() != static_cast<size_t>(pose.pose_vector.size()))
            throw DataError("pose_vector must hold 6 values per bone");
        for (size_t k = 0; k < code->size(); ++k)
            pose.pose_vector[static_cast<Eigen::Index>(k)] = number_of((*code)[k], "pose_vector entry");
    }
    return pose;
}

json parse_json(std::string_view text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string(what) + ": malformed JSON: " + e.what());
    }
}

std::string numbered(int k, const char* ext) {
    std::ostringstream s;
    s << std::setw(4) << std::setfill('0') << k << ext;
    return s.str();
}

}  // namespace

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

// ---------------------------------------------------------------- PLY

std::string encode_ply(const PointCloud& cloud) {
    if (cloud.labels.size() != cloud.positions.size())
        throw std::invalid_argument("encode_ply: one label per point is required");
    std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                      "\nproperty float x\nproperty float y\nproperty float z\nproperty uchar label\nend_header\n";
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.labels[i] > 1) throw std::invalid_argument("encode_ply: labels must be 0 or 1");
        const Eigen::Vector3f& p = cloud.positions[i];
        out += format_float(p.x()) + ' ' + format_float(p.y()) + ' ' + format_float(p.z()) + ' ' +
               std::to_string(cloud.labels[i]) + '\n';
    }
    return out;
}

PointCloud decode_ply(std::string_view text) {
    LineReader lines(text);
    std::string_view line;
    if (!lines.next(line) || line != "ply") throw DataError("ply: missing 'ply' magic");

    struct Element {
        std::string name;
        size_t count = 0;
        std::vector<std::pair<std::string, std::string>> props;  // type, name
    };
    std::vector<Element> elements;
    bool format_ok = false, header_done = false;
    while (lines.next(line)) {
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        if (tok[0] == "end_header") {
            header_done = true;
            break;
        }
        if (tok[0] == "comment" || tok[0] == "obj_info") continue;
        if (tok[0] == "format") {
            if (tok.size() != 3 || tok[1] != "ascii" || tok[2] != "1.0")
                throw DataError("ply: only 'format ascii 1.0' is supported");
            format_ok = true;
        } else if (tok[0] == "element") {
            unsigned long long count = 0;
            if (tok.size() != 3 || !parse_number(tok[2], count)) throw DataError("ply: malformed element line");
            elements.push_back({std::string(tok[1]), static_cast<size_t>(count), {}});
        } else if (tok[0] == "property") {
            if (elements.empty()) throw DataError("ply: property before any element");
            if (tok.size() != 3) throw DataError("ply: list properties are not supported");
            elements.back().props.emplace_back(std::string(tok[1]), std::string(tok[2]));
        } else {
            throw DataError("ply: unknown header line");
        }
    }
    if (!header_done) throw DataError("ply: missing end_header");
    if (!format_ok) throw DataError("ply: missing format line");
    if (elements.empty() || elements.front().name != "vertex") throw DataError("ply: vertex element must come first");

    const Element& v = elements.front();
    int ix = -1, iy = -1, iz = -1, il = -1;
    for (size_t k = 0; k < v.props.size(); ++k) {
        const auto& [type, name] = v.props[k];
        const bool is_float = type == "float" || type == "float32" || type == "double" || type == "float64";
        if (name == "x" || name == "y" || name == "z") {
            if (!is_float) throw DataError("ply: coordinates must be float");
            (name == "x" ? ix : name == "y" ? iy : iz) = static_cast<int>(k);
        } else if (name == "label") {
            if (type != "uchar" && type != "uint8") throw DataError("ply: label must be uchar");
            il = static_cast<int>(k);
        }
    }
    if (ix < 0 || iy < 0 || iz < 0) throw DataError("ply: x, y and z are required");
    if (il < 0) throw DataError("ply: label required");
    if (v.count > text.size()) throw DataError("ply: vertex count exceeds file size");

    PointCloud cloud;
    cloud.positions.reserve(v.count);
    cloud.labels.reserve(v.count);
    for (size_t i = 0; i < v.count; ++i) {
        if (!lines.next(line)) throw DataError("ply: truncated vertex data");
        const auto tok = split_ws(line);
        if (tok.size() != v.props.size()) throw DataError("ply: wrong number of values in vertex line");
        for (size_t k = 0; k < tok.size(); ++k) {
            double ignored = 0.0;
            if (!parse_number(tok[k], ignored)) throw DataError("ply: non-numeric vertex value");
        }
        float x = 0, y = 0, z = 0;
        if (!parse_number(tok[ix], x) || !parse_number(tok[iy], y) || !parse_number(tok[iz], z) ||
            !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
            throw DataError("ply: bad coordinate");
        unsigned label = 0;
        if (!parse_number(tok[il], label) || label > 1) throw DataError("ply: label must be 0 or 1");
        cloud.positions.emplace_back(x, y, z);
        cloud.labels.push_back(static_cast<std::uint8_t>(label));
    }
    for (size_t e = 1; e < elements.size(); ++e)
        for (size_t i = 0; i < elements[e].count; ++i)
            if (!lines.next(line)) throw DataError("ply: truncated element data");
    while (lines.next(line))
        if (!split_ws(line).empty()) throw DataError("ply: trailing data after the last element");
    return cloud;
}

// ---------------------------------------------------------------- events

std::string encode_events(const EventStream& s) {
    if (s.width <= 0 || s.height <= 0 || s.width > 65536 || s.height > 65536)
        throw std::invalid_argument("encode_events: sensor size out of range");
    std::string out;
    out.reserve(kEventHeaderBytes + kEventRecordBytes * s.events.size());
    out += "EVST";
    put<std::uint32_t>(out, kEventFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.width));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.height));
    std::uint64_t last = 0;
    for (const EventRecord& e : s.events) {
        if (e.t < last) throw std::invalid_argument("encode_events: timestamps must be non-decreasing");
        if (e.x >= s.width || e.y >= s.height) throw std::invalid_argument("encode_events: event outside the sensor");
        if (e.p != 1 && e.p != -1) throw std::invalid_argument("encode_events: polarity must be +1 or -1");
        last = e.t;
        put<std::uint64_t>(out, e.t);
        put<std::uint16_t>(out, e.x);
        put<std::uint16_t>(out, e.y);
        put<std::int8_t>(out, e.p);
    }
    return out;
}

EventStream decode_events(std::string_view bytes) {
    if (bytes.size() < kEventHeaderBytes) throw DataError("evst: truncated header");
    if (bytes.substr(0, 4) != "EVST") throw DataError("evst: bad magic");
    const auto version = get<std::uint32_t>(bytes, 4);
    if (version != kEventFormatVersion) throw DataError("evst: unsupported version " + std::to_string(version));
    const auto w = get<std::uint32_t>(bytes, 8), h = get<std::uint32_t>(bytes, 12);
    if (w == 0 || h == 0 || w > 65536 || h > 65536) throw DataError("evst: sensor size out of range");
    if ((bytes.size() - kEventHeaderBytes) % kEventRecordBytes != 0) throw DataError("evst: truncated record");
    EventStream s;
    s.width = static_cast<int>(w);
    s.height = static_cast<int>(h);
    const size_t count = (bytes.size() - kEventHeaderBytes) / kEventRecordBytes;
    s.events.resize(count);
    std::uint64_t last = 0;
    for (size_t i = 0; i < count; ++i) {
        const size_t o = kEventHeaderBytes + i * kEventRecordBytes;
        EventRecord& e = s.events[i];
        e.t = get<std::uint64_t>(bytes, o);
        e.x = get<std::uint16_t>(bytes, o + 8);
        e.y = get<std::uint16_t>(bytes, o + 10);
        e.p = get<std::int8_t>(bytes, o + 12);
        if (e.t < last) throw DataError("evst: timestamps are not monotone");
        if (e.x >= w || e.y >= h) throw DataError("evst: event outside the sensor");
        if (e.p != 1 && e.p != -1) throw DataError("evst: polarity must be +1 or -1");
        last = e.t;
    }
    return s;
}

// ---------------------------------------------------------------- images

Image quantize_8bit(const Image& srgb) {
    Image out = srgb;
    for (double& v : out.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return out;
}

Image quantize_float(const Image& img) {
    Image out = img;
    for (double& v : out.data) v = static_cast<double>(static_cast<float>(v));
    return out;
}

std::string encode_ppm(const Image& srgb) {
    if (srgb.channels != 3) throw std::invalid_argument("encode_ppm: RGB image required");
    if (srgb.width <= 0 || srgb.height <= 0) throw std::invalid_argument("encode_ppm: empty image");
    std::string out = "P6\n" + std::to_string(srgb.width) + " " + std::to_string(srgb.height) + "\n255\n";
    out.reserve(out.size() + srgb.data.size());
    for (double v : srgb.data) out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    return out;
}

Image decode_ppm(std::string_view bytes) {
    HeaderReader h(bytes);
    if (h.token() != "P6") throw DataError("ppm: only binary P6 is supported");
    const int w = parse_dimension(h.token(), "ppm");
    const int hgt = parse_dimension(h.token(), "ppm");
    long maxval = 0;
    if (!parse_number(h.token(), maxval) || maxval <= 0 || maxval > 255)
        throw DataError("ppm: maxval must lie in 1..255");
    const size_t start = h.end_of_header("ppm");
    const size_t expected = static_cast<size_t>(w) * hgt * 3;
    if (bytes.size() - std::min(start, bytes.size()) != expected || start > bytes.size())
        throw DataError("ppm: pixel data has the wrong size");
    Image img(w, hgt, 3);
    for (size_t i = 0; i < expected; ++i) {
        const auto b = static_cast<unsigned char>(bytes[start + i]);
        if (b > maxval) throw DataError("ppm: sample above maxval");
        img.data[i] = static_cast<double>(b) / static_cast<double>(maxval);
    }
    return img;
}

std::string encode_pfm(const Image& img) {
    if (img.channels != 3 && img.channels != 1) throw std::invalid_argument("encode_pfm: 1 or 3 channels required");
    if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("encode_pfm: empty image");
    std::string out = std::string(img.channels == 3 ? "PF" : "Pf") + "\n" + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n-1.0\n";
    out.reserve(out.size() + img.data.size() * 4);
    for (double v : img.data) {
        if (!std::isfinite(v)) throw std::invalid_argument("encode_pfm: non-finite value");
        put<float>(out, static_cast<float>(v));
    }
    return out;
}

Image decode_pfm(std::string_view bytes) {
    HeaderReader h(bytes);
    const std::string_view magic = h.token();
    int channels = 0;
    if (magic == "PF")
        channels = 3;
    else if (magic == "Pf")
        channels = 1;
    else
        throw DataError("pfm: bad magic");
    const int w = parse_dimension(h.token(), "pfm");
    const int hgt = parse_dimension(h.token(), "pfm");
    double scale = 0.0;
    if (!parse_number(h.token(), scale) || scale == 0.0 || !std::isfinite(scale))
        throw DataError("pfm: bad scale line");
    const size_t start = h.end_of_header("pfm");
    const size_t count = static_cast<size_t>(w) * hgt * channels;
    if (start > bytes.size() || bytes.size() - start != count * 4) throw DataError("pfm: pixel data has the wrong size");
    Image img(w, hgt, channels);
    for (size_t i = 0; i < count; ++i) {
        auto bits = get<std::uint32_t>(bytes, start + 4 * i);
        if (scale > 0.0) bits = __builtin_bswap32(bits);
        const float v = std::bit_cast<float>(bits);
        if (!std::isfinite(v)) throw DataError("pfm: non-finite sample");
        img.data[i] = static_cast<double>(v);
    }
    return img;
}

// ---------------------------------------------------------------- camera / pose

std::string encode_camera(const PinholeCamera& cam) { return camera_to_json(cam).dump(2); }

PinholeCamera decode_camera(std::string_view text) {
    try {
        return camera_from_json(parse_json(text, "camera"));
    } catch (const json::exception& e) {
        throw DataError(std::string("camera: ") + e.what());
    }
}

std::string encode_pose(const SkeletonPose& pose) {
    json j;
    j["bones"] = bones_to_json(pose);
    j["pose_vector"] = std::vector<double>(pose.pose_vector.data(), pose.pose_vector.data() + pose.pose_vector.size());
    return j.dump(2);
}

SkeletonPose decode_pose(std::string_view text) {
    try {
        const json j = parse_json(text, "pose");
        const auto it = j.is_object() ? j.find("pose_vector") : j.end();
        return pose_from_json(field(j, "bones"), it != j.end() ? &*it : nullptr);
    } catch (const json::exception& e) {
        throw DataError(std::string("pose: ") + e.what());
    }
}

// ---------------------------------------------------------------- frame sequences

void write_frame_sequence(const fs::path& dir, const FrameSequence& seq) {
    if (seq.times.size() != seq.frames.size())
        throw std::invalid_argument("write_frame_sequence: one timestamp per frame is required");
    fs::create_directories(dir);
    json index;
    index["frames"] = json::array();
    for (size_t k = 0; k < seq.frames.size(); ++k) {
        const std::string name = numbered(static_cast<int>(k), ".pfm");
        write_file(dir / name, encode_pfm(seq.frames[k]));
        index["frames"].push_back({{"file", name}, {"t_us", seq.times[k]}});
    }
    write_file(dir / "index.json", index.dump(2));
}

FrameSequence read_frame_sequence(const fs::path& dir) {
    FrameSequence seq;
    try {
        const json index = parse_json(read_file(dir / "index.json"), "index.json");
        const json& frames = field(index, "frames");
        if (!frames.is_array()) throw DataError("index.json: 'frames' must be an array");
        for (const json& f : frames) {
            const json& file = field(f, "file");
            if (!file.is_string()) throw DataError("index.json: 'file' must be a string");
            const fs::path rel = file.get<std::string>();
            if (rel.is_absolute() || rel.filename() != rel) throw DataError("index.json: frame files must be plain names");
            seq.times.push_back(time_of(field(f, "t_us"), "t_us"));
            seq.frames.push_back(decode_pfm(read_file(dir / rel)));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("index.json: ") + e.what());
    }
    return seq;
}

// ---------------------------------------------------------------- bundles

void write_bundle(const fs::path& dir, const SceneBundle& b) {
    if (b.blurry.size() != b.frames.size() || b.sharp_mid.size() != b.frames.size())
        throw std::invalid_argument("write_bundle: one blurry and one sharp image per frame are required");
    fs::create_directories(dir / "blurry");
    fs::create_directories(dir / "sharp");
    write_file(dir / "points.ply", encode_ply(b.points));
    write_file(dir / "events.evst", encode_events({b.width, b.height, b.events}));

    json scene;
    scene["format"] = "evsplat-bundle";
    scene["version"] = 1;
    scene["width"] = b.width;
    scene["height"] = b.height;
    scene["contrast"] = b.contrast;
    scene["rest_bones"] = json::array();
    for (const BoneSegment& s : b.rest_bones)
        scene["rest_bones"].push_back({{"head", vec3_to_json(s.head)}, {"tail", vec3_to_json(s.tail)}});
    scene["frames"] = json::array();
    for (size_t k = 0; k < b.frames.size(); ++k) {
        const BundleFrame& f = b.frames[k];
        json samples = json::array();
        for (size_t j = 0; j < f.sample_times.size(); ++j)
            samples.push_back({{"t_us", f.sample_times[j]},
                               {"camera", camera_to_json(f.cameras.at(j))},
                               {"bones", bones_to_json(f.poses.at(j))}});
        scene["frames"].push_back({{"t_start", f.t_start},
                                   {"t_end", f.t_end},
                                   {"is_test", f.is_test},
                                   {"human_box", f.human_box},
                                   {"samples", samples}});
        write_file(dir / "blurry" / numbered(static_cast<int>(k), ".ppm"), encode_ppm(b.blurry[k]));
        write_file(dir / "sharp" / numbered(static_cast<int>(k), ".pfm"), encode_pfm(b.sharp_mid[k]));
    }
    write_file(dir / "scene.json", scene.dump(1));
}

SceneBundle read_bundle(const fs::path& dir) {
    SceneBundle b;
    try {
        const json scene = parse_json(read_file(dir / "scene.json"), "scene.json");
        const json& fmt = field(scene, "format");
        if (!fmt.is_string() || fmt.get<std::string>() != "evsplat-bundle")
            throw DataError("scene.json: not a scene bundle");
        if (integer_of(field(scene, "version"), "version") != 1) throw DataError("scene.json: unsupported version");
        const std::int64_t w = integer_of(field(scene, "width"), "width");
        const std::int64_t h = integer_of(field(scene, "height"), "height");
        if (w <= 0 || h <= 0 || w > 65535 || h > 65535) throw DataError("scene.json: image size out of range");
        b.width = static_cast<int>(w);
        b.height = static_cast<int>(h);
        b.contrast = number_of(field(scene, "contrast"), "contrast");
        if (b.contrast <= 0.0) throw DataError("scene.json: contrast must be positive");
        const json& bones = field(scene, "rest_bones");
        if (!bones.is_array() || bones.empty()) throw DataError("scene.json: at least one rest bone is required");
        for (const json& s : bones) b.rest_bones.push_back({vec3_from_json(field(s, "head")), vec3_from_json(field(s, "tail"))});

        const json& frames = field(scene, "frames");
        if (!frames.is_array()) throw DataError("scene.json: 'frames' must be an array");
        for (const json& fj : frames) {
            BundleFrame f;
            f.t_start = time_of(field(fj, "t_start"), "t_start");
            f.t_end = time_of(field(fj, "t_end"), "t_end");
            if (f.t_end <= f.t_start) throw DataError("scene.json: frame interval is empty");
            const json& test = field(fj, "is_test");
            if (!test.is_boolean()) throw DataError("scene.json: 'is_test' must be a boolean");
            f.is_test = test.get<bool>();
            const json& box = field(fj, "human_box");
            if (!box.is_array() || box.size() != 4) throw DataError("scene.json: 'human_box' needs 4 integers");
            for (size_t k = 0; k < 4; ++k) f.human_box[k] = static_cast<int>(integer_of(box[k], "human_box"));
            const json& samples = field(fj, "samples");
            if (!samples.is_array() || samples.size() < 2) throw DataError("scene.json: a frame needs two samples");
            for (const json& sj : samples) {
                const std::uint64_t t = time_of(field(sj, "t_us"), "t_us");
                if (!f.sample_times.empty() && t <= f.sample_times.back())
                    throw DataError("scene.json: sample times must increase");
                f.sample_times.push_back(t);
                PinholeCamera cam = camera_from_json(field(sj, "camera"));
                if (cam.width != b.width || cam.height != b.height)
                    throw DataError("scene.json: camera size differs from the bundle");
                f.cameras.push_back(cam);
                f.poses.push_back(pose_from_json(field(sj, "bones"), nullptr));
                if (f.poses.back().bone_count() != static_cast<int>(b.rest_bones.size()))
                    throw DataError("scene.json: pose bone count differs from the rest skeleton");
            }
            if (f.sample_times.front() != f.t_start || f.sample_times.back() != f.t_end)
                throw DataError("scene.json: samples must start and end at the frame interval");
            b.frames.push_back(std::move(f));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("scene.json: ") + e.what());
    }

    b.points = decode_ply(read_file(dir / "points.ply"));
    const EventStream events = decode_events(read_file(dir / "events.evst"));
    if (events.width != b.width || events.height != b.height)
        throw DataError("events.evst: sensor size differs from the bundle");
    b.events = events.events;
    for (size_t k = 0; k < b.frames.size(); ++k) {
        b.blurry.push_back(decode_ppm(read_file(dir / "blurry" / numbered(static_cast<int>(k), ".ppm"))));
        b.sharp_mid.push_back(decode_pfm(read_file(dir / "sharp" / numbered(static_cast<int>(k), ".pfm"))));
        if (b.blurry.back().width != b.width || b.blurry.back().height != b.height ||
            b.sharp_mid.back().width != b.width || b.sharp_mid.back().height != b.height ||
            b.sharp_mid.back().channels != 3)
            throw DataError("bundle: image size differs from the bundle");
    }
    return b;
}

}  // namespace evsplat
