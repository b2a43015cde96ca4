#include "vitclick/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace vitclick {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kImageExtensions = {".png", ".jpg", ".jpeg", ".bmp"};

bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return std::find(kImageExtensions.begin(), kImageExtensions.end(), ext) != kImageExtensions.end();
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<fs::path> find_with_stem(const fs::path& dir, const std::string& stem,
                                       const std::vector<std::string>& exts) {
    for (const auto& ext : exts) {
        auto p = dir / (stem + ext);
        if (fs::exists(p)) return p;
    }
    return std::nullopt;
}

RgbImage from_mat_bgr(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    RgbImage out(rgb.rows, rgb.cols);
    for (int r = 0; r < rgb.rows; ++r) {
        std::copy_n(rgb.ptr<std::uint8_t>(r), static_cast<std::size_t>(rgb.cols) * 3,
                    out.data().data() + static_cast<std::size_t>(r) * rgb.cols * 3);
    }
    return out;
}

cv::Mat to_mat_bgr(const RgbImage& image) {
    cv::Mat rgb(image.height(), image.width(), CV_8UC3, const_cast<std::uint8_t*>(image.data().data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

cv::Mat mask_to_mat(const BinaryMask& mask, std::uint8_t on = 255) {
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    for (std::size_t i = 0; i < mask.data().size(); ++i) m.data[i] = mask.data()[i] ? on : 0;
    return m;
}

BinaryMask mat_to_mask(const cv::Mat& m, int foreground_value) {
    cv::Mat gray = m;
    if (m.channels() > 1) cv::extractChannel(m, gray, 0);
    BinaryMask out(gray.rows, gray.cols);
    for (int r = 0; r < gray.rows; ++r) {
        for (int c = 0; c < gray.cols; ++c) {
            const int v = gray.depth() == CV_16U ? gray.at<std::uint16_t>(r, c) : gray.at<std::uint8_t>(r, c);
            out.set(r, c, foreground_value < 0 ? v != 0 : v == foreground_value);
        }
    }
    return out;
}

cv::Mat read_any(const fs::path& path, int flags) {
    auto m = cv::imread(path.string(), flags);
    if (m.empty()) throw std::runtime_error("cannot decode image: " + path.string());
    return m;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fills `other_objects` of each record from the union of its siblings.
void attach_siblings(std::vector<InstanceRecord>& group) {
    if (group.size() < 2) return;
    for (std::size_t i = 0; i < group.size(); ++i) {
        BinaryMask others(group[i].gt_mask.size());
        for (std::size_t j = 0; j < group.size(); ++j) {
            if (j != i) others = mask_or(others, group[j].gt_mask);
        }
        group[i].other_objects = mask_and_not(others, group[i].gt_mask);
    }
}

void load_grabcut(const fs::path& root, LoadedDataset& out) {
    for (const auto& img_path : sorted_images(root / "data_GT")) {
        const auto stem = img_path.stem().string();
        const auto mask_path = find_with_stem(root / "boundary_GT", stem, {".png", ".bmp"});
        if (!mask_path) {
            out.warnings.push_back("grabcut: no mask for " + img_path.filename().string());
            continue;
        }
        InstanceRecord rec{stem, "grabcut", read_rgb(img_path), read_mask(*mask_path, 255), {}};
        if (rec.gt_mask.size() != rec.image.size()) {
            out.warnings.push_back("grabcut: size mismatch for " + stem);
            continue;
        }
        if (!rec.gt_mask.any()) {
            out.warnings.push_back("grabcut: empty mask for " + stem);
            continue;
        }
        out.records.push_back(std::move(rec));
    }
}

void load_sbd_like(const fs::path& root, LoadedDataset& out) {
    for (const auto& img_path : sorted_images(root / "img")) {
        const auto stem = img_path.stem().string();
        const auto label_path = root / "inst" / (stem + ".png");
        if (!fs::exists(label_path)) {
            out.warnings.push_back("sbd_like: no instance map for " + img_path.filename().string());
            continue;
        }
        auto image = read_rgb(img_path);
        auto labels = read_any(label_path, cv::IMREAD_UNCHANGED);
        if (labels.channels() > 1) cv::extractChannel(labels, labels, 0);
        if (labels.rows != image.height() || labels.cols != image.width()) {
            out.warnings.push_back("sbd_like: size mismatch for " + stem);
            continue;
        }
        std::map<int, BinaryMask> instances;
        for (int r = 0; r < labels.rows; ++r) {
            for (int c = 0; c < labels.cols; ++c) {
                const int v = labels.depth() == CV_16U ? labels.at<std::uint16_t>(r, c) : labels.at<std::uint8_t>(r, c);
                if (v == 0 || (labels.depth() == CV_8U && v == 255)) continue;
                auto it = instances.try_emplace(v, image.size()).first;
                it->second.set(r, c, true);
            }
        }
        if (instances.empty()) {
            out.warnings.push_back("sbd_like: no instances in " + stem);
            continue;
        }
        std::vector<InstanceRecord> group;
        for (auto& [k, mask] : instances) {
            group.push_back({stem + "_" + std::to_string(k), "sbd_like", image, std::move(mask), {}});
        }
        attach_siblings(group);
        for (auto& rec : group) out.records.push_back(std::move(rec));
    }
}

BinaryMask decode_coco_rle(const nlohmann::json& seg, ImageSize size) {
    const auto h = seg.at("size").at(0).get<int>();
    const auto w = seg.at("size").at(1).get<int>();
    if (h != size.height || w != size.width) throw std::runtime_error("RLE size differs from image");
    BinaryMask mask(size);
    std::int64_t pos = 0;
    bool value = false;
    const auto total = size.area();
    for (const auto& run : seg.at("counts")) {
        const auto n = run.get<std::int64_t>();
        if (n < 0 || pos + n > total) throw std::runtime_error("RLE runs exceed image area");
        if (value) {
            for (std::int64_t k = pos; k < pos + n; ++k) mask.set(static_cast<int>(k % h), static_cast<int>(k / h), true);
        }
        pos += n;
        value = !value;
    }
    return mask;
}

BinaryMask rasterize_polygons(const nlohmann::json& polys, ImageSize size) {
    constexpr int kShift = 3;
    cv::Mat canvas = cv::Mat::zeros(size.height, size.width, CV_8UC1);
    std::vector<std::vector<cv::Point>> contours;
    for (const auto& poly : polys) {
        std::vector<cv::Point> pts;
        for (std::size_t i = 0; i + 1 < poly.size(); i += 2) {
            pts.emplace_back(static_cast<int>(std::lround(poly[i].get<double>() * (1 << kShift))),
                             static_cast<int>(std::lround(poly[i + 1].get<double>() * (1 << kShift))));
        }
        if (pts.size() >= 3) contours.push_back(std::move(pts));
    }
    cv::fillPoly(canvas, contours, cv::Scalar(255), cv::LINE_8, kShift);
    return mat_to_mask(canvas, -1);
}

void load_coco_like(const fs::path& root, LoadedDataset& out) {
    const auto doc = nlohmann::json::parse(read_text(root / "annotations.json"));
    std::map<std::int64_t, std::vector<const nlohmann::json*>> by_image;
    for (const auto& ann : doc.at("annotations")) by_image[ann.at("image_id").get<std::int64_t>()].push_back(&ann);

    std::vector<const nlohmann::json*> images;
    for (const auto& im : doc.at("images")) images.push_back(&im);
    std::sort(images.begin(), images.end(),
              [](auto* a, auto* b) { return a->at("id").template get<std::int64_t>() < b->at("id").template get<std::int64_t>(); });

    for (const auto* im : images) {
        const auto image_id = im->at("id").get<std::int64_t>();
        const auto file = im->at("file_name").get<std::string>();
        auto path = root / "images" / file;
        if (!fs::exists(path)) path = root / file;
        if (!fs::exists(path)) {
            out.warnings.push_back("coco_like: missing image file " + file);
            continue;
        }
        const auto image = read_rgb(path);
        auto anns = by_image[image_id];
        std::sort(anns.begin(), anns.end(),
                  [](auto* a, auto* b) { return a->at("id").template get<std::int64_t>() < b->at("id").template get<std::int64_t>(); });
        std::vector<InstanceRecord> group;
        for (const auto* ann : anns) {
            const auto id = std::to_string(image_id) + "_" + std::to_string(ann->at("id").get<std::int64_t>());
            if (ann->value("iscrowd", 0) != 0) continue;
            const auto& seg = ann->at("segmentation");
            BinaryMask mask;
            try {
                if (seg.is_array()) {
                    mask = rasterize_polygons(seg, image.size());
                } else if (seg.is_object() && seg.at("counts").is_array()) {
                    mask = decode_coco_rle(seg, image.size());
                } else {
                    out.warnings.push_back("coco_like: unsupported segmentation encoding for " + id);
                    continue;
                }
            } catch (const std::exception& e) {
                out.warnings.push_back("coco_like: " + id + ": " + e.what());
                continue;
            }
            if (!mask.any()) {
                out.warnings.push_back("coco_like: empty mask for " + id);
                continue;
            }
            group.push_back({id, "coco_like", image, std::move(mask), {}});
        }
        attach_siblings(group);
        for (auto& rec : group) out.records.push_back(std::move(rec));
    }
}

void load_generic_pairs(const fs::path& root, LoadedDataset& out) {
    std::map<std::string, std::pair<std::string, std::string>> manifest;  // mask stem -> (id, source)
    if (fs::exists(root / "manifest.json")) {
        const auto doc = nlohmann::json::parse(read_text(root / "manifest.json"));
        const auto entries = doc.value("instances", nlohmann::json::object());
        for (const auto& [stem, entry] : entries.items()) {
            manifest[stem] = {entry.value("instance_id", stem), entry.value("source", "generic_pairs")};
        }
    }
    std::map<std::string, std::vector<std::pair<int, fs::path>>> masks_by_image;
    for (const auto& p : sorted_images(root / "masks")) {
        const auto stem = p.stem().string();
        const auto cut = stem.rfind('_');
        if (cut == std::string::npos) {
            out.warnings.push_back("generic_pairs: mask name without instance index: " + p.filename().string());
            continue;
        }
        try {
            masks_by_image[stem.substr(0, cut)].emplace_back(std::stoi(stem.substr(cut + 1)), p);
        } catch (const std::exception&) {
            out.warnings.push_back("generic_pairs: bad instance index in " + p.filename().string());
        }
    }
    for (const auto& img_path : sorted_images(root / "images")) {
        const auto stem = img_path.stem().string();
        auto it = masks_by_image.find(stem);
        if (it == masks_by_image.end()) {
            out.warnings.push_back("generic_pairs: no mask for " + img_path.filename().string());
            continue;
        }
        auto entries = it->second;
        std::sort(entries.begin(), entries.end());
        const auto image = read_rgb(img_path);
        std::vector<InstanceRecord> group;
        for (const auto& [k, mask_path] : entries) {
            const auto key = stem + "_" + std::to_string(k);
            auto mask = read_mask(mask_path);
            if (mask.size() != image.size()) {
                out.warnings.push_back("generic_pairs: size mismatch for " + key);
                continue;
            }
            if (!mask.any()) {
                out.warnings.push_back("generic_pairs: empty mask for " + key);
                continue;
            }
            auto m = manifest.find(key);
            group.push_back({m != manifest.end() ? m->second.first : key,
                             m != manifest.end() ? m->second.second : "generic_pairs", image, std::move(mask), {}});
        }
        attach_siblings(group);
        for (auto& rec : group) out.records.push_back(std::move(rec));
    }
    for (const auto& [stem, entries] : masks_by_image) {
        if (!find_with_stem(root / "images", stem, kImageExtensions)) {
            out.warnings.push_back("generic_pairs: masks without image: " + stem);
        }
    }
}

}  // namespace

std::string to_string(DatasetFormat f) {
    switch (f) {
        case DatasetFormat::grabcut: return "grabcut";
        case DatasetFormat::sbd_like: return "sbd_like";
        case DatasetFormat::coco_like: return "coco_like";
        case DatasetFormat::generic_pairs: return "generic_pairs";
    }
    return "unknown";
}

DatasetFormat dataset_format_from_string(const std::string& s) {
    for (auto f : {DatasetFormat::grabcut, DatasetFormat::sbd_like, DatasetFormat::coco_like,
                   DatasetFormat::generic_pairs}) {
        if (to_string(f) == s) return f;
    }
    throw ConfigError("unknown dataset format: " + s);
}

DatasetFormat detect_format(const fs::path& root) {
    if (fs::is_directory(root / "data_GT") && fs::is_directory(root / "boundary_GT")) return DatasetFormat::grabcut;
    if (fs::is_directory(root / "img") && fs::is_directory(root / "inst")) return DatasetFormat::sbd_like;
    if (fs::exists(root / "annotations.json")) return DatasetFormat::coco_like;
    if (fs::is_directory(root / "images") && fs::is_directory(root / "masks")) return DatasetFormat::generic_pairs;
    throw ConfigError("cannot detect dataset layout under " + root.string());
}

LoadedDataset load_dataset(const fs::path& root, DatasetFormat format) {
    if (!fs::is_directory(root)) throw std::runtime_error("dataset root does not exist: " + root.string());
    LoadedDataset out;
    switch (format) {
        case DatasetFormat::grabcut: load_grabcut(root, out); break;
        case DatasetFormat::sbd_like: load_sbd_like(root, out); break;
        case DatasetFormat::coco_like: load_coco_like(root, out); break;
        case DatasetFormat::generic_pairs: load_generic_pairs(root, out); break;
    }
    std::stable_sort(out.records.begin(), out.records.end(),
                     [](const InstanceRecord& a, const InstanceRecord& b) { return a.instance_id < b.instance_id; });
    return out;
}

void export_generic_pairs(const std::vector<InstanceRecord>& records, const fs::path& root) {
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    nlohmann::json instances = nlohmann::json::object();
    for (std::size_t i = 0; i < records.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "%06zu", i);
        write_rgb(root / "images" / (std::string(stem) + ".png"), records[i].image);
        write_mask(root / "masks" / (std::string(stem) + "_0.png"), records[i].gt_mask);
        instances[std::string(stem) + "_0"] = {{"instance_id", records[i].instance_id},
                                               {"source", records[i].source}};
    }
    std::ofstream(root / "manifest.json") << nlohmann::json{{"instances", instances}}.dump(2) << "\n";
}

RgbImage read_rgb(const fs::path& path) { return from_mat_bgr(read_any(path, cv::IMREAD_COLOR)); }

RgbImage decode_rgb(const std::vector<std::uint8_t>& bytes) {
    if (bytes.empty()) throw std::runtime_error("cannot decode image: empty payload");
    auto m = cv::imdecode(bytes, cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("cannot decode image payload");
    return from_mat_bgr(m);
}

void write_rgb(const fs::path& path, const RgbImage& image) {
    if (!cv::imwrite(path.string(), to_mat_bgr(image))) throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
    std::vector<std::uint8_t> buf;
    cv::imencode(".png", to_mat_bgr(image), buf);
    return buf;
}

BinaryMask read_mask(const fs::path& path, int foreground_value) {
    return mat_to_mask(read_any(path, cv::IMREAD_UNCHANGED), foreground_value);
}

void write_mask(const fs::path& path, const BinaryMask& mask) {
    if (!cv::imwrite(path.string(), mask_to_mat(mask), {cv::IMWRITE_PNG_BILEVEL, 1})) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask) {
    std::vector<std::uint8_t> buf;
    cv::imencode(".png", mask_to_mat(mask), buf, {cv::IMWRITE_PNG_BILEVEL, 1});
    return buf;
}

BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes) {
    auto m = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("cannot decode mask payload");
    return mat_to_mask(m, -1);
}

void write_probability(const fs::path& path, const ProbabilityMap& map) {
    cv::Mat m(map.height(), map.width(), CV_16UC1);
    for (int r = 0; r < map.height(); ++r) {
        for (int c = 0; c < map.width(); ++c) {
            m.at<std::uint16_t>(r, c) =
                static_cast<std::uint16_t>(std::lround(std::clamp(map(r, c), 0.0F, 1.0F) * 65535.0F));
        }
    }
    if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

ProbabilityMap read_probability(const fs::path& path) {
    auto m = read_any(path, cv::IMREAD_UNCHANGED);
    if (m.depth() != CV_16U || m.channels() != 1) throw std::runtime_error("not a 16-bit probability map: " + path.string());
    ProbabilityMap out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            out.data()[static_cast<std::size_t>(r) * m.cols + c] = m.at<std::uint16_t>(r, c) / 65535.0F;
        }
    }
    return out;
}

void write_guidance(const fs::path& path, const GuidanceMap& guidance) {
    RgbImage vis(guidance.size.height, guidance.size.width);
    for (int r = 0; r < vis.height(); ++r) {
        for (int c = 0; c < vis.width(); ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                vis.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(guidance.at(ch, r, c), 0.0F, 1.0F) * 255));
            }
        }
    }
    write_rgb(path, vis);
}

RgbImage resize_rgb(const RgbImage& image, ImageSize size) {
    if (image.size() == size) return image;
    cv::Mat src(image.height(), image.width(), CV_8UC3, const_cast<std::uint8_t*>(image.data().data()));
    cv::Mat dst;
    const bool shrink = size.area() < image.size().area();
    cv::resize(src, dst, cv::Size(size.width, size.height), 0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
    RgbImage out(size.height, size.width);
    std::copy_n(dst.data, out.data().size(), out.data().data());
    return out;
}

BinaryMask resize_mask(const BinaryMask& mask, ImageSize size) {
    if (mask.size() == size) return mask;
    cv::Mat dst;
    cv::resize(mask_to_mat(mask), dst, cv::Size(size.width, size.height), 0, 0, cv::INTER_NEAREST);
    return mat_to_mask(dst, -1);
}

std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::square: return "square";
        case ShapeKind::ellipse: return "ellipse";
        case ShapeKind::ring: return "ring";
        case ShapeKind::bar: return "bar";
        case ShapeKind::occluded: return "occluded";
    }
    return "unknown";
}

namespace {

struct Shape {
    ShapeKind kind = ShapeKind::square;
    double cy = 0, cx = 0;
    double a = 0, b = 0;  // half extents (square/bar/ellipse), outer/inner radius (ring)
    double angle = 0;

    [[nodiscard]] bool contains(int r, int c) const {
        const double dy = r - cy;
        const double dx = c - cx;
        const double u = dx * std::cos(angle) + dy * std::sin(angle);
        const double v = -dx * std::sin(angle) + dy * std::cos(angle);
        switch (kind) {
            case ShapeKind::ring: {
                const double d2 = dx * dx + dy * dy;
                return d2 <= a * a && d2 >= b * b;
            }
            case ShapeKind::ellipse: return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
            default: return std::abs(u) <= a && std::abs(v) <= b;
        }
    }
    [[nodiscard]] double extent() const {
        return kind == ShapeKind::ring ? a : std::max(a, b);
    }
};

struct Rgb {
    double r, g, b;
};

class SynthRng {
public:
    explicit SynthRng(std::uint64_t seed) : rng_(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    Rgb color() { return {uniform(0, 255), uniform(0, 255), uniform(0, 255)}; }
    Rgb color_away_from(const std::vector<Rgb>& others, double min_dist) {
        Rgb c = color();
        for (int tries = 0; tries < 100; ++tries) {
            bool ok = true;
            for (const auto& o : others) {
                if (std::abs(c.r - o.r) + std::abs(c.g - o.g) + std::abs(c.b - o.b) < min_dist) ok = false;
            }
            if (ok) break;
            c = color();
        }
        return c;
    }

private:
    std::mt19937_64 rng_;
};

Shape random_shape(SynthRng& rng, ShapeKind kind, int size) {
    Shape s;
    s.kind = kind;
    const double scale = size / 128.0;
    switch (kind) {
        case ShapeKind::square:
            s.a = s.b = rng.uniform(11, 26) * scale;
            s.angle = rng.uniform(0, std::numbers::pi / 2);
            break;
        case ShapeKind::ellipse:
        case ShapeKind::occluded:
            s.kind = ShapeKind::ellipse;
            s.a = rng.uniform(12, 30) * scale;
            s.b = rng.uniform(0.5, 1.0) * s.a;
            s.angle = rng.uniform(0, std::numbers::pi);
            break;
        case ShapeKind::ring:
            s.a = rng.uniform(18, 32) * scale;
            s.b = s.a * rng.uniform(0.45, 0.7);
            break;
        case ShapeKind::bar:
            s.a = rng.uniform(25, 50) * scale;
            s.b = rng.uniform(1.5, 3.0) * scale;
            s.angle = rng.uniform(0, std::numbers::pi);
            break;
    }
    const double m = s.extent() * (kind == ShapeKind::square ? std::numbers::sqrt2 : 1.0) + 2;
    s.cy = rng.uniform(m, size - 1 - m);
    s.cx = rng.uniform(m, size - 1 - m);
    return s;
}

BinaryMask raster(const Shape& s, int size) {
    BinaryMask m(size, size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) m.set(r, c, s.contains(r, c));
    }
    return m;
}

void paint(std::vector<double>& canvas, const BinaryMask& mask, const Rgb& color) {
    for (std::size_t i = 0; i < mask.data().size(); ++i) {
        if (!mask.data()[i]) continue;
        canvas[i * 3] = color.r;
        canvas[i * 3 + 1] = color.g;
        canvas[i * 3 + 2] = color.b;
    }
}

bool overlaps(const BinaryMask& a, const BinaryMask& b) {
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        if (a.data()[i] && b.data()[i]) return true;
    }
    return false;
}

}  // namespace

std::vector<InstanceRecord> synth_benchmark(std::uint64_t seed, int n, const SynthConfig& cfg) {
    if (n < 1) throw std::invalid_argument("synth_benchmark: n must be >= 1");
    if (cfg.image_size < 48) throw std::invalid_argument("synth_benchmark: image_size must be >= 48");
    const int size = cfg.image_size;
    const std::vector<ShapeKind> cycle =
        cfg.convex_only ? std::vector<ShapeKind>{ShapeKind::square, ShapeKind::ellipse}
                        : std::vector<ShapeKind>{ShapeKind::square, ShapeKind::ellipse, ShapeKind::ring, ShapeKind::bar,
                                                 ShapeKind::occluded};
    std::vector<InstanceRecord> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SynthRng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i));
        const auto kind = cycle[static_cast<std::size_t>(i) % cycle.size()];

        const Rgb bg = rng.color();
        const double gy = rng.uniform(-30, 30);
        const double gx = rng.uniform(-30, 30);
        std::vector<double> canvas(static_cast<std::size_t>(size) * size * 3);
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                const double t = (gy * (r - size / 2.0) + gx * (c - size / 2.0)) / size;
                const auto idx = (static_cast<std::size_t>(r) * size + c) * 3;
                canvas[idx] = bg.r + t;
                canvas[idx + 1] = bg.g + t;
                canvas[idx + 2] = bg.b + t;
            }
        }

        const Shape target = random_shape(rng, kind, size);
        BinaryMask gt = raster(target, size);
        const Rgb fg = rng.color_away_from({bg}, 150);
        std::vector<Rgb> used{bg, fg};

        // Distractors never touch the target (two-pixel clearance).
        BinaryMask clearance(size, size);
        {
            Shape grown = target;
            grown.a += 2;
            grown.b = target.kind == ShapeKind::ring ? std::max(0.0, target.b - 2) : target.b + 2;
            clearance = raster(grown, size);
        }
        BinaryMask others(size, size);
        const int n_distractors = rng.integer(0, cfg.max_distractors);
        for (int d = 0; d < n_distractors; ++d) {
            const auto dk = rng.integer(0, 1) == 0 ? ShapeKind::square : ShapeKind::ellipse;
            Shape s = random_shape(rng, dk, size);
            s.a *= 0.6;
            s.b *= 0.6;
            auto m = raster(s, size);
            if (!m.any() || overlaps(m, clearance) || overlaps(m, others)) continue;
            const Rgb col = rng.color_away_from(used, 90);
            used.push_back(col);
            paint(canvas, m, col);
            others = mask_or(others, m);
        }

        paint(canvas, gt, fg);
        if (kind == ShapeKind::occluded) {
            // A front object covers part of the target; the target keeps its visible part.
            for (int tries = 0; tries < 50; ++tries) {
                Shape front = random_shape(rng, ShapeKind::square, size);
                front.a = front.b = target.a * rng.uniform(0.5, 0.8);
                const double ang = rng.uniform(0, 2 * std::numbers::pi);
                front.cy = target.cy + std::sin(ang) * target.a * 0.8;
                front.cx = target.cx + std::cos(ang) * target.a * 0.8;
                const auto fm = raster(front, size);
                const auto visible = mask_and_not(gt, fm);
                if (visible.count() * 10 < gt.count() * 4 || visible.count() == gt.count()) continue;
                const Rgb col = rng.color_away_from(used, 120);
                paint(canvas, fm, col);
                gt = visible;
                others = mask_and_not(mask_or(others, fm), gt);
                break;
            }
        }

        RgbImage image(size, size);
        const double noise = rng.uniform(4, 14);
        for (std::size_t k = 0; k < canvas.size(); ++k) {
            image.data()[k] = static_cast<std::uint8_t>(std::clamp(std::lround(canvas[k] + rng.uniform(-noise, noise)), 0L, 255L));
        }

        char id[64];
        std::snprintf(id, sizeof id, "synth_%05d_%s", i, to_string(kind).c_str());
        out.push_back({id, "synthetic", std::move(image), std::move(gt), std::move(others)});
    }
    return out;
}

}  // namespace vitclick
