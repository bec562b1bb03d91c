#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "hazeclip/errors.hpp"
#include "hazeclip/image.hpp"

namespace hazeclip {

namespace fs = std::filesystem;

enum class BitDepth { k8 = 8, k16 = 16 };

inline bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Decodes an 8- or 16-bit PNG/JPEG into RGB values scaled to [0,1].
inline ImageF load_image(const fs::path& path) {
    if (!fs::exists(path)) throw NotFoundError("image not found: " + path.string());
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
    if (raw.empty()) throw FormatError("cannot decode image: " + path.string());

    double scale = 0.0;
    switch (raw.depth()) {
        case CV_8U: scale = 1.0 / 255.0; break;
        case CV_16U: scale = 1.0 / 65535.0; break;
        default: throw FormatError("unsupported bit depth in " + path.string());
    }
    ImageF img(raw.rows, raw.cols);
    for (int r = 0; r < raw.rows; ++r)
        for (int c = 0; c < raw.cols; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                // OpenCV stores BGR.
                const double v = raw.depth() == CV_8U ? raw.at<cv::Vec3b>(r, c)[2 - ch]
                                                      : raw.at<cv::Vec3w>(r, c)[2 - ch];
                img(r, c, ch) = static_cast<float>(v * scale);
            }
    return img;
}

template <typename T>
void save_image(const Image<T>& img, const fs::path& path, BitDepth depth = BitDepth::k8) {
    if (img.empty()) throw DimensionError("save_image: empty image");
    const bool wide = depth == BitDepth::k16;
    const double maxv = wide ? 65535.0 : 255.0;
    cv::Mat out(img.height(), img.width(), wide ? CV_16UC3 : CV_8UC3);
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(static_cast<double>(img(r, c, ch)), 0.0, 1.0);
                const long q = std::lround(v * maxv);
                if (wide)
                    out.at<cv::Vec3w>(r, c)[2 - ch] = static_cast<std::uint16_t>(q);
                else
                    out.at<cv::Vec3b>(r, c)[2 - ch] = static_cast<std::uint8_t>(q);
            }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), out)) throw FormatError("cannot write image: " + path.string());
}

// Masks are single-channel PNGs: 255 = true, 0 = false.
inline void save_mask(const RegionMask& mask, const fs::path& path) {
    cv::Mat out(mask.height(), mask.width(), CV_8UC1);
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c) out.at<std::uint8_t>(r, c) = mask(r, c) ? 255 : 0;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), out)) throw FormatError("cannot write mask: " + path.string());
}

inline RegionMask load_mask(const fs::path& path) {
    if (!fs::exists(path)) throw NotFoundError("mask not found: " + path.string());
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (raw.empty()) throw FormatError("cannot decode mask: " + path.string());
    RegionMask mask(raw.rows, raw.cols);
    for (int r = 0; r < raw.rows; ++r)
        for (int c = 0; c < raw.cols; ++c) mask.set(r, c, raw.at<std::uint8_t>(r, c) >= 128);
    return mask;
}

// Writes a plane with values in [lo, hi] as an 8-bit grayscale PNG.
template <typename T>
void save_heatmap(const Plane<T>& plane, const fs::path& path, double lo, double hi) {
    cv::Mat out(plane.height(), plane.width(), CV_8UC1);
    const double span = hi > lo ? hi - lo : 1.0;
    for (int r = 0; r < plane.height(); ++r)
        for (int c = 0; c < plane.width(); ++c) {
            const double v = std::clamp((static_cast<double>(plane(r, c)) - lo) / span, 0.0, 1.0);
            out.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), out)) throw FormatError("cannot write heatmap: " + path.string());
}

// Image files of a directory, sorted by filename.
inline std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw NotFoundError("directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    return files;
}

}  // namespace hazeclip
