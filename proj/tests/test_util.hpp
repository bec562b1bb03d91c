#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "hazeclip/image.hpp"

namespace testutil {

template <typename T = float>
hazeclip::Image<T> random_image(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    hazeclip::Image<T> img(h, w);
    for (auto& v : img.values()) v = static_cast<T>(u(rng));
    return img;
}

inline hazeclip::RegionMask random_mask(int h, int w, std::mt19937_64& rng, double p = 0.5) {
    std::bernoulli_distribution b(p);
    hazeclip::RegionMask m(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m.set(r, c, b(rng));
    return m;
}

// Rows [0, rows) true.
inline hazeclip::RegionMask top_band(int h, int w, int rows) {
    hazeclip::RegionMask m(h, w);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < w; ++c) m.set(r, c, true);
    return m;
}

// Fresh empty directory under the system temp dir, unique per test.
inline std::filesystem::path temp_dir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    auto dir = std::filesystem::temp_directory_path() / "hazeclip_tests" /
               (std::string(info->test_suite_name()) + "." + info->name());
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
