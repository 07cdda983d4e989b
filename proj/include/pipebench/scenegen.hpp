#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pipebench/image.hpp"

namespace pipebench {

// Normalized map coordinates. Origin bottom-left, y grows upward; the raster
// row axis is flipped accordingly in rasterize().
struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double dist(const Point& a, const Point& b) {
    double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

struct Scene {
    std::vector<Point> squares;  // generator emits exactly 2, sorted by (x, y)
    Point triangle;
    int target_index = 0;
};

struct DatasetConfig {
    int64_t n_samples = 22000;
    int image_h = 64;
    int image_w = 64;
    int channels = 1;
    uint64_t seed = 42;
    double margin = 0.05;
    double min_separation = 0.05;
    int square_side_px = 0;    // 0 = scale the 224px default (11) to this resolution
    int triangle_side_px = 0;  // 0 = scale the 224px default (13)
    int64_t eval_count = 1000;
    int64_t test_count = 1000;
    bool write_images = true;

    int square_side() const;
    int triangle_side() const;
    int64_t train_count() const { return n_samples - eval_count - test_count; }
    void validate() const;  // throws ConfigError
};

struct SampleRecord {
    std::string image_path;  // relative to the manifest's directory
    Scene scene;
};

struct Manifest {
    std::string dir;  // directory the CSV lives in; image paths resolve against it
    std::vector<SampleRecord> rows;
};

inline constexpr int kRejectionLimit = 10000;
inline constexpr double kTieEpsilon = 1e-3;

// Lowest index wins ties.
std::pair<int, Point> nearest_square(const std::vector<Point>& squares, const Point& triangle);

// Deterministic in (cfg.seed, index); independent of generation order.
Scene sample_scene(const DatasetConfig& cfg, int64_t index);

Image rasterize(const Scene& scene, const DatasetConfig& cfg);

// Pixel mapping used by rasterize: col = round(x*(W-1)), row = round((1-y)*(H-1)).
inline std::pair<int, int> to_pixel(const Point& p, int h, int w) {
    int col = static_cast<int>(std::floor(p.x * (w - 1) + 0.5));
    int row = static_cast<int>(std::floor((1.0 - p.y) * (h - 1) + 0.5));
    return {row, col};
}

// Writes images/ plus train.csv, eval.csv, test.csv under out_dir and returns
// the combined manifest (rows ordered train, eval, test).
Manifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);

// Manifest CSV I/O. Header:
// image,sq0_x,sq0_y,sq1_x,sq1_y,tri_x,tri_y,tgt_x,tgt_y
void write_manifest(const std::vector<SampleRecord>& rows, const std::string& csv_path);
Manifest read_manifest(const std::string& csv_path);

// "0.ddd" fixed-point with 3 decimals, the manifest coordinate format.
std::string format_coord(double v);

}  // namespace pipebench
