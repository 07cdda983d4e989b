#include "pipebench/scenegen.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pipebench/common.hpp"
#include "pipebench/rng.hpp"

namespace fs = std::filesystem;

namespace pipebench {

int DatasetConfig::square_side() const {
    if (square_side_px > 0) return square_side_px;
    int s = static_cast<int>(std::lround(11.0 * std::min(image_h, image_w) / 224.0));
    return std::max(3, s);
}

int DatasetConfig::triangle_side() const {
    if (triangle_side_px > 0) return triangle_side_px;
    int s = static_cast<int>(std::lround(13.0 * std::min(image_h, image_w) / 224.0));
    return std::max(3, s);
}

void DatasetConfig::validate() const {
    if (channels != 1) throw ConfigError("channels must be 1");
    if (image_h < 16 || image_w < 16) throw ConfigError("image size must be at least 16x16");
    if (n_samples <= 0) throw ConfigError("n_samples must be positive");
    if (eval_count < 0 || test_count < 0 || train_count() <= 0)
        throw ConfigError("eval_count + test_count must leave a nonempty train split");
    int m = std::min(image_h, image_w);
    // Shapes must fit inside the margin band. The triangle hangs 2h/3 above
    // its centroid (apex up), which dominates its half-base.
    double need = std::max(square_side() / 2.0, 2.0 * triangle_side() / 3.0) / m;
    if (margin < need) {
        std::ostringstream os;
        os << "margin " << margin << " too small for shape sizes (need >= " << need << ")";
        throw ConfigError(os.str());
    }
    if (margin >= 0.5) throw ConfigError("margin must be < 0.5");
}

std::pair<int, Point> nearest_square(const std::vector<Point>& squares, const Point& triangle) {
    if (squares.empty()) throw std::invalid_argument("nearest_square: empty square list");
    int best = 0;
    double best_d = dist(squares[0], triangle);
    for (size_t i = 1; i < squares.size(); ++i) {
        double d = dist(squares[i], triangle);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return {best, squares[best]};
}

namespace {

// Coordinates are drawn directly on the manifest's 3-decimal grid so that the
// stored row, the scene and the rasterization all see identical values.
Point draw_point(Rng& rng, const DatasetConfig& cfg) {
    int lo = static_cast<int>(std::ceil(cfg.margin * 1000.0));
    int hi = static_cast<int>(std::floor((1.0 - cfg.margin) * 1000.0));
    Point p;
    p.x = static_cast<double>(lo + rng.below(static_cast<uint64_t>(hi - lo + 1))) / 1000.0;
    p.y = static_cast<double>(lo + rng.below(static_cast<uint64_t>(hi - lo + 1))) / 1000.0;
    return p;
}

struct PixelBox {
    int r0, r1, c0, c1;
};

PixelBox square_box(const Point& p, const DatasetConfig& cfg) {
    auto [r, c] = to_pixel(p, cfg.image_h, cfg.image_w);
    int s = cfg.square_side();
    int lo = s / 2, hi = s - 1 - s / 2;
    return {r - lo, r + hi, c - lo, c + hi};
}

PixelBox triangle_box(const Point& p, const DatasetConfig& cfg) {
    auto [r, c] = to_pixel(p, cfg.image_h, cfg.image_w);
    int base = cfg.triangle_side();
    int h = base;
    int apex = r - (2 * h) / 3;
    int lo = base / 2, hi = base - 1 - base / 2;
    return {apex, apex + h - 1, c - lo, c + hi};
}

bool boxes_touch(const PixelBox& a, const PixelBox& b) {
    // require at least one blank pixel between shapes
    return !(a.r1 + 1 < b.r0 || b.r1 + 1 < a.r0 || a.c1 + 1 < b.c0 || b.c1 + 1 < a.c0);
}

bool box_inside(const PixelBox& b, const DatasetConfig& cfg) {
    return b.r0 >= 0 && b.c0 >= 0 && b.r1 < cfg.image_h && b.c1 < cfg.image_w;
}

}  // namespace

Scene sample_scene(const DatasetConfig& cfg, int64_t index) {
    if (index < 0 || index >= cfg.n_samples) throw std::invalid_argument("sample index out of range");
    Rng rng = derive_stream(cfg.seed, static_cast<uint64_t>(index));

    for (int attempt = 0; attempt < kRejectionLimit; ++attempt) {
        Point a = draw_point(rng, cfg);
        Point b = draw_point(rng, cfg);
        Point t = draw_point(rng, cfg);
        if (dist(a, b) < cfg.min_separation || dist(a, t) < cfg.min_separation ||
            dist(b, t) < cfg.min_separation)
            continue;
        double da = dist(a, t), db = dist(b, t);
        if (std::abs(da - db) < kTieEpsilon) continue;

        Scene s;
        s.squares = {a, b};
        // canonical order: ascending (x, y); gives the regression stage a
        // well-defined label for each output slot
        if (b.x < a.x || (b.x == a.x && b.y < a.y)) std::swap(s.squares[0], s.squares[1]);
        s.triangle = t;
        s.target_index = nearest_square(s.squares, s.triangle).first;

        PixelBox sq0 = square_box(s.squares[0], cfg);
        PixelBox sq1 = square_box(s.squares[1], cfg);
        PixelBox tri = triangle_box(s.triangle, cfg);
        if (!box_inside(sq0, cfg) || !box_inside(sq1, cfg) || !box_inside(tri, cfg)) continue;
        if (boxes_touch(sq0, sq1) || boxes_touch(sq0, tri) || boxes_touch(sq1, tri)) continue;
        return s;
    }
    std::ostringstream os;
    os << "scene sampling failed after " << kRejectionLimit << " attempts at index " << index
       << " (margin/min_separation too restrictive for " << cfg.image_h << "x" << cfg.image_w << ")";
    throw DataError(os.str());
}

Image rasterize(const Scene& scene, const DatasetConfig& cfg) {
    Image img(cfg.image_h, cfg.image_w, 255);

    auto fill_box = [&](const PixelBox& b) {
        for (int r = std::max(0, b.r0); r <= std::min(cfg.image_h - 1, b.r1); ++r)
            for (int c = std::max(0, b.c0); c <= std::min(cfg.image_w - 1, b.c1); ++c)
                img.at(r, c) = 0;
    };

    for (const Point& sq : scene.squares) fill_box(square_box(sq, cfg));

    // Upward-pointing filled triangle; rows widen linearly from apex to base.
    PixelBox tb = triangle_box(scene.triangle, cfg);
    int h = tb.r1 - tb.r0 + 1;
    int base = cfg.triangle_side();
    int cc = to_pixel(scene.triangle, cfg.image_h, cfg.image_w).second;
    for (int k = 0; k < h; ++k) {
        double half = (h == 1) ? base / 2.0 : 0.5 + (base / 2.0 - 0.5) * (static_cast<double>(k) / (h - 1));
        int lo = cc - static_cast<int>(std::floor(half));
        int hi = cc + static_cast<int>(std::floor(half - 1e-9));
        int r = tb.r0 + k;
        if (r < 0 || r >= cfg.image_h) continue;
        for (int c = std::max(0, lo); c <= std::min(cfg.image_w - 1, hi); ++c) img.at(r, c) = 0;
    }
    return img;
}

std::string format_coord(double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

void write_manifest(const std::vector<SampleRecord>& rows, const std::string& csv_path) {
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + csv_path);
    f << "image,sq0_x,sq0_y,sq1_x,sq1_y,tri_x,tri_y,tgt_x,tgt_y\n";
    for (const auto& r : rows) {
        const Scene& s = r.scene;
        const Point& tgt = s.squares[static_cast<size_t>(s.target_index)];
        f << r.image_path << ',' << format_coord(s.squares[0].x) << ',' << format_coord(s.squares[0].y)
          << ',' << format_coord(s.squares[1].x) << ',' << format_coord(s.squares[1].y) << ','
          << format_coord(s.triangle.x) << ',' << format_coord(s.triangle.y) << ','
          << format_coord(tgt.x) << ',' << format_coord(tgt.y) << '\n';
    }
    if (!f) throw DataError("write failed: " + csv_path);
}

Manifest read_manifest(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw DataError("cannot open manifest: " + csv_path);
    Manifest m;
    m.dir = fs::path(csv_path).parent_path().string();
    if (m.dir.empty()) m.dir = ".";
    std::string line;
    if (!std::getline(f, line)) throw DataError("empty manifest: " + csv_path);
    if (line != "image,sq0_x,sq0_y,sq1_x,sq1_y,tri_x,tri_y,tgt_x,tgt_y")
        throw DataError("unexpected manifest header in " + csv_path);
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 9)
            throw DataError(csv_path + ":" + std::to_string(lineno) + ": expected 9 columns");
        SampleRecord rec;
        rec.image_path = cells[0];
        auto num = [&](int i) { return std::stod(cells[static_cast<size_t>(i)]); };
        rec.scene.squares = {{num(1), num(2)}, {num(3), num(4)}};
        rec.scene.triangle = {num(5), num(6)};
        Point tgt{num(7), num(8)};
        rec.scene.target_index =
            (tgt.x == rec.scene.squares[0].x && tgt.y == rec.scene.squares[0].y) ? 0 : 1;
        m.rows.push_back(std::move(rec));
    }
    return m;
}

Manifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    if (cfg.write_images) fs::create_directories(fs::path(out_dir) / "images");

    const int64_t n = cfg.n_samples;
    std::vector<SampleRecord> rows(static_cast<size_t>(n));
    std::string first_error;

#pragma omp parallel for schedule(dynamic, 64) num_threads(threads())
    for (int64_t i = 0; i < n; ++i) {
        try {
            SampleRecord rec;
            char name[64];
            std::snprintf(name, sizeof(name), "images/map_%07lld.pgm", static_cast<long long>(i));
            rec.image_path = name;
            rec.scene = sample_scene(cfg, i);
            if (cfg.write_images)
                write_pgm(rasterize(rec.scene, cfg), (fs::path(out_dir) / rec.image_path).string());
            rows[static_cast<size_t>(i)] = std::move(rec);
        } catch (const std::exception& e) {
#pragma omp critical
            if (first_error.empty()) first_error = e.what();
        }
    }
    if (!first_error.empty()) throw DataError(first_error);

    const int64_t n_train = cfg.train_count();
    const int64_t n_eval = cfg.eval_count;
    auto slice = [&](int64_t lo, int64_t hi) {
        return std::vector<SampleRecord>(rows.begin() + lo, rows.begin() + hi);
    };
    write_manifest(slice(0, n_train), (fs::path(out_dir) / "train.csv").string());
    write_manifest(slice(n_train, n_train + n_eval), (fs::path(out_dir) / "eval.csv").string());
    write_manifest(slice(n_train + n_eval, n), (fs::path(out_dir) / "test.csv").string());

    Manifest m;
    m.dir = out_dir;
    m.rows = std::move(rows);
    return m;
}

}  // namespace pipebench
