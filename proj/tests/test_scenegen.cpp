#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "pipebench/rng.hpp"
#include "pipebench/scenegen.hpp"

using namespace pipebench;
namespace fs = std::filesystem;

namespace {

// The six appendix maps (triangle, two squares, expected nearest square).
struct MapRow {
    Point triangle;
    Point sq0, sq1;
    Point expected;
};
const std::vector<MapRow> kMapRows = {
    {{0.622, 0.439}, {0.517, 0.898}, {0.378, 0.886}, {0.517, 0.898}},
    {{0.577, 0.713}, {0.778, 0.263}, {0.583, 0.137}, {0.778, 0.263}},
    {{0.127, 0.626}, {0.196, 0.341}, {0.152, 0.243}, {0.196, 0.341}},
    {{0.597, 0.730}, {0.693, 0.873}, {0.323, 0.142}, {0.693, 0.873}},
    {{0.138, 0.135}, {0.564, 0.311}, {0.597, 0.211}, {0.564, 0.311}},
    {{0.103, 0.382}, {0.604, 0.148}, {0.743, 0.673}, {0.604, 0.148}},
};

// independent oracle: argmin over squared distances in long double
int brute_force_nearest(const std::vector<Point>& squares, const Point& t) {
    int best = 0;
    long double best_d = 1e30L;
    for (size_t i = 0; i < squares.size(); ++i) {
        long double dx = static_cast<long double>(squares[i].x) - t.x;
        long double dy = static_cast<long double>(squares[i].y) - t.y;
        long double d2 = dx * dx + dy * dy;
        if (d2 < best_d) {
            best_d = d2;
            best = static_cast<int>(i);
        }
    }
    return best;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

DatasetConfig small_cfg() {
    DatasetConfig cfg;
    cfg.n_samples = 600;
    cfg.image_h = 64;
    cfg.image_w = 64;
    cfg.seed = 42;
    cfg.eval_count = 50;
    cfg.test_count = 50;
    return cfg;
}

struct Component {
    double row_sum = 0, col_sum = 0;
    int count = 0;
};

std::vector<Component> black_components(const Image& img) {
    std::vector<int> label(img.px.size(), -1);
    std::vector<Component> comps;
    for (int r = 0; r < img.h; ++r) {
        for (int c = 0; c < img.w; ++c) {
            if (img.at(r, c) != 0 || label[static_cast<size_t>(r) * img.w + c] >= 0) continue;
            int id = static_cast<int>(comps.size());
            comps.emplace_back();
            std::vector<std::pair<int, int>> stack{{r, c}};
            label[static_cast<size_t>(r) * img.w + c] = id;
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                comps[static_cast<size_t>(id)].row_sum += cr;
                comps[static_cast<size_t>(id)].col_sum += cc;
                comps[static_cast<size_t>(id)].count += 1;
                const int dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    int nr = cr + dr[k], nc = cc + dc[k];
                    if (nr < 0 || nr >= img.h || nc < 0 || nc >= img.w) continue;
                    size_t li = static_cast<size_t>(nr) * img.w + nc;
                    if (img.at(nr, nc) == 0 && label[li] < 0) {
                        label[li] = id;
                        stack.push_back({nr, nc});
                    }
                }
            }
        }
    }
    return comps;
}

}  // namespace

TEST_CASE("nearest square matches all six appendix maps") {
    for (const auto& row : kMapRows) {
        auto [idx, p] = nearest_square({row.sq0, row.sq1}, row.triangle);
        CHECK(p.x == doctest::Approx(row.expected.x).epsilon(1e-12));
        CHECK(p.y == doctest::Approx(row.expected.y).epsilon(1e-12));
        CHECK(idx == 0);  // every appendix row lists the nearest square first
    }
}

TEST_CASE("nearest square tie-break and edge cases") {
    // equidistant -> lowest index
    auto [idx, p] = nearest_square({{0.2, 0.5}, {0.8, 0.5}}, {0.5, 0.5});
    CHECK(idx == 0);
    // coincident point, distance zero
    auto [idx2, p2] = nearest_square({{0.3, 0.3}, {0.9, 0.9}}, {0.3, 0.3});
    CHECK(idx2 == 0);
    CHECK(dist(p2, Point{0.3, 0.3}) == 0.0);
    CHECK_THROWS_AS(nearest_square({}, {0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("nearest square agrees with brute force on generated scenes") {
    DatasetConfig cfg = small_cfg();
    for (int64_t i = 0; i < 500; ++i) {
        Scene s = sample_scene(cfg, i);
        CHECK(s.target_index == brute_force_nearest(s.squares, s.triangle));
    }
}

TEST_CASE("sample_scene is deterministic and respects invariants") {
    DatasetConfig cfg = small_cfg();
    Scene a = sample_scene(cfg, 7);
    Scene b = sample_scene(cfg, 7);
    CHECK(a.squares[0].x == b.squares[0].x);
    CHECK(a.squares[1].y == b.squares[1].y);
    CHECK(a.triangle.x == b.triangle.x);
    CHECK(a.target_index == b.target_index);

    for (int64_t i = 0; i < 300; ++i) {
        Scene s = sample_scene(cfg, i);
        double d0 = dist(s.squares[0], s.triangle);
        double d1 = dist(s.squares[1], s.triangle);
        CHECK(std::abs(d0 - d1) >= kTieEpsilon);
        CHECK(s.target_index == (d0 <= d1 ? 0 : 1));
        // canonical square order
        CHECK((s.squares[0].x < s.squares[1].x ||
               (s.squares[0].x == s.squares[1].x && s.squares[0].y <= s.squares[1].y)));
        for (const Point& p : {s.squares[0], s.squares[1], s.triangle}) {
            CHECK(p.x >= cfg.margin);
            CHECK(p.x <= 1.0 - cfg.margin);
            CHECK(p.y >= cfg.margin);
            CHECK(p.y <= 1.0 - cfg.margin);
        }
        CHECK(dist(s.squares[0], s.squares[1]) >= cfg.min_separation);
        CHECK(dist(s.squares[0], s.triangle) >= cfg.min_separation);
    }
}

TEST_CASE("appendix map_0 coordinates label as expected when wrapped in a scene") {
    // constructed scene, not sampled: checks the labeling rule directly
    std::vector<Point> squares = {{0.517, 0.898}, {0.378, 0.886}};
    Point tri{0.622, 0.439};
    CHECK(nearest_square(squares, tri).first == 0);
}

TEST_CASE("infeasible config raises a generation error") {
    DatasetConfig cfg = small_cfg();
    cfg.margin = 0.45;
    cfg.min_separation = 0.5;  // cannot hold inside a 0.1-wide band
    CHECK_THROWS_AS(sample_scene(cfg, 0), DataError);
}

TEST_CASE("rasterize pixel mapping and purity") {
    DatasetConfig cfg = small_cfg();
    auto [r00, c00] = to_pixel({0.0, 0.0}, cfg.image_h, cfg.image_w);
    CHECK(r00 == cfg.image_h - 1);
    CHECK(c00 == 0);
    auto [r11, c11] = to_pixel({1.0, 1.0}, cfg.image_h, cfg.image_w);
    CHECK(r11 == 0);
    CHECK(c11 == cfg.image_w - 1);
    auto [rc, cc] = to_pixel({0.5, 0.5}, 224, 224);
    CHECK(rc == 112);
    CHECK(cc == 112);

    Scene s = sample_scene(cfg, 3);
    Image a = rasterize(s, cfg);
    Image b = rasterize(s, cfg);
    CHECK(a.px == b.px);
    // white background with black shapes only
    std::set<uint8_t> values(a.px.begin(), a.px.end());
    CHECK(values == std::set<uint8_t>{0, 255});
}

TEST_CASE("rasterized centroids recover the stored coordinates") {
    DatasetConfig cfg = small_cfg();
    const double tol = 1.5 / std::min(cfg.image_h, cfg.image_w);
    for (int64_t i = 0; i < 50; ++i) {
        Scene s = sample_scene(cfg, i);
        Image img = rasterize(s, cfg);
        auto comps = black_components(img);
        REQUIRE(comps.size() == 3);
        std::vector<Point> stored = {s.squares[0], s.squares[1], s.triangle};
        std::set<size_t> used;
        for (const Point& p : stored) {
            double best = 1e9;
            size_t best_j = 0;
            for (size_t j = 0; j < comps.size(); ++j) {
                double row = comps[j].row_sum / comps[j].count;
                double col = comps[j].col_sum / comps[j].count;
                Point rec{col / (cfg.image_w - 1), 1.0 - row / (cfg.image_h - 1)};
                double d = dist(rec, p);
                if (d < best) {
                    best = d;
                    best_j = j;
                }
            }
            CHECK(best <= tol);
            CHECK(used.insert(best_j).second);  // bijective assignment
        }
    }
}

TEST_CASE("pgm round trip") {
    DatasetConfig cfg = small_cfg();
    Scene s = sample_scene(cfg, 11);
    Image img = rasterize(s, cfg);
    fs::path dir = fs::temp_directory_path() / "pipebench_pgm_test";
    fs::create_directories(dir);
    write_pgm(img, (dir / "t.pgm").string());
    Image back = read_pgm((dir / "t.pgm").string());
    CHECK(back.h == img.h);
    CHECK(back.w == img.w);
    CHECK(back.px == img.px);
    fs::remove_all(dir);
}

TEST_CASE("generate_dataset splits, labels and reproducibility") {
    DatasetConfig cfg = small_cfg();
    cfg.n_samples = 1200;
    cfg.eval_count = 100;
    cfg.test_count = 100;
    cfg.image_h = 32;
    cfg.image_w = 32;
    cfg.margin = 0.08;  // 3px shapes need a wider band at 32x32

    fs::path dir = fs::temp_directory_path() / "pipebench_gen_test";
    fs::remove_all(dir);
    Manifest m = generate_dataset(cfg, dir.string());
    CHECK(m.rows.size() == 1200);

    Manifest train = read_manifest((dir / "train.csv").string());
    Manifest eval = read_manifest((dir / "eval.csv").string());
    Manifest test = read_manifest((dir / "test.csv").string());
    CHECK(train.rows.size() == 1000);
    CHECK(eval.rows.size() == 100);
    CHECK(test.rows.size() == 100);

    // labels satisfy the nearest-square definition, coordinates are 3-decimal
    for (const auto& rec : train.rows) {
        const Scene& s = rec.scene;
        CHECK(s.target_index == nearest_square(s.squares, s.triangle).first);
        for (const Point& p : {s.squares[0], s.squares[1], s.triangle}) {
            CHECK(p.x == doctest::Approx(std::round(p.x * 1000) / 1000).epsilon(1e-12));
        }
    }
    // image files exist and match the stored scene
    Image img0 = read_pgm((dir / train.rows[0].image_path).string());
    CHECK(img0.h == 32);
    Image expect0 = rasterize(train.rows[0].scene, cfg);
    CHECK(img0.px == expect0.px);

    // byte-identical regeneration
    std::string before = file_bytes((dir / "train.csv").string()) +
                         file_bytes((dir / "eval.csv").string()) +
                         file_bytes((dir / "test.csv").string());
    fs::path dir2 = fs::temp_directory_path() / "pipebench_gen_test2";
    fs::remove_all(dir2);
    generate_dataset(cfg, dir2.string());
    std::string after = file_bytes((dir2 / "train.csv").string()) +
                        file_bytes((dir2 / "eval.csv").string()) +
                        file_bytes((dir2 / "test.csv").string());
    CHECK(before == after);

    // manifest round trip preserves every value
    write_manifest(train.rows, (dir / "roundtrip.csv").string());
    CHECK(file_bytes((dir / "roundtrip.csv").string()) == file_bytes((dir / "train.csv").string()));

    fs::remove_all(dir);
    fs::remove_all(dir2);
}
