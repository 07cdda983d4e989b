#include "pipebench/evalreport.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "pipebench/common.hpp"

namespace fs = std::filesystem;

namespace pipebench {

double point_error(const Point& pred, const Point& truth) {
    if (!std::isfinite(pred.x) || !std::isfinite(pred.y) || !std::isfinite(truth.x) ||
        !std::isfinite(truth.y))
        throw std::invalid_argument("point_error: non-finite coordinate");
    double dx = pred.x - truth.x, dy = pred.y - truth.y;
    return std::sqrt(dx * dx + dy * dy);
}

EvalResult evaluate(const InferenceFn& model, const Manifest& test_set) {
    if (test_set.rows.empty()) throw std::invalid_argument("evaluate: empty test set");
    const int64_t n = static_cast<int64_t>(test_set.rows.size());
    EvalResult res;
    res.n = n;
    res.per_sample.assign(static_cast<size_t>(n), 0.0);
    std::vector<uint8_t> failed(static_cast<size_t>(n), 0);

    const int nt = std::max<int>(1, static_cast<int>(std::min<int64_t>(threads(), n)));
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int64_t i = 0; i < n; ++i) {
        const SampleRecord& row = test_set.rows[static_cast<size_t>(i)];
        const Point truth = row.scene.squares[static_cast<size_t>(row.scene.target_index)];
        std::optional<Point> pred = model(row, i);
        if (pred) {
            res.per_sample[static_cast<size_t>(i)] = point_error(*pred, truth);
        } else {
            res.per_sample[static_cast<size_t>(i)] = kMaxError;
            failed[static_cast<size_t>(i)] = 1;
        }
    }
    for (int64_t i = 0; i < n; ++i) res.decode_failures += failed[static_cast<size_t>(i)];

    double sum = 0.0;
    for (double e : res.per_sample) sum += e;
    res.mean_err = sum / static_cast<double>(n);
    if (n > 1) {
        double ss = 0.0;
        for (double e : res.per_sample) ss += (e - res.mean_err) * (e - res.mean_err);
        res.std_err = std::sqrt(ss / static_cast<double>(n - 1));
    }
    return res;
}

namespace {

std::string fmt(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

const char* kCsvHeader =
    "regime,mean_err,std_err,n,decode_failures,wall_seconds,label_cost_expr,label_cost_total,source";

}  // namespace

void write_comparison_csv(const ComparisonTable& table, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << kCsvHeader << "\n";
    for (const auto& r : table.rows) {
        f << r.regime << ',' << fmt(r.mean_err) << ',' << fmt(r.std_err) << ',' << r.n << ','
          << r.decode_failures << ',' << fmt(r.wall_seconds, 3) << ',' << r.label_cost_expr << ',';
        if (r.label_cost_total >= 0) f << r.label_cost_total;
        f << ',' << r.source << '\n';
    }
    if (!f) throw DataError("write failed: " + path);
}

ComparisonTable read_comparison_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open comparison csv: " + path);
    std::string line;
    if (!std::getline(f, line) || line != kCsvHeader)
        throw DataError("unexpected comparison csv header in " + path);
    ComparisonTable t;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        cells.resize(9);
        ComparisonRow r;
        r.regime = cells[0];
        r.mean_err = std::stod(cells[1]);
        r.std_err = std::stod(cells[2]);
        r.n = std::stoll(cells[3].empty() ? "0" : cells[3]);
        r.decode_failures = std::stoll(cells[4].empty() ? "0" : cells[4]);
        r.wall_seconds = std::stod(cells[5].empty() ? "0" : cells[5]);
        r.label_cost_expr = cells[6];
        r.label_cost_total = cells[7].empty() ? -1 : std::stoll(cells[7]);
        r.source = cells[8];
        t.rows.push_back(std::move(r));
    }
    return t;
}

namespace {

void write_svg(const ComparisonTable& table, const std::string& path) {
    const int width = 640, height = 440;
    const int left = 70, right = 30, top = 40, bottom = 70;
    const int plot_w = width - left - right, plot_h = height - top - bottom;

    double ymax = 0.0;
    for (const auto& r : table.rows) ymax = std::max(ymax, r.mean_err + r.std_err);
    if (ymax <= 0.0) ymax = 1.0;
    ymax *= 1.15;

    auto ypix = [&](double v) { return top + plot_h - static_cast<int>(std::lround(v / ymax * plot_h)); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    s << "<!-- data\n" << kCsvHeader << "\n";
    for (const auto& r : table.rows)
        s << r.regime << ',' << fmt(r.mean_err) << ',' << fmt(r.std_err) << ',' << r.n << ','
          << r.decode_failures << ',' << fmt(r.wall_seconds, 3) << ',' << r.label_cost_expr << ','
          << (r.label_cost_total >= 0 ? std::to_string(r.label_cost_total) : "") << ',' << r.source
          << "\n";
    s << "-->\n";
    s << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << "mean error per regime (whiskers: +/- std)</text>\n";
    // axes
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double v = ymax * i / 4.0;
        int y = ypix(v);
        s << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\"" << y
          << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(v, 3) << "</text>\n";
    }
    const int nrows = static_cast<int>(table.rows.size());
    for (int i = 0; i < nrows; ++i) {
        const auto& r = table.rows[static_cast<size_t>(i)];
        int x = left + plot_w * (i + 1) / (nrows + 1);
        int ym = ypix(r.mean_err);
        int ylo = ypix(std::max(0.0, r.mean_err - r.std_err));
        int yhi = ypix(r.mean_err + r.std_err);
        const char* color = r.source == "reference" ? "#888888" : "#d2691e";
        s << "<line x1=\"" << x << "\" y1=\"" << yhi << "\" x2=\"" << x << "\" y2=\"" << ylo
          << "\" stroke=\"" << color << "\"/>\n";
        s << "<line x1=\"" << x - 6 << "\" y1=\"" << yhi << "\" x2=\"" << x + 6 << "\" y2=\"" << yhi
          << "\" stroke=\"" << color << "\"/>\n";
        s << "<line x1=\"" << x - 6 << "\" y1=\"" << ylo << "\" x2=\"" << x + 6 << "\" y2=\"" << ylo
          << "\" stroke=\"" << color << "\"/>\n";
        s << "<rect x=\"" << x - 5 << "\" y=\"" << ym - 5 << "\" width=\"10\" height=\"10\" fill=\""
          << color << "\"/>\n";
        std::string label = r.regime + (r.source == "reference" ? " (ref)" : "");
        s << "<text x=\"" << x << "\" y=\"" << top + plot_h + 18
          << "\" text-anchor=\"middle\" font-size=\"12\">" << label << "</text>\n";
    }
    s << "</svg>\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << s.str();
}

}  // namespace

std::vector<std::string> build_report(const ComparisonTable& input, const std::string& out_dir) {
    if (input.rows.empty()) throw std::invalid_argument("build_report: no runs");
    fs::create_directories(out_dir);

    // dedupe by (regime, source); later rows win (callers order by timestamp)
    std::vector<std::string> warnings;
    ComparisonTable table;
    std::map<std::string, size_t> seen;
    for (const auto& r : input.rows) {
        std::string key = r.regime + "|" + r.source;
        auto it = seen.find(key);
        if (it == seen.end()) {
            seen[key] = table.rows.size();
            table.rows.push_back(r);
        } else {
            warnings.push_back("duplicate regime '" + r.regime + "': keeping the newest run");
            table.rows[it->second] = r;
        }
    }
    std::stable_sort(table.rows.begin(), table.rows.end(), [](const auto& a, const auto& b) {
        if (a.source != b.source) return a.source < b.source;  // reference first
        return a.regime < b.regime;
    });

    write_comparison_csv(table, (fs::path(out_dir) / "comparison.csv").string());
    write_svg(table, (fs::path(out_dir) / "comparison.svg").string());

    std::ofstream md((fs::path(out_dir) / "report.md").string(), std::ios::binary);
    if (!md) throw DataError("cannot open report.md for writing");
    md << "# Regime comparison\n\n";
    md << "| regime | mean err | std | n | decode failures | wall (s) | labels |\n";
    md << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : table.rows) {
        md << "| " << r.regime << (r.source == "reference" ? " (reference)" : "") << " | "
           << fmt(r.mean_err, 4) << " | " << fmt(r.std_err, 4) << " | " << r.n << " | "
           << r.decode_failures << " | " << fmt(r.wall_seconds, 1) << " | " << r.label_cost_expr;
        if (r.label_cost_total >= 0) md << " = " << r.label_cost_total;
        md << " |\n";
    }
    md << "\nError metric: per-sample Euclidean distance between the predicted point and the "
          "ground-truth point, reported as mean +/- sample standard deviation (n-1) over the test "
          "set; range [0, sqrt(2)] on unit-square coordinates. Decode failures are scored at "
          "sqrt(2) and counted separately.\n";
    for (const auto& w : warnings) md << "\nwarning: " << w << "\n";
    return warnings;
}

}  // namespace pipebench
