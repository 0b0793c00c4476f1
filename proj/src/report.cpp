#include "tvlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "tvlab/intervene.hpp"

namespace tvlab {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kToolVersion = "tvlab 0.1.0";

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void Csv::add_row(std::vector<std::string> row) {
    check(row.size() == header.size(), "CSV row width mismatch");
    rows.push_back(std::move(row));
}

std::string Csv::to_string() const {
    std::string out = join(header, ",") + "\n";
    for (const auto& row : rows) out += join(row, ",") + "\n";
    return out;
}

Csv Csv::parse(const std::string& text) {
    Csv csv;
    size_t start = 0;
    bool first = true;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start) {
            std::vector<std::string> cells;
            size_t cell_start = start;
            for (size_t i = start; i <= end; ++i) {
                if (i == end || text[i] == ',') {
                    cells.emplace_back(text.substr(cell_start, i - cell_start));
                    cell_start = i + 1;
                }
            }
            if (first) {
                csv.header = std::move(cells);
                first = false;
            } else {
                csv.rows.push_back(std::move(cells));
            }
        }
        start = end + 1;
    }
    return csv;
}

size_t Csv::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    fail("CSV lacks column '" + name + "'");
}

std::string csv_num(double v) { return fmt_double(v); }

std::string csv_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string{}; }

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

SvgCanvas::SvgCanvas(double width, double height) : width_(width), height_(height) {}

void SvgCanvas::rect(double x, double y, double w, double h, const std::string& fill,
                     const std::string& extra) {
    body_ += "<rect x=\"" + fmt_double(x) + "\" y=\"" + fmt_double(y) + "\" width=\"" +
             fmt_double(w) + "\" height=\"" + fmt_double(h) + "\" fill=\"" + fill + "\"" +
             (extra.empty() ? "" : " " + extra) + "/>\n";
}

void SvgCanvas::hatched_rect(double x, double y, double w, double h) {
    uses_hatch_ = true;
    rect(x, y, w, h, "url(#hatch)", "stroke=\"#999999\" stroke-width=\"0.5\"");
}

void SvgCanvas::line(double x1, double y1, double x2, double y2, const std::string& stroke,
                     double width, const std::string& extra) {
    body_ += "<line x1=\"" + fmt_double(x1) + "\" y1=\"" + fmt_double(y1) + "\" x2=\"" +
             fmt_double(x2) + "\" y2=\"" + fmt_double(y2) + "\" stroke=\"" + stroke +
             "\" stroke-width=\"" + fmt_double(width) + "\"" + (extra.empty() ? "" : " " + extra) +
             "/>\n";
}

void SvgCanvas::polyline(const std::vector<std::pair<double, double>>& pts,
                         const std::string& stroke, double width) {
    std::string points;
    for (const auto& [x, y] : pts) {
        if (!points.empty()) points += " ";
        points += fmt_double(x) + "," + fmt_double(y);
    }
    body_ += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + stroke +
             "\" stroke-width=\"" + fmt_double(width) + "\"/>\n";
}

void SvgCanvas::circle(double cx, double cy, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + fmt_double(cx) + "\" cy=\"" + fmt_double(cy) + "\" r=\"" +
             fmt_double(r) + "\" fill=\"" + fill + "\"/>\n";
}

void SvgCanvas::text(double x, double y, const std::string& s, double size,
                     const std::string& anchor, const std::string& fill) {
    std::string escaped;
    for (char c : s) {
        switch (c) {
            case '&': escaped += "&amp;"; break;
            case '<': escaped += "&lt;"; break;
            case '>': escaped += "&gt;"; break;
            default: escaped += c;
        }
    }
    body_ += "<text x=\"" + fmt_double(x) + "\" y=\"" + fmt_double(y) + "\" font-size=\"" +
             fmt_double(size) + "\" font-family=\"Helvetica,Arial,sans-serif\" text-anchor=\"" +
             anchor + "\" fill=\"" + fill + "\">" + escaped + "</text>\n";
}

std::string SvgCanvas::finish(const std::string& manifest_hash) const {
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_double(width_) +
                      "\" height=\"" + fmt_double(height_) + "\" viewBox=\"0 0 " +
                      fmt_double(width_) + " " + fmt_double(height_) + "\">\n";
    out += "<metadata>source-manifest:" + manifest_hash + "</metadata>\n";
    if (uses_hatch_) {
        out += "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" "
               "patternTransform=\"rotate(45)\" patternUnits=\"userSpaceOnUse\">"
               "<line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#bbbbbb\" stroke-width=\"2\"/>"
               "</pattern></defs>\n";
    }
    out += "<rect x=\"0\" y=\"0\" width=\"" + fmt_double(width_) + "\" height=\"" +
           fmt_double(height_) + "\" fill=\"#ffffff\"/>\n";
    out += body_;
    out += "</svg>\n";
    return out;
}

std::string heat_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    // compact viridis-like ramp
    static const int stops[4][3] = {{36, 31, 92}, {42, 120, 142}, {122, 209, 81}, {253, 231, 37}};
    const double scaled = t * 3.0;
    const int i = std::min(2, static_cast<int>(scaled));
    const double f = scaled - i;
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                  static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                  static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                  static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
    return buf;
}

// ---------------------------------------------------------------------------
// Figure helpers
// ---------------------------------------------------------------------------

namespace {

constexpr double kMarginLeft = 70.0;
constexpr double kMarginTop = 30.0;
constexpr double kMarginBottom = 50.0;

const char* kZeroColor = "#b0b0b0";
const char* kReconColor = "#d95f02";
const char* kFewColor = "#7570b3";
const char* kRatioColor = "#1b9e77";

struct Frame {
    double x0, y0, w, h;  // plot area
    double x(double t) const { return x0 + t * w; }        // t in [0,1]
    double y(double v) const { return y0 + (1.0 - v) * h; }  // v in [0,1]
};

void draw_accuracy_axis(SvgCanvas& svg, const Frame& f) {
    svg.line(f.x0, f.y0, f.x0, f.y0 + f.h, "#222222");
    svg.line(f.x0, f.y0 + f.h, f.x0 + f.w, f.y0 + f.h, "#222222");
    for (int i = 0; i <= 4; ++i) {
        const double v = i / 4.0;
        svg.line(f.x0 - 3, f.y(v), f.x0, f.y(v), "#222222");
        svg.text(f.x0 - 6, f.y(v) + 3, fmt_double(v), 9, "end");
        svg.line(f.x0, f.y(v), f.x0 + f.w, f.y(v), "#eeeeee", 0.5);
    }
    svg.text(f.x0 - 40, f.y0 + f.h / 2, "accuracy", 10, "middle",
             "#222222\" transform=\"rotate(-90 " + fmt_double(f.x0 - 40) + " " +
                 fmt_double(f.y0 + f.h / 2) + ")");
}

double cell_value(const Csv& csv, const std::vector<std::string>& row, const std::string& col) {
    return std::stod(row[csv.column(col)]);
}

}  // namespace

std::string figure_sweep(const Csv& sweep, const std::string& task,
                         const std::string& manifest_hash) {
    std::vector<const std::vector<std::string>*> rows;
    for (const auto& row : sweep.rows) {
        if (row[sweep.column("task")] == task) rows.push_back(&row);
    }
    check(!rows.empty(), "no sweep rows for task '" + task + "'");
    const double width = 560, height = 320;
    SvgCanvas svg(width, height);
    Frame f{kMarginLeft, kMarginTop, width - kMarginLeft - 30, height - kMarginTop - kMarginBottom};
    draw_accuracy_axis(svg, f);
    svg.text(width / 2, 16, task + "  (zero / recon / few per k; line = recon/few)", 11, "middle");

    const double group = f.w / static_cast<double>(rows.size());
    const double bar = group / 4.0;
    std::vector<std::pair<double, double>> ratio_pts;
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& row = *rows[i];
        const double cx = f.x0 + (static_cast<double>(i) + 0.5) * group;
        const double zero = cell_value(sweep, row, "zero");
        const double recon = cell_value(sweep, row, "recon");
        const double few = cell_value(sweep, row, "few");
        const double ratio = cell_value(sweep, row, "ratio");
        svg.rect(cx - 1.5 * bar, f.y(zero), bar, f.y0 + f.h - f.y(zero), kZeroColor);
        svg.rect(cx - 0.5 * bar, f.y(recon), bar, f.y0 + f.h - f.y(recon), kReconColor);
        svg.rect(cx + 0.5 * bar, f.y(few), bar, f.y0 + f.h - f.y(few), kFewColor);
        ratio_pts.emplace_back(cx, f.y(std::min(1.0, ratio)));
        svg.text(cx, f.y0 + f.h + 14, "k=" + row[sweep.column("k")], 9, "middle");
    }
    svg.polyline(ratio_pts, kRatioColor, 2.0);
    for (const auto& [x, y] : ratio_pts) svg.circle(x, y, 2.5, kRatioColor);
    svg.text(f.x0, height - 10,
             "bars: zero (grey), recon (orange), few (purple); green line: recon/few ratio", 9);
    return svg.finish(manifest_hash);
}

namespace {

// shared heatmap body for locality and probe grids
std::string heatmap_figure(const Csv& grid, const std::string& value_col, const std::string& title,
                           const std::string& manifest_hash) {
    std::set<int> layer_set;
    std::vector<std::pair<std::string, int>> columns;  // (role, example), first-seen order
    std::set<std::string> column_seen;
    for (const auto& row : grid.rows) {
        layer_set.insert(static_cast<int>(cell_value(grid, row, "layer")));
        const std::string key = row[grid.column("role")] + "@" + row[grid.column("example")];
        if (column_seen.insert(key).second) {
            columns.emplace_back(row[grid.column("role")],
                                 std::stoi(row[grid.column("example")]));
        }
    }
    std::vector<int> layers(layer_set.begin(), layer_set.end());
    std::map<std::string, std::string> values;
    for (const auto& row : grid.rows) {
        values[row[grid.column("layer")] + "|" + row[grid.column("role")] + "@" +
               row[grid.column("example")]] = row[grid.column(value_col)];
    }

    const double cell = 16.0;
    const double left = 90.0, top = 46.0;
    const double width = left + cell * static_cast<double>(columns.size()) + 90;
    const double height = top + cell * static_cast<double>(layers.size()) + 70;
    SvgCanvas svg(width, height);
    svg.text(width / 2, 18, title, 11, "middle");

    for (size_t li = 0; li < layers.size(); ++li) {
        // highest layer on top
        const int layer = layers[layers.size() - 1 - li];
        const double y = top + cell * static_cast<double>(li);
        svg.text(left - 6, y + cell - 4, "L" + std::to_string(layer), 9, "end");
        for (size_t ci = 0; ci < columns.size(); ++ci) {
            const double x = left + cell * static_cast<double>(ci);
            const std::string key = std::to_string(layer) + "|" + columns[ci].first + "@" +
                                    std::to_string(columns[ci].second);
            auto it = values.find(key);
            if (it == values.end() || it->second.empty()) {
                svg.hatched_rect(x, y, cell - 1, cell - 1);  // null, not zero
            } else {
                svg.rect(x, y, cell - 1, cell - 1, heat_color(std::stod(it->second)));
            }
        }
    }
    // column labels: abbreviated role + example index
    static const std::map<std::string, std::string> kAbbrev = {
        {"Q", "Q"},          {"COLON_AFTER_Q", ":q"}, {"A", "A"},
        {"NEWLINE_BEFORE_A", "nl"}, {"COLON_PRE_ANSWER", ":a"}};
    for (size_t ci = 0; ci < columns.size(); ++ci) {
        const double x = left + cell * (static_cast<double>(ci) + 0.5);
        auto it = kAbbrev.find(columns[ci].first);
        const std::string label =
            (it == kAbbrev.end() ? columns[ci].first : it->second) + std::to_string(columns[ci].second);
        const double ybase = top + cell * static_cast<double>(layers.size()) + 8;
        svg.text(x, ybase, label, 7, "middle",
                 "#222222\" transform=\"rotate(60 " + fmt_double(x) + " " + fmt_double(ybase) +
                     ")");
    }
    // color bar
    const double bar_x = width - 60, bar_y = top, bar_h = cell * static_cast<double>(layers.size());
    for (int i = 0; i < 40; ++i) {
        const double t = 1.0 - i / 39.0;
        svg.rect(bar_x, bar_y + bar_h * i / 40.0, 12, bar_h / 40.0 + 0.5, heat_color(t));
    }
    svg.text(bar_x + 16, bar_y + 8, "1.0", 8);
    svg.text(bar_x + 16, bar_y + bar_h, "0.0", 8);
    return svg.finish(manifest_hash);
}

}  // namespace

std::string figure_locality(const Csv& grid, const std::string& task,
                            const std::string& manifest_hash) {
    Csv filtered;
    filtered.header = grid.header;
    for (const auto& row : grid.rows) {
        if (row[grid.column("task")] == task) filtered.rows.push_back(row);
    }
    return heatmap_figure(filtered, "dev_accuracy",
                          task + "  recon accuracy by layer and token", manifest_hash);
}

std::string figure_probe_grid(const Csv& grid, const std::string& title,
                              const std::string& manifest_hash) {
    return heatmap_figure(grid, "accuracy", title, manifest_hash);
}

std::string figure_roles(const Csv& roles, const Csv& probe_cells, const std::string& task,
                         const std::string& manifest_hash) {
    std::vector<const std::vector<std::string>*> rows;
    for (const auto& row : roles.rows) {
        if (row[roles.column("task")] == task) rows.push_back(&row);
    }
    check(!rows.empty(), "no locality role rows for task '" + task + "'");
    const double width = 520, height = 300;
    SvgCanvas svg(width, height);
    Frame f{kMarginLeft, kMarginTop, width - kMarginLeft - 30, height - kMarginTop - kMarginBottom};
    draw_accuracy_axis(svg, f);
    svg.text(width / 2, 16, task + "  recon by extraction token (solid) vs task decoding (light)",
             10.5, "middle");

    const double group = f.w / static_cast<double>(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& row = *rows[i];
        const double cx = f.x0 + (static_cast<double>(i) + 0.5) * group;
        const double recon = cell_value(roles, row, "eval_accuracy");
        const std::string role = row[roles.column("role")];
        const std::string best_layer = row[roles.column("best_layer")];
        // probe decoding accuracy at this role's best layer, test example
        std::optional<double> decode;
        for (const auto& prow : probe_cells.rows) {
            if (prow[probe_cells.column("role")] == role &&
                prow[probe_cells.column("layer")] == best_layer &&
                prow[probe_cells.column("example")] == prow[probe_cells.column("k")] &&
                !prow[probe_cells.column("accuracy")].empty()) {
                decode = cell_value(probe_cells, prow, "accuracy");
            }
        }
        if (decode) {
            svg.rect(cx - group * 0.32, f.y(*decode), group * 0.64, f.y0 + f.h - f.y(*decode),
                     "#c6b3d9");
        }
        svg.rect(cx - group * 0.18, f.y(recon), group * 0.36, f.y0 + f.h - f.y(recon),
                 kReconColor);
        svg.text(cx, f.y0 + f.h + 14, role, 7.5, "middle");
        svg.text(cx, f.y0 + f.h + 26, "L" + best_layer, 8, "middle");
    }
    return svg.finish(manifest_hash);
}

std::string figure_decay(const Csv& decay, const Csv& summary, const std::string& task,
                         const std::string& manifest_hash) {
    const double width = 520, height = 300;
    SvgCanvas svg(width, height);
    Frame f{kMarginLeft, kMarginTop, width - kMarginLeft - 30, height - kMarginTop - kMarginBottom};
    draw_accuracy_axis(svg, f);
    svg.text(width / 2, 16, task + "  per-unit recon accuracy (conditioned on full few-shot hits)",
             10, "middle");

    for (const auto& row : summary.rows) {
        if (row[summary.column("task")] != task) continue;
        const double zero = cell_value(summary, row, "zero");
        const double recon = cell_value(summary, row, "recon");
        const double few = cell_value(summary, row, "few");
        const double bx = f.x0 + 8;
        svg.rect(bx, f.y(zero), 16, f.y0 + f.h - f.y(zero), kZeroColor);
        svg.rect(bx + 20, f.y(recon), 16, f.y0 + f.h - f.y(recon), kReconColor);
        svg.rect(bx + 40, f.y(few), 16, f.y0 + f.h - f.y(few), kFewColor);
        svg.text(bx + 28, f.y0 + f.h + 14, "zero/recon/few", 8, "middle");
    }

    std::vector<std::pair<double, double>> pts;
    size_t units = 0;
    for (const auto& row : decay.rows) {
        if (row[decay.column("task")] != task) continue;
        ++units;
    }
    size_t i = 0;
    for (const auto& row : decay.rows) {
        if (row[decay.column("task")] != task) continue;
        const double acc = cell_value(decay, row, "accuracy");
        const double x = f.x0 + f.w * (0.35 + 0.6 * (static_cast<double>(i) /
                                                     std::max<size_t>(1, units - 1)));
        pts.emplace_back(x, f.y(acc));
        svg.text(x, f.y0 + f.h + 14, "unit " + row[decay.column("unit")], 8, "middle");
        ++i;
    }
    if (!pts.empty()) {
        svg.polyline(pts, kReconColor, 2.0);
        for (const auto& [x, y] : pts) svg.circle(x, y, 2.5, kReconColor);
    } else {
        svg.text(f.x0 + f.w * 0.6, f.y(0.5), "undefined (empty conditioning set)", 10, "middle",
                 "#888888");
    }
    return svg.finish(manifest_hash);
}

std::string figure_trajectory(const Csv& trajectory, const std::string& manifest_hash) {
    std::set<std::string> tasks;
    std::set<int> ks;
    for (const auto& row : trajectory.rows) {
        tasks.insert(row[trajectory.column("task")]);
        ks.insert(static_cast<int>(cell_value(trajectory, row, "k")));
    }
    double max_disp = 1e-12, max_mag = 1e-12;
    for (const auto& row : trajectory.rows) {
        max_disp = std::max(max_disp, cell_value(trajectory, row, "dispersion"));
        max_mag = std::max(max_mag, cell_value(trajectory, row, "magnitude"));
    }
    const double width = 640, height = 300;
    SvgCanvas svg(width, height);
    const double panel_w = (width - 3 * kMarginLeft) / 2.0;
    Frame fd{kMarginLeft, kMarginTop, panel_w, height - kMarginTop - kMarginBottom};
    Frame fm{2 * kMarginLeft + panel_w, kMarginTop, panel_w, height - kMarginTop - kMarginBottom};
    svg.text(fd.x0 + panel_w / 2, 16, "task-vector dispersion over k", 10, "middle");
    svg.text(fm.x0 + panel_w / 2, 16, "task-vector magnitude over k", 10, "middle");

    std::vector<int> k_list(ks.begin(), ks.end());
    auto kx = [&](const Frame& f, int k) {
        const auto it = std::find(k_list.begin(), k_list.end(), k);
        const auto idx = static_cast<double>(it - k_list.begin());
        return f.x0 + f.w * (k_list.size() > 1 ? idx / static_cast<double>(k_list.size() - 1) : 0.5);
    };
    for (const Frame& f : {fd, fm}) {
        svg.line(f.x0, f.y0, f.x0, f.y0 + f.h, "#222222");
        svg.line(f.x0, f.y0 + f.h, f.x0 + f.w, f.y0 + f.h, "#222222");
        for (int k : k_list) {
            svg.text(kx(f, k), f.y0 + f.h + 12, std::to_string(k), 8, "middle");
        }
    }
    svg.text(fd.x0, fd.y0 - 4, "max " + fmt_double(max_disp), 8);
    svg.text(fm.x0, fm.y0 - 4, "max " + fmt_double(max_mag), 8);

    // per-task light lines + bold mean
    std::map<int, std::pair<double, int>> disp_mean, mag_mean;
    for (const auto& task : tasks) {
        std::vector<std::pair<double, double>> dp, mp;
        for (const auto& row : trajectory.rows) {
            if (row[trajectory.column("task")] != task) continue;
            const int k = static_cast<int>(cell_value(trajectory, row, "k"));
            const double disp = cell_value(trajectory, row, "dispersion");
            const double mag = cell_value(trajectory, row, "magnitude");
            dp.emplace_back(kx(fd, k), fd.y(disp / max_disp));
            mp.emplace_back(kx(fm, k), fm.y(mag / max_mag));
            disp_mean[k].first += disp;
            disp_mean[k].second += 1;
            mag_mean[k].first += mag;
            mag_mean[k].second += 1;
        }
        svg.polyline(dp, "#d9c2ad", 1.0);
        svg.polyline(mp, "#adc2d9", 1.0);
    }
    std::vector<std::pair<double, double>> dmean, mmean;
    for (int k : k_list) {
        dmean.emplace_back(kx(fd, k), fd.y(disp_mean[k].first / disp_mean[k].second / max_disp));
        mmean.emplace_back(kx(fm, k), fm.y(mag_mean[k].first / mag_mean[k].second / max_mag));
    }
    svg.polyline(dmean, kReconColor, 2.2);
    svg.polyline(mmean, "#2166ac", 2.2);
    return svg.finish(manifest_hash);
}

std::string figure_projection(const Csv& projection, const Csv& explained,
                              const std::string& manifest_hash) {
    check(!projection.rows.empty(), "empty projection CSV");
    double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30;
    for (const auto& row : projection.rows) {
        xmin = std::min(xmin, cell_value(projection, row, "x"));
        xmax = std::max(xmax, cell_value(projection, row, "x"));
        ymin = std::min(ymin, cell_value(projection, row, "y"));
        ymax = std::max(ymax, cell_value(projection, row, "y"));
    }
    const double pad_x = (xmax - xmin) * 0.08 + 1e-9;
    const double pad_y = (ymax - ymin) * 0.08 + 1e-9;
    xmin -= pad_x;
    xmax += pad_x;
    ymin -= pad_y;
    ymax += pad_y;

    const double width = 560, height = 480;
    SvgCanvas svg(width, height);
    Frame f{60, 40, width - 90, height - 110};
    svg.rect(f.x0, f.y0, f.w, f.h, "#fafafa", "stroke=\"#cccccc\"");
    std::string subtitle = "principal-plane projection of task-vector centroids";
    for (const auto& row : explained.rows) {
        subtitle += "  pc" + row[explained.column("component")] + "=" +
                    row[explained.column("ratio")].substr(0, 6);
    }
    svg.text(width / 2, 16, subtitle, 10, "middle");

    // stable task -> color
    std::vector<std::string> task_order;
    std::set<std::string> seen;
    for (const auto& row : projection.rows) {
        if (seen.insert(row[projection.column("task")]).second) {
            task_order.push_back(row[projection.column("task")]);
        }
    }
    static const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e",
                                     "#e6ab02", "#a6761d", "#666666", "#1f78b4", "#b2df8a",
                                     "#fb9a99", "#cab2d6", "#ffff99", "#b15928"};
    auto color_of = [&](const std::string& task) {
        const auto it = std::find(task_order.begin(), task_order.end(), task);
        return kPalette[static_cast<size_t>(it - task_order.begin()) % 14];
    };

    for (const auto& row : projection.rows) {
        const double px = f.x0 + f.w * ((cell_value(projection, row, "x") - xmin) / (xmax - xmin));
        const double py =
            f.y0 + f.h * (1.0 - (cell_value(projection, row, "y") - ymin) / (ymax - ymin));
        const std::string task = row[projection.column("task")];
        svg.circle(px, py, 3.2, color_of(task));
        svg.text(px + 4, py - 3, "k" + row[projection.column("k")], 6.5, "start", "#777777");
    }
    // legend
    double ly = height - 58;
    double lx = 60;
    for (size_t i = 0; i < task_order.size(); ++i) {
        if (lx > width - 150) {
            lx = 60;
            ly += 14;
        }
        svg.circle(lx, ly - 3, 3.0, color_of(task_order[i]));
        svg.text(lx + 7, ly, task_order[i], 8);
        lx += 16 + 6.0 * static_cast<double>(task_order[i].size());
    }
    return svg.finish(manifest_hash);
}

// ---------------------------------------------------------------------------
// Verify
// ---------------------------------------------------------------------------

namespace {

double pooled_accuracy(const std::vector<EvalRecord>& records) {
    return aggregate_records(records).accuracy();
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-12; }

void verify_search_table(const fs::path& dir, const std::string& task,
                         std::vector<std::string>& problems) {
    const auto table_path = dir / "search" / (task + ".table.csv");
    const auto records_path = dir / "search" / (task + ".records.jsonl");
    auto csv = Csv::parse(read_text_file(table_path));
    auto records = records_from_jsonl(read_text_file(records_path));
    for (const auto& row : csv.rows) {
        const int layer = std::stoi(row[csv.column("layer")]);
        std::vector<EvalRecord> subset;
        for (const auto& r : records) {
            if (r.layer == layer) subset.push_back(r);
        }
        const double expect = std::stod(row[csv.column("dev_accuracy")]);
        if (!close(pooled_accuracy(subset), expect)) {
            problems.push_back("search/" + task + " layer " + std::to_string(layer) +
                               ": table says " + row[csv.column("dev_accuracy")] +
                               ", records give " + fmt_double(pooled_accuracy(subset)));
        }
    }
}

void verify_sweep_table(const fs::path& dir, const std::string& task,
                        std::vector<std::string>& problems) {
    auto csv = Csv::parse(read_text_file(dir / "sweep" / (task + ".table.csv")));
    auto records = records_from_jsonl(read_text_file(dir / "sweep" / (task + ".records.jsonl")));
    auto subset_acc = [&](const std::string& setting, int k) {
        std::vector<EvalRecord> subset;
        for (const auto& r : records) {
            if (r.setting == setting && (setting == "zero" || r.k == k)) subset.push_back(r);
        }
        return pooled_accuracy(subset);
    };
    for (const auto& row : csv.rows) {
        const int k = std::stoi(row[csv.column("k")]);
        for (const std::string col : {"zero", "recon", "few"}) {
            const double expect = std::stod(row[csv.column(col)]);
            const double got = subset_acc(col == "zero" ? "zero" : col, k);
            if (!close(expect, got)) {
                problems.push_back("sweep/" + task + " k=" + std::to_string(k) + " " + col +
                                   ": table says " + fmt_double(expect) + ", records give " +
                                   fmt_double(got));
            }
        }
    }
}

void verify_locality(const fs::path& dir, const std::string& task,
                     std::vector<std::string>& problems) {
    auto grid = Csv::parse(read_text_file(dir / "locality" / (task + ".grid.csv")));
    auto records =
        records_from_jsonl(read_text_file(dir / "locality" / (task + ".grid.records.jsonl")));
    for (const auto& row : grid.rows) {
        const std::string& cell = row[grid.column("dev_accuracy")];
        if (cell.empty()) continue;  // explicit null
        const int layer = std::stoi(row[grid.column("layer")]);
        const int example = std::stoi(row[grid.column("example")]);
        const std::string& role = row[grid.column("role")];
        std::vector<EvalRecord> subset;
        for (const auto& r : records) {
            if (r.layer == layer && r.role == role && r.example == example) subset.push_back(r);
        }
        if (!close(pooled_accuracy(subset), std::stod(cell))) {
            problems.push_back("locality/" + task + " (" + role + "@" + std::to_string(example) +
                               ", L" + std::to_string(layer) + "): table says " + cell +
                               ", records give " + fmt_double(pooled_accuracy(subset)));
        }
    }
    auto roles = Csv::parse(read_text_file(dir / "locality" / (task + ".roles.csv")));
    auto eval_records =
        records_from_jsonl(read_text_file(dir / "locality" / (task + ".roles.records.jsonl")));
    for (const auto& row : roles.rows) {
        const std::string& role = row[roles.column("role")];
        std::vector<EvalRecord> subset;
        for (const auto& r : eval_records) {
            if (r.role == role) subset.push_back(r);
        }
        const double expect = std::stod(row[roles.column("eval_accuracy")]);
        if (!close(pooled_accuracy(subset), expect)) {
            problems.push_back("locality/" + task + " role " + role + " eval: table says " +
                               fmt_double(expect) + ", records give " +
                               fmt_double(pooled_accuracy(subset)));
        }
    }
}

void verify_decay(const fs::path& dir, const std::string& task,
                  std::vector<std::string>& problems) {
    auto summary = Csv::parse(read_text_file(dir / "decay" / (task + ".summary.csv")));
    const auto& row = summary.rows.at(0);
    for (const auto& [col, file] :
         std::vector<std::pair<std::string, std::string>>{{"zero", ".zero.records.jsonl"},
                                                          {"recon", ".recon_full.records.jsonl"},
                                                          {"few", ".few.records.jsonl"}}) {
        auto records = records_from_jsonl(read_text_file(dir / "decay" / (task + file)));
        const double expect = std::stod(row[summary.column(col)]);
        if (!close(pooled_accuracy(records), expect)) {
            problems.push_back("decay/" + task + " " + col + ": table says " + fmt_double(expect) +
                               ", records give " + fmt_double(pooled_accuracy(records)));
        }
    }
    if (row[summary.column("defined")] == "0") return;
    auto recon_records =
        records_from_jsonl(read_text_file(dir / "decay" / (task + ".recon.records.jsonl")));
    auto curve = Csv::parse(read_text_file(dir / "decay" / (task + ".curve.csv")));
    for (const auto& crow : curve.rows) {
        const auto unit = static_cast<size_t>(std::stoi(crow[curve.column("unit")])) - 1;
        double sum = 0.0;
        for (const auto& r : recon_records) sum += r.unit_correct.at(unit);
        const double got = sum / static_cast<double>(recon_records.size());
        if (!close(got, std::stod(crow[curve.column("accuracy")]))) {
            problems.push_back("decay/" + task + " unit " + crow[curve.column("unit")] +
                               ": table says " + crow[curve.column("accuracy")] +
                               ", records give " + fmt_double(got));
        }
    }
}

}  // namespace

std::vector<std::string> verify_artifacts(const fs::path& artifact_dir) {
    std::vector<std::string> problems;
    const auto manifest_path = artifact_dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
        problems.push_back("missing manifest.json");
        return problems;
    }
    json manifest = json::parse(read_text_file(manifest_path));

    // checkpoint hash recorded in the manifest matches the file
    if (manifest.contains("checkpoint_hash")) {
        const auto ckpt = artifact_dir / "checkpoint.tvlb";
        if (!fs::exists(ckpt)) {
            problems.push_back("manifest records a checkpoint hash but checkpoint.tvlb is missing");
        } else {
            const std::string actual = hash_hex(hash_file(ckpt));
            if (actual != manifest["checkpoint_hash"].get<std::string>()) {
                problems.push_back("checkpoint hash mismatch: manifest " +
                                   manifest["checkpoint_hash"].get<std::string>() + ", file " +
                                   actual);
            }
        }
    }

    auto tasks_of = [&](const char* key) {
        std::vector<std::string> tasks;
        if (manifest.contains("stage_tasks") && manifest["stage_tasks"].contains(key)) {
            tasks = manifest["stage_tasks"][key].get<std::vector<std::string>>();
        }
        return tasks;
    };
    for (const auto& task : tasks_of("search")) verify_search_table(artifact_dir, task, problems);
    for (const auto& task : tasks_of("sweep")) verify_sweep_table(artifact_dir, task, problems);
    for (const auto& task : tasks_of("locality")) verify_locality(artifact_dir, task, problems);
    for (const auto& task : tasks_of("decay")) verify_decay(artifact_dir, task, problems);
    return problems;
}

}  // namespace tvlab
