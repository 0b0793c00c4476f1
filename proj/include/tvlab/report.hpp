#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvlab/common.hpp"

namespace tvlab {

extern const char* const kToolVersion;

// Minimal CSV: comma-separated, no quoting (cell writers never emit commas).
struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    std::string to_string() const;
    static Csv parse(const std::string& text);
    size_t column(const std::string& name) const;
};

std::string csv_num(double v);
std::string csv_opt(const std::optional<double>& v);  // empty cell = explicit null

// ---------------------------------------------------------------------------
// Deterministic SVG emission. Byte output depends only on the draw calls.
// ---------------------------------------------------------------------------

class SvgCanvas {
public:
    SvgCanvas(double width, double height);

    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& extra = {});
    void hatched_rect(double x, double y, double w, double h);
    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0, const std::string& extra = {});
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                  double width = 1.5);
    void circle(double cx, double cy, double r, const std::string& fill);
    void text(double x, double y, const std::string& s, double size = 10.0,
              const std::string& anchor = "start", const std::string& fill = "#222222");

    // Embedded provenance: the manifest hash this figure was rendered from.
    std::string finish(const std::string& manifest_hash) const;

private:
    double width_, height_;
    std::string body_;
    bool uses_hatch_ = false;
};

// Linear color scale for heatmaps, t in [0,1].
std::string heat_color(double t);

// ---------------------------------------------------------------------------
// Figures. Each emitter reads CSV text and returns SVG bytes.
// ---------------------------------------------------------------------------

// zero/recon/few bars per k plus the recon/few ratio line.
std::string figure_sweep(const Csv& sweep, const std::string& task,
                         const std::string& manifest_hash);

// layer x (role, example) heatmap of dev recon accuracy; null cells hatched.
std::string figure_locality(const Csv& grid, const std::string& task,
                            const std::string& manifest_hash);

// layer x (role, example) heatmap of task-identity decoding accuracy.
std::string figure_probe_grid(const Csv& grid, const std::string& title,
                              const std::string& manifest_hash);

// per-role recon bars (solid) with probe decoding accuracy overlaid (light).
std::string figure_roles(const Csv& roles, const Csv& probe_cells, const std::string& task,
                         const std::string& manifest_hash);

// per-unit recon accuracy lines plus zero/recon/few bars.
std::string figure_decay(const Csv& decay, const Csv& summary, const std::string& task,
                         const std::string& manifest_hash);

// dispersion and magnitude curves over k (per task + mean).
std::string figure_trajectory(const Csv& trajectory, const std::string& manifest_hash);

// centroid scatter in the projection plane, labeled by task and k.
std::string figure_projection(const Csv& projection, const Csv& explained,
                              const std::string& manifest_hash);

// ---------------------------------------------------------------------------
// Verification: every CSV accuracy cell must be reproducible from the stored
// EvalRecords. Returns human-readable mismatch descriptions (empty = clean).
// ---------------------------------------------------------------------------

std::vector<std::string> verify_artifacts(const std::filesystem::path& artifact_dir);

}  // namespace tvlab
