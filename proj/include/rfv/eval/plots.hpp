#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rfv/adversary/geometry.hpp"
#include "rfv/eval/verification.hpp"
#include "rfv/trainer/trainer.hpp"

namespace rfv::eval {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart as a standalone SVG. Throws ConfigError when every series is empty.
void write_line_svg(const std::filesystem::path &path, const std::string &title, const std::string &x_label,
                    const std::string &y_label, std::span<const Series> series);

/// Train, validation and test loss against the logged step indices.
std::vector<Series> runlog_series(const train::RunLog &log);

/// Counts of best square-patch windows over the stride grid.
struct LocationHistogram {
  std::vector<int> row_offsets; // top offsets of the grid
  std::vector<int> col_offsets; // left offsets
  std::vector<long> counts;     // row-major, row_offsets.size() x col_offsets.size()
  [[nodiscard]] long total() const;
};

/// Histogram over the square_size/square_stride grid of the image. Outcomes whose mask is not a
/// grid window are rejected.
LocationHistogram location_histogram(std::span<const AttackOutcome> outcomes, const adv::MaskGeometry &geometry,
                                     const ImageShape &shape);

/// CSV (top,left,count per cell) and an SVG heatmap; an all-zero histogram is still written.
void write_heatmap(const LocationHistogram &hist, const std::filesystem::path &csv_path,
                   const std::filesystem::path &svg_path);

/// Images tiled row by row into one PNG, each scaled by an integer factor.
void write_image_grid(std::span<const LabeledImage> images, int columns, const std::filesystem::path &path,
                      int scale = 2);

/// runlog.svg in `dir`.
void emit_plots(const train::RunLog &log, const std::filesystem::path &dir);
/// roc_<attack>_<tta>.svg and pr_<attack>_<tta>.svg per report row.
void emit_plots(const MetricReport &report, const std::filesystem::path &dir);
/// locations.csv and locations.svg in `dir`.
void emit_plots(const LocationHistogram &hist, const std::filesystem::path &dir);

/// File-name-safe form of an attack descriptor.
std::string file_stem(const std::string &name);

} // namespace rfv::eval
