#include "rfv/eval/plots.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <cmath>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "rfv/eval/metrics.hpp"

namespace rfv::eval {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kLeft = 70;
constexpr int kRight = 150;
constexpr int kTop = 40;
constexpr int kBottom = 50;
const char *const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string escape(const std::string &s) {
  std::string out;
  for (char c : s) {
    if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else if (c == '&')
      out += "&amp;";
    else
      out += c;
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path &path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os)
    throw ConfigError("cannot write " + path.string());
  return os;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

} // namespace

void write_line_svg(const std::filesystem::path &path, const std::string &title, const std::string &x_label,
                    const std::string &y_label, std::span<const Series> series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto &s : series) {
    if (s.x.size() != s.y.size())
      throw ConfigError("series '" + s.name + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0))
    throw ConfigError("nothing to plot for " + path.string());
  if (x1 == x0)
    x1 = x0 + 1.0;
  if (y1 == y0)
    y1 = y0 + 1.0;
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  auto os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << fmt(xv) << "</text>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << fmt(yv) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << kTop + ph / 2 << ")\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char *color = kColors[k % std::size(kColors)];
    const auto &s = series[k];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
        os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << kWidth - kRight + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kWidth - kRight + 30
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kWidth - kRight + 35 << "\" y=\"" << ly << "\" font-size=\"11\">" << escape(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
}

std::vector<Series> runlog_series(const train::RunLog &log) {
  Series tr{"train", {}, {}}, va{"validation", {}, {}}, te{"test", {}, {}};
  for (const auto &r : log.records) {
    const auto step = static_cast<double>(r.step);
    tr.x.push_back(step);
    tr.y.push_back(r.train_loss);
    va.x.push_back(step);
    va.y.push_back(r.val_loss);
    te.x.push_back(step);
    te.y.push_back(r.test_loss);
  }
  return {tr, va, te};
}

long LocationHistogram::total() const {
  long t = 0;
  for (auto c : counts)
    t += c;
  return t;
}

LocationHistogram location_histogram(std::span<const AttackOutcome> outcomes, const adv::MaskGeometry &geometry,
                                     const ImageShape &shape) {
  LocationHistogram h;
  h.row_offsets = adv::grid_offsets(shape.height, geometry.square_size, geometry.square_stride);
  h.col_offsets = adv::grid_offsets(shape.width, geometry.square_size, geometry.square_stride);
  h.counts.assign(h.row_offsets.size() * h.col_offsets.size(), 0);
  for (const auto &o : outcomes) {
    const auto &r = o.mask.rect();
    if (!r || r->height != geometry.square_size || r->width != geometry.square_size)
      throw ConfigError("outcome of '" + o.attack + "' is not a square search window");
    const auto ri = std::find(h.row_offsets.begin(), h.row_offsets.end(), r->top);
    const auto ci = std::find(h.col_offsets.begin(), h.col_offsets.end(), r->left);
    if (ri == h.row_offsets.end() || ci == h.col_offsets.end())
      throw ConfigError("square window " + o.mask.descriptor() + " is off the search grid");
    const auto idx = static_cast<std::size_t>(ri - h.row_offsets.begin()) * h.col_offsets.size() +
                     static_cast<std::size_t>(ci - h.col_offsets.begin());
    ++h.counts[idx];
  }
  return h;
}

void write_heatmap(const LocationHistogram &hist, const std::filesystem::path &csv_path,
                   const std::filesystem::path &svg_path) {
  const std::size_t rows = hist.row_offsets.size();
  const std::size_t cols = hist.col_offsets.size();
  if (hist.counts.size() != rows * cols)
    throw ConfigError("histogram counts do not match its grid");
  {
    auto os = open_out(csv_path);
    os << "top,left,count\n";
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        os << hist.row_offsets[r] << ',' << hist.col_offsets[c] << ',' << hist.counts[r * cols + c] << '\n';
  }
  const long peak = hist.counts.empty() ? 0 : *std::max_element(hist.counts.begin(), hist.counts.end());
  constexpr int cell = 28;
  constexpr int margin = 40;
  const int w = margin + static_cast<int>(cols) * cell + 10;
  const int h = margin + static_cast<int>(rows) * cell + 10;
  auto os = open_out(svg_path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << margin << "\" y=\"16\" font-size=\"12\">best patch locations (n=" << hist.total()
     << ")</text>\n";
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const long n = hist.counts[r * cols + c];
      const int shade = peak > 0 ? 255 - static_cast<int>(std::lround(225.0 * static_cast<double>(n) / peak)) : 255;
      os << "<rect x=\"" << margin + static_cast<int>(c) * cell << "\" y=\"" << margin - 10 + static_cast<int>(r) * cell
         << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(255," << shade << ',' << shade
         << ")\" stroke=\"#ccc\"/>\n";
      if (n > 0)
        os << "<text x=\"" << margin + static_cast<int>(c) * cell + cell / 2 << "\" y=\""
           << margin - 10 + static_cast<int>(r) * cell + cell / 2 + 4 << "\" text-anchor=\"middle\" font-size=\"10\">"
           << n << "</text>\n";
    }
  os << "</svg>\n";
}

void write_image_grid(std::span<const LabeledImage> images, int columns, const std::filesystem::path &path,
                      int scale) {
  if (images.empty())
    throw ConfigError("image grid needs at least one image");
  if (columns < 1 || scale < 1)
    throw ConfigError("image grid needs columns >= 1 and scale >= 1");
  const ImageShape s = images.front().shape;
  if (s.channels != 1 && s.channels != 3)
    throw ConfigError("image grid supports 1 or 3 channels");
  const int cols = std::min<int>(columns, static_cast<int>(images.size()));
  const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  const int th = s.height * scale;
  const int tw = s.width * scale;
  cv::Mat canvas(rows * th, cols * tw, CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto &img = images[i];
    if (!(img.shape == s))
      throw ConfigError("image grid needs images of one shape");
    const int oy = static_cast<int>(i) / cols * th;
    const int ox = static_cast<int>(i) % cols * tw;
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x) {
        auto &px = canvas.at<cv::Vec3b>(oy + y, ox + x);
        for (int c = 0; c < 3; ++c) {
          const int src = s.channels == 3 ? c : 0;
          const float v = std::clamp(img.at(src, y / scale, x / scale), 0.0f, 1.0f);
          px[2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f)); // BGR
        }
      }
  }
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas))
    throw ConfigError("cannot write " + path.string());
}

std::string file_stem(const std::string &name) {
  std::string out;
  for (char c : name)
    out += std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ? c : '_';
  return out;
}

void emit_plots(const train::RunLog &log, const std::filesystem::path &dir) {
  if (log.empty())
    throw ConfigError("run log is empty");
  const auto series = runlog_series(log);
  write_line_svg(dir / "runlog.svg", "Real-pair loss during training", "step", "loss", series);
}

void emit_plots(const MetricReport &report, const std::filesystem::path &dir) {
  if (report.rows.empty())
    throw ConfigError("metric report is empty");
  for (const auto &row : report.rows) {
    if (row.scores.empty())
      continue;
    const std::string stem = file_stem(row.attack) + "_" + row.tta;
    Series roc{"AU-ROC " + fmt(row.au_roc), {}, {}};
    for (const auto &p : roc_curve(row.scores, row.labels)) {
      roc.x.push_back(p.x);
      roc.y.push_back(p.y);
    }
    write_line_svg(dir / ("roc_" + stem + ".svg"), "ROC " + row.attack + " (" + row.tta + ")", "false positive rate",
                   "true positive rate", std::span<const Series>(&roc, 1));
    Series pr{"AU-PR " + fmt(row.au_pr), {}, {}};
    for (const auto &p : pr_curve(row.scores, row.labels)) {
      pr.x.push_back(p.x);
      pr.y.push_back(p.y);
    }
    write_line_svg(dir / ("pr_" + stem + ".svg"), "PR " + row.attack + " (" + row.tta + ")", "recall", "precision",
                   std::span<const Series>(&pr, 1));
  }
}

void emit_plots(const LocationHistogram &hist, const std::filesystem::path &dir) {
  write_heatmap(hist, dir / "locations.csv", dir / "locations.svg");
}

} // namespace rfv::eval
