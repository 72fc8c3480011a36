#include "repolab/cli/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::cli {

FigureFormat parse_figure_format(const std::string& name) {
  if (name == "csv") return FigureFormat::Csv;
  if (name == "svg") return FigureFormat::Svg;
  throw Error(ErrorKind::UnsupportedArtifact, "figure format '" + name + "' (csv or svg)");
}

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_open = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    row_open = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      table.push_back(std::move(row));
      row.clear();
      row_open = false;
    } else {
      field += c;
    }
  }
  if (row_open) {
    row.push_back(std::move(field));
    table.push_back(std::move(row));
  }
  return table;
}

namespace {

std::string csv_field(const std::string& f) {
  if (f.find_first_of(",\"\n") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

std::string write_csv(const CsvTable& table) {
  std::string out;
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_field(row[i]);
    out += "\n";
  }
  return out;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Sequential white-to-red ramp on [0, 1].
std::string ramp(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  char buf[16];
  const int g = static_cast<int>(std::lround(255.0 * (1.0 - t)));
  std::snprintf(buf, sizeof buf, "#ff%02x%02x", g, g);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

struct Frame {
  double width = 640, height = 420, left = 70, right = 150, top = 40, bottom = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

void widen(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
}

std::string open_svg(const Frame& f, const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.width) + "\" height=\"" + num(f.height) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + num(f.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" + xml_escape(title) +
         "</text>\n";
}

std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  std::string s;
  const double xa = f.px(f.x0), xb = f.px(f.x1), ya = f.py(f.y0), yb = f.py(f.y1);
  s += "<line x1=\"" + num(xa) + "\" y1=\"" + num(ya) + "\" x2=\"" + num(xb) + "\" y2=\"" + num(ya) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(xa) + "\" y1=\"" + num(ya) + "\" x2=\"" + num(xa) + "\" y2=\"" + num(yb) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(ya + 16) + "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
    s += "<text x=\"" + num(xa - 6) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
  }
  s += "<text x=\"" + num((xa + xb) / 2) + "\" y=\"" + num(f.height - 15) + "\" text-anchor=\"middle\">" +
       xml_escape(xlabel) + "</text>\n";
  s += "<text transform=\"translate(18," + num((ya + yb) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       xml_escape(ylabel) + "</text>\n";
  return s;
}

std::string legend(const Frame& f, int index, const std::string& label, const std::string& color, bool dashed) {
  const double y = f.top + 10 + 16 * index;
  const double x = f.width - f.right + 12;
  return "<line x1=\"" + num(x) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x + 18) + "\" y2=\"" + num(y) +
         "\" stroke=\"" + color + "\" stroke-width=\"2\"" + (dashed ? " stroke-dasharray=\"4 3\"" : "") +
         "/>\n<text x=\"" + num(x + 24) + "\" y=\"" + num(y + 4) + "\">" + xml_escape(label) + "</text>\n";
}

std::string polyline(const Frame& f, const std::vector<double>& x, const std::vector<double>& y,
                     const std::string& color, bool dashed) {
  std::string pts;
  for (std::size_t i = 0; i < x.size(); ++i) pts += (i ? " " : "") + num(f.px(x[i])) + "," + num(f.py(y[i]));
  return "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"" +
         (dashed ? " stroke-dasharray=\"4 3\"" : "") + " points=\"" + pts + "\"/>\n";
}

// ---- drift map

std::string drift_csv(const analysis::DriftMap& m) {
  CsvTable t;
  std::vector<std::string> header{"layer"};
  for (std::size_t j = 0; j < m.n_tokens(); ++j) {
    header.push_back(j < m.tokens.size() ? std::to_string(j) + ":" + m.tokens[j] : std::to_string(j));
  }
  t.push_back(header);
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    std::vector<std::string> row{std::to_string(l + 1)};
    for (double v : m.values[l]) row.push_back(format_double(v));
    t.push_back(row);
  }
  return write_csv(t);
}

std::string drift_svg(const analysis::DriftMap& m) {
  const std::size_t rows = m.n_layers(), cols = m.n_tokens();
  double hi = 0.0;
  for (const auto& r : m.values) {
    for (double v : r) hi = std::max(hi, v);
  }
  const double cell = 28, left = 60, top = 40;
  Frame f;
  f.width = left + cell * static_cast<double>(cols) + 90;
  f.height = top + cell * static_cast<double>(rows) + 90;
  std::string s = open_svg(f, std::string("1 - cos drift (") + analysis::to_string(m.kind) + ")");
  for (std::size_t l = 0; l < rows; ++l) {
    // Deepest block on top.
    const double y = top + cell * static_cast<double>(rows - 1 - l);
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = m.values[l][j];
      s += "<rect x=\"" + num(left + cell * static_cast<double>(j)) + "\" y=\"" + num(y) + "\" width=\"" + num(cell) +
           "\" height=\"" + num(cell) + "\" fill=\"" + ramp(hi > 0.0 ? v / hi : 0.0) + "\"><title>" + num(v) +
           "</title></rect>\n";
    }
    s += "<text x=\"" + num(left - 6) + "\" y=\"" + num(y + cell / 2 + 4) + "\" text-anchor=\"end\">" +
         std::to_string(l + 1) + "</text>\n";
  }
  const double base = top + cell * static_cast<double>(rows);
  for (std::size_t j = 0; j < cols; ++j) {
    const std::string label = j < m.tokens.size() ? m.tokens[j] : std::to_string(j);
    const double x = left + cell * (static_cast<double>(j) + 0.5);
    s += "<text transform=\"translate(" + num(x) + "," + num(base + 10) + ") rotate(60)\">" + xml_escape(label) +
         "</text>\n";
  }
  s += "<text x=\"" + num(left + cell * static_cast<double>(cols) / 2) + "\" y=\"" + num(f.height - 8) +
       "\" text-anchor=\"middle\">token</text>\n";
  s += "<text transform=\"translate(16," + num(top + cell * static_cast<double>(rows) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">layer</text>\n";
  s += "<text x=\"" + num(left + cell * static_cast<double>(cols) + 8) + "\" y=\"" + num(top + 12) + "\">max " +
       num(hi) + "</text>\n";
  return s + "</svg>\n";
}

// ---- alignment curves

std::string curves_csv(const AlignmentCurves& curves) {
  CsvTable t{{"group", "neuron", "cosine", "activation-change", "smoothed"}};
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      t.push_back({analysis::to_string(c.group), std::to_string(c.neurons[i]), format_double(c.x[i]),
                   format_double(c.y_raw[i]), format_double(c.y[i])});
    }
  }
  return write_csv(t);
}

std::string curves_svg(const AlignmentCurves& curves) {
  Frame f;
  f.x0 = 1e300, f.x1 = -1e300, f.y0 = 0.0, f.y1 = -1e300;
  for (const auto& c : curves) {
    for (double v : c.x) f.x0 = std::min(f.x0, v), f.x1 = std::max(f.x1, v);
    for (double v : c.y) f.y1 = std::max(f.y1, v);
  }
  if (f.x0 > f.x1) f.x0 = -1, f.x1 = 1;
  if (f.y1 < f.y0) f.y1 = 1;
  widen(f.x0, f.x1);
  widen(f.y0, f.y1);
  std::string s = open_svg(f, "activation change vs toxic alignment");
  s += axes(f, "cosine with toxic direction", "mean |activation change| (smoothed)");
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const std::string color = kPalette[i % 8];
    s += polyline(f, curves[i].x, curves[i].y, color, false);
    s += legend(f, static_cast<int>(i), analysis::to_string(curves[i].group), color, false);
  }
  return s + "</svg>\n";
}

// ---- trade-off scatter

std::string scatter_svg(const evalkit::ScatterData& d) {
  Frame f;
  f.x0 = f.x1 = d.guide;
  f.y0 = 0.0;
  f.y1 = 0.0;
  for (const auto& p : d.points) {
    f.x0 = std::min(f.x0, p.x), f.x1 = std::max(f.x1, p.x), f.y1 = std::max(f.y1, p.y);
  }
  widen(f.x0, f.x1);
  widen(f.y0, f.y1);
  std::string s = open_svg(f, "toxicity vs utility");
  s += axes(f, evalkit::to_string(d.axis), "toxicity");
  s += "<line x1=\"" + num(f.px(d.guide)) + "\" y1=\"" + num(f.py(f.y0)) + "\" x2=\"" + num(f.px(d.guide)) +
       "\" y2=\"" + num(f.py(f.y1)) + "\" stroke=\"gray\" stroke-dasharray=\"5 4\"/>\n";
  s += "<circle cx=\"" + num(f.px(d.ideal_x)) + "\" cy=\"" + num(f.py(d.ideal_y)) +
       "\" r=\"6\" fill=\"none\" stroke=\"gray\"><title>ideal</title></circle>\n";
  std::map<std::string, std::string> colors;
  for (const auto& p : d.points) colors.emplace(p.eval_set, kPalette[colors.size() % 8]);
  for (const auto& p : d.points) {
    s += "<circle cx=\"" + num(f.px(p.x)) + "\" cy=\"" + num(f.py(p.y)) + "\" r=\"4\" fill=\"" + colors[p.eval_set] +
         "\"/>\n<text x=\"" + num(f.px(p.x) + 6) + "\" y=\"" + num(f.py(p.y) - 4) + "\">" + xml_escape(p.method) +
         "</text>\n";
  }
  int i = 0;
  for (const auto& [set, color] : colors) {
    s += "<circle cx=\"" + num(f.width - f.right + 20) + "\" cy=\"" + num(f.top + 10 + 16 * i) + "\" r=\"4\" fill=\"" +
         color + "\"/>\n<text x=\"" + num(f.width - f.right + 30) + "\" y=\"" + num(f.top + 14 + 16 * i) + "\">" +
         xml_escape(set) + "</text>\n";
    ++i;
  }
  return s + "</svg>\n";
}

// ---- relearn sweep

std::string sweep_svg(const SweepTable& rows) {
  std::map<std::pair<std::string, std::string>, std::vector<const attacks::SweepRow*>> series;
  Frame f;
  f.x0 = 1e300, f.x1 = -1e300, f.y0 = 0.0, f.y1 = 0.0;
  for (const auto& r : rows) {
    series[{r.method, r.eval_set}].push_back(&r);
    f.x0 = std::min(f.x0, double(r.subset_size)), f.x1 = std::max(f.x1, double(r.subset_size));
    f.y1 = std::max(f.y1, r.mean_toxicity + r.stderr_toxicity);
    if (r.baseline) f.y1 = std::max(f.y1, *r.baseline);
  }
  if (f.x0 > f.x1) f.x0 = 0, f.x1 = 1;
  widen(f.x0, f.x1);
  widen(f.y0, f.y1);
  std::string s = open_svg(f, "relearning attack sweep");
  s += axes(f, "relearn subset size", "mean toxicity");
  int i = 0;
  for (auto& [key, pts] : series) {
    std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->subset_size < b->subset_size; });
    const std::string color = kPalette[i % 8];
    std::vector<double> x, y;
    for (const auto* p : pts) {
      x.push_back(p->subset_size);
      y.push_back(p->mean_toxicity);
      s += "<line x1=\"" + num(f.px(p->subset_size)) + "\" y1=\"" + num(f.py(p->mean_toxicity - p->stderr_toxicity)) +
           "\" x2=\"" + num(f.px(p->subset_size)) + "\" y2=\"" + num(f.py(p->mean_toxicity + p->stderr_toxicity)) +
           "\" stroke=\"" + color + "\"/>\n";
    }
    s += polyline(f, x, y, color, false);
    if (pts.front()->baseline) {
      const double b = *pts.front()->baseline;
      s += polyline(f, {f.x0, f.x1}, {b, b}, color, true);
    }
    s += legend(f, i, key.first + " / " + key.second, color, false);
    ++i;
  }
  return s + "</svg>\n";
}

}  // namespace

std::string render_figure(const Artifact& artifact, FigureFormat format) {
  const bool csv = format == FigureFormat::Csv;
  if (const auto* m = std::get_if<analysis::DriftMap>(&artifact)) return csv ? drift_csv(*m) : drift_svg(*m);
  if (const auto* c = std::get_if<AlignmentCurves>(&artifact)) return csv ? curves_csv(*c) : curves_svg(*c);
  if (const auto* d = std::get_if<evalkit::ScatterData>(&artifact)) {
    return csv ? evalkit::scatter_csv(*d) : scatter_svg(*d);
  }
  if (const auto* r = std::get_if<SweepTable>(&artifact)) return csv ? attacks::sweep_csv(*r) : sweep_svg(*r);
  throw Error(ErrorKind::UnsupportedArtifact, "artifact has no figure form");
}

void emit_figure(const Artifact& artifact, FigureFormat format, const std::filesystem::path& path) {
  write_file(path, render_figure(artifact, format));
}

}  // namespace repolab::cli
