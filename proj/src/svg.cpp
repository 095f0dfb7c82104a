// Copyright 2026 The mmrm-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mmrm/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace mmrm::svg {

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

// White to dark blue.
std::string cell_color(double value) {
  const double t = std::clamp(value, 0.0, 1.0);
  const auto channel = [&](double lo, double hi) {
    return static_cast<int>(std::lround(hi + (lo - hi) * t));
  };
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", channel(8, 247), channel(48, 251),
                channel(107, 255));
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string header(int width, int height) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return out.str();
}

}  // namespace

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::string heatmap(const GenMatrix& m, const std::string& title) {
  const int cell = 70;
  const int left = 90;
  const int top = 60;
  const int n = static_cast<int>(m.envs.size());
  std::ostringstream out;
  out << header(left + n * cell + 20, top + n * cell + 50);
  out << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\">" << escape(title) << "</text>\n";
  out << "<text x=\"" << left + n * cell / 2 << "\" y=\"42\" text-anchor=\"middle\">test</text>\n";
  out << "<text x=\"20\" y=\"" << top + n * cell / 2 << "\">train</text>\n";
  for (int i = 0; i < n; ++i) {
    out << "<text x=\"" << left + i * cell + cell / 2 << "\" y=\"" << top - 4
        << "\" text-anchor=\"middle\">" << escape(m.envs[static_cast<std::size_t>(i)]) << "</text>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << top + i * cell + cell / 2 + 4
        << "\" text-anchor=\"end\">" << escape(m.envs[static_cast<std::size_t>(i)]) << "</text>\n";
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = m.acc[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      const int x = left + j * cell;
      const int y = top + i * cell;
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"" << cell_color(v) << "\" stroke=\"#444\"/>\n";
      out << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
          << "\" text-anchor=\"middle\" fill=\"" << (v > 0.6 ? "white" : "black") << "\">"
          << num(100.0 * v) << "</text>\n";
    }
  }
  out << "<text x=\"" << left << "\" y=\"" << top + n * cell + 30 << "\">i.i.d. "
      << num(100.0 * m.mean_diagonal()) << "  o.o.d. " << num(100.0 * m.mean_off_diagonal())
      << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series, bool log_x) {
  const int width = 560;
  const int height = 360;
  const int left = 60;
  const int right = 150;
  const int top = 40;
  const int bottom = 50;
  const int pw = width - left - right;
  const int ph = height - top - bottom;

  const auto tx = [&](double x) { return log_x ? std::log2(x) : x; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 > x0)) { x0 -= 1.0; x1 += 1.0; }
  if (!(y1 > y0)) { y0 -= 1.0; y1 += 1.0; }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream out;
  out << header(width, height);
  out << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\">" << escape(title) << "</text>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    out << "<text x=\"" << left - 6 << "\" y=\"" << num(py(yv) + 4)
        << "\" text-anchor=\"end\" font-size=\"10\">" << num(yv) << "</text>\n";
  }
  if (!series.empty()) {
    for (double xv : series.front().x) {
      out << "<text x=\"" << num(px(xv)) << "\" y=\"" << top + ph + 16
          << "\" text-anchor=\"middle\" font-size=\"10\">" << num(xv) << "</text>\n";
    }
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  out << "<text x=\"14\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 14 " << top + ph / 2
      << ")\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    out << "<path fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" d=\"";
    for (std::size_t i = 0; i < ser.x.size() && i < ser.y.size(); ++i) {
      out << (i == 0 ? 'M' : 'L') << num(px(ser.x[i])) << ',' << num(py(ser.y[i])) << ' ';
    }
    out << "\"/>\n";
    const int ly = top + 14 + static_cast<int>(s) * 18;
    out << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 30
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly << "\" font-size=\"11\">"
        << escape(ser.label) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace mmrm::svg
