#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "lorafuse/report.hpp"

namespace lorafuse::report {

namespace {

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape(std::string_view text) {
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

// White to deep blue.
std::string shade(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const auto channel = [&](double lo, double hi) {
    return static_cast<int>(std::lround(lo + (hi - lo) * v));
  };
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", channel(255, 8), channel(255, 48),
                channel(255, 107));
  return buf;
}

constexpr std::array<const char*, 10> kPalette{"#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
                                               "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
                                               "#9c755f", "#bab0ac"};

}  // namespace

std::string heatmap_svg(const ContributionMatrix& m, std::string_view title, double mask_below) {
  const double cell = 36.0, left = 140.0, top = 130.0;
  const double width = left + cell * static_cast<double>(m.cols.size()) + 20.0;
  const double height = top + cell * static_cast<double>(m.rows.size()) + 20.0;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width, 0) << "\" height=\""
    << fixed(height, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<defs><pattern id=\"na\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\">"
       "<path d=\"M0,6 L6,0\" stroke=\"#999\" stroke-width=\"1\"/></pattern></defs>\n";
  s << "<text x=\"10\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (std::size_t c = 0; c < m.cols.size(); ++c) {
    const double x = left + cell * (static_cast<double>(c) + 0.5);
    s << "<text transform=\"translate(" << fixed(x) << "," << fixed(top - 6)
      << ") rotate(-60)\">" << escape(m.cols[c]) << "</text>\n";
  }
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    const double y = top + cell * static_cast<double>(r);
    s << "<text x=\"" << fixed(left - 6) << "\" y=\"" << fixed(y + cell * 0.6)
      << "\" text-anchor=\"end\">" << escape(m.rows[r]) << "</text>\n";
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      const double x = left + cell * static_cast<double>(c);
      const auto& v = m.cells[r][c];
      const std::string fill = !v ? "url(#na)" : shade(*v);
      s << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" width=\"" << fixed(cell)
        << "\" height=\"" << fixed(cell) << "\" fill=\"" << fill << "\" stroke=\"#ddd\"/>\n";
      if (v && *v >= mask_below) {
        s << "<text x=\"" << fixed(x + cell / 2) << "\" y=\"" << fixed(y + cell * 0.6)
          << "\" text-anchor=\"middle\" fill=\"" << (*v > 0.5 ? "#fff" : "#000") << "\">"
          << fixed(*v) << "</text>\n";
      }
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::string pie_svg(std::span<const std::pair<std::string, double>> slices,
                    std::string_view title, double min_share) {
  double total = 0.0;
  for (const auto& [name, w] : slices) {
    if (!(w >= 0.0)) throw UsageError("pie: negative or NaN weight for '" + name + "'");
    total += w;
  }
  if (!(total > 0.0)) throw UsageError("pie: weights sum to zero");

  std::vector<std::pair<std::string, double>> shown;
  double other = 0.0;
  for (const auto& [name, w] : slices) {
    if (w / total >= min_share) {
      shown.emplace_back(name, w / total);
    } else {
      other += w / total;
    }
  }
  std::stable_sort(shown.begin(), shown.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (other > 0.0) shown.emplace_back("other", other);

  const double cx = 150.0, cy = 170.0, radius = 120.0;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"460\" height=\""
    << fixed(std::max(320.0, 60.0 + 20.0 * static_cast<double>(shown.size())), 0)
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"10\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
  double angle = -std::numbers::pi / 2;
  for (std::size_t i = 0; i < shown.size(); ++i) {
    const char* color = kPalette[i % kPalette.size()];
    const double sweep = shown[i].second * 2 * std::numbers::pi;
    if (shown[i].second >= 1.0 - 1e-12) {
      s << "<circle cx=\"" << fixed(cx) << "\" cy=\"" << fixed(cy) << "\" r=\"" << fixed(radius)
        << "\" fill=\"" << color << "\"/>\n";
    } else {
      const double x0 = cx + radius * std::cos(angle), y0 = cy + radius * std::sin(angle);
      const double x1 = cx + radius * std::cos(angle + sweep);
      const double y1 = cy + radius * std::sin(angle + sweep);
      s << "<path d=\"M" << fixed(cx) << "," << fixed(cy) << " L" << fixed(x0) << "," << fixed(y0)
        << " A" << fixed(radius) << "," << fixed(radius) << " 0 "
        << (sweep > std::numbers::pi ? 1 : 0) << ",1 " << fixed(x1) << "," << fixed(y1)
        << " Z\" fill=\"" << color << "\" stroke=\"#fff\"/>\n";
    }
    angle += sweep;
    const double ly = 50.0 + 20.0 * static_cast<double>(i);
    s << "<rect x=\"290\" y=\"" << fixed(ly - 10) << "\" width=\"12\" height=\"12\" fill=\""
      << color << "\"/>\n";
    s << "<text x=\"308\" y=\"" << fixed(ly) << "\">" << escape(shown[i].first) << " "
      << fixed(100.0 * shown[i].second, 1) << "%</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace lorafuse::report
