#include "lpgftw/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lpgftw/serialization.hpp"

namespace lpgftw {

namespace {

void mean_and_se(const std::vector<double>& v, double& mean, double& se) {
  mean = 0.0;
  se = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

struct Scale {
  double lo, hi, px_lo, px_hi;
  double operator()(double v) const {
    if (hi == lo) return 0.5 * (px_lo + px_hi);
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
};

std::string header(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"15\">"
     << escape(title) << "</text>\n";
  return os.str();
}

std::string axes(const Scale& x, const Scale& y, const std::string& xlabel,
                 const std::string& ylabel) {
  std::ostringstream os;
  os << "<g stroke=\"black\" fill=\"none\">\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight
     << "\" y2=\"" << kH - kBottom << "\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
     << kH - kBottom << "\"/>\n</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(y(v) + 4)
       << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  if (x.hi > x.lo) {
    for (int i = 0; i <= 4; ++i) {
      const double v = x.lo + (x.hi - x.lo) * i / 4.0;
      os << "<text x=\"" << num(x(v)) << "\" y=\"" << kH - kBottom + 16
         << "\" text-anchor=\"middle\">" << num(v) << "</text>\n";
    }
  }
  os << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 12
     << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n"
     << "<text transform=\"translate(16," << (kTop + kH - kBottom) / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n</g>\n";
  return os.str();
}

}  // namespace

CurveSeries aggregate_curves(const std::vector<CurveRow>& rows, int first_task) {
  // seed -> iteration -> (sum, count)
  std::map<std::int64_t, std::map<int, std::pair<double, int>>> per_seed;
  for (const auto& r : rows) {
    if (r.task_index < first_task || !std::isfinite(r.mean_return)) continue;
    auto& cell = per_seed[r.seed][r.iteration];
    cell.first += r.mean_return;
    ++cell.second;
  }
  std::map<int, std::vector<double>> per_iter;
  for (const auto& [seed, iters] : per_seed)
    for (const auto& [it, cell] : iters) per_iter[it].push_back(cell.first / cell.second);
  CurveSeries s;
  for (const auto& [it, vals] : per_iter) {
    double m, se;
    mean_and_se(vals, m, se);
    s.iteration.push_back(it);
    s.mean.push_back(m);
    s.std_error.push_back(se);
  }
  return s;
}

BarSeries aggregate_bars(const std::vector<TaskRow>& rows) {
  BarSeries b;
  b.labels = {"start", "tune", "update", "final"};
  std::map<std::int64_t, std::vector<std::array<double, 4>>> per_seed;
  for (const auto& r : rows) {
    const std::array<double, 4> v = {r.start_return, r.tune_return, r.update_return,
                                     r.final_return};
    if (std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }))
      per_seed[r.seed].push_back(v);
  }
  for (int phase = 0; phase < 4; ++phase) {
    std::vector<double> seed_means;
    for (const auto& [seed, vals] : per_seed) {
      double sum = 0.0;
      for (const auto& v : vals) sum += v[phase];
      seed_means.push_back(sum / static_cast<double>(vals.size()));
    }
    double m, se;
    mean_and_se(seed_means, m, se);
    b.mean.push_back(m);
    b.std_error.push_back(se);
  }
  return b;
}

std::string learning_curve_svg(const CurveSeries& s, const std::string& title) {
  const nlohmann::json meta = {
      {"iteration", s.iteration}, {"mean", s.mean}, {"std_error", s.std_error}};
  std::ostringstream os;
  os << header(title) << "<metadata id=\"series\">" << meta.dump() << "</metadata>\n";
  if (s.iteration.empty()) {
    os << "<text x=\"" << kW / 2 << "\" y=\"" << kH / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\">no data</text>\n</svg>\n";
    return os.str();
  }
  double lo = s.mean[0] - s.std_error[0], hi = s.mean[0] + s.std_error[0];
  for (std::size_t i = 0; i < s.mean.size(); ++i) {
    lo = std::min(lo, s.mean[i] - s.std_error[i]);
    hi = std::max(hi, s.mean[i] + s.std_error[i]);
  }
  const Scale x{static_cast<double>(s.iteration.front()), static_cast<double>(s.iteration.back()),
                kLeft, kW - kRight};
  const Scale y{lo, hi, kH - kBottom, kTop};
  os << axes(x, y, "iteration", "mean training return");

  os << "<polygon id=\"band\" fill=\"steelblue\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
  for (std::size_t i = 0; i < s.mean.size(); ++i)
    os << num(x(s.iteration[i])) << ',' << num(y(s.mean[i] + s.std_error[i])) << ' ';
  for (std::size_t i = s.mean.size(); i-- > 0;)
    os << num(x(s.iteration[i])) << ',' << num(y(s.mean[i] - s.std_error[i])) << ' ';
  os << "\"/>\n<polyline id=\"mean\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < s.mean.size(); ++i)
    os << num(x(s.iteration[i])) << ',' << num(y(s.mean[i])) << ' ';
  os << "\"/>\n</svg>\n";
  return os.str();
}

std::string bar_svg(const BarSeries& b, const std::string& title) {
  const nlohmann::json meta = {{"labels", b.labels}, {"mean", b.mean}, {"std_error", b.std_error}};
  std::ostringstream os;
  os << header(title) << "<metadata id=\"series\">" << meta.dump() << "</metadata>\n";
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < b.mean.size(); ++i) {
    lo = std::min(lo, b.mean[i] - b.std_error[i]);
    hi = std::max(hi, b.mean[i] + b.std_error[i]);
  }
  const Scale y{lo, hi, kH - kBottom, kTop};
  const Scale x{0.0, 0.0, kLeft, kW - kRight};
  os << axes(x, y, "phase", "mean return");
  const double slot = (kW - kRight - kLeft) / std::max<std::size_t>(b.mean.size(), 1);
  for (std::size_t i = 0; i < b.mean.size(); ++i) {
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    const double top = std::min(y(b.mean[i]), y(0.0)), bottom = std::max(y(b.mean[i]), y(0.0));
    os << "<rect x=\"" << num(cx - slot * 0.3) << "\" y=\"" << num(top) << "\" width=\""
       << num(slot * 0.6) << "\" height=\"" << num(bottom - top)
       << "\" fill=\"steelblue\"/>\n"
       << "<line stroke=\"black\" x1=\"" << num(cx) << "\" x2=\"" << num(cx) << "\" y1=\""
       << num(y(b.mean[i] - b.std_error[i])) << "\" y2=\"" << num(y(b.mean[i] + b.std_error[i]))
       << "\"/>\n"
       << "<text x=\"" << num(cx) << "\" y=\"" << kH - kBottom + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
       << escape(b.labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_plots(const std::vector<TaskRow>& rows, const std::vector<CurveRow>& curves,
                 int first_task, const std::string& title, const std::filesystem::path& dir) {
  write_file_atomic(dir / "learning_curve.svg",
                    learning_curve_svg(aggregate_curves(curves, first_task), title));
  write_file_atomic(dir / "phase_bars.svg", bar_svg(aggregate_bars(rows), title));
}

}  // namespace lpgftw
