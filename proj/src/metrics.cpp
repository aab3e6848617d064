#include "mcgkt/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "mcgkt/image.hpp"

namespace mcgkt {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shapes differ: " + a.shape().str() + " vs " +
                     b.shape().str());
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

const std::array<double, kWindow * kWindow>& gaussian_window() {
  static const auto window = [] {
    std::array<double, kWindow * kWindow> w{};
    double total = 0.0;
    for (int y = 0; y < kWindow; ++y)
      for (int x = 0; x < kWindow; ++x) {
        const double dy = y - (kWindow - 1) / 2.0, dx = x - (kWindow - 1) / 2.0;
        w[y * kWindow + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        total += w[y * kWindow + x];
      }
    for (double& v : w) v /= total;
    return w;
  }();
  return window;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  check_same_shape("psnr", a, b);
  double acc = 0.0;
  for (Index i = 0; i < a.numel(); ++i) {
    const double d = (static_cast<double>(a.values()[i]) - b.values()[i]) * 255.0;
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const Tensor& a, const Tensor& b) {
  check_same_shape("ssim", a, b);
  const Shape& s = a.shape();
  if (s.h < kWindow || s.w < kWindow)
    throw ConfigError("ssim: image " + s.str() + " is smaller than the 11x11 window");

  const auto& win = gaussian_window();
  double total = 0.0;
  for (Index c = 0; c < s.c; ++c) {
    const float* pa = a.values().data() + c * s.plane();
    const float* pb = b.values().data() + c * s.plane();
    double channel = 0.0;
    Index positions = 0;
    for (Index y = 0; y + kWindow <= s.h; ++y) {
      for (Index x = 0; x + kWindow <= s.w; ++x) {
        double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
        for (int wy = 0; wy < kWindow; ++wy) {
          for (int wx = 0; wx < kWindow; ++wx) {
            const double wgt = win[wy * kWindow + wx];
            const double va = pa[(y + wy) * s.w + (x + wx)] * 255.0;
            const double vb = pb[(y + wy) * s.w + (x + wx)] * 255.0;
            mx += wgt * va;
            my += wgt * vb;
            mxx += wgt * va * va;
            myy += wgt * vb * vb;
            mxy += wgt * va * vb;
          }
        }
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cov = mxy - mx * my;
        channel += ((2.0 * mx * my + kC1) * (2.0 * cov + kC2)) /
                   ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        ++positions;
      }
    }
    total += channel / static_cast<double>(positions);
  }
  return total / static_cast<double>(s.c);
}

namespace {

std::string format_value(double v) {
  if (std::isinf(v)) return "inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void finalize_means(EvalReport& r) {
  double psnr_acc = 0.0, ssim_acc = 0.0;
  for (const EvalRow& row : r.rows) {
    psnr_acc += row.psnr_db;
    ssim_acc += row.ssim;
  }
  const double n = static_cast<double>(r.rows.size());
  r.mean_psnr = r.rows.empty() ? 0.0 : psnr_acc / n;
  r.mean_ssim = r.rows.empty() ? 0.0 : ssim_acc / n;
}

}  // namespace

std::string EvalReport::csv() const {
  std::ostringstream os;
  os << "name,psnr_db,ssim\n";
  for (const EvalRow& r : rows)
    os << r.name << "," << format_value(r.psnr_db) << "," << format_value(r.ssim) << "\n";
  return os.str();
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << "name                          psnr (dB)      ssim\n";
  auto line = [&os](const std::string& name, double p, double s) {
    char buf[96];
    if (std::isinf(p))
      std::snprintf(buf, sizeof(buf), "%-28s %9s %9.4f\n", name.c_str(), "inf", s);
    else
      std::snprintf(buf, sizeof(buf), "%-28s %9.2f %9.4f\n", name.c_str(), p, s);
    os << buf;
  };
  for (const EvalRow& r : rows) line(r.name, r.psnr_db, r.ssim);
  line("mean", mean_psnr, mean_ssim);
  if (!unmatched.empty()) os << "warning: " << unmatched.size() << " unmatched stem(s) excluded\n";
  return os.str();
}

EvalReport evaluate(const std::vector<std::tuple<std::string, Tensor, Tensor>>& pairs) {
  EvalReport report;
  report.rows.resize(pairs.size());
#pragma omp parallel for schedule(static) if (pairs.size() > 1)
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [name, derained, clean] = pairs[i];
    report.rows[i] = EvalRow{name, psnr(derained, clean), ssim(derained, clean)};
  }
  std::sort(report.rows.begin(), report.rows.end(),
            [](const EvalRow& a, const EvalRow& b) { return a.name < b.name; });
  finalize_means(report);
  return report;
}

EvalReport evaluate_dir(const std::filesystem::path& derained_dir,
                        const std::filesystem::path& clean_dir) {
  namespace fs = std::filesystem;
  auto stems = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("eval: " + dir.string() + " is not a directory");
    std::set<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".png") out.insert(e.path().stem().string());
    return out;
  };
  const std::set<std::string> da = stems(derained_dir);
  const std::set<std::string> cb = stems(clean_dir);

  std::vector<std::tuple<std::string, Tensor, Tensor>> pairs;
  std::vector<std::string> unmatched;
  for (const std::string& stem : da) {
    if (cb.count(stem))
      pairs.emplace_back(stem, load_image(derained_dir / (stem + ".png")),
                         load_image(clean_dir / (stem + ".png")));
    else
      unmatched.push_back(stem);
  }
  for (const std::string& stem : cb)
    if (!da.count(stem)) unmatched.push_back(stem);

  EvalReport report = evaluate(pairs);
  std::sort(unmatched.begin(), unmatched.end());
  report.unmatched = std::move(unmatched);
  return report;
}

EvalReport parse_report_csv(const std::string& csv_text) {
  std::istringstream is(csv_text);
  std::string line;
  if (!std::getline(is, line) || line != "name,psnr_db,ssim")
    throw FormatError("eval csv: missing header");
  EvalReport report;
  auto parse_value = [](const std::string& tok) {
    return tok == "inf" ? std::numeric_limits<double>::infinity() : std::stod(tok);
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw FormatError("eval csv: malformed row: " + line);
    report.rows.push_back(EvalRow{line.substr(0, c1),
                                  parse_value(line.substr(c1 + 1, c2 - c1 - 1)),
                                  parse_value(line.substr(c2 + 1))});
  }
  finalize_means(report);
  return report;
}

}  // namespace mcgkt
