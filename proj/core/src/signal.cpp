#include "skipseg/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "skipseg/common.hpp"

namespace skipseg::signal {

std::vector<double> median_filter(std::span<const double> x, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw Error("median filter window must be odd");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  if (n == 0) return out;
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> buf(window);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      const auto j = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) + k, 0,
                                                static_cast<std::ptrdiff_t>(n) - 1);
      buf[static_cast<std::size_t>(k + half)] = x[static_cast<std::size_t>(j)];
    }
    std::nth_element(buf.begin(), buf.begin() + half, buf.end());
    out[i] = buf[static_cast<std::size_t>(half)];
  }
  return out;
}

Biquad Biquad::butterworth_lowpass(double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 0.5)) throw Error("low-pass cutoff must lie in (0, 0.5) cycles/sample");
  const double k = std::tan(std::numbers::pi * cutoff);
  const double q = std::numbers::sqrt2 / 2.0;
  const double norm = 1.0 / (1.0 + k / q + k * k);
  Biquad f{};
  f.b0 = k * k * norm;
  f.b1 = 2.0 * f.b0;
  f.b2 = f.b0;
  f.a1 = 2.0 * (k * k - 1.0) * norm;
  f.a2 = (1.0 - k / q + k * k) * norm;
  return f;
}

namespace {

// Direct form II transposed, state primed for a constant input x0.
void run(const Biquad& f, std::vector<double>& y) {
  if (y.empty()) return;
  const double x0 = y.front();
  const double y0 = f.dc_gain() * x0;
  double z1 = y0 - f.b0 * x0;
  double z2 = f.b2 * x0 - f.a2 * y0;
  for (double& v : y) {
    const double in = v;
    const double out = f.b0 * in + z1;
    z1 = f.b1 * in - f.a1 * out + z2;
    z2 = f.b2 * in - f.a2 * out;
    v = out;
  }
}

}  // namespace

std::vector<double> filtfilt(const Biquad& f, std::span<const double> x, std::size_t pad) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  std::vector<double> y;
  y.reserve(n + 2 * pad);
  y.insert(y.end(), pad, x.front());
  y.insert(y.end(), x.begin(), x.end());
  y.insert(y.end(), pad, x.back());
  run(f, y);
  std::reverse(y.begin(), y.end());
  run(f, y);
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad),
          y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

double l2_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

}  // namespace skipseg::signal
