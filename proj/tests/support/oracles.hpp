#pragma once

// Test-only reference implementations. These are written as straight-line
// scalar code and share nothing with the library's Eigen-backed paths.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "pd/nn/network.hpp"
#include "pd/rng.hpp"

namespace pd::testing {

// Naive nested-loop forward pass over the canonical parameter layout.
inline std::vector<double> reference_forward(const nn::NetworkSpec& spec,
                                             const std::vector<double>& theta,
                                             const std::vector<double>& input) {
  std::vector<double> x = input;
  int c = spec.input_channels, h = spec.input_height, w = spec.input_width;
  std::size_t off = 0;
  for (const auto& conv : spec.conv_layers) {
    const int oh = (h - conv.kernel) / conv.stride + 1;
    const int ow = (w - conv.kernel) / conv.stride + 1;
    std::vector<double> y(static_cast<std::size_t>(conv.filters) * oh * ow);
    const std::size_t wsize = static_cast<std::size_t>(conv.filters) * c * conv.kernel * conv.kernel;
    for (int f = 0; f < conv.filters; ++f) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = theta[off + wsize + f];
          for (int ic = 0; ic < c; ++ic) {
            for (int ky = 0; ky < conv.kernel; ++ky) {
              for (int kx = 0; kx < conv.kernel; ++kx) {
                const double wt =
                    theta[off + ((static_cast<std::size_t>(f) * c + ic) * conv.kernel + ky) *
                                    conv.kernel +
                          kx];
                acc += wt * x[(static_cast<std::size_t>(ic) * h + oy * conv.stride + ky) * w +
                              ox * conv.stride + kx];
              }
            }
          }
          y[(static_cast<std::size_t>(f) * oh + oy) * ow + ox] = acc > 0 ? acc : 0.0;
        }
      }
    }
    off += wsize + conv.filters;
    x = std::move(y);
    c = conv.filters;
    h = oh;
    w = ow;
  }
  std::vector<int> widths = spec.dense_layers;
  widths.push_back(spec.output_units);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const int out = widths[l];
    const std::size_t in = x.size();
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
      double acc = theta[off + static_cast<std::size_t>(out) * in + o];
      for (std::size_t i = 0; i < in; ++i) acc += theta[off + o * in + i] * x[i];
      const bool last = l + 1 == widths.size();
      const bool relu = !last || spec.output_activation == nn::OutputActivation::kRelu;
      y[o] = relu && acc < 0 ? 0.0 : acc;
    }
    off += static_cast<std::size_t>(out) * in + out;
    x = std::move(y);
  }
  return x;
}

// Central finite difference of a scalar function of a vector.
inline std::vector<double> central_difference(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline bool gradient_close(double analytic, double numeric, double rel = 1e-4, double abs_floor = 1e-6) {
  const double diff = std::abs(analytic - numeric);
  return diff <= abs_floor || diff <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

// Upper 1% point of the chi-square distribution (Wilson-Hilferty).
inline double chi_square_critical_99(int dof) {
  const double k = dof;
  const double z = 2.3263478740408408;
  const double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  return k * t * t * t;
}

inline double chi_square_uniform(const std::vector<long>& counts) {
  long total = 0;
  for (long c : counts) total += c;
  const double expected = static_cast<double>(total) / counts.size();
  double stat = 0.0;
  for (long c : counts) stat += (c - expected) * (c - expected) / expected;
  return stat;
}

}  // namespace pd::testing
