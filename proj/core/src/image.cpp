// SPDX-License-Identifier: Apache-2.0
#include "defas/image.hpp"

#include <algorithm>
#include <cmath>

namespace defas {

Image gaussian_blur(const Image& im, double radius) {
  if (radius <= 0.0) return im;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * radius)));
  std::vector<double> k(2 * r + 1);
  double ksum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * (i * i) / (radius * radius));
    ksum += k[i + r];
  }
  for (double& v : k) v /= ksum;

  const auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };

  Image tmp = Image::zeros(im.h, im.w, im.c);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int ch = 0; ch < im.c; ++ch) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * im.at(y, clampi(x + i, 0, im.w - 1), ch);
        tmp.at(y, x, ch) = acc;
      }
  Image out = Image::zeros(im.h, im.w, im.c);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int ch = 0; ch < im.c; ++ch) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(clampi(y + i, 0, im.h - 1), x, ch);
        out.at(y, x, ch) = acc;
      }
  return out;
}

}  // namespace defas
