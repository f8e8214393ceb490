// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "defas/check.hpp"

namespace defas {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Dense H x W x C image, channel-interleaved, values nominally in [0,1].
/// The flat layout doubles as the latent code of the diffusion model.
struct Image {
  int h = 0, w = 0, c = 0;
  Vec data;

  static Image zeros(int h, int w, int c) {
    Image im;
    im.h = h;
    im.w = w;
    im.c = c;
    im.data = Vec::Zero(static_cast<Eigen::Index>(h) * w * c);
    return im;
  }

  int size() const { return h * w * c; }

  double& at(int y, int x, int ch) { return data[(static_cast<Eigen::Index>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const {
    return data[(static_cast<Eigen::Index>(y) * w + x) * c + ch];
  }

  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

/// Per-pixel boolean mask, h*w entries, row-major. Nonzero = masked.
using PixelMask = std::vector<uint8_t>;

inline void clamp01(Image& im) {
  im.data = im.data.cwiseMax(0.0).cwiseMin(1.0);
}

inline double image_mean(const Image& im) { return im.data.mean(); }

inline Eigen::Vector3d channel_means(const Image& im) {
  DEFAS_CHECK(im.c == 3, "channel_means expects 3 channels, got ", im.c);
  Eigen::Vector3d m = Eigen::Vector3d::Zero();
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int ch = 0; ch < 3; ++ch) m[ch] += im.at(y, x, ch);
  return m / (im.h * im.w);
}

/// Separable Gaussian blur, sigma = radius, kernel truncated at 3 sigma,
/// replicated borders. radius <= 0 returns the input unchanged.
Image gaussian_blur(const Image& im, double radius);

}  // namespace defas
