#pragma once

// Parallel-beam CT simulation and the linear-interpolation (LI) MAR baseline.
//
// Geometry: pixel (row y, col x) sits at world coordinates
// (x - (W-1)/2, (H-1)/2 - y). Detector bin j of a view at angle theta
// measures the line t = (j - (n_bins-1)/2), t = X cos(theta) + Y sin(theta).

#include <cstdint>
#include <string>
#include <utility>

#include "acdmar/tensor_ops.hpp"
#include "acdmar/wcd_model.hpp"

namespace acdmar {

using SinoArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SinoGeometry {
  int n_views = 180;
  int n_bins = 183;
  double arc_degrees = 180.0;  // views cover [0, arc)

  [[nodiscard]] double angle(int view) const;
  // ceil(sqrt(2) * size) + 1 bins, which covers the image diagonal.
  static SinoGeometry for_image(int size, int n_views, double arc_degrees = 180.0);
};

struct Sinogram {
  SinoGeometry geom;
  SinoArray values;  // n_views x n_bins

  Sinogram() = default;
  explicit Sinogram(const SinoGeometry& g);
};

Sinogram radon(const Plane& image, const SinoGeometry& geom);

// Ram-Lak filtering by direct spatial convolution, then linear-interpolated
// back-projection onto a size x size grid.
Plane fbp(const Sinogram& s, int image_size);

// Binary sinogram: 1 where radon(mask) exceeds 1e-9.
Sinogram metal_trace(const Plane& metal_mask, const SinoGeometry& geom);

struct InpaintResult {
  Sinogram sino;
  int edge_runs = 0;   // runs touching a row end, filled by nearest-value extension
  int full_rows = 0;   // rows with no clean bin, filled with 0
};

InpaintResult li_inpaint(const Sinogram& s, const Sinogram& trace);

struct HuWindow {
  double lo = -1000.0;
  double hi = 1000.0;
};

struct NormalizeResult {
  Plane image;
  long clipped = 0;  // pixels outside the window (kept unclipped when clip=false)
};

NormalizeResult hu_normalize(const Plane& image_hu, const HuWindow& window, bool clip = false);
Plane hu_denormalize(const Plane& image, const HuWindow& window);

// Metal pixels (1) where image_hu > threshold_hu.
Plane segment_metal(const Plane& image_hu, double threshold_hu = 2500.0);

enum class PhantomKind { SheppLogan, RandomEllipses };

PhantomKind parse_phantom_kind(const std::string& name);

// Normalized phantom with values in [0, 1].
Plane make_phantom(PhantomKind kind, int size, std::uint64_t seed);

// Random metal implant mask (1 = metal): one to three small ellipses placed
// inside the body, away from the image border. `scale` multiplies the radii.
Plane random_metal_mask(int size, std::uint64_t seed, double scale = 1.0);

struct Corruption {
  double trace_amplification = 1.3;
  double noise_level = 0.02;
};

struct SimConfig {
  int image_size = 128;
  int n_views = 180;
  double arc_degrees = 180.0;
  HuWindow hu_window;
  double metal_hu = 4000.0;
  Corruption corruption;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] SinoGeometry geometry() const;
  static SimConfig desk();
  static SimConfig paper();
};

// Inserts metal into the phantom, corrupts its sinogram along the metal trace
// (amplification plus trace-local noise) and reconstructs Y by FBP.
// X_gt = phantom, I = 1 - mask. Throws Error if metal lies outside the
// inscribed circle margin.
MaskedScene simulate_case(const Plane& phantom, const Plane& metal_mask, const SimConfig& cfg);

// fbp(li_inpaint(radon(Y), metal_trace(1 - I))).
Plane li_mar(const MaskedScene& scene, const SimConfig& cfg);

}  // namespace acdmar
