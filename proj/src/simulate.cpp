#include <cmath>
#include <numbers>
#include <random>

#include "acdmar/ct_sim.hpp"
#include "acdmar/error.hpp"

namespace acdmar {
namespace {

struct Ellipse {
  double value, a, b, x0, y0, phi_deg;
};

// Modified Shepp-Logan (Toft) in normalized [-1, 1] coordinates.
constexpr Ellipse kSheppLogan[] = {
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},        {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},       {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},     {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
    {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},   {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
};

void add_ellipse(Plane& img, const Ellipse& e) {
  const int n = static_cast<int>(img.rows());
  const double phi = e.phi_deg * std::numbers::pi / 180.0;
  const double c = std::cos(phi), s = std::sin(phi);
  for (int y = 0; y < n; ++y) {
    const double Y = 1.0 - (2.0 * y + 1.0) / n;
    for (int x = 0; x < n; ++x) {
      const double X = (2.0 * x + 1.0) / n - 1.0;
      const double dx = X - e.x0, dy = Y - e.y0;
      const double u = dx * c + dy * s, v = -dx * s + dy * c;
      if ((u * u) / (e.a * e.a) + (v * v) / (e.b * e.b) <= 1.0) img(y, x) += e.value;
    }
  }
}

}  // namespace

PhantomKind parse_phantom_kind(const std::string& name) {
  if (name == "shepp_logan") return PhantomKind::SheppLogan;
  if (name == "random_ellipses") return PhantomKind::RandomEllipses;
  throw ConfigError("unknown phantom kind: " + name);
}

Plane make_phantom(PhantomKind kind, int size, std::uint64_t seed) {
  if (size < 1) throw DimensionError("phantom size must be positive");
  Plane img = Plane::Zero(size, size);
  if (kind == PhantomKind::SheppLogan) {
    for (const auto& e : kSheppLogan) add_ellipse(img, e);
    return img.max(0.0).min(1.0);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  // Body outline, then organs / vessels / bone-like inclusions.
  const double body_a = 0.72 + 0.12 * U(rng), body_b = 0.62 + 0.12 * U(rng);
  add_ellipse(img, {0.45 + 0.1 * U(rng), body_a, body_b, 0.0, 0.0, 20.0 * (U(rng) - 0.5)});
  const int n_inner = 5 + static_cast<int>(U(rng) * 6);
  for (int i = 0; i < n_inner; ++i) {
    const double r = 0.5 * std::sqrt(U(rng));
    const double ang = 2 * std::numbers::pi * U(rng);
    const double a = 0.04 + 0.2 * U(rng), b = 0.04 + 0.2 * U(rng);
    double val = 0.35 * (U(rng) - 0.4);
    if (U(rng) < 0.2) val = 0.4 + 0.1 * U(rng);  // dense, bone-like
    add_ellipse(img, {val, a, b, r * std::cos(ang) * body_a, r * std::sin(ang) * body_b,
                      180.0 * U(rng)});
  }
  return img.max(0.0).min(1.0);
}

Plane random_metal_mask(int size, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Plane mask = Plane::Zero(size, size);
  const int n_objects = 1 + static_cast<int>(U(rng) * 3);
  const double px = 2.0 / size;  // normalized units per pixel
  for (int i = 0; i < n_objects; ++i) {
    const double r = 0.45 * std::sqrt(U(rng));
    const double ang = 2 * std::numbers::pi * U(rng);
    const double ra = scale * (1.0 + 3.5 * U(rng)) * (size / 64.0) * px;
    const double rb = ra * (0.5 + 0.5 * U(rng));
    Plane e = Plane::Zero(size, size);
    add_ellipse(e, {1.0, ra, rb, r * std::cos(ang), r * std::sin(ang), 180.0 * U(rng)});
    mask = mask.max(e);
  }
  // Guarantee at least one pixel for very small radii.
  if (mask.sum() == 0) {
    mask(size / 2, size / 2) = 1.0;
  }
  return mask;
}

NormalizeResult hu_normalize(const Plane& image_hu, const HuWindow& w, bool clip) {
  if (!(w.hi > w.lo)) throw ConfigError("hu_window requires lo < hi");
  NormalizeResult r;
  r.image = (image_hu - w.lo) / (w.hi - w.lo);
  r.clipped = static_cast<long>(((r.image < 0.0) || (r.image > 1.0)).count());
  if (clip) r.image = r.image.max(0.0).min(1.0);
  return r;
}

Plane hu_denormalize(const Plane& image, const HuWindow& w) { return image * (w.hi - w.lo) + w.lo; }

Plane segment_metal(const Plane& image_hu, double threshold_hu) {
  return (image_hu > threshold_hu).cast<double>();
}

void SimConfig::validate() const {
  if (image_size < 32) throw ConfigError("image_size must be >= 32");
  if (n_views < 2) throw ConfigError("n_views must be >= 2");
  if (corruption.trace_amplification < 1.0) throw ConfigError("trace_amplification must be >= 1");
  if (corruption.noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
  if (!(hu_window.hi > hu_window.lo)) throw ConfigError("hu_window requires lo < hi");
}

SinoGeometry SimConfig::geometry() const {
  return SinoGeometry::for_image(image_size, n_views, arc_degrees);
}

SimConfig SimConfig::desk() { return SimConfig{}; }

SimConfig SimConfig::paper() {
  SimConfig c;
  c.image_size = 416;
  c.n_views = 640;
  c.arc_degrees = 360.0;
  return c;
}

MaskedScene simulate_case(const Plane& phantom, const Plane& metal_mask, const SimConfig& cfg) {
  cfg.validate();
  if (phantom.rows() != cfg.image_size || phantom.cols() != cfg.image_size ||
      metal_mask.rows() != cfg.image_size || metal_mask.cols() != cfg.image_size) {
    throw DimensionError("simulate_case: phantom/mask must be image_size x image_size");
  }
  const int n = cfg.image_size;
  const double c0 = (n - 1) / 2.0, r_max = n / 2.0 - 2.0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (metal_mask(y, x) > 0.5 && std::hypot(y - c0, x - c0) > r_max) {
        throw Error("simulate_case: metal mask overlaps the image border region");
      }
    }
  }
  const SinoGeometry geom = cfg.geometry();
  const double metal_value = (cfg.metal_hu - cfg.hu_window.lo) / (cfg.hu_window.hi - cfg.hu_window.lo);
  const Plane with_metal = (metal_mask > 0.5).select(Plane::Constant(n, n, metal_value), phantom);

  Sinogram s = radon(with_metal, geom);
  const Sinogram trace = metal_trace(metal_mask, geom);
  const double a = cfg.corruption.trace_amplification;
  s.values += (a - 1.0) * s.values * trace.values;

  if (cfg.corruption.noise_level > 0) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> N(0.0, 1.0);
    const int nb = geom.n_bins;
    for (int v = 0; v < geom.n_views; ++v) {
      for (int j = 0; j < nb; ++j) {
        const bool near = trace.values(v, j) > 0.5 || (j > 0 && trace.values(v, j - 1) > 0.5) ||
                          (j + 1 < nb && trace.values(v, j + 1) > 0.5);
        if (!near) continue;
        s.values(v, j) += cfg.corruption.noise_level * std::sqrt(std::max(s.values(v, j), 0.0)) * N(rng);
      }
    }
  }

  MaskedScene scene;
  scene.Y = fbp(s, n);
  scene.X_gt = phantom;
  scene.I = (metal_mask > 0.5).select(Plane::Zero(n, n), Plane::Ones(n, n));
  return scene;
}

Plane li_mar(const MaskedScene& scene, const SimConfig& cfg) {
  const int n = scene.height();
  const SinoGeometry geom = SinoGeometry::for_image(n, cfg.n_views, cfg.arc_degrees);
  const Plane metal = 1.0 - scene.I;
  const Sinogram s = radon(scene.Y, geom);
  const InpaintResult filled = li_inpaint(s, metal_trace(metal, geom));
  return fbp(filled.sino, n);
}

}  // namespace acdmar
