#include "acdmar/io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "acdmar/error.hpp"

namespace acdmar::io {
namespace fs = std::filesystem;
namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

void write_f32(const fs::path& path, const double* data, std::size_t n) {
  std::vector<std::uint32_t> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(data[i])));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * 4));
  if (!os) throw Error("write failed: " + path.string());
}

void read_f32(const fs::path& path, double* data, std::size_t n) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw MissingInputError("missing raster " + path.string());
  const auto size = static_cast<std::size_t>(is.tellg());
  if (size != n * 4) {
    throw FormatError(path.string() + ": expected " + std::to_string(n * 4) + " bytes, found " +
                      std::to_string(size));
  }
  is.seekg(0);
  std::vector<std::uint32_t> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(to_le(buf[i]));
}

}  // namespace

void write_raw(const fs::path& path, const Plane& image) {
  write_f32(path, image.data(), static_cast<std::size_t>(image.size()));
}

Plane read_raw(const fs::path& path, int height, int width) {
  if (height < 1 || width < 1) throw FormatError("invalid raster shape for " + path.string());
  Plane p(height, width);
  read_f32(path, p.data(), static_cast<std::size_t>(p.size()));
  return p;
}

void write_sinogram(const fs::path& stem, const Sinogram& s) {
  write_f32(fs::path(stem.string() + ".raw"), s.values.data(), static_cast<std::size_t>(s.values.size()));
  nlohmann::json j{{"n_views", s.geom.n_views}, {"n_bins", s.geom.n_bins}, {"arc_degrees", s.geom.arc_degrees}};
  write_text(fs::path(stem.string() + ".json"), j.dump(2));
}

Sinogram read_sinogram(const fs::path& stem) {
  const auto j = read_json(fs::path(stem.string() + ".json"));
  SinoGeometry g;
  try {
    g.n_views = j.at("n_views").get<int>();
    g.n_bins = j.at("n_bins").get<int>();
    g.arc_degrees = j.at("arc_degrees").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sinogram sidecar " + stem.string() + ".json: " + e.what());
  }
  Sinogram s(g);
  read_f32(fs::path(stem.string() + ".raw"), s.values.data(), static_cast<std::size_t>(s.values.size()));
  return s;
}

void write_case(const fs::path& dir, const MaskedScene& scene, nlohmann::json meta) {
  scene.validate();
  fs::create_directories(dir);
  meta["height"] = scene.height();
  meta["width"] = scene.width();
  meta["has_xgt"] = scene.X_gt.has_value();
  meta["has_xli"] = scene.X_li.has_value();
  write_raw(dir / "Y.raw", scene.Y);
  write_raw(dir / "I.raw", scene.I);
  if (scene.X_gt) write_raw(dir / "Xgt.raw", *scene.X_gt);
  if (scene.X_li) write_raw(dir / "Xli.raw", *scene.X_li);
  write_text(dir / "meta.json", meta.dump(2));
}

CaseBundle read_case(const fs::path& dir) {
  CaseBundle b;
  b.meta = read_json(dir / "meta.json");
  int H = 0, W = 0;
  try {
    H = b.meta.at("height").get<int>();
    W = b.meta.at("width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "meta.json").string() + ": " + e.what());
  }
  b.scene.Y = read_raw(dir / "Y.raw", H, W);
  b.scene.I = read_raw(dir / "I.raw", H, W);
  if (fs::exists(dir / "Xgt.raw")) b.scene.X_gt = read_raw(dir / "Xgt.raw", H, W);
  if (fs::exists(dir / "Xli.raw")) b.scene.X_li = read_raw(dir / "Xli.raw", H, W);
  b.scene.validate();
  return b;
}

std::vector<fs::path> list_cases(const fs::path& root) {
  if (!fs::is_directory(root)) throw MissingInputError("not a directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingInputError("missing file " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace acdmar::io
