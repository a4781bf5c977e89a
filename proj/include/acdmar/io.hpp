#pragma once

// Raster interchange: little-endian float32, row-major, with JSON sidecars.
//
// A case bundle is a directory holding Y.raw, Xgt.raw, I.raw, optionally
// Xli.raw, and meta.json ({"height", "width", "case_id", ...}).

#include <filesystem>
#include <string>

#include "json.hpp"

#include "acdmar/ct_sim.hpp"
#include "acdmar/wcd_model.hpp"

namespace acdmar::io {

void write_raw(const std::filesystem::path& path, const Plane& image);
Plane read_raw(const std::filesystem::path& path, int height, int width);

// <stem>.raw plus <stem>.json carrying the geometry.
void write_sinogram(const std::filesystem::path& stem, const Sinogram& s);
Sinogram read_sinogram(const std::filesystem::path& stem);

struct CaseBundle {
  MaskedScene scene;
  nlohmann::json meta;
};

// meta gains "height" and "width"; X_gt and X_li are written when present.
void write_case(const std::filesystem::path& dir, const MaskedScene& scene, nlohmann::json meta);
CaseBundle read_case(const std::filesystem::path& dir);

// Case directories (those containing meta.json) under root, sorted by name.
std::vector<std::filesystem::path> list_cases(const std::filesystem::path& root);

// Writes text with a trailing newline; used for resolved configs and reports.
void write_text(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace acdmar::io
