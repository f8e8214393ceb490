// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "defas/image.hpp"
#include "defas/nn.hpp"

namespace defas {

using Json = nlohmann::json;

// ---- PNG ----

/// 8-bit grayscale (c=1) or RGB (c=3); values clamped to [0,1].
void write_png(const std::filesystem::path& path, const Image& im);
Image read_png(const std::filesystem::path& path);

/// 1-bit PNG; nonzero mask entries map to white.
void write_mask_png(const std::filesystem::path& path, const PixelMask& mask, int h, int w);
PixelMask read_mask_png(const std::filesystem::path& path, int* h = nullptr, int* w = nullptr);

// ---- flat little-endian float32 tensors ----

void write_f32(const std::filesystem::path& path, const Mat& m);
Mat read_f32(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);
void write_f32_vec(const std::filesystem::path& path, const Vec& v);
Vec read_f32_vec(const std::filesystem::path& path, Eigen::Index n);

// ---- JSON / JSONL ----

void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);
std::vector<Json> read_jsonl(const std::filesystem::path& path);

// ---- CSV ----

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void row_values(const std::vector<double>& cells);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  size_t width_;
};

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

// ---- checkpoints ----

/// Directory layout: manifest.json + one .f32 file per parameter tensor.
/// `extra` entries are merged into the manifest root (schedule, config hash,
/// trained flag, ...).
void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const Json& extra);

/// Overwrites values of an already-constructed ParamStore; shapes must match
/// the manifest. Returns the manifest.
Json load_checkpoint(const std::filesystem::path& dir, ParamStore& params);

/// Manifest without touching tensors (cheap existence/metadata probe).
Json read_checkpoint_manifest(const std::filesystem::path& dir);

}  // namespace defas
