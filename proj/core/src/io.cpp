// SPDX-License-Identifier: Apache-2.0
#include "defas/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>

namespace defas {

namespace fs = std::filesystem;

namespace {

struct FileHandle {
  FILE* fp = nullptr;
  explicit FileHandle(const fs::path& p, const char* mode) : fp(std::fopen(p.c_str(), mode)) {}
  ~FileHandle() {
    if (fp) std::fclose(fp);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
};

uint8_t to_byte(double v) {
  double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void write_png(const fs::path& path, const Image& im) {
  DEFAS_CHECK(im.c == 1 || im.c == 3, "write_png: ", im.c, " channels unsupported");
  fs::create_directories(path.parent_path());
  FileHandle fh(path, "wb");
  DEFAS_CHECK(fh.fp, "write_png: cannot open ", path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  DEFAS_CHECK(png, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<uint8_t> rowbuf(static_cast<size_t>(im.w) * im.c);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: libpng error for " + path.string());
  }
  png_init_io(png, fh.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(im.w), static_cast<png_uint_32>(im.h), 8,
               im.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < im.h; ++y) {
    for (int x = 0; x < im.w; ++x) {
      for (int ch = 0; ch < im.c; ++ch) {
        rowbuf[static_cast<size_t>(x) * im.c + ch] = to_byte(im.at(y, x, ch));
      }
    }
    png_write_row(png, rowbuf.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const fs::path& path) {
  FileHandle fh(path, "rb");
  DEFAS_CHECK(fh.fp, "read_png: cannot open ", path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  DEFAS_CHECK(png, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<uint8_t> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: libpng error for " + path.string());
  }
  png_init_io(png, fh.fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int c = static_cast<int>(png_get_channels(png, info));
  if (c != 1 && c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: unsupported channel count in " + path.string());
  }
  const size_t stride = png_get_rowbytes(png, info);
  data.resize(stride * static_cast<size_t>(h));
  rows.resize(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = data.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image im = Image::zeros(h, w, c);
  for (int y = 0; y < h; ++y) {
    const uint8_t* row = data.data() + stride * y;
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        im.at(y, x, ch) = row[static_cast<size_t>(x) * c + ch] / 255.0;
      }
    }
  }
  return im;
}

void write_mask_png(const fs::path& path, const PixelMask& mask, int h, int w) {
  DEFAS_CHECK(static_cast<int>(mask.size()) == h * w, "write_mask_png: size mismatch");
  fs::create_directories(path.parent_path());
  FileHandle fh(path, "wb");
  DEFAS_CHECK(fh.fp, "write_mask_png: cannot open ", path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  DEFAS_CHECK(png, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<uint8_t> rowbuf(static_cast<size_t>(w));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_mask_png: libpng error for " + path.string());
  }
  png_init_io(png, fh.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 1,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_packing(png);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      rowbuf[static_cast<size_t>(x)] = mask[static_cast<size_t>(y) * w + x] ? 1 : 0;
    }
    png_write_row(png, rowbuf.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PixelMask read_mask_png(const fs::path& path, int* h_out, int* w_out) {
  Image im = read_png(path);
  DEFAS_CHECK(im.c == 1, "read_mask_png: not grayscale: ", path.string());
  PixelMask mask(static_cast<size_t>(im.h) * im.w, 0);
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = im.data(static_cast<Eigen::Index>(i)) > 0.5 ? 1 : 0;
  }
  if (h_out) *h_out = im.h;
  if (w_out) *w_out = im.w;
  return mask;
}

void write_f32(const fs::path& path, const Mat& m) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  DEFAS_CHECK(out.good(), "write_f32: cannot open ", path.string());
  std::vector<float> buf(static_cast<size_t>(m.size()));
  // Row-major element order so the file layout matches the manifest shape.
  size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) buf[k++] = static_cast<float>(m(i, j));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  DEFAS_CHECK(out.good(), "write_f32: write failed for ", path.string());
}

Mat read_f32(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  DEFAS_CHECK(in.good(), "read_f32: cannot open ", path.string());
  std::vector<float> buf(static_cast<size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  DEFAS_CHECK(in.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(float)),
              "read_f32: short read from ", path.string());
  in.peek();
  DEFAS_CHECK(in.eof(), "read_f32: trailing bytes in ", path.string());
  Mat m(rows, cols);
  size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<double>(buf[k++]);
  return m;
}

void write_f32_vec(const fs::path& path, const Vec& v) {
  write_f32(path, Mat(v.transpose()));
}

Vec read_f32_vec(const fs::path& path, Eigen::Index n) {
  return read_f32(path, 1, n).row(0).transpose();
}

void write_json(const fs::path& path, const Json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  DEFAS_CHECK(out.good(), "write_json: cannot open ", path.string());
  out << j.dump(2) << "\n";
  DEFAS_CHECK(out.good(), "write_json: write failed for ", path.string());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  DEFAS_CHECK(in.good(), "read_json: cannot open ", path.string());
  return Json::parse(in);
}

void write_jsonl(const fs::path& path, const std::vector<Json>& rows) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  DEFAS_CHECK(out.good(), "write_jsonl: cannot open ", path.string());
  for (const Json& j : rows) out << j.dump() << "\n";
  DEFAS_CHECK(out.good(), "write_jsonl: write failed for ", path.string());
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  DEFAS_CHECK(in.good(), "read_jsonl: cannot open ", path.string());
  std::vector<Json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(Json::parse(line));
  }
  return rows;
}

namespace {
void check_csv_cell(const std::string& cell) {
  DEFAS_CHECK(cell.find_first_of(",\"\n") == std::string::npos,
              "csv cell needs quoting, not supported: ", cell);
}

std::string fmt_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
}  // namespace

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header)
    : width_(header.size()) {
  fs::create_directories(path.parent_path());
  out_.open(path, std::ios::trunc);
  DEFAS_CHECK(out_.good(), "CsvWriter: cannot open ", path.string());
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  DEFAS_CHECK(cells.size() == width_, "CsvWriter: ", cells.size(), " cells, want ", width_);
  for (size_t i = 0; i < cells.size(); ++i) {
    check_csv_cell(cells[i]);
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

void CsvWriter::row_values(const std::vector<double>& cells) {
  std::vector<std::string> s;
  s.reserve(cells.size());
  for (double v : cells) s.push_back(fmt_value(v));
  row(s);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  DEFAS_CHECK(in.good(), "read_csv: cannot open ", path.string());
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t at = 0;
    while (true) {
      size_t comma = line.find(',', at);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(at));
        break;
      }
      cells.push_back(line.substr(at, comma - at));
      at = comma + 1;
    }
    out.push_back(std::move(cells));
  }
  return out;
}

void save_checkpoint(const fs::path& dir, const ParamStore& params, const Json& extra) {
  fs::create_directories(dir);
  Json manifest = extra;
  Json plist = Json::array();
  for (const std::string& name : params.names()) {
    const Mat& m = params.get(name);
    std::string file = name + ".f32";
    write_f32(dir / file, m);
    plist.push_back({{"name", name},
                     {"shape", {m.rows(), m.cols()}},
                     {"dtype", "f32"},
                     {"file", file}});
  }
  manifest["params"] = std::move(plist);
  write_json(dir / "manifest.json", manifest);
}

Json read_checkpoint_manifest(const fs::path& dir) {
  return read_json(dir / "manifest.json");
}

Json load_checkpoint(const fs::path& dir, ParamStore& params) {
  Json manifest = read_checkpoint_manifest(dir);
  DEFAS_CHECK(manifest.contains("params"), "checkpoint manifest missing params: ", dir.string());
  const Json& plist = manifest["params"];
  DEFAS_CHECK(plist.size() == params.count(), "checkpoint has ", plist.size(),
              " tensors, model wants ", params.count());
  for (const Json& p : plist) {
    const std::string name = p.at("name").get<std::string>();
    DEFAS_CHECK(params.has(name), "checkpoint tensor ", name, " unknown to model");
    DEFAS_CHECK(p.at("dtype").get<std::string>() == "f32", "unsupported dtype for ", name);
    Mat& dst = params.get(name);
    Eigen::Index r = p.at("shape")[0].get<Eigen::Index>();
    Eigen::Index c = p.at("shape")[1].get<Eigen::Index>();
    DEFAS_CHECK(r == dst.rows() && c == dst.cols(), "shape mismatch for ", name, ": checkpoint ",
                r, "x", c, ", model ", dst.rows(), "x", dst.cols());
    dst = read_f32(dir / p.at("file").get<std::string>(), r, c);
  }
  return manifest;
}

}  // namespace defas
