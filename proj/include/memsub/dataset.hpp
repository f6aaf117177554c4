#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memsub/checkpoint.hpp"
#include "memsub/json_util.hpp"
#include "memsub/matrix.hpp"
#include "memsub/rng.hpp"

namespace memsub {

// ---------------------------------------------------------------------------
// Pixel conventions: images are stored as 8-bit PGM, the model works on
// [-1, 1], and distances are measured on the [0, 255] scale.

inline float pixel_to_unit(std::uint8_t p) { return float(p) / 127.5f - 1.0f; }

inline std::uint8_t unit_to_pixel(float v) {
  const float p = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(p);
}

/// Maps a [-1,1] image row to [0,255] (not quantized).
inline Matrix to_pixel_scale(const Matrix& unit) {
  Matrix out(unit.rows(), unit.cols());
  for (std::size_t i = 0; i < unit.size(); ++i) {
    out.values()[i] = (std::clamp(unit.values()[i], -1.0f, 1.0f) + 1.0f) * 127.5f;
  }
  return out;
}

/// Greyscale image with 8-bit pixels.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

inline std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

inline GrayImage decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_ws();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + std::size_t(bytes[pos++] - '0');
      ++digits;
    }
    if (!digits) throw FormatError("pgm: malformed header");
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw FormatError("pgm: expected P5 magic");
  pos = 2;
  GrayImage img;
  img.width = read_int();
  img.height = read_int();
  const auto maxval = read_int();
  if (maxval != 255) throw FormatError("pgm: only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  const auto n = img.width * img.height;
  if (pos + n != bytes.size()) throw FormatError("pgm: raster size mismatch");
  img.pixels.assign(bytes.begin() + long(pos), bytes.end());
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  const auto s = encode_pgm(img);
  f.write(s.data(), long(s.size()));
}

inline GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

/// Row vector in [-1,1] from an 8-bit image.
inline Matrix image_to_row(const GrayImage& img) {
  Matrix r(1, img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) r.values()[i] = pixel_to_unit(img.pixels[i]);
  return r;
}

inline GrayImage row_to_image(std::span<const float> row, std::size_t side) {
  GrayImage img{side, side, std::vector<std::uint8_t>(row.size())};
  for (std::size_t i = 0; i < row.size(); ++i) img.pixels[i] = unit_to_pixel(row[i]);
  return img;
}

/// Tiles a rows × cols grid of side×side images (given as [-1,1] rows, row-major
/// over the grid) into one image with a 1-pixel black gutter.
inline GrayImage make_grid(const std::vector<Matrix>& cells, std::size_t grid_rows,
                           std::size_t grid_cols, std::size_t side) {
  if (cells.size() != grid_rows * grid_cols) throw ArgumentError("grid: cell count mismatch");
  const std::size_t w = grid_cols * (side + 1) - 1, h = grid_rows * (side + 1) - 1;
  GrayImage g{w, h, std::vector<std::uint8_t>(w * h, 0)};
  for (std::size_t gr = 0; gr < grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < grid_cols; ++gc) {
      const auto& cell = cells[gr * grid_cols + gc];
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          g.pixels[(gr * (side + 1) + y) * w + gc * (side + 1) + x] =
              unit_to_pixel(cell.values()[y * side + x]);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Synthetic data: ten families of geometric patterns. Every draw randomizes
// position, scale, phase and intensities so that two images of the same class
// are rarely close in tile distance.

inline constexpr std::size_t kPatternFamilies = 10;

inline GrayImage generate_pattern(std::size_t family, std::size_t side, Rng& rng) {
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  auto irange = [&](int lo, int hi) { return lo + int(rng.uniform_index(std::uint64_t(hi - lo + 1))); };
  const double s = double(side);
  const double fg = uni(170, 255), bg = uni(0, 70);
  std::vector<double> v(side * side, 0.0);  // foreground coverage in [0,1]
  auto at = [&](std::size_t x, std::size_t y) -> double& { return v[y * side + x]; };

  switch (family % kPatternFamilies) {
    case 0: {  // filled disc
      const double cx = uni(0.3, 0.7) * s, cy = uni(0.3, 0.7) * s, r = uni(0.12, 0.3) * s;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          at(x, y) = std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r ? 1.0 : 0.0;
      break;
    }
    case 1: {  // ring
      const double cx = uni(0.35, 0.65) * s, cy = uni(0.35, 0.65) * s, r = uni(0.2, 0.38) * s;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          at(x, y) = std::abs(std::hypot(x + 0.5 - cx, y + 0.5 - cy) - r) <= 0.9 ? 1.0 : 0.0;
      break;
    }
    case 2:    // horizontal bars
    case 3: {  // vertical bars
      const int period = irange(3, 6), width = irange(1, std::max(1, period / 2)), phase = irange(0, period - 1);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const int c = int(family % kPatternFamilies == 2 ? y : x);
          at(x, y) = ((c + phase) % period) < width ? 1.0 : 0.0;
        }
      break;
    }
    case 4: {  // diagonal stripes
      const int period = irange(4, 7), phase = irange(0, period - 1);
      const bool anti = rng.uniform() < 0.5;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const int c = anti ? int(x + side - y) : int(x + y);
          at(x, y) = ((c + phase) % period) < period / 2 ? 1.0 : 0.0;
        }
      break;
    }
    case 5: {  // checkerboard
      const int cell = irange(2, 4), px = irange(0, cell - 1), py = irange(0, cell - 1);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          at(x, y) = (((int(x) + px) / cell + (int(y) + py) / cell) % 2) ? 1.0 : 0.0;
      break;
    }
    case 6: {  // plus sign
      const int cx = irange(4, int(side) - 5), cy = irange(4, int(side) - 5);
      const int arm = irange(3, 6), th = irange(0, 1);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const int dx = int(x) - cx, dy = int(y) - cy;
          at(x, y) = ((std::abs(dx) <= th && std::abs(dy) <= arm) ||
                      (std::abs(dy) <= th && std::abs(dx) <= arm))
                         ? 1.0
                         : 0.0;
        }
      break;
    }
    case 7: {  // square outline
      const int size = irange(5, 11);
      const int x0 = irange(0, int(side) - size), y0 = irange(0, int(side) - size);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const int dx = int(x) - x0, dy = int(y) - y0;
          const bool inside = dx >= 0 && dy >= 0 && dx < size && dy < size;
          const bool edge = dx == 0 || dy == 0 || dx == size - 1 || dy == size - 1;
          at(x, y) = inside && edge ? 1.0 : 0.0;
        }
      break;
    }
    case 8: {  // filled triangle, apex up or down
      const double cx = uni(0.3, 0.7) * s, top = uni(0.05, 0.35) * s;
      const double height = uni(0.4, 0.6) * s, half = uni(0.2, 0.4) * s;
      const bool flip = rng.uniform() < 0.5;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          double fy = (y + 0.5 - top) / height;
          if (flip) fy = 1.0 - fy;
          at(x, y) = (fy >= 0 && fy <= 1 && std::abs(x + 0.5 - cx) <= half * fy) ? 1.0 : 0.0;
        }
      break;
    }
    default: {  // linear ramp in a random direction
      const double ang = uni(0, 6.283185307179586);
      const double ux = std::cos(ang), uy = std::sin(ang);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double p = ((x + 0.5) / s - 0.5) * ux + ((y + 0.5) / s - 0.5) * uy;
          at(x, y) = std::clamp(p / 1.2 + 0.5, 0.0, 1.0);
        }
      break;
    }
  }

  GrayImage img{side, side, std::vector<std::uint8_t>(side * side)};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double p = bg + (fg - bg) * v[i] + uni(-8, 8);
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::round(p), 0.0, 255.0));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Dataset directory: PGM files plus manifest.json.

inline constexpr const char* kDatasetSchema = "memsub.dataset/1";

struct DatasetSpec {
  std::size_t num_classes = 10;
  std::size_t images_per_class = 100;
  std::size_t num_duplicated = 10;   ///< images given their own prompt and repeated
  std::size_t duplicate_copies = 50;
  std::size_t image_size = 16;
  std::uint64_t seed = 7;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

inline void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = {{"num_classes", s.num_classes},       {"images_per_class", s.images_per_class},
       {"num_duplicated", s.num_duplicated}, {"duplicate_copies", s.duplicate_copies},
       {"image_size", s.image_size},         {"seed", s.seed}};
}
inline void from_json(const nlohmann::json& j, DatasetSpec& s) {
  StrictObject(j, "dataset")
      .opt("num_classes", s.num_classes)
      .opt("images_per_class", s.images_per_class)
      .opt("num_duplicated", s.num_duplicated)
      .opt("duplicate_copies", s.duplicate_copies)
      .opt("image_size", s.image_size)
      .opt("seed", s.seed)
      .finish();
}

/// One manifest entry. Clean images carry label = class + 1; each duplicated
/// image carries its own prompt label after the class labels.
struct DatasetItem {
  std::string file;
  int label = 0;
  int pattern_class = 0;
  std::size_t copies = 1;
  bool duplicated = false;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DatasetItem, file, label, pattern_class, copies, duplicated)

struct Dataset {
  DatasetSpec spec;
  std::vector<DatasetItem> items;
  std::vector<GrayImage> images;  ///< parallel to items

  std::size_t num_labels() const { return spec.num_classes + spec.num_duplicated; }
  std::size_t side() const { return spec.image_size; }

  /// Prompt labels of the duplicated images, in manifest order.
  std::vector<int> duplicated_labels() const {
    std::vector<int> out;
    for (const auto& it : items)
      if (it.duplicated) out.push_back(it.label);
    return out;
  }
  std::vector<int> class_labels() const {
    std::vector<int> out;
    for (std::size_t c = 0; c < spec.num_classes; ++c) out.push_back(int(c) + 1);
    return out;
  }
  /// Manifest index of the duplicated image carrying `label`, or -1.
  int duplicated_index(int label) const {
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].duplicated && items[i].label == label) return int(i);
    return -1;
  }
};

inline Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.num_classes == 0 || spec.image_size < 4) throw ArgumentError("dataset: degenerate spec");
  if (spec.num_duplicated > 0 && spec.duplicate_copies == 0) {
    throw ArgumentError("dataset: duplicated images need at least one copy");
  }
  Dataset ds;
  ds.spec = spec;
  Rng rng(derive_seed(spec.seed, 0xD5));
  char name[64];
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.images_per_class; ++i) {
      std::snprintf(name, sizeof name, "c%02zu_%04zu.pgm", c, i);
      ds.items.push_back({name, int(c) + 1, int(c), 1, false});
      ds.images.push_back(generate_pattern(c, spec.image_size, rng));
    }
  }
  for (std::size_t k = 0; k < spec.num_duplicated; ++k) {
    const auto c = std::size_t(rng.uniform_index(spec.num_classes));
    std::snprintf(name, sizeof name, "dup_%03zu.pgm", k);
    ds.items.push_back({name, int(spec.num_classes + k) + 1, int(c), spec.duplicate_copies, true});
    ds.images.push_back(generate_pattern(c, spec.image_size, rng));
  }
  return ds;
}

inline nlohmann::json manifest_json(const Dataset& ds) {
  return {{"schema", kDatasetSchema},
          {"spec", ds.spec},
          {"num_labels", ds.num_labels()},
          {"items", ds.items}};
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ds.items.size(); ++i) write_pgm(dir / ds.items[i].file, ds.images[i]);
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  f << manifest_json(ds).dump(2) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw Error("no dataset manifest at " + mpath.string());
  const auto j = nlohmann::json::parse(read_file(mpath));
  if (j.value("schema", "") != kDatasetSchema) throw FormatError("dataset: unsupported manifest schema");
  Dataset ds;
  ds.spec = j.at("spec").get<DatasetSpec>();
  ds.items = j.at("items").get<std::vector<DatasetItem>>();
  for (const auto& it : ds.items) {
    auto img = read_pgm(dir / it.file);
    if (img.width != ds.spec.image_size || img.height != ds.spec.image_size) {
      throw FormatError("dataset: " + it.file + " has wrong size");
    }
    if (it.label < 1 || std::size_t(it.label) > ds.num_labels()) {
      throw FormatError("dataset: " + it.file + " has out-of-range label");
    }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

/// Flattened training set with duplicated items expanded by their copy count.
struct TrainingSet {
  Matrix images;            ///< N × dim, [-1,1]
  std::vector<int> labels;  ///< length N
};

inline TrainingSet expand_training_set(const Dataset& ds) {
  std::size_t n = 0;
  for (const auto& it : ds.items) n += it.copies;
  const std::size_t dim = ds.side() * ds.side();
  TrainingSet ts{Matrix(n, dim), {}};
  ts.labels.reserve(n);
  std::size_t r = 0;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const auto row = image_to_row(ds.images[i]);
    for (std::size_t c = 0; c < ds.items[i].copies; ++c, ++r) {
      std::copy(row.values().begin(), row.values().end(), ts.images.row(r).begin());
      ts.labels.push_back(ds.items[i].label);
    }
  }
  return ts;
}

/// Fresh clean images drawn from the same generator under a different stream;
/// used as the held-out reference set for the Fréchet proxy.
inline std::vector<std::pair<Matrix, int>> held_out_images(const DatasetSpec& spec,
                                                           std::size_t per_class,
                                                           std::uint64_t stream = 0x4E1D) {
  Rng rng(derive_seed(spec.seed, stream));
  std::vector<std::pair<Matrix, int>> out;
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i)
      out.emplace_back(image_to_row(generate_pattern(c, spec.image_size, rng)), int(c) + 1);
  return out;
}

}  // namespace memsub
