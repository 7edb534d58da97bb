#include "gbs/grid.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

namespace gbs {

Grid::Grid(int height, int width, double fill) : height_(height), width_(width) {
  GBS_CHECK(height > 0 && width > 0, kShape, "grid dimensions must be positive");
  values_.assign(static_cast<std::size_t>(height) * width, fill);
}

double Grid::min() const { return *std::min_element(values_.begin(), values_.end()); }
double Grid::max() const { return *std::max_element(values_.begin(), values_.end()); }

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  GBS_CHECK(height > 0 && width > 0, kShape, "image dimensions must be positive");
  values_.assign(static_cast<std::size_t>(kChannels) * height * width, fill);
}

Grid downsample_area(const Grid& grid, int factor) {
  GBS_CHECK(factor >= 1, kParameter, "downsample factor must be >= 1");
  GBS_CHECK(grid.height() % factor == 0 && grid.width() % factor == 0, kShape,
            "grid not divisible by downsample factor");
  if (factor == 1) return grid;
  Grid out(grid.height() / factor, grid.width() / factor);
  const double inv = 1.0 / (factor * factor);
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      double acc = 0.0;
      for (int dr = 0; dr < factor; ++dr)
        for (int dc = 0; dc < factor; ++dc) acc += grid(r * factor + dr, c * factor + dc);
      out(r, c) = acc * inv;
    }
  }
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "PFM writer assumes a little-endian host");

}  // namespace

void write_pfm(const std::filesystem::path& path, const Grid& grid) {
  std::ofstream out(path, std::ios::binary);
  GBS_CHECK(out.good(), kIo, "cannot open for writing: " + path.string());
  out << "Pf\n" << grid.width() << " " << grid.height() << "\n-1.0\n";
  std::vector<float> row(grid.width());
  for (int r = grid.height() - 1; r >= 0; --r) {
    for (int c = 0; c < grid.width(); ++c) row[c] = static_cast<float>(grid(r, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  GBS_CHECK(out.good(), kIo, "write failed: " + path.string());
}

Grid read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  GBS_CHECK(in.good(), kIo, "cannot open: " + path.string());
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  in.get();
  GBS_CHECK(magic == "Pf", kData, "not a single-channel PFM: " + path.string());
  GBS_CHECK(scale < 0.0, kData, "only little-endian PFM is supported");
  Grid grid(height, width);
  std::vector<float> row(width);
  for (int r = height - 1; r >= 0; --r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    GBS_CHECK(in.good(), kData, "truncated PFM: " + path.string());
    for (int c = 0; c < width; ++c) grid(r, c) = row[c];
  }
  return grid;
}

Image read_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  GBS_CHECK(!mat.empty(), kIo, "cannot read image: " + path.string());
  Image image(mat.rows, mat.cols);
  for (int r = 0; r < mat.rows; ++r) {
    const auto* px = mat.ptr<cv::Vec3b>(r);
    for (int c = 0; c < mat.cols; ++c) {
      // OpenCV stores BGR.
      for (int ch = 0; ch < 3; ++ch) image.at(ch, r, c) = px[c][2 - ch] / 255.0;
    }
  }
  return image;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  cv::Mat mat(image.height(), image.width(), CV_8UC3);
  for (int r = 0; r < image.height(); ++r) {
    auto* px = mat.ptr<cv::Vec3b>(r);
    for (int c = 0; c < image.width(); ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        double v = std::clamp(image.at(ch, r, c), 0.0, 1.0);
        px[c][2 - ch] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  GBS_CHECK(cv::imwrite(path.string(), mat), kIo, "cannot write image: " + path.string());
}

}  // namespace gbs
