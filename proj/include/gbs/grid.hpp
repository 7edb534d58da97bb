#pragma once

#include <filesystem>
#include <vector>

#include "gbs/error.hpp"

namespace gbs {

// Row-major single-channel grid. AlphaMap and Heatmap are Grids whose values
// stay in [0, 1].
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(int row, int col) { return values_[index(row, col)]; }
  double operator()(int row, int col) const { return values_[index(row, col)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  double min() const;
  double max() const;

  bool operator==(const Grid& other) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

using AlphaMap = Grid;
using Heatmap = Grid;

// Planar 3-channel image, values in [0, 1].
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }

  double& at(int channel, int row, int col) {
    return values_[(static_cast<std::size_t>(channel) * height_ + row) * width_ + col];
  }
  double at(int channel, int row, int col) const {
    return values_[(static_cast<std::size_t>(channel) * height_ + row) * width_ + col];
  }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }
  bool operator==(const Image& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

// Area-average downsampling by an integer factor per side.
Grid downsample_area(const Grid& grid, int factor);

// Portable float map, little-endian ("Pf" single channel / "PF" RGB). Rows
// are stored bottom-to-top as the format prescribes.
void write_pfm(const std::filesystem::path& path, const Grid& grid);
Grid read_pfm(const std::filesystem::path& path);

// 8-bit PNG I/O.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

}  // namespace gbs
