#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "moe_depth/error.hpp"

namespace moe_depth {

/// Row-major H x W field of doubles. NaN marks an invalid pixel in masked grids.
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, double fill = 0.0)
        : height_(height), width_(width), data_(checked_size(height, width), fill) {}
    Grid(int height, int width, std::vector<double> data)
        : height_(height), width_(width), data_(std::move(data)) {
        require(data_.size() == checked_size(height, width), "Grid: data length must equal height*width");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(int row, int col) { return data_[index(row, col)]; }
    double at(int row, int col) const { return data_[index(row, col)]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Grid& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    /// True when every value is finite (i.e. the grid carries no NaN mask).
    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    std::size_t index(int row, int col) const noexcept {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
    }

    friend bool operator==(const Grid&, const Grid&) = default;

    static std::size_t checked_size(int height, int width) {
        require(height > 0 && width > 0, "Grid: dimensions must be positive");
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// K channels of identical H x W dimensions, stored contiguously as [K][H][W].
class GridStack {
public:
    GridStack() = default;
    GridStack(int channels, int height, int width, double fill = 0.0)
        : channels_(channels), height_(height), width_(width),
          data_(static_cast<std::size_t>(checked_channels(channels)) * Grid::checked_size(height, width), fill) {}

    explicit GridStack(const std::vector<Grid>& grids) {
        require(!grids.empty(), "GridStack: needs at least one channel");
        channels_ = static_cast<int>(grids.size());
        height_ = grids.front().height();
        width_ = grids.front().width();
        data_.reserve(grids.size() * grids.front().size());
        for (const auto& g : grids) {
            require(g.same_shape(grids.front()), "GridStack: channel grids must share dimensions");
            data_.insert(data_.end(), g.data().begin(), g.data().end());
        }
    }

    int channels() const noexcept { return channels_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t plane_size() const noexcept {
        return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
    }

    std::span<double> channel(int k) noexcept { return {data_.data() + k * plane_size(), plane_size()}; }
    std::span<const double> channel(int k) const noexcept {
        return {data_.data() + k * plane_size(), plane_size()};
    }

    double& at(int k, std::size_t pixel) { return data_[k * plane_size() + pixel]; }
    double at(int k, std::size_t pixel) const { return data_[k * plane_size() + pixel]; }

    Grid grid(int k) const {
        auto c = channel(k);
        return Grid(height_, width_, std::vector<double>(c.begin(), c.end()));
    }
    void set_grid(int k, const Grid& g) {
        require(g.height() == height_ && g.width() == width_, "GridStack: grid shape mismatch");
        std::copy(g.data().begin(), g.data().end(), channel(k).begin());
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool same_plane(const Grid& g) const noexcept { return g.height() == height_ && g.width() == width_; }
    bool same_shape(const GridStack& o) const noexcept {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }

    friend bool operator==(const GridStack&, const GridStack&) = default;

private:
    static int checked_channels(int k) {
        require(k > 0, "GridStack: channel count must be positive");
        return k;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// Row-major boolean field (edge maps, validity masks).
class MaskGrid {
public:
    MaskGrid() = default;
    MaskGrid(int height, int width, bool fill = false)
        : height_(height), width_(width), data_(Grid::checked_size(height, width), fill ? 1 : 0) {}

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }

    bool operator[](std::size_t i) const { return data_[i] != 0; }
    void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }
    bool at(int row, int col) const { return data_[static_cast<std::size_t>(row) * width_ + col] != 0; }
    void set(int row, int col, bool v) { data_[static_cast<std::size_t>(row) * width_ + col] = v ? 1 : 0; }

    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (auto v : data_)
            n += v;
        return n;
    }

    template <class G>
    bool same_shape(const G& g) const noexcept {
        return height_ == g.height() && width_ == g.width();
    }

    friend bool operator==(const MaskGrid&, const MaskGrid&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Row-major integer field; used for per-pixel expert indices.
struct LabelGrid {
    int height = 0;
    int width = 0;
    std::vector<int> data;

    int at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
    friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

}  // namespace moe_depth
