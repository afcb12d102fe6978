#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "moe_depth/grid.hpp"

namespace moe_depth {

// MDG1 layout: "MDG1" | u32 height | u32 width | height*width f64, all little-endian.
inline constexpr char kGridMagic[4] = {'M', 'D', 'G', '1'};

std::vector<std::uint8_t> encode_grid(const Grid& grid);
Grid decode_grid(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

void write_grid(const Grid& grid, const std::string& path);
Grid read_grid(const std::string& path);

/// Masks persist as MDG1 grids holding 0.0 / 1.0.
Grid mask_to_grid(const MaskGrid& mask);
MaskGrid grid_to_mask(const Grid& grid);

enum class ColorMode { DepthColormap, GateArgmax, GateBlend };

using Rgb = std::array<std::uint8_t, 3>;

/// Expert colour: red, blue, green, yellow for K <= 4; evenly spaced hues otherwise.
Rgb expert_color(int expert, int num_experts);

/// Binary PPM (P6) bytes. Gate modes expect per-pixel weights summing to 1 (1e-6).
std::vector<std::uint8_t> encode_color_image(const GridStack& grids, ColorMode mode);
std::vector<std::uint8_t> encode_color_image(const Grid& grid, ColorMode mode);

void export_color_image(const GridStack& grids, ColorMode mode, const std::string& path);
void export_color_image(const Grid& grid, ColorMode mode, const std::string& path);

}  // namespace moe_depth
