#include "moe_depth/gridio.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "moe_depth/detail/binary_io.hpp"
#include "moe_depth/error.hpp"

namespace moe_depth {

namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path, std::strerror(errno));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(path, std::strerror(errno));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError(path, "write failed");
}

void write_file_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(path, std::strerror(errno));
    out << text;
    if (!out)
        throw IoError(path, "write failed");
}

std::string read_file_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path, std::strerror(errno));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

std::vector<std::uint8_t> encode_grid(const Grid& grid) {
    std::vector<std::uint8_t> out;
    out.reserve(12 + grid.size() * 8);
    out.insert(out.end(), std::begin(kGridMagic), std::end(kGridMagic));
    detail::put_u32(out, static_cast<std::uint32_t>(grid.height()));
    detail::put_u32(out, static_cast<std::uint32_t>(grid.width()));
    for (double v : grid.values())
        detail::put_f64(out, v);
    return out;
}

Grid decode_grid(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 12)
        throw FormatError(origin + ": truncated MDG1 header (" + std::to_string(bytes.size()) + " bytes)");
    if (!std::equal(std::begin(kGridMagic), std::end(kGridMagic), bytes.begin()))
        throw FormatError(origin + ": bad magic, expected MDG1");
    const std::uint32_t h = detail::get_u32(bytes.data() + 4);
    const std::uint32_t w = detail::get_u32(bytes.data() + 8);
    if (h == 0 || w == 0)
        throw FormatError(origin + ": zero grid dimension");
    const std::uint64_t expected = 12 + 8ull * h * w;
    if (bytes.size() != expected)
        throw FormatError(origin + ": payload size mismatch, expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(bytes.size()));
    std::vector<double> data(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = detail::get_f64(bytes.data() + 12 + 8 * i);
    return Grid(static_cast<int>(h), static_cast<int>(w), std::move(data));
}

void write_grid(const Grid& grid, const std::string& path) { detail::write_file_bytes(path, encode_grid(grid)); }

Grid read_grid(const std::string& path) { return decode_grid(detail::read_file_bytes(path), path); }

Grid mask_to_grid(const MaskGrid& mask) {
    Grid g(mask.height(), mask.width());
    for (std::size_t i = 0; i < mask.size(); ++i)
        g[i] = mask[i] ? 1.0 : 0.0;
    return g;
}

MaskGrid grid_to_mask(const Grid& grid) {
    MaskGrid m(grid.height(), grid.width());
    for (std::size_t i = 0; i < grid.size(); ++i)
        m.set(i, grid[i] != 0.0 && !std::isnan(grid[i]));
    return m;
}

namespace {

Rgb hsv_to_rgb(double hue_deg) {
    const double h = std::fmod(hue_deg, 360.0) / 60.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
    case 0: r = 1; g = x; break;
    case 1: r = x; g = 1; break;
    case 2: g = 1; b = x; break;
    case 3: g = x; b = 1; break;
    case 4: r = x; b = 1; break;
    default: r = 1; b = x; break;
    }
    auto q = [](double c) { return static_cast<std::uint8_t>(std::lround(c * 255.0)); };
    return {q(r), q(g), q(b)};
}

std::vector<std::uint8_t> ppm_header(int height, int width) {
    const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + 3ull * height * width);
    return out;
}

void check_normalized(const GridStack& gate) {
    const std::size_t n = gate.plane_size();
    for (std::size_t p = 0; p < n; ++p) {
        double sum = 0.0;
        for (int k = 0; k < gate.channels(); ++k)
            sum += gate.at(k, p);
        if (!(std::abs(sum - 1.0) <= 1e-6))
            throw ContractError("export_color_image: gate weights at pixel " + std::to_string(p) +
                                " sum to " + std::to_string(sum) + ", expected 1");
    }
}

}  // namespace

Rgb expert_color(int expert, int num_experts) {
    static constexpr Rgb kPalette[4] = {{255, 0, 0}, {0, 0, 255}, {0, 255, 0}, {255, 255, 0}};
    require(expert >= 0 && expert < num_experts, "expert_color: index out of range");
    if (num_experts <= 4)
        return kPalette[expert];
    return hsv_to_rgb(360.0 * expert / num_experts);
}

std::vector<std::uint8_t> encode_color_image(const Grid& grid, ColorMode mode) {
    require(mode == ColorMode::DepthColormap, "encode_color_image: gate modes need a GridStack");
    auto out = ppm_header(grid.height(), grid.width());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : grid.values()) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    for (double v : grid.values()) {
        std::uint8_t g = 0;
        if (std::isfinite(v))
            g = hi > lo ? static_cast<std::uint8_t>(std::lround(255.0 * (v - lo) / (hi - lo))) : 128;
        out.insert(out.end(), {g, g, g});
    }
    return out;
}

std::vector<std::uint8_t> encode_color_image(const GridStack& grids, ColorMode mode) {
    if (mode == ColorMode::DepthColormap) {
        require(grids.channels() == 1, "encode_color_image: depth colormap takes a single channel");
        return encode_color_image(grids.grid(0), mode);
    }
    check_normalized(grids);
    const int k_count = grids.channels();
    std::vector<Rgb> palette;
    for (int k = 0; k < k_count; ++k)
        palette.push_back(expert_color(k, k_count));

    auto out = ppm_header(grids.height(), grids.width());
    for (std::size_t p = 0; p < grids.plane_size(); ++p) {
        if (mode == ColorMode::GateArgmax) {
            int best = 0;
            for (int k = 1; k < k_count; ++k)
                if (grids.at(k, p) > grids.at(best, p))
                    best = k;
            out.insert(out.end(), palette[best].begin(), palette[best].end());
        } else {
            double rgb[3] = {0, 0, 0};
            for (int k = 0; k < k_count; ++k)
                for (int c = 0; c < 3; ++c)
                    rgb[c] += grids.at(k, p) * palette[k][c];
            for (double c : rgb)
                out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(c), 0L, 255L)));
        }
    }
    return out;
}

void export_color_image(const GridStack& grids, ColorMode mode, const std::string& path) {
    detail::write_file_bytes(path, encode_color_image(grids, mode));
}

void export_color_image(const Grid& grid, ColorMode mode, const std::string& path) {
    detail::write_file_bytes(path, encode_color_image(grid, mode));
}

}  // namespace moe_depth
