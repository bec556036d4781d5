#include "lgcp/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "lgcp/errors.hpp"

namespace lgcp {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(crc32(0L, nullptr, 0), out.data() + start,
                            static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

struct RampStop {
    double t;
    std::uint8_t r, g, b;
};

// fixed dark-to-bright ramp so identical inputs give identical bytes
constexpr RampStop ramp[] = {
    {0.000, 68, 1, 84},   {0.125, 72, 40, 120},  {0.250, 62, 74, 137},
    {0.375, 49, 104, 142}, {0.500, 38, 130, 142}, {0.625, 31, 158, 137},
    {0.750, 53, 183, 121}, {0.875, 109, 205, 89}, {1.000, 253, 231, 37},
};

void ramp_color(double t, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
    t = std::clamp(t, 0.0, 1.0);
    for (std::size_t i = 1; i < sizeof(ramp) / sizeof(ramp[0]); ++i) {
        if (t <= ramp[i].t) {
            const double f = (t - ramp[i - 1].t) / (ramp[i].t - ramp[i - 1].t);
            r = static_cast<std::uint8_t>(std::lround(ramp[i - 1].r + f * (ramp[i].r - ramp[i - 1].r)));
            g = static_cast<std::uint8_t>(std::lround(ramp[i - 1].g + f * (ramp[i].g - ramp[i - 1].g)));
            b = static_cast<std::uint8_t>(std::lround(ramp[i - 1].b + f * (ramp[i].b - ramp[i - 1].b)));
            return;
        }
    }
    r = ramp[8].r;
    g = ramp[8].g;
    b = ramp[8].b;
}

}  // namespace

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
    if (width < 1 || height < 1)
        throw InputError("png dimensions must be positive");
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
        throw InputError("pixel buffer size does not match png dimensions");

    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * static_cast<std::size_t>(width)));
    for (int row = 0; row < height; ++row) {
        raw.push_back(0);  // filter type
        const std::uint8_t* src = rgb.data() + static_cast<std::size_t>(row) * width * 3;
        raw.insert(raw.end(), src, src + static_cast<std::size_t>(width) * 3);
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw NumericalError("zlib compression failed while writing " + path);
    comp.resize(comp_len);

    std::vector<std::uint8_t> out;
    const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(width));
    put_u32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw InputError("cannot open " + path + " for writing");
    const std::size_t written = std::fwrite(out.data(), 1, out.size(), f);
    std::fclose(f);
    if (written != out.size()) throw InputError("short write to " + path);
}

void write_heatmap_png(const std::string& path, const Eigen::VectorXd& values, int nrow, int ncol,
                       int cell_pixels) {
    if (nrow < 1 || ncol < 1 || values.size() != static_cast<Eigen::Index>(nrow) * ncol)
        throw InputError("heatmap values do not match the lattice dimensions");
    cell_pixels = std::max(cell_pixels, 1);

    double lo = values.minCoeff(), hi = values.maxCoeff();
    const bool flat = !(hi > lo);

    const int bar_w = std::max(cell_pixels, 8);
    const int gap = 4;
    const int width = ncol * cell_pixels + gap + bar_w;
    const int height = nrow * cell_pixels;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3, 255);

    for (int row = 0; row < nrow; ++row) {
        for (int col = 0; col < ncol; ++col) {
            const double v = values[static_cast<Eigen::Index>(row) * ncol + col];
            const double t = flat ? 0.5 : (v - lo) / (hi - lo);
            std::uint8_t r, g, b;
            ramp_color(t, r, g, b);
            // lattice row 0 sits at the bottom of the image
            const int py0 = (nrow - 1 - row) * cell_pixels;
            const int px0 = col * cell_pixels;
            for (int dy = 0; dy < cell_pixels; ++dy) {
                std::uint8_t* line = rgb.data() + (static_cast<std::size_t>(py0 + dy) * width + px0) * 3;
                for (int dx = 0; dx < cell_pixels; ++dx) {
                    line[3 * dx] = r;
                    line[3 * dx + 1] = g;
                    line[3 * dx + 2] = b;
                }
            }
        }
    }

    for (int py = 0; py < height; ++py) {
        const double t = height > 1 ? 1.0 - static_cast<double>(py) / (height - 1) : 0.5;
        std::uint8_t r, g, b;
        ramp_color(t, r, g, b);
        std::uint8_t* line = rgb.data() + (static_cast<std::size_t>(py) * width + ncol * cell_pixels + gap) * 3;
        for (int dx = 0; dx < bar_w; ++dx) {
            line[3 * dx] = r;
            line[3 * dx + 1] = g;
            line[3 * dx + 2] = b;
        }
    }
    write_png_rgb(path, width, height, rgb);
}

void write_curves_png(const std::string& path, const std::vector<Curve>& curves, int width,
                      int height) {
    if (width < 40 || height < 40) throw InputError("curve canvas is too small");
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3, 255);

    double xlo = 0.0, xhi = 1.0, ylo = 0.0, yhi = 1.0;
    bool any = false;
    for (const auto& c : curves) {
        if (c.x.size() != c.y.size()) throw InputError("curve x and y lengths differ");
        for (std::size_t i = 0; i < c.x.size(); ++i) {
            if (!std::isfinite(c.x[i]) || !std::isfinite(c.y[i])) continue;
            if (!any) {
                xlo = xhi = c.x[i];
                ylo = yhi = c.y[i];
                any = true;
            } else {
                xlo = std::min(xlo, c.x[i]);
                xhi = std::max(xhi, c.x[i]);
                ylo = std::min(ylo, c.y[i]);
                yhi = std::max(yhi, c.y[i]);
            }
        }
    }
    if (!(xhi > xlo)) xhi = xlo + 1.0;
    if (!(yhi > ylo)) yhi = ylo + 1.0;

    const int margin = 12;
    auto to_px = [&](double x) {
        return margin + (x - xlo) / (xhi - xlo) * (width - 2 * margin - 1);
    };
    auto to_py = [&](double y) {
        return height - 1 - (margin + (y - ylo) / (yhi - ylo) * (height - 2 * margin - 1));
    };
    auto plot = [&](int px, int py, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (px < 0 || px >= width || py < 0 || py >= height) return;
        std::uint8_t* q = rgb.data() + (static_cast<std::size_t>(py) * width + px) * 3;
        q[0] = r;
        q[1] = g;
        q[2] = b;
    };

    // frame
    for (int px = margin - 1; px <= width - margin; ++px) {
        plot(px, margin - 1, 180, 180, 180);
        plot(px, height - margin, 180, 180, 180);
    }
    for (int py = margin - 1; py <= height - margin; ++py) {
        plot(margin - 1, py, 180, 180, 180);
        plot(width - margin, py, 180, 180, 180);
    }

    for (const auto& c : curves) {
        for (std::size_t i = 0; i + 1 < c.x.size(); ++i) {
            if (!std::isfinite(c.x[i]) || !std::isfinite(c.y[i]) || !std::isfinite(c.x[i + 1]) ||
                !std::isfinite(c.y[i + 1]))
                continue;
            const double x0 = to_px(c.x[i]), y0 = to_py(c.y[i]);
            const double x1 = to_px(c.x[i + 1]), y1 = to_py(c.y[i + 1]);
            const int steps = 1 + static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0)));
            for (int s = 0; s <= steps; ++s) {
                const double f = static_cast<double>(s) / steps;
                plot(static_cast<int>(std::lround(x0 + f * (x1 - x0))),
                     static_cast<int>(std::lround(y0 + f * (y1 - y0))), c.r, c.g, c.b);
            }
        }
    }
    write_png_rgb(path, width, height, rgb);
}

}
