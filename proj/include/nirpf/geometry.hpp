#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nirpf/image.hpp"

namespace nirpf {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

/// Centers and radial distances of m patches with n vertices each.
/// Parameters are laid out as one flat vector: [x_0, y_0, ..., x_{m-1}, y_{m-1},
/// l_00 .. l_0(n-1), l_10 .. l_(m-1)(n-1)], which is the layout evolution works on.
class PatchGenome {
public:
    PatchGenome() = default;
    /// Throws InvalidConfig unless m >= 1 and n >= 3.
    PatchGenome(int m, int n);
    PatchGenome(int m, int n, std::vector<double> params);

    int patches() const noexcept { return m_; }
    int vertices() const noexcept { return n_; }

    Point center(int i) const { return {params_[2 * i], params_[2 * i + 1]}; }
    void set_center(int i, Point p) {
        params_[2 * i] = p.x;
        params_[2 * i + 1] = p.y;
    }

    double radius(int i, int j) const { return params_[radius_index(i, j)]; }
    void set_radius(int i, int j, double l) { params_[radius_index(i, j)] = l; }

    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }

    std::size_t radius_index(int i, int j) const noexcept {
        return static_cast<std::size_t>(2 * m_ + i * n_ + j);
    }

    static std::size_t param_count(int m, int n) noexcept {
        return static_cast<std::size_t>(2 * m + m * n);
    }

    friend bool operator==(const PatchGenome&, const PatchGenome&) = default;

private:
    int m_ = 0;
    int n_ = 0;
    std::vector<double> params_;
};

/// Feasible region for radii and centers (pixel units).
struct GenomeBounds {
    double l_min = 2.0;
    double l_max = 20.0;
    double x_l = 0.0;
    double x_r = 0.0;
    double y_d = 0.0;
    double y_u = 0.0;

    /// Throws InvalidRange when an interval is reversed or non-finite.
    void validate() const;
    /// Center bounds covering every pixel center of a width x height image.
    static GenomeBounds for_image(int width, int height, double l_min = 2.0, double l_max = 20.0);
};

/// Closed sampled curve; the last point repeats the first.
struct Contour {
    std::vector<Point> points;

    bool closed(double tol = 1e-9) const noexcept;
};

inline constexpr int kDefaultSamplesPerSegment = 16;

/// Vertex j of patch i sits at angle j*2pi/n, j = 0..n-1.
std::vector<Point> compute_vertices(const PatchGenome& genome, int patch_index);

/// Closed uniform cubic B-spline through the cyclic control polygon.
/// Returns n*samples_per_segment + 1 points.
Contour bspline_contour(std::span<const Point> vertices,
                        int samples_per_segment = kDefaultSamplesPerSegment);

/// Even-odd scanline fill. Pixel (c, r) has its center at (c, r) and is set
/// iff that center lies inside the contour.
BinaryMask rasterize(const Contour& contour, int width, int height);

/// Even-odd test of a single point, same crossing rule as rasterize.
bool point_in_contour(const Contour& contour, Point p);

/// Clamp every radius into [l_min, l_max] and every center into the box.
PatchGenome apply_constraints(const PatchGenome& genome, const GenomeBounds& bounds);

/// Raster of one patch (no face mask applied).
BinaryMask patch_mask(const PatchGenome& genome, int patch_index, int width, int height,
                      int samples_per_segment = kDefaultSamplesPerSegment);

/// Union of all patch rasters intersected with face_mask.
BinaryMask compose_mask(const PatchGenome& genome, const BinaryMask& face_mask, int width, int height,
                        int samples_per_segment = kDefaultSamplesPerSegment);

}  // namespace nirpf
