#include "nirpf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "nirpf/error.hpp"

namespace nirpf {
namespace {

double clamp_total(double v, double lo, double hi) {
    if (std::isnan(v)) return lo;
    return std::clamp(v, lo, hi);
}

// Uniform cubic B-spline basis at parameter t in [0,1).
Point bspline_point(const Point& p0, const Point& p1, const Point& p2, const Point& p3, double t) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double u = 1.0 - t;
    const double b0 = u * u * u / 6.0;
    const double b1 = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
    const double b2 = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
    const double b3 = t3 / 6.0;
    return {b0 * p0.x + b1 * p1.x + b2 * p2.x + b3 * p3.x, b0 * p0.y + b1 * p1.y + b2 * p2.y + b3 * p3.y};
}

// x where edge (a, b) crosses the horizontal line at y. Callers guarantee
// the edge straddles y under the half-open rule, so a.y != b.y.
double crossing_x(const Point& a, const Point& b, double y) {
    return a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
}

bool straddles(const Point& a, const Point& b, double y) { return (a.y > y) != (b.y > y); }

}  // namespace

PatchGenome::PatchGenome(int m, int n) : PatchGenome(m, n, std::vector<double>(param_count(std::max(m, 0), std::max(n, 0)))) {}

PatchGenome::PatchGenome(int m, int n, std::vector<double> params) : m_(m), n_(n), params_(std::move(params)) {
    if (m < 1 || n < 3) {
        throw Error(ErrorCode::InvalidConfig, "genome needs m >= 1 and n >= 3 (got m=" + std::to_string(m) +
                                                  ", n=" + std::to_string(n) + ")");
    }
    if (params_.size() != param_count(m, n)) {
        throw Error(ErrorCode::ShapeMismatch, "genome parameter count does not match m, n");
    }
}

void GenomeBounds::validate() const {
    const double all[] = {l_min, l_max, x_l, x_r, y_d, y_u};
    for (double v : all) {
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidRange, "genome bounds must be finite");
    }
    if (l_min < 0.0 || l_min > l_max) throw Error(ErrorCode::InvalidRange, "need 0 <= l_min <= l_max");
    if (x_l > x_r) throw Error(ErrorCode::InvalidRange, "need x_l <= x_r");
    if (y_d > y_u) throw Error(ErrorCode::InvalidRange, "need y_d <= y_u");
}

GenomeBounds GenomeBounds::for_image(int width, int height, double l_min, double l_max) {
    return {l_min, l_max, 0.0, static_cast<double>(width - 1), 0.0, static_cast<double>(height - 1)};
}

bool Contour::closed(double tol) const noexcept {
    if (points.size() < 2) return false;
    const Point& a = points.front();
    const Point& b = points.back();
    return std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol;
}

std::vector<Point> compute_vertices(const PatchGenome& genome, int patch_index) {
    if (patch_index < 0 || patch_index >= genome.patches()) {
        throw Error(ErrorCode::IndexOutOfRange, "patch index " + std::to_string(patch_index));
    }
    const int n = genome.vertices();
    const double step = 2.0 * std::numbers::pi / n;
    const Point c = genome.center(patch_index);
    std::vector<Point> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        const double l = genome.radius(patch_index, j);
        out.push_back({c.x + l * std::cos(j * step), c.y + l * std::sin(j * step)});
    }
    return out;
}

Contour bspline_contour(std::span<const Point> vertices, int samples_per_segment) {
    const auto n = static_cast<int>(vertices.size());
    if (n < 3) throw Error(ErrorCode::TooFewVertices, "closed B-spline needs at least 3 vertices");
    if (samples_per_segment < 2) throw Error(ErrorCode::InvalidRange, "samples_per_segment must be >= 2");

    auto at = [&](int k) -> const Point& { return vertices[static_cast<std::size_t>(((k % n) + n) % n)]; };

    Contour contour;
    contour.points.reserve(static_cast<std::size_t>(n * samples_per_segment + 1));
    for (int j = 0; j < n; ++j) {
        for (int s = 0; s < samples_per_segment; ++s) {
            const double t = static_cast<double>(s) / samples_per_segment;
            contour.points.push_back(bspline_point(at(j - 1), at(j), at(j + 1), at(j + 2), t));
        }
    }
    contour.points.push_back(contour.points.front());
    return contour;
}

bool point_in_contour(const Contour& contour, Point p) {
    bool inside = false;
    const auto& pts = contour.points;
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        if (straddles(pts[k], pts[k + 1], p.y) && p.x < crossing_x(pts[k], pts[k + 1], p.y)) inside = !inside;
    }
    return inside;
}

BinaryMask rasterize(const Contour& contour, int width, int height) {
    if (!contour.closed()) throw Error(ErrorCode::OpenContour, "rasterize needs a closed contour");
    BinaryMask mask(width, height);
    const auto& pts = contour.points;

    double y_lo = pts.front().y;
    double y_hi = y_lo;
    for (const Point& p : pts) {
        y_lo = std::min(y_lo, p.y);
        y_hi = std::max(y_hi, p.y);
    }
    const int row_begin = static_cast<int>(std::clamp(std::floor(y_lo), 0.0, static_cast<double>(height)));
    const int row_end = static_cast<int>(std::clamp(std::ceil(y_hi), -1.0, static_cast<double>(height - 1)));

    std::vector<double> xs;
    for (int row = row_begin; row <= row_end; ++row) {
        const double y = row;
        xs.clear();
        for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
            if (straddles(pts[k], pts[k + 1], y)) xs.push_back(crossing_x(pts[k], pts[k + 1], y));
        }
        std::sort(xs.begin(), xs.end());
        // Column c is inside iff an odd number of crossings lie strictly right
        // of it, i.e. xs[2k] <= c < xs[2k+1].
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const double first = std::ceil(xs[k]);
            const double last = std::ceil(xs[k + 1]) - 1.0;
            const int c0 = static_cast<int>(std::clamp(first, 0.0, static_cast<double>(width)));
            const int c1 = static_cast<int>(std::clamp(last, -1.0, static_cast<double>(width - 1)));
            for (int c = c0; c <= c1; ++c) mask.set(c, row);
        }
    }
    return mask;
}

PatchGenome apply_constraints(const PatchGenome& genome, const GenomeBounds& bounds) {
    PatchGenome out = genome;
    for (int i = 0; i < genome.patches(); ++i) {
        const Point c = genome.center(i);
        out.set_center(i, {clamp_total(c.x, bounds.x_l, bounds.x_r), clamp_total(c.y, bounds.y_d, bounds.y_u)});
        for (int j = 0; j < genome.vertices(); ++j) {
            out.set_radius(i, j, clamp_total(genome.radius(i, j), bounds.l_min, bounds.l_max));
        }
    }
    return out;
}

BinaryMask patch_mask(const PatchGenome& genome, int patch_index, int width, int height, int samples_per_segment) {
    const auto vertices = compute_vertices(genome, patch_index);
    return rasterize(bspline_contour(vertices, samples_per_segment), width, height);
}

BinaryMask compose_mask(const PatchGenome& genome, const BinaryMask& face_mask, int width, int height,
                        int samples_per_segment) {
    if (!face_mask.same_shape(width, height)) {
        throw Error(ErrorCode::DimensionMismatch, "face mask is " + std::to_string(face_mask.width()) + "x" +
                                                      std::to_string(face_mask.height()) + ", expected " +
                                                      std::to_string(width) + "x" + std::to_string(height));
    }
    BinaryMask out(width, height);
    for (int i = 0; i < genome.patches(); ++i) out |= patch_mask(genome, i, width, height, samples_per_segment);
    out &= face_mask;
    return out;
}

}  // namespace nirpf
