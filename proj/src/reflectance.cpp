#include "nirpf/reflectance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nirpf/error.hpp"

namespace nirpf {
namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

void require_open_quadrant(double theta, const char* what) {
    if (!(theta >= 0.0 && theta < kHalfPi)) {
        throw Error(ErrorCode::InvalidAngle, std::string(what) + " must lie in [0, pi/2)");
    }
}

void require_unit(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidRange, std::string(what) + " must lie in [0, 1]");
}

}  // namespace

void ReflectanceParams::validate() const {
    if (!(std::isfinite(intensity) && intensity >= 0.0)) {
        throw Error(ErrorCode::InvalidRange, "intensity must be finite and nonnegative");
    }
    if (!(roughness > 0.0 && roughness <= 1.0)) throw Error(ErrorCode::InvalidRange, "roughness must lie in (0, 1]");
    require_unit(f0, "f0");
    require_unit(diffuse, "diffuse");
    require_unit(ink_absorption, "ink_absorption");
    require_open_quadrant(theta_l, "theta_l");
    require_open_quadrant(theta_v, "theta_v");
}

double beckmann_d(double theta_h, double alpha) {
    require_open_quadrant(theta_h, "theta_h");
    if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidRange, "alpha must be positive");
    const double c = std::cos(theta_h);
    const double t = std::tan(theta_h);
    const double a2 = alpha * alpha;
    return std::exp(-(t * t) / a2) / (std::numbers::pi * a2 * c * c * c * c);
}

double fresnel_f(double theta_d, double f0) {
    if (!(theta_d >= 0.0 && theta_d <= kHalfPi)) throw Error(ErrorCode::InvalidAngle, "theta_d must lie in [0, pi/2]");
    const double k = 1.0 - std::cos(theta_d);
    const double k2 = k * k;
    return f0 + (1.0 - f0) * k2 * k2 * k;
}

double smith_g1(double theta, double alpha) {
    require_open_quadrant(theta, "theta");
    if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidRange, "alpha must be positive");
    if (theta == 0.0) return 1.0;
    const double a = 1.0 / (alpha * std::tan(theta));
    if (a >= 1.6) return 1.0;
    // The fit overshoots 1 by up to ~6e-5 just below a = 1.6.
    return std::min(1.0, a * (3.535 + 2.181 * a) / (1.0 + a * (2.276 + 2.577 * a)));
}

double geometry_g(double theta_l, double theta_v, double alpha) {
    return smith_g1(theta_l, alpha) * smith_g1(theta_v, alpha);
}

double brdf(const ReflectanceParams& p) {
    p.validate();
    const double cos_l = std::cos(p.theta_l);
    const double cos_v = std::cos(p.theta_v);
    if (cos_l * cos_v < 1e-6) throw Error(ErrorCode::GrazingSingularity, "light or view direction too close to grazing");
    const double theta_h = std::abs(p.theta_l - p.theta_v) / 2.0;
    const double theta_d = (p.theta_l + p.theta_v) / 2.0;
    const double specular = beckmann_d(theta_h, p.roughness) * fresnel_f(theta_d, p.f0) *
                            geometry_g(p.theta_l, p.theta_v, p.roughness) / (4.0 * cos_l * cos_v);
    return p.diffuse + specular;
}

double ink_factor(const ReflectanceParams& params) {
    return params.intensity * brdf(params) * (1.0 - params.ink_absorption);
}

NirImage apply_ink(const NirImage& img, const BinaryMask& mask, const ReflectanceParams& params) {
    if (!mask.same_shape(img.width(), img.height())) throw Error(ErrorCode::DimensionMismatch, "apply_ink mask size");
    const double factor = ink_factor(params);
    NirImage out = img;
    auto px = out.data();
    const auto bits = mask.bits();
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (bits[i]) px[i] = std::clamp(factor * px[i], 0.0, 1.0);
    }
    return out;
}

NirImage apply_zeroing(const NirImage& img, const BinaryMask& mask) {
    if (!mask.same_shape(img.width(), img.height())) throw Error(ErrorCode::DimensionMismatch, "apply_zeroing mask size");
    NirImage out = img;
    auto px = out.data();
    const auto bits = mask.bits();
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (bits[i]) px[i] = 0.0;
    }
    return out;
}

NirImage apply_ink_model(const NirImage& img, const BinaryMask& mask, const ReflectanceParams& params,
                         InkModel model) {
    return model == InkModel::Zeroing ? apply_zeroing(img, mask) : apply_ink(img, mask, params);
}

}  // namespace nirpf
