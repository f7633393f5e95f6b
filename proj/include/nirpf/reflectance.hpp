#pragma once

#include "nirpf/image.hpp"

namespace nirpf {

/// Skin/ink reflection parameters. Angles in radians, measured from the
/// surface normal; light and view directions are taken as coplanar with it.
struct ReflectanceParams {
    double intensity = 1.0;       // LED intensity scale I
    double roughness = 0.35;      // Beckmann slope alpha, (0,1]
    double f0 = 0.04;             // reflectance at normal incidence
    double diffuse = 0.6;         // diffuse term D_d
    double theta_l = 0.1;
    double theta_v = 0.1;
    double ink_absorption = 0.85; // fraction of NIR light absorbed by the ink

    /// Throws InvalidRange / InvalidAngle on out-of-range fields.
    void validate() const;

    friend bool operator==(const ReflectanceParams&, const ReflectanceParams&) = default;
};

/// How masked pixels are darkened.
enum class InkModel {
    Reflectance,  // x -> clamp(I * f(l,v) * (1 - absorption) * x)
    Zeroing,      // x -> 0
};

double beckmann_d(double theta_h, double alpha);
double fresnel_f(double theta_d, double f0);
/// Smith G1 with the rational Beckmann fit.
double smith_g1(double theta, double alpha);
double geometry_g(double theta_l, double theta_v, double alpha);

/// Diffuse plus Beckmann/Fresnel/Smith specular lobe.
double brdf(const ReflectanceParams& params);

/// Multiplier applied to masked pixels: I * brdf * (1 - ink_absorption).
double ink_factor(const ReflectanceParams& params);

NirImage apply_ink(const NirImage& img, const BinaryMask& mask, const ReflectanceParams& params);
NirImage apply_zeroing(const NirImage& img, const BinaryMask& mask);
NirImage apply_ink_model(const NirImage& img, const BinaryMask& mask, const ReflectanceParams& params,
                         InkModel model);

}  // namespace nirpf
