/**
 * @file physics.hpp
 * @brief Diffusion-reaction residual and its ingredients.
 *
 *   r = dT/dt - K_eff * Lap5(T) - alpha * (T_s - T)
 *
 * evaluated on the 5x5 interior of a 7x7 prediction, with K_eff = K h^2 per
 * day. The temporal derivative comes from central differences on the sin
 * and cos input channels combined through the chain rule
 *
 *   dT/dt = (2 pi / 365) (dT/dsin cos(2 pi t / 365) - dT/dcos sin(2 pi t / 365)).
 */
#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "spycer/error.hpp"
#include "spycer/grid.hpp"
#include "spycer/tensor.hpp"

namespace spycer::physics {

using ad::Tape;
using ad::Tensor;

inline constexpr int kInterior = kPatchSize - 2;
inline constexpr int kInteriorPixels = kInterior * kInterior;
inline constexpr double kTimeRate = 2.0 * std::numbers::pi / kDaysPerYear;

struct PhysicsConfig {
    double K = 0.8;
    double alpha = 0.5;
    double lambda = 0.9;
    double sigma = 1.5;
    double eps_t = 1e-3;
    double h = 10.0;

    void validate() const {
        if (!(K > 0.0) || !(alpha > 0.0) || !(sigma > 0.0) || !(eps_t > 0.0) || !(h > 0.0))
            fail(ErrorKind::Config, "K, alpha, sigma, eps_t and h must be > 0");
        if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorKind::Config, "lambda must be in [0, 1]");
    }

    double k_eff() const { return K * h * h; }
};

/// (N + S + E + W - 4C) / h^2 on the interior of a row-major H x W map.
inline std::vector<double> laplacian5(std::span<const double> map, int height, int width, double h) {
    if (map.size() != static_cast<std::size_t>(height * width) || height < 3 || width < 3)
        fail(ErrorKind::ShapeMismatch, "laplacian5 needs an H x W map with H, W >= 3");
    std::vector<double> out(static_cast<std::size_t>((height - 2) * (width - 2)));
    const double inv = 1.0 / (h * h);
    auto at = [&](int r, int c) { return map[static_cast<std::size_t>(r * width + c)]; };
    for (int r = 1; r < height - 1; ++r)
        for (int c = 1; c < width - 1; ++c)
            out[static_cast<std::size_t>((r - 1) * (width - 2) + c - 1)] =
                (at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c)) * inv;
    return out;
}

/// Residual on the interior of an H x W map (7 x 7 for a patch). `dTdt` is
/// already interior-sized.
inline std::vector<double> adr_residual(std::span<const double> pred, std::span<const double> lst_raw,
                                        std::span<const double> dTdt, const PhysicsConfig& cfg,
                                        int height = kPatchSize, int width = kPatchSize) {
    if (lst_raw.size() != pred.size() || dTdt.size() != static_cast<std::size_t>((height - 2) * (width - 2)))
        fail(ErrorKind::ShapeMismatch, "adr_residual input sizes");
    const auto lap = laplacian5(pred, height, width, cfg.h);
    std::vector<double> r(lap.size());
    for (int i = 1; i < height - 1; ++i)
        for (int j = 1; j < width - 1; ++j) {
            const auto k = static_cast<std::size_t>((i - 1) * (width - 2) + j - 1);
            const auto p = static_cast<std::size_t>(i * width + j);
            r[k] = dTdt[k] - cfg.k_eff() * lap[k] - cfg.alpha * (lst_raw[p] - pred[p]);
        }
    return r;
}

/// Sensible heat flux rho c_p (T_s - T_a) / r_a, W/m^2. Diagnostic only.
inline double sensible_heat_flux(double ts, double ta, double rho, double cp, double ra) {
    if (!(ra > 0.0)) fail(ErrorKind::NonPositiveResistance, "aerodynamic resistance must be > 0");
    return rho * cp * (ts - ta) / ra;
}

/// Chain rule combining channel derivatives into dT/dt (degC/day).
inline double chain_rule_dt(double d_sin, double d_cos, double day_of_year) {
    const auto [s, c] = encode_time(day_of_year);
    return kTimeRate * (d_sin * c - d_cos * s);
}

// ----- tape versions --------------------------------------------------------

/// pred [1, N, H, W] -> [1, N, H-2, W-2] in degC/m^2.
template <typename T>
Tensor<T> laplacian5(Tape<T>& tape, const Tensor<T>& pred, double h) {
    const std::size_t H = pred.dim(pred.rank() - 2), W = pred.dim(pred.rank() - 1);
    auto sum = tape.add(tape.add(tape.crop(pred, 0, 1, H - 2, W - 2), tape.crop(pred, 2, 1, H - 2, W - 2)),
                        tape.add(tape.crop(pred, 1, 0, H - 2, W - 2), tape.crop(pred, 1, 2, H - 2, W - 2)));
    auto lap = tape.sub(sum, tape.scale(tape.crop(pred, 1, 1, H - 2, W - 2), T(4)));
    return tape.scale(lap, static_cast<T>(1.0 / (h * h)));
}

/// Copies of x [8, N, 7, 7] stacked along the batch axis in the order
/// [x, sin+eps, sin-eps, cos+eps, cos-eps] -> [8, 5N, 7, 7].
template <typename T>
Tensor<T> time_perturbed_batch(const Tensor<T>& x, double eps, bool include_base = true) {
    const std::size_t C = x.dim(0), N = x.dim(1), P = x.dim(2) * x.dim(3);
    const std::size_t copies = include_base ? 5 : 4;
    std::vector<T> v(C * copies * N * P);
    const std::array<std::pair<int, double>, 5> variants{
        {{-1, 0.0}, {kSinT, eps}, {kSinT, -eps}, {kCosT, eps}, {kCosT, -eps}}};
    for (std::size_t k = 0; k < copies; ++k) {
        const auto [channel, delta] = variants[include_base ? k : k + 1];
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t p = 0; p < P; ++p) {
                    T val = x[(c * N + n) * P + p];
                    if (static_cast<int>(c) == channel) val += static_cast<T>(delta);
                    v[(c * copies * N + k * N + n) * P + p] = val;
                }
    }
    return Tensor<T>({C, copies * N, x.dim(2), x.dim(3)}, std::move(v));
}

/// dT/dt on the interior from the four perturbed outputs, each [1, N, 7, 7].
template <typename T>
Tensor<T> combine_time_derivative(Tape<T>& tape, const Tensor<T>& sin_plus, const Tensor<T>& sin_minus,
                                  const Tensor<T>& cos_plus, const Tensor<T>& cos_minus,
                                  std::span<const double> day_of_year, double eps) {
    const std::size_t N = sin_plus.dim(1), H = sin_plus.dim(2), W = sin_plus.dim(3);
    if (day_of_year.size() != N) fail(ErrorKind::ShapeMismatch, "one day_of_year per sample expected");
    const auto inv2eps = static_cast<T>(1.0 / (2.0 * eps));
    auto d_sin = tape.scale(tape.sub(tape.crop(sin_plus, 1, 1, H - 2, W - 2), tape.crop(sin_minus, 1, 1, H - 2, W - 2)), inv2eps);
    auto d_cos = tape.scale(tape.sub(tape.crop(cos_plus, 1, 1, H - 2, W - 2), tape.crop(cos_minus, 1, 1, H - 2, W - 2)), inv2eps);
    const std::size_t plane = (H - 2) * (W - 2);
    std::vector<T> cs(N * plane), sn(N * plane);
    for (std::size_t n = 0; n < N; ++n) {
        const auto [s, c] = encode_time(day_of_year[n]);
        std::fill_n(cs.begin() + static_cast<std::ptrdiff_t>(n * plane), plane, static_cast<T>(kTimeRate * c));
        std::fill_n(sn.begin() + static_cast<std::ptrdiff_t>(n * plane), plane, static_cast<T>(kTimeRate * s));
    }
    const ad::Shape shape{1, N, H - 2, W - 2};
    return tape.sub(tape.mul(d_sin, Tensor<T>(shape, std::move(cs))), tape.mul(d_cos, Tensor<T>(shape, std::move(sn))));
}

/// Temporal derivative of an arbitrary patch network `net` (x [8, M, 7, 7]
/// -> [1, M, 7, 7]) by four extra forward passes, batched into one call.
template <typename T, typename Net>
Tensor<T> temporal_derivative(Tape<T>& tape, Net&& net, const Tensor<T>& x, std::span<const double> day_of_year,
                              double eps) {
    const std::size_t N = x.dim(1);
    auto out = net(tape, time_perturbed_batch(x, eps, false));
    return combine_time_derivative(tape, tape.slice(out, 1, 0, N), tape.slice(out, 1, N, 2 * N),
                                   tape.slice(out, 1, 2 * N, 3 * N), tape.slice(out, 1, 3 * N, 4 * N), day_of_year,
                                   eps);
}

/// pred and lst_raw [1, N, 7, 7], dTdt [1, N, 5, 5] -> residual [1, N, 5, 5].
template <typename T>
Tensor<T> adr_residual(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& lst_raw, const Tensor<T>& dTdt,
                       const PhysicsConfig& cfg) {
    const std::size_t H = pred.dim(2), W = pred.dim(3);
    auto diffusion = tape.scale(laplacian5(tape, pred, cfg.h), static_cast<T>(cfg.k_eff()));
    auto reaction = tape.scale(tape.sub(tape.crop(lst_raw, 1, 1, H - 2, W - 2), tape.crop(pred, 1, 1, H - 2, W - 2)),
                               static_cast<T>(cfg.alpha));
    return tape.sub(tape.sub(dTdt, diffusion), reaction);
}

} // namespace spycer::physics
