// Forward-mode dual numbers and a naive-loop forward pass of the patch
// network, used as an independent oracle for the temporal derivative.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "spycer/model.hpp"

namespace oracle {

struct Dual {
    double v = 0.0;
    double d = 0.0;
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator*(double s, Dual a) { return {s * a.v, s * a.d}; }

/// Activations [C][7][7] for one patch.
using Planes = std::vector<std::array<Dual, spycer::kPatchPixels>>;

/// Smallest |z| / |dz| over every relu input seen, i.e. how far the
/// propagated input direction must move before some relu changes branch.
struct KinkTracker {
    double distance = std::numeric_limits<double>::infinity();

    Dual operator()(Dual a) {
        if (a.d != 0.0) distance = std::min(distance, std::abs(a.v / a.d));
        return a.v > 0.0 ? a : Dual{};
    }
};

/// Zero-padded "same" convolution written as plain loops.
inline Planes conv(const spycer::model::Conv<double>& c, const Planes& in) {
    const int out_ch = static_cast<int>(c.weight.dim(0)), in_ch = static_cast<int>(c.weight.dim(1));
    const int k = static_cast<int>(c.weight.dim(2)), pad = k / 2, n = spycer::kPatchSize;
    Planes out(static_cast<std::size_t>(out_ch));
    for (int o = 0; o < out_ch; ++o)
        for (int r = 0; r < n; ++r)
            for (int col = 0; col < n; ++col) {
                Dual acc{c.bias[static_cast<std::size_t>(o)], 0.0};
                for (int i = 0; i < in_ch; ++i)
                    for (int kr = 0; kr < k; ++kr)
                        for (int kc = 0; kc < k; ++kc) {
                            const int rr = r + kr - pad, cc = col + kc - pad;
                            if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
                            const double w = c.weight[static_cast<std::size_t>(((o * in_ch + i) * k + kr) * k + kc)];
                            acc = acc + w * in[static_cast<std::size_t>(i)][static_cast<std::size_t>(rr * n + cc)];
                        }
                out[static_cast<std::size_t>(o)][static_cast<std::size_t>(r * n + col)] = acc;
            }
    return out;
}

inline Planes relu(Planes p, KinkTracker& kinks) {
    for (auto& plane : p)
        for (auto& v : plane) v = kinks(v);
    return p;
}

/// Directional derivative of the output map when the sin and cos channels
/// move by (d_sin, d_cos) per unit.
inline std::array<double, spycer::kPatchPixels> directional(const spycer::model::SpycerNet<double>& net,
                                                            const spycer::PatchSample& normalized, double d_sin,
                                                            double d_cos, KinkTracker& kinks) {
    Planes x(spycer::kChannels);
    for (int ch = 0; ch < spycer::kChannels; ++ch)
        for (int p = 0; p < spycer::kPatchPixels; ++p) {
            double d = 0.0;
            if (ch == spycer::kSinT) d = d_sin;
            if (ch == spycer::kCosT) d = d_cos;
            x[static_cast<std::size_t>(ch)][static_cast<std::size_t>(p)] = {
                normalized.channels[static_cast<std::size_t>(ch * spycer::kPatchPixels + p)], d};
        }
    auto h = relu(conv(net.stem(), x), kinks);
    for (std::size_t b = 0; b < net.block_count(); ++b) {
        const auto& [c1, c2] = net.block_convs(b);
        const auto inner = conv(c2, relu(conv(c1, h), kinks));
        for (std::size_t ch = 0; ch < h.size(); ++ch)
            for (std::size_t p = 0; p < h[ch].size(); ++p) h[ch][p] = h[ch][p] + inner[ch][p];
    }
    const auto y = conv(net.head(), h);
    std::array<double, spycer::kPatchPixels> out{};
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = net.target_std * y[0][p].d;
    return out;
}

/// dT/dt (degC/day) at every pixel of one normalized patch, by propagating
/// d(sin)/dt and d(cos)/dt through the network.
inline std::array<double, spycer::kPatchPixels> temporal_derivative(const spycer::model::SpycerNet<double>& net,
                                                                    const spycer::PatchSample& normalized,
                                                                    double day_of_year) {
    const auto [s, c] = spycer::encode_time(day_of_year);
    const double rate = 2.0 * std::numbers::pi / spycer::kDaysPerYear;
    KinkTracker unused;
    return directional(net, normalized, rate * c, -rate * s, unused);
}

/// Smallest single-channel move of sin or cos that flips some relu. A
/// central difference with step eps is exact up to rounding and curvature
/// only when this exceeds eps.
inline double kink_distance(const spycer::model::SpycerNet<double>& net, const spycer::PatchSample& normalized) {
    KinkTracker kinks;
    directional(net, normalized, 1.0, 0.0, kinks);
    directional(net, normalized, 0.0, 1.0, kinks);
    return kinks.distance;
}

} // namespace oracle
