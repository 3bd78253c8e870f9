#pragma once

#include <cmath>
#include <cstddef>

#include "dgode/matrix.hpp"
#include "dgode/numerics.hpp"

namespace dgode {

/// Composite-Simpson evaluation of the integral of A^s E W^s over [0, upper].
/// A and W must be symmetric with positive spectra. Deliberately takes the
/// pedestrian route (per-abscissa matrix powers, Simpson weights) so it can
/// serve as an independent check on the closed-form solution.
inline DenseMatrix simpson_power_integral(const DenseMatrix& a, const DenseMatrix& w,
                                          const DenseMatrix& e, double upper,
                                          std::size_t panels = 2000) {
    if (panels < 2 || panels % 2 != 0)
        throw ConfigError("simpson_power_integral: panels must be even and >= 2");
    if (!(upper >= 0.0)) throw ConfigError("simpson_power_integral: negative upper limit");

    const EigenSystem ea = sym_eig(a);
    const EigenSystem ew = sym_eig(w);
    for (double l : ea.values)
        if (!(l > 0.0)) throw Error("simpson_power_integral: A spectrum must be positive");
    for (double l : ew.values)
        if (!(l > 0.0)) throw Error("simpson_power_integral: W spectrum must be positive");

    const double h = upper / static_cast<double>(panels);
    auto integrand = [&](double s) {
        const DenseMatrix a_s = ea.apply([s](double l) { return std::pow(l, s); });
        const DenseMatrix w_s = ew.apply([s](double l) { return std::pow(l, s); });
        return a_s * e * w_s;
    };

    DenseMatrix sum = integrand(0.0) + integrand(upper);
    for (std::size_t k = 1; k < panels; ++k) {
        const double weight = (k % 2 == 1) ? 4.0 : 2.0;
        sum += weight * integrand(h * static_cast<double>(k));
    }
    return (h / 3.0) * sum;
}

}  // namespace dgode
