// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "evaluation/physics.hpp"

#include <cmath>
#include <numbers>

#include "core/error.hpp"

namespace appa::eval {

double altitude_from_geopotential(double phi) {
  check(phi < kGravity * kEarthRadius, ErrorCode::kInvalidArgument, "geopotential {} exceeds g0 * Re", phi);
  return phi * kEarthRadius / (kGravity * kEarthRadius - phi);
}

double geopotential_from_altitude(double h) { return kGravity * kEarthRadius * h / (kEarthRadius + h); }

double altitude_from_pressure_temperature(double p, double t, double p0) {
  check(t > 0.0, ErrorCode::kInvalidArgument, "temperature must be positive, got {}", t);
  check(p > 0.0 && p0 > 0.0, ErrorCode::kInvalidArgument, "pressures must be positive");
  return kGasConstant * t / (kMolarMass * kGravity) * std::log(p0 / p);
}

Tensor altitude_difference(const Tensor& phi, const Tensor& pressure, const Tensor& temperature, double p0) {
  require_same_shape(phi, pressure, "altitude_difference");
  require_same_shape(phi, temperature, "altitude_difference");
  Tensor out(phi.shape());
  for (std::size_t i = 0; i < phi.size(); ++i)
    out[i] = altitude_from_geopotential(phi[i]) - altitude_from_pressure_temperature(pressure[i], temperature[i], p0);
  return out;
}

namespace {

struct Gradient {
  double dx;  // d Phi / d x, m s^-2
  double dy;
  double coriolis;
};

bool usable_row(const LatLonGrid& grid, std::size_t r) {
  if (r == 0 || r + 1 >= grid.latitudes.size()) return false;
  const double lat = std::abs(grid.latitudes[r]);
  return lat >= grid.equator_exclusion && lat <= 90.0 - grid.polar_exclusion;
}

Gradient gradient_at(const Tensor& phi, const LatLonGrid& grid, std::size_t r, std::size_t c) {
  const std::size_t nx = grid.columns;
  const double deg = std::numbers::pi / 180.0;
  const double lat = grid.latitudes[r] * deg;
  const double dlon = 2.0 * std::numbers::pi / static_cast<double>(nx);
  const double dlat = (grid.latitudes[r + 1] - grid.latitudes[r - 1]) * deg;
  const double east = phi[r * nx + (c + 1) % nx] - phi[r * nx + (c + nx - 1) % nx];
  const double north = phi[(r + 1) * nx + c] - phi[(r - 1) * nx + c];
  return {east / (2.0 * dlon * kEarthRadius * std::cos(lat)), north / (dlat * kEarthRadius),
          2.0 * kEarthRotation * std::sin(lat)};
}

void check_grid(const Tensor& phi, const LatLonGrid& grid) {
  check(phi.rank() == 2 && phi.dim(0) == grid.latitudes.size() && phi.dim(1) == grid.columns,
        ErrorCode::kShapeMismatch, "field {} does not match a {}x{} grid", shape_string(phi.shape()),
        grid.latitudes.size(), grid.columns);
  check(grid.columns >= 3, ErrorCode::kInvalidArgument, "grid needs at least 3 longitudes");
}

}  // namespace

GeostrophicWind geostrophic_wind(const Tensor& phi, const LatLonGrid& grid) {
  check_grid(phi, grid);
  GeostrophicWind out{Tensor(phi.shape()), Tensor(phi.shape())};
  for (std::size_t r = 0; r < grid.latitudes.size(); ++r) {
    if (!usable_row(grid, r)) continue;
    for (std::size_t c = 0; c < grid.columns; ++c) {
      const Gradient g = gradient_at(phi, grid, r, c);
      out.u[r * grid.columns + c] = -g.dy / g.coriolis;
      out.v[r * grid.columns + c] = g.dx / g.coriolis;
    }
  }
  return out;
}

GeostrophicDiagnostics geostrophic_diagnostics(const Tensor& phi, const Tensor& u, const Tensor& v,
                                               const LatLonGrid& grid) {
  check_grid(phi, grid);
  require_same_shape(phi, u, "geostrophic_diagnostics");
  require_same_shape(phi, v, "geostrophic_diagnostics");
  GeostrophicDiagnostics out;
  std::vector<double> speed, balanced;
  double abs_cos = 0.0;
  for (std::size_t r = 0; r < grid.latitudes.size(); ++r) {
    if (!usable_row(grid, r)) continue;
    for (std::size_t c = 0; c < grid.columns; ++c) {
      const std::size_t i = r * grid.columns + c;
      const Gradient g = gradient_at(phi, grid, r, c);
      const double wind = std::hypot(u[i], v[i]);
      const double grad = std::hypot(g.dx, g.dy);
      speed.push_back(wind);
      balanced.push_back(grad / std::abs(g.coriolis));
      if (wind > 0.0 && grad > 0.0) {
        const double cos_t = (u[i] * g.dx + v[i] * g.dy) / (wind * grad);
        const double sin_t = (u[i] * g.dy - v[i] * g.dx) / (wind * grad);
        out.cos_theta.push_back(cos_t);
        out.sin_theta.push_back(sin_t);
        abs_cos += std::abs(cos_t);
      }
    }
  }
  check(!speed.empty(), ErrorCode::kInvalidArgument, "no grid point survives the latitude mask");
  out.points = speed.size();
  if (!out.cos_theta.empty()) out.mean_abs_cos = abs_cos / static_cast<double>(out.cos_theta.size());

  const double n = static_cast<double>(speed.size());
  double ms = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < speed.size(); ++i) {
    ms += speed[i];
    mb += balanced[i];
  }
  ms /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < speed.size(); ++i) {
    sab += (speed[i] - ms) * (balanced[i] - mb);
    saa += (speed[i] - ms) * (speed[i] - ms);
    sbb += (balanced[i] - mb) * (balanced[i] - mb);
  }
  if (saa > 0.0 && sbb > 0.0)
    out.correlation = sab / std::sqrt(saa * sbb);
  else
    out.degenerate = true;
  return out;
}

}  // namespace appa::eval
