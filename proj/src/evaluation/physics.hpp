// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "core/tensor.hpp"

namespace appa::eval {

inline constexpr double kEarthRadius = 6.371e6;         // m
inline constexpr double kGravity = 9.80665;             // m s^-2
inline constexpr double kGasConstant = 8.314;           // J mol^-1 K^-1
inline constexpr double kMolarMass = 0.028964;          // kg mol^-1
inline constexpr double kEarthRotation = 7.2921159e-5;  // rad s^-1
inline constexpr double kSeaLevelPressure = 101325.0;   // Pa

/// Altitude (m) from geopotential (m^2 s^-2).
double altitude_from_geopotential(double phi);
/// Inverse of altitude_from_geopotential.
double geopotential_from_altitude(double h);

/// Altitude (m) of pressure level p under an isothermal layer at temperature
/// t between p0 and p.
double altitude_from_pressure_temperature(double p, double t, double p0 = kSeaLevelPressure);

/// Pointwise estimator difference (geopotential minus pressure/temperature)
/// for fields of equal shape.
Tensor altitude_difference(const Tensor& phi, const Tensor& pressure, const Tensor& temperature,
                           double p0 = kSeaLevelPressure);

/// Lat-lon grid: rows are latitudes (degrees, any order), columns span the
/// full longitude circle periodically.
struct LatLonGrid {
  std::vector<double> latitudes;
  std::size_t columns = 0;
  /// Points with |latitude| below this (Coriolis vanishes) or above
  /// 90 - polar_exclusion are skipped.
  double equator_exclusion = 5.0;
  double polar_exclusion = 5.0;
};

struct GeostrophicWind {
  Tensor u;
  Tensor v;
};

/// Balanced wind of a geopotential field [rows, columns] using centered
/// differences (periodic in longitude). Edge rows and excluded latitudes are
/// set to zero.
GeostrophicWind geostrophic_wind(const Tensor& phi, const LatLonGrid& grid);

struct GeostrophicDiagnostics {
  std::vector<double> cos_theta;  // angle between wind and geopotential gradient
  std::vector<double> sin_theta;
  double mean_abs_cos = 0.0;
  /// Pearson correlation between wind speed and geostrophic speed
  /// |grad Phi| / |f|; empty when either has zero variance.
  std::optional<double> correlation;
  bool degenerate = false;
  std::size_t points = 0;
};

GeostrophicDiagnostics geostrophic_diagnostics(const Tensor& phi, const Tensor& u, const Tensor& v,
                                               const LatLonGrid& grid);

}  // namespace appa::eval
