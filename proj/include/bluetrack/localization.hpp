#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "bluetrack/error.hpp"
#include "bluetrack/protocol.hpp"

namespace bluetrack {

/// A point in the XY plane, meters.
struct Point2D {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2D&, const Point2D&) = default;
};

inline Point2D operator+(Point2D a, Point2D b) { return {a.x + b.x, a.y + b.y}; }
inline Point2D operator-(Point2D a, Point2D b) { return {a.x - b.x, a.y - b.y}; }

inline double distance(Point2D a, Point2D b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct AccessPoint {
  ApCode code;
  Point2D position;
};

/// The three access points every tracked device is connected to.
class ApLayout {
 public:
  ApLayout(AccessPoint ap1, AccessPoint ap2, AccessPoint ap3)
      : aps_{std::move(ap1), std::move(ap2), std::move(ap3)} {
    for (const auto& ap : aps_) {
      if (!std::isfinite(ap.position.x) || !std::isfinite(ap.position.y)) {
        throw InvalidLayout("access point " + ap.code.value() +
                            " has a non-finite coordinate");
      }
    }
    for (std::size_t i = 0; i < aps_.size(); ++i) {
      for (std::size_t j = i + 1; j < aps_.size(); ++j) {
        if (aps_[i].code == aps_[j].code) {
          throw DuplicateCode("duplicate access point code: " + aps_[i].code.value());
        }
        if (aps_[i].position == aps_[j].position) {
          throw InvalidLayout("access points " + aps_[i].code.value() + " and " +
                              aps_[j].code.value() + " share a position");
        }
      }
    }
  }

  const AccessPoint& operator[](std::size_t i) const { return aps_[i]; }
  const std::array<AccessPoint, 3>& aps() const noexcept { return aps_; }

  Point2D position(std::size_t i) const { return aps_[i].position; }

  bool contains(const ApCode& code) const {
    return std::any_of(aps_.begin(), aps_.end(),
                       [&](const AccessPoint& ap) { return ap.code == code; });
  }

  // Largest absolute coordinate; sets the scale of the degeneracy floor.
  double scale() const {
    double s = 0.0;
    for (const auto& ap : aps_) {
      s = std::max({s, std::abs(ap.position.x), std::abs(ap.position.y)});
    }
    return s;
  }

  friend bool operator==(const ApLayout& a, const ApLayout& b) {
    for (std::size_t i = 0; i < 3; ++i) {
      if (a.aps_[i].code != b.aps_[i].code || a.aps_[i].position != b.aps_[i].position) {
        return false;
      }
    }
    return true;
  }

 private:
  std::array<AccessPoint, 3> aps_;
};

/// Distances from AP1, AP2, AP3 to the device, meters.
struct DistanceTriple {
  double s1 = 0.0;
  double s2 = 0.0;
  double s3 = 0.0;

  void validate() const {
    for (double s : {s1, s2, s3}) {
      if (!std::isfinite(s) || s < 0.0) {
        throw InvalidDistance("distance must be finite and non-negative");
      }
    }
  }
};

/// The pair of lines obtained by subtracting circle equations (1)-(2) and
/// (2)-(3):
///
///   a x + b y = e
///   c x + d y = f
struct LinearSystem2 {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
  double e = 0.0;
  double f = 0.0;
  // Coordinate magnitude of the layout the system came from.
  double scale = 0.0;

  /// Gram determinant of A, (a²+c²)(b²+d²) − (ab+cd)². Never negative in
  /// exact arithmetic.
  double denom() const {
    return (a * a + c * c) * (b * b + d * d) - (a * b + c * d) * (a * b + c * d);
  }
};

inline constexpr double kDefaultGeometryEpsilon = 1e-9;

inline double degeneracy_floor(double scale, double epsilon = kDefaultGeometryEpsilon) {
  const double s = std::max(1.0, scale);
  return epsilon * s * s * s * s;
}

inline LinearSystem2 build_linear_system(const ApLayout& layout, const DistanceTriple& dists) {
  const auto [x1, y1] = layout.position(0);
  const auto [x2, y2] = layout.position(1);
  const auto [x3, y3] = layout.position(2);
  const double s1 = dists.s1;
  const double s2 = dists.s2;
  const double s3 = dists.s3;

  LinearSystem2 sys;
  sys.a = 2.0 * (x2 - x1);
  sys.b = 2.0 * (y2 - y1);
  sys.c = 2.0 * (x3 - x2);
  sys.d = 2.0 * (y3 - y2);
  sys.e = s1 * s1 - s2 * s2 - x1 * x1 + x2 * x2 - y1 * y1 + y2 * y2;
  sys.f = s2 * s2 - s3 * s3 - x2 * x2 + x3 * x3 - y2 * y2 + y3 * y3;
  sys.scale = layout.scale();
  return sys;
}

enum class GeometryVerdict { ok, degenerate };

struct GeometryCheck {
  GeometryVerdict verdict = GeometryVerdict::ok;
  double denom = 0.0;
  double floor = 0.0;

  bool ok() const noexcept { return verdict == GeometryVerdict::ok; }
};

inline GeometryCheck check_geometry(const ApLayout& layout,
                                   double epsilon = kDefaultGeometryEpsilon) {
  // Distances do not enter a..d, so zeros are as good as any.
  const auto sys = build_linear_system(layout, DistanceTriple{});
  GeometryCheck check;
  check.denom = sys.denom();
  check.floor = degeneracy_floor(sys.scale, epsilon);
  check.verdict = check.denom < check.floor ? GeometryVerdict::degenerate : GeometryVerdict::ok;
  return check;
}

/// Normal-equation solution x = (AᵀA)⁻¹Aᵀb in closed form.
///
/// Squaring A squares its condition number, so the products are carried in
/// extended precision; thin triangles would otherwise lose most digits.
inline Point2D solve_position(const LinearSystem2& sys,
                              double epsilon = kDefaultGeometryEpsilon) {
  using wide = long double;
  const wide a = sys.a, b = sys.b, c = sys.c, d = sys.d, e = sys.e, f = sys.f;
  const wide col_a = a * a + c * c;  // a² + c²
  const wide col_b = b * b + d * d;  // b² + d²
  const wide cross = a * b + c * d;  // ab + cd
  // The verdict uses the same double-precision determinant as check_geometry.
  if (!(sys.denom() >= degeneracy_floor(sys.scale, epsilon))) {
    throw DegenerateGeometry("access points are collinear (Gram determinant " +
                             std::to_string(sys.denom()) + ")");
  }
  const wide denom = col_a * col_b - cross * cross;
  const wide rhs_a = a * e + c * f;  // ae + cf
  const wide rhs_b = b * e + d * f;  // be + df
  return Point2D{static_cast<double>((col_b * rhs_a - cross * rhs_b) / denom),
                 static_cast<double>((col_a * rhs_b - cross * rhs_a) / denom)};
}

/// Distances that admit no common point are not rejected; the linearized
/// answer is returned as-is.
inline Point2D trilaterate(const ApLayout& layout, const DistanceTriple& dists,
                           double epsilon = kDefaultGeometryEpsilon) {
  dists.validate();
  // Same answer in a frame anchored at the first access point, but the
  // squared coordinates stay small and cancel less. The degeneracy floor
  // keeps the original layout's scale.
  const Point2D origin = layout.position(0);
  const ApLayout local({layout[0].code, {0.0, 0.0}}, {layout[1].code, layout.position(1) - origin},
                       {layout[2].code, layout.position(2) - origin});
  auto sys = build_linear_system(local, dists);
  sys.scale = layout.scale();
  return solve_position(sys, epsilon) + origin;
}

inline DistanceTriple true_distances(const ApLayout& layout, Point2D p) {
  return {distance(layout.position(0), p), distance(layout.position(1), p),
          distance(layout.position(2), p)};
}

inline ApLayout layout_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw InvalidLayout("layout must list exactly three access points");
  }
  auto ap = [&](std::size_t i) {
    return AccessPoint{ApCode::parse(j[i].at("code").get<std::string>()),
                       {j[i].at("x").get<double>(), j[i].at("y").get<double>()}};
  };
  return ApLayout(ap(0), ap(1), ap(2));
}

inline nlohmann::json to_json(const ApLayout& layout) {
  auto arr = nlohmann::json::array();
  for (const auto& ap : layout.aps()) {
    arr.push_back({{"code", ap.code.value()}, {"x", ap.position.x}, {"y", ap.position.y}});
  }
  return arr;
}

}  // namespace bluetrack
