#pragma once

#include <cstdint>

#include "emasam/linalg.hpp"

namespace emasam {

struct EmaConfig {
  double alpha0 = 0.9;  // base momentum
  double norm_epsilon = 1e-12;

  void validate() const;
};

/// Visibility confidence, always held in [0, 1].
class Confidence {
 public:
  constexpr Confidence() = default;
  /// Clamps; NaN maps to 0 (treated as "not visible").
  explicit Confidence(double v) noexcept;
  constexpr double value() const noexcept { return value_; }

 private:
  double value_ = 0.0;
};

/// Unit-norm running latent estimate of the tracked object.
struct EmaPrototype {
  Vec vector;
  bool initialized = false;
  double last_alpha = 0.0;
  std::int64_t update_count = 0;

  bool operator==(const EmaPrototype&) const = default;
};

/// alpha_t = alpha0 * (1 - c_t)
double compute_momentum(const EmaConfig& cfg, Confidence c);

struct EmaUpdate {
  EmaPrototype prototype;
  /// True when the blended vector was too short to normalise (near-antipodal
  /// cancellation, or a zero observation); the previous prototype is kept.
  bool degenerate = false;
};

/// One confidence-weighted update.  An uninitialised prototype is seeded with
/// the normalised observation.  Otherwise
///   m_t = normalize(alpha_t m_{t-1} + (1 - alpha_t) p_t).
EmaUpdate ema_update(const EmaPrototype& proto, const Vec& pointer, Confidence c,
                     const EmaConfig& cfg);

/// Angle in [0, pi] between the prototype and `v`.  Throws on zero vectors.
double prototype_angle_to(const EmaPrototype& proto, const Vec& v);
double angle_between(const Vec& a, const Vec& b);

}  // namespace emasam
