#include "emasam/ema.hpp"

#include <algorithm>
#include <cmath>

namespace emasam {

void EmaConfig::validate() const {
  if (!(alpha0 > 0.0 && alpha0 < 1.0)) throw ConfigError("ema: alpha0 must lie in (0, 1)");
  if (!(norm_epsilon > 0.0)) throw ConfigError("ema: norm_epsilon must be positive");
}

Confidence::Confidence(double v) noexcept : value_(std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0)) {}

double compute_momentum(const EmaConfig& cfg, Confidence c) {
  return cfg.alpha0 * (1.0 - c.value());
}

EmaUpdate ema_update(const EmaPrototype& proto, const Vec& pointer, Confidence c,
                     const EmaConfig& cfg) {
  cfg.validate();
  if (!pointer.all_finite()) throw NumericError("ema_update: non-finite pointer");
  EmaUpdate out{proto, false};

  if (!proto.initialized) {
    const double n = norm(pointer.span());
    if (n < cfg.norm_epsilon) {
      out.degenerate = true;
      return out;
    }
    out.prototype.vector = normalized(pointer);
    out.prototype.initialized = true;
    out.prototype.last_alpha = compute_momentum(cfg, c);
    out.prototype.update_count = proto.update_count + 1;
    return out;
  }

  if (pointer.dim() != proto.vector.dim()) throw ShapeError("ema_update: dimension mismatch");
  const double alpha = compute_momentum(cfg, c);
  Vec blended(pointer.dim());
  for (std::size_t i = 0; i < blended.dim(); ++i)
    blended[i] = alpha * proto.vector[i] + (1.0 - alpha) * pointer[i];
  const double n = norm(blended.span());
  if (n < cfg.norm_epsilon) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < blended.dim(); ++i) blended[i] /= n;
  out.prototype.vector = std::move(blended);
  out.prototype.last_alpha = alpha;
  out.prototype.update_count = proto.update_count + 1;
  return out;
}

double angle_between(const Vec& a, const Vec& b) {
  if (a.dim() != b.dim()) throw ShapeError("angle: dimension mismatch");
  const double na = norm(a.span());
  const double nb = norm(b.span());
  if (na == 0.0 || nb == 0.0) throw NumericError("angle: zero vector");
  // 2 atan2(|a^ - b^|, |a^ + b^|) equals acos(cos) but keeps full precision
  // near 0 and pi, where acos loses about half the significant digits.
  double diff = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double x = a[i] / na;
    const double y = b[i] / nb;
    diff += (x - y) * (x - y);
    sum += (x + y) * (x + y);
  }
  return 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
}

double prototype_angle_to(const EmaPrototype& proto, const Vec& v) {
  if (!proto.initialized) throw Error("prototype_angle_to: prototype not initialised");
  return angle_between(proto.vector, v);
}

}  // namespace emasam
