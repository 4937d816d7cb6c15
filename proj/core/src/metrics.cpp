#include "emasam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "emasam/linalg.hpp"

namespace emasam {

FrameMetrics frame_metrics(const BinaryMask& pred, const BinaryMask& truth) {
  if (!pred.same_shape(truth))
    throw ShapeError("frame_metrics: prediction " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs truth " + std::to_string(truth.height) + "x" +
                     std::to_string(truth.width));
  FrameMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
    if (p && t) ++m.tp;
    else if (p) ++m.fp;
    else if (t) ++m.fn;
    else ++m.tn;
  }
  const auto tp = static_cast<double>(m.tp), fp = static_cast<double>(m.fp);
  const auto tn = static_cast<double>(m.tn), fn = static_cast<double>(m.fn);
  m.dice = m.tp + m.fp + m.fn == 0 ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
  m.iou = m.tp + m.fp + m.fn == 0 ? 1.0 : tp / (tp + fp + fn);
  m.specificity = m.tn + m.fp == 0 ? 1.0 : tn / (tn + fp);
  m.sensitivity = m.tp + m.fn == 0 ? 1.0 : tp / (tp + fn);
  m.fp_rate = m.tn + m.fp == 0 ? 0.0 : fp / (tn + fp);
  m.mae = pred.size() == 0 ? 0.0 : (fp + fn) / static_cast<double>(pred.size());
  return m;
}

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

double mean_of(std::span<const double> v) {
  if (v.empty()) throw Error("mean_of: empty input");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

double standard_error(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  std::vector<double> sq;
  sq.reserve(v.size());
  for (double x : v) sq.push_back((x - mu) * (x - mu));
  const double var = pairwise_sum(sq) / static_cast<double>(v.size() - 1);
  return std::sqrt(var / static_cast<double>(v.size()));
}

std::vector<double> linspace_thresholds(std::size_t n) {
  if (n == 0) throw ConfigError("thresholds: need at least one");
  if (n == 1) return {0.5};
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

SweepResult threshold_sweep(const std::vector<Image>& logits, const std::vector<BinaryMask>& truths,
                            std::span<const double> thresholds) {
  if (logits.size() != truths.size()) throw ShapeError("threshold_sweep: logits/truth count mismatch");
  if (logits.empty()) throw ShapeError("threshold_sweep: no frames");
  if (thresholds.empty()) throw ConfigError("threshold_sweep: no thresholds");
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw ConfigError("threshold_sweep: thresholds must be sorted");

  std::vector<Image> probs;
  probs.reserve(logits.size());
  for (const auto& l : logits) {
    Image p(l.height, l.width);
    for (std::size_t i = 0; i < l.size(); ++i) p.data[i] = sigmoid(l.data[i]);
    probs.push_back(std::move(p));
  }
  SweepResult best;
  best.max_dice = best.max_iou = best.max_specificity = -1.0;
  std::vector<double> dice(logits.size()), iou(logits.size()), spec(logits.size());
  for (double thr : thresholds) {
    for (std::size_t f = 0; f < probs.size(); ++f) {
      BinaryMask pred(probs[f].height, probs[f].width);
      for (std::size_t i = 0; i < pred.size(); ++i) pred.data[i] = probs[f].data[i] > thr;
      const FrameMetrics m = frame_metrics(pred, truths[f]);
      dice[f] = m.dice;
      iou[f] = m.iou;
      spec[f] = m.specificity;
    }
    const double d = mean_of(dice);
    if (d > best.max_dice) {
      best.max_dice = d;
      best.best_dice_threshold = thr;
    }
    best.max_iou = std::max(best.max_iou, mean_of(iou));
    best.max_specificity = std::max(best.max_specificity, mean_of(spec));
  }
  return best;
}

void StabilityConfig::validate() const {
  if (window == 0) throw ConfigError("stability.window must be positive");
  if (!(drop > 0.0)) throw ConfigError("stability.drop must be positive");
  if (!(recovery_fraction > 0.0 && recovery_fraction <= 1.0))
    throw ConfigError("stability.recovery_fraction must lie in (0, 1]");
}

double StabilityReport::mean_spike_depth() const {
  if (spikes.empty()) return 0.0;
  std::vector<double> d;
  for (const auto& s : spikes) d.push_back(s.depth);
  return mean_of(d);
}

double StabilityReport::mean_recovery() const {
  if (recoveries.empty()) return 0.0;
  std::vector<double> d;
  for (const auto& r : recoveries) d.push_back(r.latency);
  return mean_of(d);
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

StabilityReport stability_analysis(std::span<const double> iou, const std::vector<OcclusionEvent>& events,
                                   const StabilityConfig& cfg) {
  cfg.validate();
  const auto T = static_cast<int>(iou.size());
  StabilityReport rep;
  rep.baseline.resize(iou.size());
  std::optional<SpikeRun> open;
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      const int lo = std::max(0, t - static_cast<int>(cfg.window));
      rep.baseline[t] = median(std::vector<double>(iou.begin() + lo, iou.begin() + t));
    }
    const bool spike = rep.baseline[t] && iou[t] < *rep.baseline[t] - cfg.drop;
    if (spike) {
      const double depth = *rep.baseline[t] - iou[t];
      if (open) {
        open->last_frame = t + 1;
        open->depth = std::max(open->depth, depth);
      } else {
        open = SpikeRun{t + 1, t + 1, depth};
      }
    } else if (open) {
      rep.spikes.push_back(*open);
      open.reset();
    }
  }
  if (open) rep.spikes.push_back(*open);

  for (const auto& e : events) {
    if (e.start < 1 || e.end < e.start || e.end > T)
      throw ConfigError("stability_analysis: event [" + std::to_string(e.start) + ", " +
                        std::to_string(e.end) + "] outside the trajectory");
    RecoveryRecord r{e, 0.0, 0, false};
    const int hi = e.start - 1;  // frames 1..hi precede the event (0-based [0, hi))
    const int lo = std::max(0, hi - static_cast<int>(cfg.window));
    const double pre = hi > lo ? mean_of(std::span<const double>(iou.data() + lo, iou.data() + hi)) : 1.0;
    r.target = cfg.recovery_fraction * pre;
    r.censored = true;
    r.latency = T - e.end;
    for (int t = e.end; t < T; ++t)  // 0-based index e.end is frame e.end + 1
      if (iou[t] >= r.target) {
        r.latency = t - e.end;
        r.censored = false;
        break;
      }
    rep.recoveries.push_back(r);
  }
  return rep;
}

}  // namespace emasam
