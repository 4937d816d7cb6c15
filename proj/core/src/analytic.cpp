#include "emasam/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "emasam/rng.hpp"

namespace emasam {

void AnalyticParams::validate() const {
  if (template_image.size() == 0) throw ConfigError("analytic: empty template");
  if (!(support.height == template_image.height && support.width == template_image.width))
    throw ShapeError("analytic: support and template differ in shape");
  if (!(noise_floor < 1.0)) throw ConfigError("analytic: noise floor must be below 1");
  if (!(mask_logit > 0.0)) throw ConfigError("analytic: mask_logit must be positive");
}

NccPeak ncc_peak(const Image& frame, const Image& tpl, std::optional<GridPos> centre, double radius) {
  const int th = tpl.height, tw = tpl.width;
  const int hr = th / 2, hc = tw / 2;
  const bool windowed = centre && radius > 0.0;
  NccPeak best{0.0, frame.height / 2, frame.width / 2};
  bool found = false;
  for (int r = 0; r < frame.height; ++r) {
    for (int c = 0; c < frame.width; ++c) {
      if (windowed) {
        const double dr = r - centre->row, dc = c - centre->col;
        if (dr * dr + dc * dc > radius * radius) continue;
      }
      // overlap of the template (centred at r, c) with the frame
      const int r0 = std::max(0, hr - r), r1 = std::min(th, frame.height - r + hr);
      const int c0 = std::max(0, hc - c), c1 = std::min(tw, frame.width - c + hc);
      if ((r1 - r0) * 2 < th || (c1 - c0) * 2 < tw) continue;
      double sf = 0, st = 0, n = 0;
      for (int y = r0; y < r1; ++y)
        for (int x = c0; x < c1; ++x) {
          sf += frame.at(r - hr + y, c - hc + x);
          st += tpl.at(y, x);
          n += 1;
        }
      const double mf = sf / n, mt = st / n;
      double num = 0, vf = 0, vt = 0;
      for (int y = r0; y < r1; ++y)
        for (int x = c0; x < c1; ++x) {
          const double f = frame.at(r - hr + y, c - hc + x) - mf;
          const double t = tpl.at(y, x) - mt;
          num += f * t;
          vf += f * f;
          vt += t * t;
        }
      const double denom = std::sqrt(vf * vt);
      const double v = denom > 1e-12 ? num / denom : 0.0;
      if (!found || v > best.value) {
        best = {v, r, c};
        found = true;
      }
    }
  }
  return best;
}

AnalyticParams calibrate_analytic(const SceneSpec& spec, int frames, double quantile) {
  if (frames <= 0) throw ConfigError("calibrate_analytic: frames must be positive");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ConfigError("calibrate_analytic: quantile must lie in (0, 1]");
  AnalyticParams p;
  p.template_image = lesion_template(spec);
  p.support = BinaryMask(p.template_image.height, p.template_image.width);
  for (std::size_t i = 0; i < p.support.size(); ++i) p.support.data[i] = p.template_image.data[i] != 0.0;

  std::vector<double> peaks;
  for (int k = 0; k < frames; ++k) {
    SceneSpec s = spec;
    s.length = 1;
    s.deformations.clear();
    s.occlusions = {{1, 1, OcclusionKind::kReplace}};
    s.seed = splitmix64_mix(spec.seed ^ (0xA5A5A5A5ULL + static_cast<std::uint64_t>(k)));
    const SyntheticSequence seq = generate(s);
    peaks.push_back(ncc_peak(seq.frames[0].pixels, p.template_image, std::nullopt, 0.0).value);
  }
  std::sort(peaks.begin(), peaks.end());
  const auto idx = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(peaks.size()))) - 1;
  p.noise_floor = std::max(0.0, peaks[std::min(idx, peaks.size() - 1)]);
  return p;
}

DecoderOutput analytic_segment(const ToyModel& m, const AnalyticParams& p, const Image& frame,
                               std::optional<GridPos> centre, NccPeak* peak_out) {
  p.validate();
  const NccPeak peak = ncc_peak(frame, p.template_image, centre, p.search_radius);
  if (peak_out) *peak_out = peak;
  DecoderOutput out;
  out.confidence = Confidence((peak.value - p.noise_floor) / (1.0 - p.noise_floor));
  // anything above the noise floor counts as a detection; tau only drives tagging
  const bool present = out.confidence.value() > 0.0;

  out.mask_logits = Image(frame.height, frame.width, -p.mask_logit);
  out.mask = BinaryMask(frame.height, frame.width);
  if (present) {
    const int hr = p.support.height / 2, hc = p.support.width / 2;
    for (int y = 0; y < p.support.height; ++y)
      for (int x = 0; x < p.support.width; ++x) {
        const int r = peak.row - hr + y, c = peak.col - hc + x;
        if (r < 0 || c < 0 || r >= frame.height || c >= frame.width || !p.support.at(y, x)) continue;
        out.mask_logits.at(r, c) = p.mask_logit;
        out.mask.at(r, c) = 1;
      }
  }
  out.iou_estimate = out.confidence.value();

  const FrameEmbedding e = encode_frame(m, frame);
  const std::vector<double> w = pooled_mask(out.mask_logits, m.config.patch);
  double total = 0.0;
  for (double x : w) total += x;
  Vec ptr(m.config.dim());
  for (std::size_t i = 0; i < e.tokens.rows(); ++i)
    axpy(present && total > 0.0 ? w[i] : 1.0, e.tokens.row(i), ptr.span());
  out.pointer = norm(ptr.span()) > 0.0 ? normalized(ptr) : normalized(m.params.mask_token);
  return out;
}

StepResult analytic_step(const ToyModel& m, const AnalyticParams& p, const StreamState& state,
                         const Frame& frame, const std::vector<PointPrompt>& prompts, PrototypeMode mode) {
  if (state.frames_seen == 0 && prompts.empty())
    throw ConfigError("analytic_step: frame " + std::to_string(frame.index) +
                      " is the first frame of the stream and needs a prompt");
  std::optional<GridPos> centre = state.track_centre;
  for (const auto& pr : prompts)
    if (pr.positive)
      centre = GridPos{static_cast<int>(std::lround(pr.y)), static_cast<int>(std::lround(pr.x))};
  NccPeak peak;
  StepResult r;
  r.output = analytic_segment(m, p, frame.pixels, centre, &peak);
  const FrameEmbedding e = encode_frame(m, frame.pixels);
  r.state = advance_state(m, state, e, r.output, frame.index, mode, r.log);
  r.state.track_centre = r.output.confidence.value() > 0.0 ? GridPos{peak.row, peak.col} : centre;
  return r;
}

}  // namespace emasam
