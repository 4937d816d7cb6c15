#include "emasam/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace emasam {

using detail::json;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace {

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

json metrics_json(const FrameMetrics& m) {
  return {{"dice", m.dice},           {"iou", m.iou},         {"specificity", m.specificity},
          {"sensitivity", m.sensitivity}, {"fp_rate", m.fp_rate}, {"mae", m.mae}};
}

}  // namespace

std::string frames_csv(const SequenceReport& r) {
  std::ostringstream o;
  o << "frame,visible,dice,iou,specificity,sensitivity,fp_rate,mae,tp,fp,tn,fn,"
       "confidence,confidence_used,alpha,prototype_updated,tagged_occluded,prototype_angle,baseline\n";
  for (std::size_t t = 0; t < r.frames.size(); ++t) {
    const auto& f = r.frames[t];
    const auto& l = r.logs[t];
    o << l.frame << ',' << (r.visible[t] ? 1 : 0) << ',' << format_number(f.dice) << ',' << format_number(f.iou)
      << ',' << format_number(f.specificity) << ',' << format_number(f.sensitivity) << ','
      << format_number(f.fp_rate) << ',' << format_number(f.mae) << ',' << f.tp << ',' << f.fp << ',' << f.tn
      << ',' << f.fn << ',' << format_number(l.confidence) << ',' << format_number(l.confidence_used) << ','
      << opt_number(l.alpha) << ',' << (l.prototype_updated ? 1 : 0) << ',' << (l.tagged_occluded ? 1 : 0) << ','
      << opt_number(l.prototype_angle) << ','
      << (t < r.stability.baseline.size() ? opt_number(r.stability.baseline[t]) : "") << '\n';
  }
  return o.str();
}

std::string summary_json(const std::vector<SequenceReport>& reports) {
  json seqs = json::array();
  std::vector<double> dice, iou, fp, spikes, depth, rec;
  for (const auto& r : reports) {
    json events = json::array();
    for (const auto& e : r.events) events.push_back(detail::to_json(e));
    seqs.push_back({{"id", r.id},
                    {"mode", to_string(r.mode)},
                    {"frames", r.frames.size()},
                    {"mean", metrics_json(r.mean)},
                    {"max_dice", r.sweep.max_dice},
                    {"max_iou", r.sweep.max_iou},
                    {"max_specificity", r.sweep.max_specificity},
                    {"spikes", r.stability.spikes.size()},
                    {"mean_spike_depth", r.stability.mean_spike_depth()},
                    {"mean_recovery", r.stability.mean_recovery()},
                    {"events", events}});
    dice.push_back(r.mean.dice);
    iou.push_back(r.mean.iou);
    fp.push_back(r.mean.fp_rate);
    spikes.push_back(static_cast<double>(r.stability.spikes.size()));
    depth.push_back(r.stability.mean_spike_depth());
    rec.push_back(r.stability.mean_recovery());
  }
  json overall = json::object();
  if (!reports.empty())
    overall = {{"sequences", reports.size()},   {"dice", mean_of(dice)},   {"iou", mean_of(iou)},
               {"fp_rate", mean_of(fp)},        {"spikes", mean_of(spikes)}, {"mean_spike_depth", mean_of(depth)},
               {"mean_recovery", mean_of(rec)}};
  return json{{"overall", overall}, {"sequences", seqs}}.dump(2) + "\n";
}

std::string ablation_csv(const AblationTable& t) {
  std::ostringstream o;
  o << "mode,seeds,dice,dice_se,iou,iou_se,fp_rate,fp_rate_se,sensitivity,specificity,spikes,spikes_se,"
       "spike_depth,spike_depth_se,recovery,recovery_se\n";
  for (const auto& m : t.modes)
    o << to_string(m.mode) << ',' << m.seeds.size() << ',' << format_number(m.mean.dice) << ','
      << format_number(m.se.dice) << ',' << format_number(m.mean.iou) << ',' << format_number(m.se.iou) << ','
      << format_number(m.mean.fp_rate) << ',' << format_number(m.se.fp_rate) << ','
      << format_number(m.mean.sensitivity) << ',' << format_number(m.mean.specificity) << ','
      << format_number(m.mean.spikes) << ',' << format_number(m.se.spikes) << ','
      << format_number(m.mean.spike_depth) << ',' << format_number(m.se.spike_depth) << ','
      << format_number(m.mean.recovery) << ',' << format_number(m.se.recovery) << '\n';
  return o.str();
}

std::string ablation_text(const AblationTable& t) {
  std::ostringstream o;
  if (t.low_seed_warning)
    o << "WARNING: low-seed run; standard errors need at least two seeds and are reported as 0\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %16s %16s %16s %8s %8s %8s\n", "mode", "Dice", "IoU", "FP rate", "spikes",
                "depth", "recov");
  o << line;
  for (const auto& m : t.modes) {
    std::snprintf(line, sizeof line, "%-16s %7.4f+-%6.4f %7.4f+-%6.4f %7.4f+-%6.4f %8.3f %8.4f %8.3f\n",
                  to_string(m.mode).c_str(), m.mean.dice, m.se.dice, m.mean.iou, m.se.iou, m.mean.fp_rate,
                  m.se.fp_rate, m.mean.spikes, m.mean.spike_depth, m.mean.recovery);
    o << line;
  }
  if (!t.gain_sweep.empty()) {
    o << "\ngain sweep (full mode)\n";
    for (const auto& g : t.gain_sweep) {
      std::snprintf(line, sizeof line, "  gamma %-6g IoU %7.4f+-%6.4f\n", g.gain, g.mean_iou, g.se_iou);
      o << line;
    }
  }
  return o.str();
}

std::string ablation_seeds_csv(const AblationTable& t) {
  std::ostringstream o;
  o << "mode,seed,dice,iou,fp_rate,sensitivity,specificity,spikes,spike_depth,recovery\n";
  for (const auto& m : t.modes)
    for (const auto& s : m.seeds)
      o << to_string(m.mode) << ',' << s.seed << ',' << format_number(s.dice) << ',' << format_number(s.iou) << ','
        << format_number(s.fp_rate) << ',' << format_number(s.sensitivity) << ','
        << format_number(s.specificity) << ',' << format_number(s.spikes) << ','
        << format_number(s.spike_depth) << ',' << format_number(s.recovery) << '\n';
  return o.str();
}

std::string gain_sweep_csv(const AblationTable& t) {
  std::ostringstream o;
  o << "gain,iou,iou_se\n";
  for (const auto& g : t.gain_sweep)
    o << format_number(g.gain) << ',' << format_number(g.mean_iou) << ',' << format_number(g.se_iou) << '\n';
  return o.str();
}

std::string iou_svg(const std::vector<PlotSeries>& series, const std::vector<OcclusionEvent>& events,
                    const std::string& title) {
  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double w = 720, h = 360, left = 56, right = 150, top = 36, bottom = 44;
  const double pw = w - left - right, ph = h - top - bottom;
  std::size_t n = 0;
  for (const auto& s : series) n = std::max(n, s.values.size());
  const double span = n > 1 ? static_cast<double>(n - 1) : 1.0;
  // frames are 1-based on the x axis
  auto x = [&](double frame) { return left + (frame - 1.0) / span * pw; };
  auto y = [&](double v) { return top + (1.0 - std::clamp(v, 0.0, 1.0)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
    << "</text>\n";
  for (const auto& e : events) {
    const double x0 = x(e.start - 0.5), x1 = x(e.end + 0.5);
    o << "<rect x=\"" << format_number(std::max(left, x0)) << "\" y=\"" << top << "\" width=\""
      << format_number(std::min(left + pw, x1) - std::max(left, x0)) << "\" height=\"" << ph
      << "\" fill=\"" << (e.kind == OcclusionKind::kReplace ? "#f4b6b6" : "#c9c9e8")
      << "\" opacity=\"0.6\"><title>" << to_string(e.kind) << ' ' << e.start << '-' << e.end
      << "</title></rect>\n";
  }
  o << "<g stroke=\"#999\" stroke-width=\"0.5\">\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = k / 5.0;
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << format_number(y(v)) << "\" y2=\""
      << format_number(y(v)) << "\"/>\n";
  }
  o << "</g>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = k / 5.0;
    o << "<text x=\"" << left - 6 << "\" y=\"" << format_number(y(v) + 4) << "\" text-anchor=\"end\">"
      << format_number(v) << "</text>\n";
  }
  const std::size_t step = n > 10 ? (n + 9) / 10 : 1;
  for (std::size_t f = 1; f <= n; f += step)
    o << "<text x=\"" << format_number(x(static_cast<double>(f))) << "\" y=\"" << top + ph + 16
      << "\" text-anchor=\"middle\">" << f << "</text>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\">frame</text>\n";
  o << "<text transform=\"translate(14," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">IoU</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kColours[s % std::size(kColours)];
    o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t t = 0; t < series[s].values.size(); ++t)
      o << (t ? " " : "") << format_number(x(static_cast<double>(t + 1))) << ','
        << format_number(y(series[s].values[t]));
    o << "\"/>\n";
    const double ly = top + 12 + 16 * static_cast<double>(s);
    o << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
      << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << series[s].label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string flop_text(const FlopReport& f, const std::string& preset) {
  std::ostringstream o;
  o << "preset " << preset << '\n'
    << "baseline_flops " << format_number(f.baseline_flops) << '\n'
    << "with_prototype_flops " << format_number(f.with_prototype_flops) << '\n'
    << "attention_delta " << format_number(f.attention_delta) << '\n'
    << "projection_delta " << format_number(f.projection_delta) << '\n'
    << "ema_flops " << format_number(f.ema_flops) << '\n'
    << "relative_overhead " << format_number(f.relative_overhead) << '\n';
  return o.str();
}

std::string flop_json(const FlopReport& f, const std::string& preset) {
  return json{{"preset", preset},
              {"baseline_flops", f.baseline_flops},
              {"with_prototype_flops", f.with_prototype_flops},
              {"attention_delta", f.attention_delta},
              {"projection_delta", f.projection_delta},
              {"ema_flops", f.ema_flops},
              {"relative_overhead", f.relative_overhead}}
             .dump(2) +
         "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace emasam
