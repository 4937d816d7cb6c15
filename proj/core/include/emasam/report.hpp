#pragma once

// Text and SVG outputs written by the CLI.  Numbers are printed with
// a fixed format so identical inputs give identical bytes.

#include <filesystem>
#include <string>
#include <vector>

#include "emasam/eval.hpp"
#include "emasam/memory_bank.hpp"

namespace emasam {

std::string format_number(double v);

/// One row per frame: the frame metrics followed by the step log.
std::string frames_csv(const SequenceReport& r);
/// Per-sequence means plus the overall mean, as JSON.
std::string summary_json(const std::vector<SequenceReport>& reports);

std::string ablation_csv(const AblationTable& t);
std::string ablation_text(const AblationTable& t);
/// Per-seed rows for every mode, for the stability comparison.
std::string ablation_seeds_csv(const AblationTable& t);
std::string gain_sweep_csv(const AblationTable& t);

struct PlotSeries {
  std::string label;
  std::vector<double> values;
};

/// Line chart of IoU per frame with the occlusion intervals shaded.
std::string iou_svg(const std::vector<PlotSeries>& series, const std::vector<OcclusionEvent>& events,
                    const std::string& title = "Frame-wise IoU vs. ground truth");

std::string flop_text(const FlopReport& f, const std::string& preset);
std::string flop_json(const FlopReport& f, const std::string& preset);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace emasam
