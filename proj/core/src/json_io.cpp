#include "json_io.hpp"

#include <algorithm>

namespace emasam::detail {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return it.key() == k; });
    if (!known) throw ConfigError(where + "." + it.key() + ": unknown key");
  }
}

json to_json(const OcclusionEvent& e) {
  return {{"start", e.start}, {"end", e.end}, {"kind", to_string(e.kind)}};
}

OcclusionEvent event_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"start", "end", "kind"}, where);
  OcclusionEvent e;
  read_opt(j, "start", e.start, where);
  read_opt(j, "end", e.end, where);
  std::string kind = to_string(e.kind);
  read_opt(j, "kind", kind, where);
  e.kind = occlusion_kind_from_string(kind);
  return e;
}

namespace {

json to_json(const Ellipse& e) {
  return {{"center_row", e.center_row},
          {"center_col", e.center_col},
          {"radius_row", e.radius_row},
          {"radius_col", e.radius_col}};
}

Ellipse ellipse_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"center_row", "center_col", "radius_row", "radius_col"}, where);
  Ellipse e;
  read_opt(j, "center_row", e.center_row, where);
  read_opt(j, "center_col", e.center_col, where);
  read_opt(j, "radius_row", e.radius_row, where);
  read_opt(j, "radius_col", e.radius_col, where);
  return e;
}

json to_json(const SpeckleParams& s) {
  return {{"enabled", s.enabled}, {"shape", s.shape}, {"smoothing", s.smoothing}};
}

SpeckleParams speckle_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"enabled", "shape", "smoothing"}, where);
  SpeckleParams s;
  read_opt(j, "enabled", s.enabled, where);
  read_opt(j, "shape", s.shape, where);
  read_opt(j, "smoothing", s.smoothing, where);
  return s;
}

}  // namespace

json to_json(const SceneSpec& s) {
  json deform = json::array();
  for (const auto& d : s.deformations)
    deform.push_back({{"start", d.start}, {"end", d.end}, {"scale_row", d.scale_row},
                      {"scale_col", d.scale_col}});
  json events = json::array();
  for (const auto& e : s.occlusions) events.push_back(to_json(e));
  json distractors = json::array();
  for (const auto& d : s.distractors)
    distractors.push_back({{"shape", to_json(d.shape)}, {"contrast", d.contrast}});
  const Trajectory& t = s.trajectory;
  return {{"height", s.height},
          {"width", s.width},
          {"length", s.length},
          {"background", s.background},
          {"texture_amplitude", s.texture_amplitude},
          {"trajectory",
           {{"start_row", t.start_row},
            {"start_col", t.start_col},
            {"drift_row", t.drift_row},
            {"drift_col", t.drift_col},
            {"amplitude_row", t.amplitude_row},
            {"amplitude_col", t.amplitude_col},
            {"period", t.period},
            {"phase", t.phase}}},
          {"radius_row", s.radius_row},
          {"radius_col", s.radius_col},
          {"contrast", s.contrast},
          {"shadow_level", s.shadow_level},
          {"shadow_margin", s.shadow_margin},
          {"speckle", to_json(s.speckle)},
          {"deformations", deform},
          {"occlusions", events},
          {"distractors", distractors},
          {"seed", s.seed}};
}

SceneSpec scene_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j,
                      {"height", "width", "length", "background", "texture_amplitude",
                       "trajectory", "radius_row", "radius_col", "contrast", "shadow_level",
                       "shadow_margin", "speckle", "deformations", "occlusions", "distractors",
                       "seed"},
                      where);
  SceneSpec s;
  read_opt(j, "height", s.height, where);
  read_opt(j, "width", s.width, where);
  read_opt(j, "length", s.length, where);
  read_opt(j, "background", s.background, where);
  read_opt(j, "texture_amplitude", s.texture_amplitude, where);
  read_opt(j, "radius_row", s.radius_row, where);
  read_opt(j, "radius_col", s.radius_col, where);
  read_opt(j, "contrast", s.contrast, where);
  read_opt(j, "shadow_level", s.shadow_level, where);
  read_opt(j, "shadow_margin", s.shadow_margin, where);
  read_opt(j, "seed", s.seed, where);
  if (auto it = j.find("trajectory"); it != j.end()) {
    const std::string w = where + ".trajectory";
    reject_unknown_keys(*it,
                        {"start_row", "start_col", "drift_row", "drift_col", "amplitude_row",
                         "amplitude_col", "period", "phase"},
                        w);
    Trajectory& t = s.trajectory;
    read_opt(*it, "start_row", t.start_row, w);
    read_opt(*it, "start_col", t.start_col, w);
    read_opt(*it, "drift_row", t.drift_row, w);
    read_opt(*it, "drift_col", t.drift_col, w);
    read_opt(*it, "amplitude_row", t.amplitude_row, w);
    read_opt(*it, "amplitude_col", t.amplitude_col, w);
    read_opt(*it, "period", t.period, w);
    read_opt(*it, "phase", t.phase, w);
  }
  if (auto it = j.find("speckle"); it != j.end())
    s.speckle = speckle_from_json(*it, where + ".speckle");
  if (auto it = j.find("deformations"); it != j.end()) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string w = where + ".deformations[" + std::to_string(i) + "]";
      const json& dj = (*it)[i];
      reject_unknown_keys(dj, {"start", "end", "scale_row", "scale_col"}, w);
      DeformationEvent d;
      read_opt(dj, "start", d.start, w);
      read_opt(dj, "end", d.end, w);
      read_opt(dj, "scale_row", d.scale_row, w);
      read_opt(dj, "scale_col", d.scale_col, w);
      s.deformations.push_back(d);
    }
  }
  if (auto it = j.find("occlusions"); it != j.end())
    for (std::size_t i = 0; i < it->size(); ++i)
      s.occlusions.push_back(
          event_from_json((*it)[i], where + ".occlusions[" + std::to_string(i) + "]"));
  if (auto it = j.find("distractors"); it != j.end()) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string w = where + ".distractors[" + std::to_string(i) + "]";
      const json& dj = (*it)[i];
      reject_unknown_keys(dj, {"shape", "contrast"}, w);
      Distractor d;
      if (auto sh = dj.find("shape"); sh != dj.end()) d.shape = ellipse_from_json(*sh, w + ".shape");
      read_opt(dj, "contrast", d.contrast, w);
      s.distractors.push_back(d);
    }
  }
  return s;
}

json to_json(const DatasetSpec& d) {
  return {{"count", d.count},
          {"height", d.height},
          {"width", d.width},
          {"length", d.length},
          {"radius_min", d.radius_min},
          {"radius_max", d.radius_max},
          {"contrast_min", d.contrast_min},
          {"contrast_max", d.contrast_max},
          {"max_speed", d.max_speed},
          {"replace_events", d.replace_events},
          {"replace_length", d.replace_length},
          {"shadow_events", d.shadow_events},
          {"shadow_length", d.shadow_length},
          {"deformation_events", d.deformation_events},
          {"texture_amplitude", d.texture_amplitude},
          {"distractors", d.distractors},
          {"speckle", to_json(d.speckle)},
          {"seed", d.seed}};
}

DatasetSpec dataset_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j,
                      {"count", "height", "width", "length", "radius_min", "radius_max",
                       "contrast_min", "contrast_max", "max_speed", "replace_events",
                       "replace_length", "shadow_events", "shadow_length", "deformation_events",
                       "texture_amplitude", "distractors", "speckle", "seed"},
                      where);
  DatasetSpec d;
  read_opt(j, "count", d.count, where);
  read_opt(j, "height", d.height, where);
  read_opt(j, "width", d.width, where);
  read_opt(j, "length", d.length, where);
  read_opt(j, "radius_min", d.radius_min, where);
  read_opt(j, "radius_max", d.radius_max, where);
  read_opt(j, "contrast_min", d.contrast_min, where);
  read_opt(j, "contrast_max", d.contrast_max, where);
  read_opt(j, "max_speed", d.max_speed, where);
  read_opt(j, "replace_events", d.replace_events, where);
  read_opt(j, "replace_length", d.replace_length, where);
  read_opt(j, "shadow_events", d.shadow_events, where);
  read_opt(j, "shadow_length", d.shadow_length, where);
  read_opt(j, "deformation_events", d.deformation_events, where);
  read_opt(j, "texture_amplitude", d.texture_amplitude, where);
  read_opt(j, "distractors", d.distractors, where);
  read_opt(j, "seed", d.seed, where);
  if (auto it = j.find("speckle"); it != j.end())
    d.speckle = speckle_from_json(*it, where + ".speckle");
  return d;
}

json to_json(const ToyConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"patch", c.patch},
          {"dim", c.attn.dim},
          {"layers", c.attn.layers},
          {"mlp_hidden", c.attn.mlp_hidden},
          {"dropout", c.attn.dropout},
          {"pos_scale", c.attn.pos_scale},
          {"norm", c.attn.norm == NormPlacement::kPre ? "pre" : "post"},
          {"rope_base", c.attn.rope_base},
          {"confidence_hidden", c.confidence_hidden},
          {"fuser_hidden", c.fuser_hidden},
          {"confidence_source", to_string(c.confidence_source)},
          {"occlusion_seed", c.occlusion_seed},
          {"bank", {{"capacity", c.bank.capacity}, {"gain", c.bank.gain}, {"tau", c.bank.tau}}},
          {"ema", {{"alpha0", c.ema.alpha0}, {"norm_epsilon", c.ema.norm_epsilon}}}};
}

ToyConfig toy_config_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"height", "width", "patch", "dim", "layers", "mlp_hidden", "dropout", "pos_scale",
                          "norm", "rope_base", "confidence_hidden", "fuser_hidden", "confidence_source",
                          "occlusion_seed", "bank", "ema"},
                      where);
  ToyConfig c;
  read_opt(j, "height", c.height, where);
  read_opt(j, "width", c.width, where);
  read_opt(j, "patch", c.patch, where);
  read_opt(j, "dim", c.attn.dim, where);
  read_opt(j, "layers", c.attn.layers, where);
  read_opt(j, "mlp_hidden", c.attn.mlp_hidden, where);
  read_opt(j, "dropout", c.attn.dropout, where);
  read_opt(j, "pos_scale", c.attn.pos_scale, where);
  std::string norm = c.attn.norm == NormPlacement::kPre ? "pre" : "post";
  read_opt(j, "norm", norm, where);
  if (norm == "pre") c.attn.norm = NormPlacement::kPre;
  else if (norm == "post") c.attn.norm = NormPlacement::kPost;
  else throw ConfigError(where + ".norm: expected pre or post");
  read_opt(j, "rope_base", c.attn.rope_base, where);
  read_opt(j, "confidence_hidden", c.confidence_hidden, where);
  read_opt(j, "fuser_hidden", c.fuser_hidden, where);
  std::string src = to_string(c.confidence_source);
  read_opt(j, "confidence_source", src, where);
  c.confidence_source = confidence_source_from_string(src);
  read_opt(j, "occlusion_seed", c.occlusion_seed, where);
  if (auto it = j.find("bank"); it != j.end()) {
    const std::string w = where + ".bank";
    reject_unknown_keys(*it, {"capacity", "gain", "tau"}, w);
    read_opt(*it, "capacity", c.bank.capacity, w);
    read_opt(*it, "gain", c.bank.gain, w);
    read_opt(*it, "tau", c.bank.tau, w);
  }
  if (auto it = j.find("ema"); it != j.end()) {
    const std::string w = where + ".ema";
    reject_unknown_keys(*it, {"alpha0", "norm_epsilon"}, w);
    read_opt(*it, "alpha0", c.ema.alpha0, w);
    read_opt(*it, "norm_epsilon", c.ema.norm_epsilon, w);
  }
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"sequences", c.sequences},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"grad_clip", c.grad_clip},
          {"update_every", c.update_every},
          {"confidence_weight", c.confidence_weight},
          {"iou_weight", c.iou_weight},
          {"dice_weight", c.dice_weight},
          {"no_prototype_fraction", c.no_prototype_fraction},
          {"fixed_momentum_fraction", c.fixed_momentum_fraction},
          {"teacher_forcing", c.teacher_forcing},
          {"seed", c.seed},
          {"data", to_json(c.data)}};
}

TrainConfig train_config_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"sequences", "epochs", "learning_rate", "beta1", "beta2", "adam_epsilon", "grad_clip",
                          "update_every", "confidence_weight", "iou_weight", "dice_weight", "no_prototype_fraction",
                          "fixed_momentum_fraction", "teacher_forcing", "seed", "data"},
                      where);
  TrainConfig c;
  read_opt(j, "sequences", c.sequences, where);
  read_opt(j, "epochs", c.epochs, where);
  read_opt(j, "learning_rate", c.learning_rate, where);
  read_opt(j, "beta1", c.beta1, where);
  read_opt(j, "beta2", c.beta2, where);
  read_opt(j, "adam_epsilon", c.adam_epsilon, where);
  read_opt(j, "grad_clip", c.grad_clip, where);
  read_opt(j, "update_every", c.update_every, where);
  read_opt(j, "confidence_weight", c.confidence_weight, where);
  read_opt(j, "iou_weight", c.iou_weight, where);
  read_opt(j, "dice_weight", c.dice_weight, where);
  read_opt(j, "no_prototype_fraction", c.no_prototype_fraction, where);
  read_opt(j, "fixed_momentum_fraction", c.fixed_momentum_fraction, where);
  read_opt(j, "teacher_forcing", c.teacher_forcing, where);
  read_opt(j, "seed", c.seed, where);
  if (auto it = j.find("data"); it != j.end()) c.data = dataset_from_json(*it, where + ".data");
  return c;
}

json to_json(const StabilityConfig& c) {
  return {{"window", c.window}, {"drop", c.drop}, {"recovery_fraction", c.recovery_fraction}};
}

StabilityConfig stability_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"window", "drop", "recovery_fraction"}, where);
  StabilityConfig c;
  read_opt(j, "window", c.window, where);
  read_opt(j, "drop", c.drop, where);
  read_opt(j, "recovery_fraction", c.recovery_fraction, where);
  return c;
}

json to_json(const RunOptions& o) {
  return {{"mode", to_string(o.mode)},
          {"segmenter", to_string(o.segmenter)},
          {"sweep_thresholds", o.sweep_thresholds},
          {"analytic_calibration_frames", o.analytic_calibration_frames},
          {"stability", to_json(o.stability)}};
}

RunOptions run_options_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"mode", "segmenter", "sweep_thresholds", "analytic_calibration_frames", "stability"},
                      where);
  RunOptions o;
  std::string mode = to_string(o.mode), seg = to_string(o.segmenter);
  read_opt(j, "mode", mode, where);
  read_opt(j, "segmenter", seg, where);
  o.mode = prototype_mode_from_string(mode);
  o.segmenter = segmenter_from_string(seg);
  read_opt(j, "sweep_thresholds", o.sweep_thresholds, where);
  read_opt(j, "analytic_calibration_frames", o.analytic_calibration_frames, where);
  if (auto it = j.find("stability"); it != j.end()) o.stability = stability_from_json(*it, where + ".stability");
  return o;
}

}  // namespace emasam::detail
