#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dycon/fecl.hpp"
#include "dycon/fields.hpp"
#include "dycon/metrics.hpp"
#include "dycon/run_config.hpp"
#include "dycon/segnet.hpp"
#include "dycon/synthvol.hpp"
#include "dycon/uncl.hpp"

namespace dycon {

// --- one optimisation step ---------------------------------------------------------

struct StepOptions {
  double eta = 1.0;
  double beta = 1.0;
  EntropyMode entropy_mode = EntropyMode::dual;
  bool use_uncl = true;  // false: plain MSE consistency (vanilla mean teacher)
  bool use_fecl = true;
  FeclOptions fecl;
  int patches_per_axis = 16;
  double gambling_temperature = 1.0;
  bool normalize_patch_entropy = true;

  static StepOptions from(const RunConfig& config, double beta);
};

// Inputs of one step. Images are single-channel, stacked along the batch axis.
struct StepBatch {
  Dims3 spatial;
  std::size_t labeled = 0;
  std::vector<double> labeled_images;
  std::optional<LabelField> labels;
  std::size_t unlabeled = 0;
  std::vector<double> student_views;
  std::vector<double> teacher_views;
  // Test hook: fixed patch classes per unlabeled item instead of teacher argmax.
  std::vector<std::vector<int>> patch_class_override;
};

// FeCL quantities frozen for a step (stop-gradient), one entry per unlabeled item.
struct FeclState {
  std::vector<FeclPlan> plans;
  std::vector<std::vector<double>> teacher_vectors;
};

struct StepResult {
  double dice = 0.0;
  double ce = 0.0;
  double sup = 0.0;
  double consistency = 0.0;  // UnCL, or plain MSE when UnCL is off
  double fecl = 0.0;
  double total = 0.0;
  ParamSet grads;
  FeclState fecl_state;
};

// Total = (Dice + CE) + η (consistency + FeCL). With η = 0 the unlabeled
// branch is skipped entirely. Pass `frozen` to reuse an earlier step's FeCL
// plans (finite-difference probes).
StepResult compute_step(const ParamSet& student, const ParamSet& teacher, const StepBatch& batch,
                        const StepOptions& options, const FeclState* frozen = nullptr,
                        bool with_grad = true);

// --- training ----------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double beta = 0.0;
  double loss_sup = 0.0;
  double loss_uncl = 0.0;
  double loss_fecl = 0.0;
  double loss_total = 0.0;
  double val_dice = 0.0;
  double val_iou = 0.0;
  double val_hd95 = 0.0;
  double val_asd = 0.0;
  double wall_seconds = 0.0;  // written to timing.csv, not epoch_log.csv
};

enum class RunStatus { ok, diverged };

struct TrainResult {
  RunStatus status = RunStatus::ok;
  std::string message;
  std::vector<EpochLog> epochs;
  MetricReport final_metrics;
  double best_dice = 0.0;
  int best_epoch = -1;
  ParamSet student;
  ParamSet teacher;
};

// Hooks for tests; all optional.
struct TrainHooks {
  // Called after every SGD step with the teacher as it was before the step
  // and as it is after the step (before the EMA update).
  std::function<void(const ParamSet& before, const ParamSet& after)> on_sgd_step;
};

// Writes resolved_config.json, epoch_log.csv, timing.csv, summary.json and,
// when enabled, checkpoints/{final,best}/ (student, teacher/).
TrainResult train(const RunConfig& config, const TrainHooks& hooks = {});

std::string epoch_log_csv(const std::vector<EpochLog>& logs);

// --- ablation ----------------------------------------------------------------------

struct AblationCell {
  std::string name;
  nlohmann::json overrides;  // applied onto the base config
};

struct AblationGrid {
  RunConfig base;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;
  std::vector<std::string> axes;  // column names, in order

  // Either {"base": {...}, "seeds": [...], "axes": {name: [values]}} (cartesian)
  // or {"base": {...}, "seeds": [...], "cells": [{"name": ..., "overrides": {...}}]}.
  // Axis names: entropy_mode, beta, gamma, top_k, use_uncl, use_fecl, eta.
  static AblationGrid from_json(const nlohmann::json& j);
};

struct AblationRow {
  std::string cell;
  nlohmann::json overrides;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::ok;
  MetricReport final_metrics;
  double best_dice = 0.0;
};

struct AblationSummaryRow {
  std::string cell;
  std::size_t runs = 0;
  double mean_dice = 0.0;
  double mean_iou = 0.0;
  double mean_hd95 = 0.0;
  double mean_asd = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<AblationSummaryRow> summary;  // seed means, cell order
};

// Runs every (cell, seed) under base.output_dir/<cell>/seed_<s>/ and writes
// ablation.csv (one row per run) and ablation_summary.csv (seed means).
AblationResult ablate(const AblationGrid& grid);

// --- evaluation ----------------------------------------------------------------------

enum class GroupBy { category, scatter };

struct GroupRow {
  std::string group;
  std::size_t volumes = 0;
  double dice = 0.0;
  double iou = 0.0;
  double hd95 = 0.0;
  double asd = 0.0;
};

struct EvaluationResult {
  MetricReport report;
  std::vector<GroupRow> groups;
  std::vector<std::string> warnings;
};

using Predictor = std::function<LabelField(const VolumeBatch& image, const VolumeEntry& entry)>;

Predictor checkpoint_predictor(const ParamSet& params);

// split: "val", "train" or "all".
EvaluationResult evaluate(const Predictor& predictor, const DatasetManifest& manifest,
                          GroupBy group_by, const std::string& split = "val");
EvaluationResult evaluate(const std::filesystem::path& checkpoint,
                          const std::filesystem::path& manifest, GroupBy group_by,
                          const std::string& split = "val");

// Per-volume report CSV plus groups CSV (group, volumes, dice, iou, hd95, asd).
void write_evaluation(const EvaluationResult& result, const std::filesystem::path& report_csv,
                      const std::filesystem::path& groups_csv);

}  // namespace dycon
