#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tndvga/synthgen.hpp"
#include "tndvga/trainer.hpp"

namespace tndvga {

/// One synthetic training run: the dataset is regenerated from `data`, and
/// the run uses `data.seed` as its training seed.
struct RunSpec {
  GenConfig data;
  Variant variant = Variant::kFull;
  double alpha_1 = 1.0;
  double alpha_2 = 1.0;
};

/// Test-split metrics of one run.
Metrics run_spec(const RunSpec& spec, const ModelConfig& model, const TrainConfig& train);
/// Runs every spec on up to `jobs` threads; results follow the input order.
std::vector<Metrics> run_specs(const std::vector<RunSpec>& specs, const ModelConfig& model, const TrainConfig& train,
                               std::size_t jobs);

struct StudyOptions {
  std::uint64_t base_seed = 0;
  std::size_t seeds = 5;
  std::size_t n = 7000;
  std::vector<double> zetas{0.5, 1.0, 2.0, 3.0};
  /// Radar study over all 16 scenarios, or only (8, 8, 8, 8) when false.
  bool all_scenarios = true;
  ModelConfig model;
  TrainConfig train;
  std::size_t jobs = 1;
};

struct StudyRow {
  std::string study;
  RunSpec spec;
  Metrics test;
};

/// full, no_hsic, no_bp and single_factor across zetas on (8, 8, 8, 8).
std::vector<RunSpec> bias_study_specs(const StudyOptions& o);
/// full and the four zero_z* variants across scenarios at zeta = 1.
std::vector<RunSpec> radar_study_specs(const StudyOptions& o);
/// The 5 x 5 (alpha_1, alpha_2) grid on (8, 8, 8, 8) at zeta = 1.
std::vector<RunSpec> sweep_study_specs(const StudyOptions& o);

std::vector<StudyRow> run_study(const std::string& study, const StudyOptions& o);
/// Tidy CSV, one row per run.
std::string study_csv(const std::vector<StudyRow>& rows);

/// Entry point of the `tndvga` executable; `args` excludes the program name.
/// Returns 0 on success, 1 on numerical failure and 2 on input errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace tndvga
