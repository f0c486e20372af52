#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hazardml {

inline constexpr double kMonthly = 1.0 / 12.0;

// One subject's discretized trajectory. Step s covers [s*dt, (s+1)*dt).
struct SubjectPanel {
  std::int64_t id = 0;
  double censor_time = 0.0;
  std::optional<double> event_time;
  std::vector<int> arms;           // per step: -1 untreated, else arm index 0..K-1
  std::vector<double> covariates;  // steps x d, row-major, raw units

  std::size_t steps() const { return arms.size(); }
  double x(std::size_t step, std::size_t j, std::size_t d) const { return covariates[step * d + j]; }
};

struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
  // Elapsed time t is standardized as well so the audit kernel sees a unit-scale input.
  double time_mean = 0.0;
  double time_std = 1.0;
};

struct PanelDataset {
  std::vector<SubjectPanel> subjects;
  double dt = kMonthly;
  int k_count = 1;
  int d_count = 0;
  std::vector<std::string> covariate_names;
  std::optional<Normalization> normalization;

  // Throws DataError naming the offending subject on any invariant violation.
  void validate() const;
  std::size_t total_steps() const;
  // Index of the step carrying the event, or -1 when the subject is censored.
  int event_step(const SubjectPanel& s) const;
  int covariate_index(const std::string& name) const;  // -1 if absent
};

PanelDataset load_dataset(const std::string& path);
// `comment` is written as a "# config ..." header line and ignored on reading.
void save_dataset(const PanelDataset& ds, const std::string& path, const std::string& comment = "");
PanelDataset read_dataset(std::istream& in);
void write_dataset(const PanelDataset& ds, std::ostream& out, const std::string& comment = "");

// Population mean/std over every (subject, step) row. Throws on a constant column.
Normalization compute_normalization(const PanelDataset& ds);
// Returns a copy carrying freshly computed statistics.
PanelDataset normalize_covariates(const PanelDataset& ds);
// Returns a copy carrying the given (training) statistics; never recomputes them.
PanelDataset apply_normalization(const PanelDataset& ds, const Normalization& norm);

PanelDataset subset(const PanelDataset& ds, std::span<const std::size_t> subject_indices);
// Resample subjects with replacement; duplicated subjects get fresh ids.
PanelDataset bootstrap_resample(const PanelDataset& ds, std::uint64_t seed);

// Flattened person-time rows used by every likelihood. Inputs are normalized
// covariates followed by normalized elapsed time (column d).
struct RowTable {
  std::vector<std::size_t> subject_offset;  // size n+1
  std::vector<int> arm;
  std::vector<unsigned char> event;
  Eigen::MatrixXd inputs;  // rows x (d+1)
  int k_count = 1;
  double dt = kMonthly;

  std::size_t rows() const { return arm.size(); }
  std::size_t subjects() const { return subject_offset.size() - 1; }
};

// Requires ds.normalization. `subjects` selects and orders subjects (all when empty).
RowTable build_rows(const PanelDataset& ds, std::span<const std::size_t> subjects = {});

// Normalized baseline (step 0) values of the chosen covariates plus a trailing
// intercept column; one row per subject in `subjects` order.
Eigen::MatrixXd baseline_design(const PanelDataset& ds, std::span<const int> covariates,
                                std::span<const std::size_t> subjects = {});

std::vector<std::size_t> all_subjects(const PanelDataset& ds);

}  // namespace hazardml
