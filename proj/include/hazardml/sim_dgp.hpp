#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hazardml/panel_data.hpp"

namespace hazardml {

// Monthly simulation of a drug-use cohort with two comorbidities. Covariates are
// [age, date, X1, X2] (years; X1, X2 are condition durations, 0 before onset),
// followed by three baseline blood tests for the latent-risk variant.
struct SimConfig {
  int n_subjects = 2000;
  double p2 = 0.5;
  std::uint64_t seed = 0;
  std::array<double, 2> theta_star{1.0, 2.0};
  // Latent-risk variant only.
  bool latent = false;
  double kappa_star = 3.0;
  std::array<double, 3> sigma_test{2.0, 1.0, 4.0};
  std::array<double, 4> beta_star{-0.5, 1.0, 0.0, 0.0};  // beta_0, beta_1..3

  void validate() const;
};

struct SimResult {
  PanelDataset data;       // raw covariates, no normalization attached
  std::vector<int> w;      // hidden risk group per subject (latent variant; empty otherwise)
  std::size_t clipped = 0; // monthly event probabilities that exceeded 1
};

SimResult simulate_1(SimConfig cfg);
SimResult simulate_2(SimConfig cfg);
SimResult simulate(const SimConfig& cfg);

// Monthly outcome probability before clipping (the per-month risk divided by 12).
double outcome_probability(const SimConfig& cfg, int arm, double age, double date, double x1, double x2, int w);

// Condition-2 memory after one month: M' = e^{-3 dt} M + B_prev (1 - e^{-3 dt}) / 3.
double advance_memory(double memory, bool used_last_month, double dt);

// Hidden-W sidecar: "# hazardml latent v1" then "id W" lines.
void save_latent_sidecar(const SimResult& sim, const std::string& path);
std::vector<int> load_latent_sidecar(const std::string& path);

// Config echo written as leading comment lines of simulated dataset files.
std::string describe_config(const SimConfig& cfg);

}  // namespace hazardml
