#pragma once

// Small synthetic panels shared by the unit tests.

#include <cmath>
#include <cstdint>

#include "hazardml/panel_data.hpp"
#include "hazardml/rng.hpp"

namespace hazardml::testing {

// n subjects with K arms and d covariates; steps, arms, covariates and events
// are drawn from `seed`. Every subject has at least one step.
inline PanelDataset random_panel(int n, int k, int d, std::uint64_t seed, double event_rate = 0.08,
                                 int max_steps = 12) {
  PanelDataset ds;
  ds.k_count = k;
  ds.d_count = d;
  for (int j = 0; j < d; ++j) ds.covariate_names.push_back("x" + std::to_string(j));
  for (int i = 0; i < n; ++i) {
    PhiloxStream rng(seed, static_cast<std::uint32_t>(i), 99);
    SubjectPanel s;
    s.id = i;
    const int planned = 1 + static_cast<int>(rng.uniform() * max_steps);
    s.censor_time = (planned - 1 + 0.5) * ds.dt;
    std::vector<double> x(static_cast<std::size_t>(d));
    for (auto& v : x) v = rng.normal();
    for (int step = 0; step < planned; ++step) {
      const double u = rng.uniform();
      s.arms.push_back(u < 0.5 ? -1 : static_cast<int>((u - 0.5) * 2 * k));
      for (auto& v : x) {
        v += 0.3 * rng.normal();
        s.covariates.push_back(v);
      }
      if (rng.uniform() < event_rate) {
        s.event_time = step * ds.dt;
        break;
      }
    }
    ds.subjects.push_back(std::move(s));
  }
  ds.validate();
  return normalize_covariates(ds);
}

// Two-class latent panel: Z_i ~ Bern(logistic(x0_i - 0.3)), one arm with theta = 0.5,
// log-hazard -3 + 0.5 x + kappa Z, one covariate drifting slowly.
inline PanelDataset latent_panel(int n, std::uint64_t seed, double kappa, int max_steps = 24) {
  PanelDataset ds;
  ds.k_count = 1;
  ds.d_count = 1;
  ds.covariate_names = {"x0"};
  for (int i = 0; i < n; ++i) {
    PhiloxStream rng(seed, static_cast<std::uint32_t>(i), 98);
    SubjectPanel s;
    s.id = i;
    s.censor_time = (max_steps - 1 + 0.5) * ds.dt;
    double x = rng.normal();
    const double z = rng.uniform() < 1.0 / (1.0 + std::exp(-(x - 0.3))) ? 1.0 : 0.0;
    for (int step = 0; step < max_steps; ++step) {
      const int arm = rng.uniform() < 0.4 ? 0 : -1;
      s.arms.push_back(arm);
      s.covariates.push_back(x);
      const double eta = -3.0 + 0.5 * x + kappa * z + (arm == 0 ? 0.5 : 0.0);
      if (rng.uniform() < std::min(1.0, std::exp(eta))) {
        s.event_time = step * ds.dt;
        break;
      }
      x += 0.1 * rng.normal();
    }
    ds.subjects.push_back(std::move(s));
  }
  ds.validate();
  return normalize_covariates(ds);
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace hazardml::testing
