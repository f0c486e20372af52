#include "hazardml/sim_dgp.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hazardml/error.hpp"
#include "hazardml/rng.hpp"

namespace hazardml {
namespace {

enum Process : std::uint32_t { kBaseline = 0, kOutcome = 1, kCondition1 = 2, kDrug = 3, kCondition2 = 4, kLatent = 5 };

constexpr int kShortSpellMonths = 18;

SimResult run(const SimConfig& cfg) {
  cfg.validate();
  const double dt = kMonthly;
  SimResult out;
  PanelDataset& ds = out.data;
  ds.dt = dt;
  ds.k_count = 2;
  ds.covariate_names = {"age", "date", "X1", "X2"};
  if (cfg.latent) ds.covariate_names.insert(ds.covariate_names.end(), {"test1", "test2", "test3"});
  ds.d_count = static_cast<int>(ds.covariate_names.size());
  ds.subjects.reserve(static_cast<std::size_t>(cfg.n_subjects));

  for (int i = 0; i < cfg.n_subjects; ++i) {
    const auto sid = static_cast<std::uint32_t>(i);
    PhiloxStream base(cfg.seed, sid, kBaseline), outcome(cfg.seed, sid, kOutcome),
        cond1(cfg.seed, sid, kCondition1), drug(cfg.seed, sid, kDrug), cond2(cfg.seed, sid, kCondition2);
    const double age0 = base.uniform(50.0, 75.0);
    const double date0 = base.uniform(2000.0, 2005.0);
    const double censor = base.uniform(5.0, 10.0);

    std::array<double, 3> tests{};
    int w = 0;
    if (cfg.latent) {
      PhiloxStream latent(cfg.seed, sid, kLatent);
      double m = cfg.beta_star[0];
      for (std::size_t j = 0; j < 3; ++j) {
        tests[j] = cfg.sigma_test[j] * latent.normal();
        m += cfg.beta_star[j + 1] * tests[j];
      }
      w = latent.bernoulli(1.0 / (1.0 + std::exp(-m))) ? 1 : 0;
      out.w.push_back(w);
    }

    SubjectPanel s;
    s.id = i;
    s.censor_time = censor;
    const int last_step = static_cast<int>(std::floor(censor / dt + 1e-9));
    bool has1 = false, has2 = false;
    double x1 = 0.0, x2 = 0.0, memory = 0.0;
    int spell = 0;          // months in the current drug spell, 0 when not using
    bool used_prev = false; // drug use in the previous month
    for (int m = 0; m <= last_step; ++m) {
      const double t = m * dt;
      const int arm = spell == 0 ? -1 : (spell <= kShortSpellMonths ? 0 : 1);
      s.arms.push_back(arm);
      const double row[] = {age0 + t, date0 + t, x1, x2};
      s.covariates.insert(s.covariates.end(), std::begin(row), std::end(row));
      if (cfg.latent) s.covariates.insert(s.covariates.end(), tests.begin(), tests.end());

      double p = outcome_probability(cfg, arm, age0 + t, date0 + t, x1, x2, w);
      if (p > 1.0) {
        p = 1.0;
        ++out.clipped;
      }
      if (outcome.uniform() < p) {
        s.event_time = t;
        break;
      }

      // Transitions into month m + 1.
      const bool using_now = spell > 0;
      const double p2 = 0.05 + 0.05 * memory;
      if (has1) x1 += dt;
      if (has2) x2 += dt;
      if (!has1 && cond1.uniform() < 0.025) has1 = true;
      if (!has2 && cond2.uniform() < p2) has2 = true;
      if (using_now) {
        spell = drug.uniform() < 0.01 ? 0 : spell + 1;
      } else {
        const double start = 0.004 + 0.2 * x1 * std::exp(-x1 / 0.6) / (0.6 * 0.6);
        if (drug.uniform() < start) spell = 1;
      }
      memory = advance_memory(memory, used_prev, dt);
      used_prev = using_now;
    }
    ds.subjects.push_back(std::move(s));
  }
  ds.validate();
  return out;
}

}  // namespace

void SimConfig::validate() const {
  if (n_subjects < 1) throw UsageError("simulation needs at least one subject");
  if (!std::isfinite(p2)) throw UsageError("P2 must be finite");
  for (double s : sigma_test)
    if (!(s > 0.0)) throw UsageError("blood-test standard deviations must be positive");
}

double outcome_probability(const SimConfig& cfg, int arm, double age, double date, double x1, double x2, int w) {
  using std::numbers::pi;
  double eta = -7.0 + 0.04 * age + 0.2 * std::sin(pi * date / 8.0) - 0.2 * std::cos(pi * date / 6.0) +
               2.0 * x1 * std::exp(-x1 / 1.5) + cfg.p2 * (1.0 - std::exp(-x2 / 2.5));
  if (arm >= 0) eta += cfg.theta_star[static_cast<std::size_t>(arm)];
  if (cfg.latent) eta += cfg.kappa_star * w;
  return std::exp(eta) / 12.0;
}

double advance_memory(double memory, bool used_last_month, double dt) {
  const double decay = std::exp(-3.0 * dt);
  return decay * memory + (used_last_month ? (1.0 - decay) / 3.0 : 0.0);
}

SimResult simulate_1(SimConfig cfg) {
  cfg.latent = false;
  return run(cfg);
}

SimResult simulate_2(SimConfig cfg) {
  cfg.latent = true;
  return run(cfg);
}

SimResult simulate(const SimConfig& cfg) { return run(cfg); }

void save_latent_sidecar(const SimResult& sim, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "# hazardml latent v1\n";
  for (std::size_t i = 0; i < sim.w.size(); ++i) out << sim.data.subjects[i].id << ' ' << sim.w[i] << '\n';
  if (!out) throw DataError("failed writing " + path);
}

std::vector<int> load_latent_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "# hazardml latent v1") throw DataError(path + ": not a latent sidecar");
  std::vector<int> w;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    long long id = 0;
    int value = 0;
    if (!(fields >> id >> value) || (value != 0 && value != 1))
      throw DataError(path + ": malformed line '" + line + "'");
    w.push_back(value);
  }
  return w;
}

std::string describe_config(const SimConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "dgp=" << (cfg.latent ? 2 : 1) << " n=" << cfg.n_subjects << " p2=" << cfg.p2 << " seed=" << cfg.seed
      << " theta=" << cfg.theta_star[0] << ',' << cfg.theta_star[1];
  if (cfg.latent) {
    out << " kappa=" << cfg.kappa_star << " sigma=" << cfg.sigma_test[0] << ',' << cfg.sigma_test[1] << ','
        << cfg.sigma_test[2] << " beta=" << cfg.beta_star[0] << ',' << cfg.beta_star[1] << ','
        << cfg.beta_star[2] << ',' << cfg.beta_star[3];
  }
  return out.str();
}

}  // namespace hazardml
