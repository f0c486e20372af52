#include "hazardml/panel_data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "hazardml/error.hpp"
#include "hazardml/rng.hpp"

namespace hazardml {
namespace {

constexpr const char* kMagic = "# hazardml panel v1";
constexpr std::uint32_t kBootstrapProcess = 0x626f6f74u;

std::string subject_tag(const SubjectPanel& s) { return "subject " + std::to_string(s.id); }

std::size_t expected_steps(double end_time, double dt) {
  return static_cast<std::size_t>(std::floor(end_time / dt + 1e-9)) + 1;
}

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& tok, int line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": malformed number '" + tok + "'");
  }
}

}  // namespace

int PanelDataset::event_step(const SubjectPanel& s) const {
  if (!s.event_time) return -1;
  return static_cast<int>(std::floor(*s.event_time / dt + 1e-9));
}

std::size_t PanelDataset::total_steps() const {
  std::size_t total = 0;
  for (const auto& s : subjects) total += s.steps();
  return total;
}

int PanelDataset::covariate_index(const std::string& name) const {
  for (std::size_t j = 0; j < covariate_names.size(); ++j)
    if (covariate_names[j] == name) return static_cast<int>(j);
  return -1;
}

void PanelDataset::validate() const {
  if (!(dt > 0.0)) throw DataError("dt must be positive");
  if (k_count < 1) throw DataError("K must be at least 1");
  if (d_count < 0) throw DataError("d must be nonnegative");
  if (!covariate_names.empty() && static_cast<int>(covariate_names.size()) != d_count)
    throw DataError("covariate name count does not match d");
  if (normalization) {
    for (double s : normalization->std)
      if (!(s > 0.0)) throw DataError("normalization std must be positive");
    if (static_cast<int>(normalization->std.size()) != d_count)
      throw DataError("normalization size does not match d");
  }
  for (const auto& s : subjects) {
    if (!(s.censor_time > 0.0)) throw DataError(subject_tag(s) + ": censor_time must be positive");
    if (s.steps() == 0) throw DataError(subject_tag(s) + ": no timesteps");
    if (s.covariates.size() != s.steps() * static_cast<std::size_t>(d_count))
      throw DataError(subject_tag(s) + ": covariate block has wrong size");
    double end = s.censor_time;
    if (s.event_time) {
      if (*s.event_time < 0.0 || *s.event_time > s.censor_time)
        throw DataError(subject_tag(s) + ": event_time outside [0, censor_time]");
      end = *s.event_time;
    }
    if (s.steps() != expected_steps(end, dt))
      throw DataError(subject_tag(s) + ": " + std::to_string(s.steps()) +
                      " timesteps, expected " + std::to_string(expected_steps(end, dt)) +
                      " up to min(T, C)");
    for (int a : s.arms)
      if (a < -1 || a >= k_count) throw DataError(subject_tag(s) + ": arm index out of range");
    for (double v : s.covariates)
      if (!std::isfinite(v)) throw DataError(subject_tag(s) + ": non-finite covariate");
  }
}

PanelDataset read_dataset(std::istream& in) {
  PanelDataset ds;
  std::string line;
  int line_no = 0;
  bool have_magic = false;
  bool have_k = false;
  bool have_d = false;
  std::unordered_map<std::int64_t, std::size_t> index_of;
  SubjectPanel* current = nullptr;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "#") {
      if (line == kMagic) {
        have_magic = true;
        continue;
      }
      std::string key;
      ls >> key;
      if (key == "dt") {
        ls >> ds.dt;
      } else if (key == "K") {
        ls >> ds.k_count;
        have_k = true;
      } else if (key == "d") {
        ls >> ds.d_count;
        have_d = true;
      } else if (key == "names") {
        std::string name;
        while (ls >> name) ds.covariate_names.push_back(name);
      }
      continue;
    }
    if (!have_magic) throw DataError("missing '# hazardml panel v1' header");
    if (!have_k || !have_d) throw DataError("header must declare K and d before records");
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);

    if (tag == "S") {
      if (tok.size() != 3) throw DataError("line " + std::to_string(line_no) + ": S record needs 3 fields");
      SubjectPanel s;
      s.id = std::stoll(tok[0]);
      s.censor_time = parse_double(tok[1], line_no);
      if (tok[2] != "NA") s.event_time = parse_double(tok[2], line_no);
      if (index_of.contains(s.id))
        throw DataError("line " + std::to_string(line_no) + ": duplicate subject " + tok[0]);
      index_of[s.id] = ds.subjects.size();
      ds.subjects.push_back(std::move(s));
      current = &ds.subjects.back();
    } else if (tag == "R") {
      const std::size_t want = 2 + static_cast<std::size_t>(ds.k_count + ds.d_count);
      if (tok.size() != want)
        throw DataError("line " + std::to_string(line_no) + ": R record needs " +
                        std::to_string(want) + " fields");
      const std::int64_t id = std::stoll(tok[0]);
      if (current == nullptr || current->id != id)
        throw DataError("line " + std::to_string(line_no) + ": row for subject " + tok[0] +
                        " does not follow its S record");
      const double t = parse_double(tok[1], line_no);
      const std::size_t step = current->steps();
      const double expected_t = static_cast<double>(step) * ds.dt;
      if (std::abs(t - expected_t) > 1e-9 * std::max(1.0, std::abs(expected_t)))
        throw DataError("subject " + tok[0] + ": non-uniform dt at t=" + tok[1]);
      int arm = -1;
      for (int k = 0; k < ds.k_count; ++k) {
        const std::string& a = tok[2 + k];
        if (a == "1") {
          if (arm >= 0) throw DataError("subject " + tok[0] + " t=" + tok[1] + ": simultaneous treatments");
          arm = k;
        } else if (a != "0") {
          throw DataError("line " + std::to_string(line_no) + ": treatment indicator must be 0 or 1");
        }
      }
      current->arms.push_back(arm);
      for (int j = 0; j < ds.d_count; ++j) {
        const std::string& v = tok[2 + ds.k_count + j];
        if (v == ".") {
          if (step == 0)
            throw DataError("subject " + tok[0] + ": '.' carry-forward on the first row");
          current->covariates.push_back(current->x(step - 1, j, ds.d_count));
        } else {
          current->covariates.push_back(parse_double(v, line_no));
        }
      }
    } else {
      throw DataError("line " + std::to_string(line_no) + ": unknown record tag '" + tag + "'");
    }
  }
  if (!have_magic) throw DataError("missing '# hazardml panel v1' header");
  ds.validate();
  return ds;
}

void write_dataset(const PanelDataset& ds, std::ostream& out, const std::string& comment) {
  out << kMagic << '\n';
  if (!comment.empty()) out << "# config " << comment << '\n';
  out << "# dt " << fmt(ds.dt) << '\n';
  out << "# K " << ds.k_count << '\n';
  out << "# d " << ds.d_count << '\n';
  if (!ds.covariate_names.empty()) {
    out << "# names";
    for (const auto& n : ds.covariate_names) out << ' ' << n;
    out << '\n';
  }
  const auto d = static_cast<std::size_t>(ds.d_count);
  for (const auto& s : ds.subjects) {
    out << "S " << s.id << ' ' << fmt(s.censor_time) << ' '
        << (s.event_time ? fmt(*s.event_time) : std::string("NA")) << '\n';
    for (std::size_t step = 0; step < s.steps(); ++step) {
      out << "R " << s.id << ' ' << fmt(static_cast<double>(step) * ds.dt);
      for (int k = 0; k < ds.k_count; ++k) out << (s.arms[step] == k ? " 1" : " 0");
      for (std::size_t j = 0; j < d; ++j) out << ' ' << fmt(s.x(step, j, d));
      out << '\n';
    }
  }
}

PanelDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

void save_dataset(const PanelDataset& ds, const std::string& path, const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset '" + path + "'");
  write_dataset(ds, out, comment);
  if (!out) throw DataError("write failed for '" + path + "'");
}

Normalization compute_normalization(const PanelDataset& ds) {
  const auto d = static_cast<std::size_t>(ds.d_count);
  std::vector<double> sum(d, 0.0);
  double time_sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : ds.subjects) {
    for (std::size_t step = 0; step < s.steps(); ++step) {
      for (std::size_t j = 0; j < d; ++j) sum[j] += s.x(step, j, d);
      time_sum += static_cast<double>(step) * ds.dt;
    }
    count += s.steps();
  }
  if (count == 0) throw DataError("cannot normalize an empty dataset");
  Normalization norm;
  norm.mean.resize(d);
  norm.std.resize(d);
  for (std::size_t j = 0; j < d; ++j) norm.mean[j] = sum[j] / static_cast<double>(count);
  norm.time_mean = time_sum / static_cast<double>(count);

  std::vector<double> ss(d, 0.0);
  double time_ss = 0.0;
  for (const auto& s : ds.subjects) {
    for (std::size_t step = 0; step < s.steps(); ++step) {
      for (std::size_t j = 0; j < d; ++j) {
        const double dev = s.x(step, j, d) - norm.mean[j];
        ss[j] += dev * dev;
      }
      const double dev = static_cast<double>(step) * ds.dt - norm.time_mean;
      time_ss += dev * dev;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    norm.std[j] = std::sqrt(ss[j] / static_cast<double>(count));
    if (!(norm.std[j] > 1e-300)) {
      const std::string name = j < ds.covariate_names.size() ? ds.covariate_names[j]
                                                              : "#" + std::to_string(j);
      throw DataError("covariate " + name + " has zero variance; drop the constant column");
    }
  }
  const double tsd = std::sqrt(time_ss / static_cast<double>(count));
  norm.time_std = tsd > 1e-300 ? tsd : 1.0;
  return norm;
}

PanelDataset normalize_covariates(const PanelDataset& ds) {
  PanelDataset out = ds;
  out.normalization = compute_normalization(ds);
  return out;
}

PanelDataset apply_normalization(const PanelDataset& ds, const Normalization& norm) {
  if (static_cast<int>(norm.mean.size()) != ds.d_count || norm.std.size() != norm.mean.size())
    throw DataError("normalization dimension does not match dataset");
  PanelDataset out = ds;
  out.normalization = norm;
  return out;
}

PanelDataset subset(const PanelDataset& ds, std::span<const std::size_t> subject_indices) {
  PanelDataset out;
  out.dt = ds.dt;
  out.k_count = ds.k_count;
  out.d_count = ds.d_count;
  out.covariate_names = ds.covariate_names;
  out.normalization = ds.normalization;
  out.subjects.reserve(subject_indices.size());
  for (std::size_t i : subject_indices) out.subjects.push_back(ds.subjects.at(i));
  return out;
}

PanelDataset bootstrap_resample(const PanelDataset& ds, std::uint64_t seed) {
  PhiloxStream rng(seed, 0, kBootstrapProcess);
  const std::size_t n = ds.subjects.size();
  std::vector<std::size_t> pick(n);
  for (auto& p : pick)
    p = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
  PanelDataset out = subset(ds, pick);
  for (std::size_t i = 0; i < n; ++i) out.subjects[i].id = static_cast<std::int64_t>(i);
  return out;
}

std::vector<std::size_t> all_subjects(const PanelDataset& ds) {
  std::vector<std::size_t> idx(ds.subjects.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

RowTable build_rows(const PanelDataset& ds, std::span<const std::size_t> subjects) {
  if (!ds.normalization) throw DataError("dataset must be normalized before building rows");
  const Normalization& norm = *ds.normalization;
  std::vector<std::size_t> every;
  if (subjects.empty()) {
    every = all_subjects(ds);
    subjects = every;
  }
  RowTable rt;
  rt.k_count = ds.k_count;
  rt.dt = ds.dt;
  rt.subject_offset.reserve(subjects.size() + 1);
  rt.subject_offset.push_back(0);
  std::size_t total = 0;
  for (std::size_t i : subjects) total += ds.subjects.at(i).steps();
  const auto d = static_cast<std::size_t>(ds.d_count);
  rt.arm.reserve(total);
  rt.event.reserve(total);
  rt.inputs.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d + 1));
  Eigen::Index r = 0;
  for (std::size_t i : subjects) {
    const SubjectPanel& s = ds.subjects[i];
    const int ev = ds.event_step(s);
    for (std::size_t step = 0; step < s.steps(); ++step, ++r) {
      rt.arm.push_back(s.arms[step]);
      rt.event.push_back(static_cast<int>(step) == ev ? 1 : 0);
      for (std::size_t j = 0; j < d; ++j)
        rt.inputs(r, static_cast<Eigen::Index>(j)) = (s.x(step, j, d) - norm.mean[j]) / norm.std[j];
      rt.inputs(r, static_cast<Eigen::Index>(d)) =
          (static_cast<double>(step) * ds.dt - norm.time_mean) / norm.time_std;
    }
    rt.subject_offset.push_back(static_cast<std::size_t>(r));
  }
  return rt;
}

Eigen::MatrixXd baseline_design(const PanelDataset& ds, std::span<const int> covariates,
                                std::span<const std::size_t> subjects) {
  if (!ds.normalization) throw DataError("dataset must be normalized before building the prior design");
  std::vector<std::size_t> every;
  if (subjects.empty()) {
    every = all_subjects(ds);
    subjects = every;
  }
  const auto d = static_cast<std::size_t>(ds.d_count);
  const Normalization& norm = *ds.normalization;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(subjects.size()),
                    static_cast<Eigen::Index>(covariates.size() + 1));
  for (std::size_t r = 0; r < subjects.size(); ++r) {
    const SubjectPanel& s = ds.subjects.at(subjects[r]);
    for (std::size_t c = 0; c < covariates.size(); ++c) {
      const auto j = static_cast<std::size_t>(covariates[c]);
      if (j >= d) throw DataError("prior covariate index out of range");
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          (s.x(0, j, d) - norm.mean[j]) / norm.std[j];
    }
    x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(covariates.size())) = 1.0;
  }
  return x;
}

}  // namespace hazardml
