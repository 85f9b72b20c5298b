#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "trot/matrix.hpp"
#include "trot/parallel.hpp"
#include "trot/qmath.hpp"
#include "trot/solvers.hpp"
#include "trot/transport.hpp"

// Reconstruction of party x ethnicity contingency tables from regional
// marginals plus a cost matrix built from side information: ingestion of
// individual records, cost-matrix construction, hyper-parameter search on
// hold-in regions and whole-dataset inference with baseline comparisons.
namespace trot::eco {

inline constexpr std::array<const char*, 3> kParties = {"democrat", "republican", "other"};
inline constexpr std::array<const char*, 6> kEthnicities = {"white", "african_american", "hispanic",
                                                            "asian", "native", "other"};
inline constexpr std::array<const char*, 2> kGenders = {"female", "male"};

inline constexpr std::size_t kPartyCount = kParties.size();
inline constexpr std::size_t kEthnicityCount = kEthnicities.size();

/// One individual after validation. Age is raw at parse time; the [0, 1]
/// normalization is min-max over the whole file and is applied when the
/// dataset-level profiles are assembled.
struct VoterRecord {
  std::string region_id;
  std::string district_id;
  double age = 0.0;
  int gender = 0;
  int party = 0;
  int ethnicity = 0;
  bool prior_vote = false;
};

struct Region {
  std::string id;
  std::string district;
  Vector party_marginal;      ///< length 3, sums to 1
  Vector ethnicity_marginal;  ///< length 6, sums to 1
  Matrix ground_truth;        ///< 3 x 6 joint; empty when absent
  bool has_truth = false;
  long long records = 0;
};

struct RegionDataset {
  std::vector<Region> regions;          ///< sorted by region id
  Matrix party_profiles;                ///< 3 x 3 features: age, gender rate, prior-vote rate
  Matrix ethnicity_profiles;            ///< 6 x 3 features
  std::vector<std::string> warnings;
  long long total_records = 0;
  long long excluded_records = 0;

  const Region* find(const std::string& id) const {
    for (const auto& region : regions)
      if (region.id == id) return &region;
    return nullptr;
  }
};

namespace detail {

inline std::string lowercase(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

template <std::size_t N>
inline int level_index(const std::string& value, const std::array<const char*, N>& levels,
                       const char* field) {
  for (std::size_t k = 0; k < N; ++k)
    if (value == levels[k]) return static_cast<int>(k);
  throw std::runtime_error(std::string("ingest: unknown ") + field + " level '" + value + "'");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace detail

inline constexpr const char* kRecordsHeader = "region_id,district_id,age,gender,party,ethnicity,prior_vote";

/// Reads an individual-records CSV, drops rows with missing attributes,
/// counts per-region marginals and ground-truth joints, and aggregates the
/// full-population profile vectors per party and per ethnicity (age min-max
/// normalized over the whole file; gender and prior vote as rates).
/// Unknown categorical levels are a hard error naming the value.
inline RegionDataset ingest(const std::string& records_path) {
  std::ifstream in(records_path);
  if (!in) throw std::runtime_error("ingest: cannot open " + records_path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("ingest: empty file " + records_path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRecordsHeader)
    throw std::runtime_error(std::string("ingest: header must be '") + kRecordsHeader + "'");

  struct RegionAccum {
    std::string district;
    std::array<std::array<long long, kEthnicityCount>, kPartyCount> counts{};
    long long total = 0;
  };
  std::map<std::string, RegionAccum> by_region;

  struct ProfileAccum {
    double age_sum = 0.0, gender_sum = 0.0, prior_sum = 0.0;
    long long count = 0;
  };
  std::array<ProfileAccum, kPartyCount> party_acc{};
  std::array<ProfileAccum, kEthnicityCount> eth_acc{};
  double age_min = std::numeric_limits<double>::infinity();
  double age_max = -std::numeric_limits<double>::infinity();

  RegionDataset data;
  std::vector<std::string> excluded_region_ids;
  auto note_exclusion = [&](const std::vector<std::string>& fields) {
    data.excluded_records += 1;
    if (!fields.empty() && !fields[0].empty()) excluded_region_ids.push_back(fields[0]);
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 7) {
      note_exclusion(fields);
      continue;
    }
    bool missing = false;
    for (const auto& f : fields) missing = missing || f.empty();
    if (missing) {
      note_exclusion(fields);
      continue;
    }
    VoterRecord record;
    record.region_id = fields[0];
    record.district_id = fields[1];
    try {
      record.age = std::stod(fields[2]);
    } catch (const std::exception&) {
      note_exclusion(fields);
      continue;
    }
    record.gender = detail::level_index(detail::lowercase(fields[3]), kGenders, "gender");
    record.party = detail::level_index(detail::lowercase(fields[4]), kParties, "party");
    record.ethnicity = detail::level_index(detail::lowercase(fields[5]), kEthnicities, "ethnicity");
    if (fields[6] != "0" && fields[6] != "1")
      throw std::runtime_error("ingest: unknown prior_vote level '" + fields[6] + "'");
    record.prior_vote = fields[6] == "1";

    auto& region = by_region[record.region_id];
    if (region.total == 0) region.district = record.district_id;
    region.counts[static_cast<std::size_t>(record.party)][static_cast<std::size_t>(record.ethnicity)] += 1;
    region.total += 1;

    age_min = std::min(age_min, record.age);
    age_max = std::max(age_max, record.age);
    auto bump = [&](ProfileAccum& acc) {
      acc.age_sum += record.age;
      acc.gender_sum += record.gender == 0 ? 1.0 : 0.0;  // rate of the first level
      acc.prior_sum += record.prior_vote ? 1.0 : 0.0;
      acc.count += 1;
    };
    bump(party_acc[static_cast<std::size_t>(record.party)]);
    bump(eth_acc[static_cast<std::size_t>(record.ethnicity)]);
    data.total_records += 1;
  }

  const double age_span = age_max > age_min ? age_max - age_min : 1.0;
  auto profile_row = [&](const ProfileAccum& acc, Matrix& target, std::size_t row) {
    if (acc.count == 0) {
      target(row, 0) = target(row, 1) = target(row, 2) = 0.0;
      return;
    }
    const double n = static_cast<double>(acc.count);
    target(row, 0) = (acc.age_sum / n - age_min) / age_span;
    target(row, 1) = acc.gender_sum / n;
    target(row, 2) = acc.prior_sum / n;
  };
  data.party_profiles = Matrix(kPartyCount, 3);
  data.ethnicity_profiles = Matrix(kEthnicityCount, 3);
  for (std::size_t p = 0; p < kPartyCount; ++p) profile_row(party_acc[p], data.party_profiles, p);
  for (std::size_t e = 0; e < kEthnicityCount; ++e) profile_row(eth_acc[e], data.ethnicity_profiles, e);

  // Regions that only ever appeared on dropped rows are excluded entirely.
  std::sort(excluded_region_ids.begin(), excluded_region_ids.end());
  excluded_region_ids.erase(std::unique(excluded_region_ids.begin(), excluded_region_ids.end()),
                            excluded_region_ids.end());
  for (const auto& id : excluded_region_ids)
    if (!by_region.count(id))
      data.warnings.push_back("region " + id + " has no usable records; excluded");

  for (auto& [id, acc] : by_region) {
    Region region;
    region.id = id;
    region.district = acc.district;
    region.records = acc.total;
    region.party_marginal.assign(kPartyCount, 0.0);
    region.ethnicity_marginal.assign(kEthnicityCount, 0.0);
    region.ground_truth = Matrix(kPartyCount, kEthnicityCount, 0.0);
    const double total = static_cast<double>(acc.total);
    for (std::size_t p = 0; p < kPartyCount; ++p)
      for (std::size_t e = 0; e < kEthnicityCount; ++e) {
        const double share = static_cast<double>(acc.counts[p][e]) / total;
        region.ground_truth(p, e) = share;
        region.party_marginal[p] += share;
        region.ethnicity_marginal[e] += share;
      }
    region.has_truth = true;
    data.regions.push_back(std::move(region));
  }
  if (data.regions.empty()) throw std::runtime_error("ingest: no usable regions in " + records_path);
  return data;  // std::map iteration already delivered regions sorted by id
}

/// Replaces every ground-truth joint with tables from a sidecar JSON of the
/// form {"manifest": {...}, "joints": {region_id: [[...]]}} (rows = parties,
/// columns = ethnicities).
inline void apply_truth_sidecar(RegionDataset& data, const nlohmann::json& sidecar) {
  if (!sidecar.contains("joints")) throw std::runtime_error("truth sidecar: missing 'joints' object");
  for (auto& region : data.regions) {
    region.has_truth = false;
    region.ground_truth = Matrix();
  }
  for (const auto& [id, rows] : sidecar.at("joints").items()) {
    for (auto& region : data.regions) {
      if (region.id != id) continue;
      Matrix joint(kPartyCount, kEthnicityCount, 0.0);
      for (std::size_t p = 0; p < kPartyCount; ++p)
        for (std::size_t e = 0; e < kEthnicityCount; ++e) joint(p, e) = rows[p][e].get<double>();
      region.ground_truth = std::move(joint);
      region.has_truth = true;
    }
  }
}

// ------------------------------------------------------------ cost matrices

enum class CostMatrixKind { rbf, survey, no_prior };

struct CostMatrixSpec {
  CostMatrixKind kind = CostMatrixKind::no_prior;
  double gamma = 10.0;        ///< rbf bandwidth
  Matrix survey_proportions;  ///< parties x ethnicities shares in [0, 1]
};

/// Builds the party x ethnicity cost matrix for the requested kind:
/// rbf       m_ij = sqrt(2 - 2 exp(-gamma * ||mu_p_i - mu_e_j||^2)),
///           the Hilbert metric of the Gaussian kernel on profile vectors
/// survey    m_ij = 1 - proportions_ij
/// no_prior  m_ij = 1
inline Matrix build_cost_matrix(const CostMatrixSpec& spec, const RegionDataset& data) {
  Matrix m(kPartyCount, kEthnicityCount, 1.0);
  switch (spec.kind) {
    case CostMatrixKind::no_prior:
      return m;
    case CostMatrixKind::survey: {
      if (spec.survey_proportions.rows() != kPartyCount || spec.survey_proportions.cols() != kEthnicityCount)
        throw std::invalid_argument("build_cost_matrix: survey proportions must be parties x ethnicities");
      for (std::size_t k = 0; k < m.size(); ++k) {
        const double p = spec.survey_proportions.data()[k];
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("build_cost_matrix: survey proportion outside [0, 1]");
        m.data()[k] = 1.0 - p;
      }
      return m;
    }
    case CostMatrixKind::rbf: {
      if (!(spec.gamma > 0.0)) throw std::invalid_argument("build_cost_matrix: gamma must be positive");
      if (data.party_profiles.empty() || data.ethnicity_profiles.empty())
        throw std::invalid_argument("build_cost_matrix: rbf needs profile features");
      for (std::size_t i = 0; i < kPartyCount; ++i)
        for (std::size_t j = 0; j < kEthnicityCount; ++j) {
          double sq = 0.0;
          for (std::size_t f = 0; f < 3; ++f) {
            const double d = data.party_profiles(i, f) - data.ethnicity_profiles(j, f);
            sq += d * d;
          }
          m(i, j) = std::sqrt(2.0 - 2.0 * std::exp(-spec.gamma * sq));
        }
      return m;
    }
  }
  throw std::logic_error("build_cost_matrix: unreachable");
}

// ----------------------------------------------------------------- scoring

enum class KlDirection { truth_first, inferred_first };

inline constexpr double kKlCellCap = 50.0;

/// Generalized KL between two same-mass joints with a per-cell cap replacing
/// the infinities of absolute-continuity violations; the number of capped
/// cells is reported. The regular cells follow the same conventions as the
/// q = 1 relative entropy.
inline double capped_kl(const Matrix& truth, const Matrix& inferred, KlDirection direction,
                        int& cap_events) {
  const Matrix& p = direction == KlDirection::truth_first ? truth : inferred;
  const Matrix& r = direction == KlDirection::truth_first ? inferred : truth;
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double cell = trot::detail::generalized_kl_cell(p.data()[k], r.data()[k]);
    if (std::isinf(cell)) {
      acc += kKlCellCap;
      cap_events += 1;
    } else {
      acc += cell;
    }
  }
  return acc;
}

inline double mean_abs_error(const Matrix& truth, const Matrix& inferred) {
  double acc = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) acc += std::abs(truth.data()[k] - inferred.data()[k]);
  return acc / static_cast<double>(truth.size());
}

// --------------------------------------------------------------- inference

struct EcoSolveOptions {
  SolverConfig solver;
  int jobs = 0;  ///< worker pool width; <= 0 means hardware concurrency
  KlDirection kl_direction = KlDirection::truth_first;

  EcoSolveOptions() {
    solver.marginal_tol = 1e-8;
    solver.step_schedule.decay = StepDecay::sqrt;
    solver.max_outer_iters = 60000;
  }
};

struct MethodScore {
  std::string name;
  double q = 0.0;
  double lambda = 0.0;
  bool parametrized = false;  ///< whether (q, lambda) are meaningful
  Vector per_region_kl;       ///< aligned with scored region ids
  Vector per_region_abs;
  double mean_kl = 0.0, sd_kl = 0.0;
  double mean_abs = 0.0, sd_abs = 0.0;
  int cap_events = 0;
  int non_converged = 0;
};

struct EvalReport {
  std::vector<std::string> region_ids;  ///< regions with ground truth, scoring order
  std::vector<MethodScore> methods;
  double best_q = 0.0, best_lambda = 0.0;
  std::vector<std::string> skipped_regions;
  std::map<std::string, Matrix> inferred;  ///< trot joints for every region solved
};

namespace detail {

inline void finalize_scores(MethodScore& score) {
  auto mean_sd = [](const Vector& v, double& mean, double& sd) {
    if (v.empty()) {
      mean = sd = 0.0;
      return;
    }
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    sd = std::sqrt(var / static_cast<double>(v.size()));
  };
  mean_sd(score.per_region_kl, score.mean_kl, score.sd_kl);
  mean_sd(score.per_region_abs, score.mean_abs, score.sd_abs);
}

inline TransportProblem region_problem(const Region& region, const Matrix& cost) {
  return TransportProblem{region.party_marginal, region.ethnicity_marginal, cost};
}

}  // namespace detail

/// Pooled ground-truth joint over all regions carrying truth, weighted by
/// record counts: the whole-population table used as the location-free
/// baseline.
inline Matrix population_average_joint(const RegionDataset& data) {
  Matrix pooled(kPartyCount, kEthnicityCount, 0.0);
  double weight = 0.0;
  for (const auto& region : data.regions) {
    if (!region.has_truth) continue;
    const double w = static_cast<double>(region.records > 0 ? region.records : 1);
    for (std::size_t k = 0; k < pooled.size(); ++k) pooled.data()[k] += w * region.ground_truth.data()[k];
    weight += w;
  }
  if (weight <= 0.0) throw std::runtime_error("population_average_joint: no region carries ground truth");
  for (auto& v : pooled) v /= weight;
  return pooled;
}

/// One independent solve per region (parallel across regions), scored against
/// ground truth where present. The comparison table carries two baselines
/// (population average and the independence coupling) plus the exact-OT and
/// regularized methods on the given cost matrix.
inline EvalReport infer_all(const RegionDataset& data, const QParams& params, const Matrix& cost,
                            const EcoSolveOptions& options = {}) {
  EvalReport report;
  report.best_q = params.q;
  report.best_lambda = params.lambda;

  const std::size_t count = data.regions.size();
  std::vector<Matrix> trot_joints(count);
  std::vector<Matrix> simplex_joints(count);
  std::vector<bool> converged(count, false);
  parallel_for(count, options.jobs, [&](std::size_t idx) {
    const auto prob = detail::region_problem(data.regions[idx], cost);
    auto res = solve(prob, params, options.solver);
    trot_joints[idx] = std::move(res.plan.P);
    converged[idx] = res.trace.converged;
    simplex_joints[idx] = solve_exact_lp(prob, options.solver).plan.P;
  });

  const Matrix pooled = population_average_joint(data);

  MethodScore population{"population_average"};
  MethodScore independence{"independence"};
  MethodScore simplex{"simplex"};
  MethodScore trot_score{"trot", params.q, params.lambda, true};

  for (std::size_t idx = 0; idx < count; ++idx) {
    const auto& region = data.regions[idx];
    report.inferred[region.id] = trot_joints[idx];
    if (!region.has_truth) continue;
    if (!converged[idx]) {
      report.skipped_regions.push_back(region.id);
      trot_score.non_converged += 1;
      continue;
    }
    report.region_ids.push_back(region.id);
    const Matrix indep = outer(region.party_marginal, region.ethnicity_marginal);
    auto add = [&](MethodScore& score, const Matrix& joint) {
      score.per_region_kl.push_back(capped_kl(region.ground_truth, joint, options.kl_direction, score.cap_events));
      score.per_region_abs.push_back(mean_abs_error(region.ground_truth, joint));
    };
    add(population, pooled);
    add(independence, indep);
    add(simplex, simplex_joints[idx]);
    add(trot_score, trot_joints[idx]);
  }
  detail::finalize_scores(population);
  detail::finalize_scores(independence);
  detail::finalize_scores(simplex);
  detail::finalize_scores(trot_score);
  report.methods = {population, independence, simplex, trot_score};
  return report;
}

// --------------------------------------------------------- cross-validation

struct GridPoint {
  double q = 0.0;
  double lambda = 0.0;
  double mean_kl = 0.0;
  int scored_regions = 0;
};

struct CvResult {
  double best_q = 1.0;
  double best_lambda = 1.0;
  std::vector<GridPoint> grid;
};

/// Grid search over (q, lambda) scored by mean capped KL against ground truth
/// on the hold-in regions. Ties break toward smaller lambda, then smaller
/// |q - 1|.
inline CvResult cross_validate(const RegionDataset& data, const std::vector<std::string>& holdin_ids,
                               const std::vector<double>& q_grid, const std::vector<double>& lambda_grid,
                               const Matrix& cost, const EcoSolveOptions& options = {}) {
  if (q_grid.empty() || lambda_grid.empty()) throw std::invalid_argument("cross_validate: empty grid");
  std::vector<const Region*> holdin;
  for (const auto& id : holdin_ids) {
    const Region* region = data.find(id);
    if (!region) throw std::invalid_argument("cross_validate: unknown region '" + id + "'");
    if (!region->has_truth)
      throw std::invalid_argument("cross_validate: hold-in region '" + id + "' lacks ground truth");
    holdin.push_back(region);
  }
  if (holdin.empty()) throw std::invalid_argument("cross_validate: no hold-in regions");

  CvResult result;
  std::vector<GridPoint> grid;
  for (double q : q_grid)
    for (double lambda : lambda_grid) grid.push_back({q, lambda, 0.0, 0});

  std::vector<Vector> kl_per_point(grid.size(), Vector(holdin.size(), -1.0));
  parallel_for(grid.size() * holdin.size(), options.jobs, [&](std::size_t task) {
    const std::size_t g = task / holdin.size();
    const std::size_t h = task % holdin.size();
    const QParams params{grid[g].q, grid[g].lambda};
    auto res = solve(detail::region_problem(*holdin[h], cost), params, options.solver);
    if (!res.trace.converged) return;  // leave marked unsolved
    int caps = 0;
    kl_per_point[g][h] = capped_kl(holdin[h]->ground_truth, res.plan.P, options.kl_direction, caps);
  });

  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    int scored = 0;
    for (double kl : kl_per_point[g])
      if (kl >= 0.0) {
        acc += kl;
        scored += 1;
      }
    grid[g].scored_regions = scored;
    grid[g].mean_kl = scored > 0 ? acc / scored : std::numeric_limits<double>::infinity();
  }

  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const auto& a = grid[g];
    const auto& b = grid[best];
    const bool better = a.mean_kl < b.mean_kl - 1e-15 ||
                        (std::abs(a.mean_kl - b.mean_kl) <= 1e-15 &&
                         (a.lambda < b.lambda ||
                          (a.lambda == b.lambda && std::abs(a.q - 1.0) < std::abs(b.q - 1.0))));
    if (better) best = g;
  }
  result.best_q = grid[best].q;
  result.best_lambda = grid[best].lambda;
  result.grid = std::move(grid);
  return result;
}

// ------------------------------------------------------------------ report

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& method : report.methods) {
    nlohmann::json entry{{"name", method.name},
                         {"mean_kl", method.mean_kl},
                         {"sd_kl", method.sd_kl},
                         {"mean_abs_error", method.mean_abs},
                         {"sd_abs_error", method.sd_abs},
                         {"cap_events", method.cap_events},
                         {"non_converged", method.non_converged},
                         {"per_region_kl", method.per_region_kl},
                         {"per_region_abs_error", method.per_region_abs}};
    if (method.parametrized) {
      entry["q"] = method.q;
      entry["lambda"] = method.lambda;
    }
    methods.push_back(std::move(entry));
  }
  nlohmann::json inferred = nlohmann::json::object();
  for (const auto& [id, joint] : report.inferred) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t p = 0; p < joint.rows(); ++p) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t e = 0; e < joint.cols(); ++e) row.push_back(joint(p, e));
      rows.push_back(std::move(row));
    }
    inferred[id] = std::move(rows);
  }
  return nlohmann::json{{"best_params", {{"q", report.best_q}, {"lambda", report.best_lambda}}},
                        {"region_ids", report.region_ids},
                        {"skipped_regions", report.skipped_regions},
                        {"methods", std::move(methods)},
                        {"inferred_joints", std::move(inferred)}};
}

/// Flat CSV view of the per-region scores for external plotting.
inline std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "region_id,method,kl,abs_error\n";
  for (const auto& method : report.methods)
    for (std::size_t k = 0; k < report.region_ids.size(); ++k)
      os << report.region_ids[k] << ',' << method.name << ',' << method.per_region_kl[k] << ','
         << method.per_region_abs[k] << '\n';
  return os.str();
}

/// Cell-level scatter of inferred probabilities against ground truth (one row
/// per region x party x ethnicity), for correlation plots.
inline std::string scatter_to_csv(const EvalReport& report, const RegionDataset& data) {
  std::ostringstream os;
  os.precision(17);
  os << "region_id,party,ethnicity,truth,inferred\n";
  for (const auto& region : data.regions) {
    if (!region.has_truth) continue;
    const auto it = report.inferred.find(region.id);
    if (it == report.inferred.end()) continue;
    for (std::size_t p = 0; p < kPartyCount; ++p)
      for (std::size_t e = 0; e < kEthnicityCount; ++e)
        os << region.id << ',' << kParties[p] << ',' << kEthnicities[e] << ','
           << region.ground_truth(p, e) << ',' << it->second(p, e) << '\n';
  }
  return os.str();
}

}  // namespace trot::eco
