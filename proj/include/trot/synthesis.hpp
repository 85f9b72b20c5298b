#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <string>

#include "trot/eco_infer.hpp"
#include "trot/serialization.hpp"
#include "trot/matrix.hpp"
#include "trot/rng.hpp"
#include "trot/sinkhorn.hpp"

namespace trot::eco {

/// Synthetic stand-in for an individual-level voter file: per-region latent
/// joints are couplings aligned with a hidden cost structure over latent
/// party/ethnicity profiles, individual records are sampled from the joints
/// with attributes drawn around the profile means. Deterministic under seed;
/// emits the records CSV plus a truth sidecar JSON with the latent joints,
/// the hidden cost matrix and pooled survey-style proportions.
struct SynthConfig {
  int n_regions = 10;
  int records_per_region = 10000;
  double coupling_strength = 0.8;  ///< 0 = independent couplings, 1 = strongly cost-aligned
  std::uint64_t seed = 1;
  int districts = 4;
};

struct SynthOutput {
  std::string records_path;
  std::string truth_path;
};

namespace detail {

inline std::string region_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "R%03d", idx + 1);
  return buf;
}

inline std::string format_age(double age) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", age);
  return buf;
}

}  // namespace detail

inline SynthOutput synthesize_dataset(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.n_regions < 1 || cfg.records_per_region < 1)
    throw std::invalid_argument("synthesize_dataset: need at least one region and one record");
  if (cfg.coupling_strength < 0.0 || cfg.coupling_strength > 1.0)
    throw std::invalid_argument("synthesize_dataset: coupling_strength must lie in [0, 1]");
  Rng rng(cfg.seed);

  // Hidden profiles in feature space (age01, gender rate, prior-vote rate)
  // and the induced cost structure the couplings align with.
  Matrix party_profiles(kPartyCount, 3);
  Matrix eth_profiles(kEthnicityCount, 3);
  for (auto& v : party_profiles) v = rng.uniform(0.15, 0.85);
  for (auto& v : eth_profiles) v = rng.uniform(0.15, 0.85);
  Matrix hidden_cost(kPartyCount, kEthnicityCount);
  for (std::size_t i = 0; i < kPartyCount; ++i)
    for (std::size_t j = 0; j < kEthnicityCount; ++j) {
      double sq = 0.0;
      for (std::size_t f = 0; f < 3; ++f) {
        const double d = party_profiles(i, f) - eth_profiles(j, f);
        sq += d * d;
      }
      hidden_cost(i, j) = std::sqrt(sq);
    }

  constexpr double kAffinitySharpness = 8.0;
  Matrix kernel(kPartyCount, kEthnicityCount);
  for (std::size_t k = 0; k < kernel.size(); ++k)
    kernel.data()[k] = std::exp(-kAffinitySharpness * cfg.coupling_strength * hidden_cost.data()[k]);

  // Latent joints first (they also feed the pooled survey proportions), then
  // records sampled region by region from one deterministic stream.
  std::vector<Vector> region_party(static_cast<std::size_t>(cfg.n_regions));
  std::vector<Vector> region_eth(static_cast<std::size_t>(cfg.n_regions));
  std::vector<Matrix> region_joint(static_cast<std::size_t>(cfg.n_regions));
  auto fuller = [&](std::size_t n) {
    Vector v = rng.dirichlet(n);
    double total = 0.0;
    for (auto& x : v) {
      x += 0.25;
      total += x;
    }
    for (auto& x : v) x /= total;
    return v;
  };
  for (int reg = 0; reg < cfg.n_regions; ++reg) {
    region_party[reg] = fuller(kPartyCount);
    region_eth[reg] = fuller(kEthnicityCount);
    if (cfg.coupling_strength == 0.0) {
      region_joint[reg] = outer(region_party[reg], region_eth[reg]);
    } else {
      auto balanced = sinkhorn_knopp(kernel, region_party[reg], region_eth[reg], 1e-13, 100000);
      region_joint[reg] = std::move(balanced.plan.P);
    }
  }

  Matrix pooled(kPartyCount, kEthnicityCount, 0.0);
  for (const auto& joint : region_joint)
    for (std::size_t k = 0; k < pooled.size(); ++k) pooled.data()[k] += joint.data()[k];
  for (auto& v : pooled) v /= static_cast<double>(cfg.n_regions);
  // Survey-style proportions: share of each ethnicity within a party at the
  // population level.
  Matrix survey(kPartyCount, kEthnicityCount, 0.0);
  for (std::size_t p = 0; p < kPartyCount; ++p) {
    double row = 0.0;
    for (std::size_t e = 0; e < kEthnicityCount; ++e) row += pooled(p, e);
    for (std::size_t e = 0; e < kEthnicityCount; ++e) survey(p, e) = row > 0.0 ? pooled(p, e) / row : 0.0;
  }

  const SynthOutput out{out_dir + "/records.csv", out_dir + "/truth.json"};
  std::ofstream records(out.records_path);
  if (!records) throw std::runtime_error("synthesize_dataset: cannot write " + out.records_path);
  records << kRecordsHeader << '\n';

  Vector cells(kPartyCount * kEthnicityCount);
  for (int reg = 0; reg < cfg.n_regions; ++reg) {
    const std::string region_id = detail::region_name(reg);
    const std::string district_id = "D" + std::to_string(reg % cfg.districts + 1);
    for (std::size_t k = 0; k < cells.size(); ++k) cells[k] = region_joint[reg].data()[k];
    for (int rec = 0; rec < cfg.records_per_region; ++rec) {
      const std::size_t cell = rng.categorical(cells);
      const std::size_t party = cell / kEthnicityCount;
      const std::size_t eth = cell % kEthnicityCount;
      auto blend = [&](std::size_t f) { return 0.5 * (party_profiles(party, f) + eth_profiles(eth, f)); };
      const double age01 = std::clamp(blend(0) + 0.15 * rng.normal(), 0.0, 1.0);
      const double age = 18.0 + 62.0 * age01;
      const int gender = rng.bernoulli(blend(1)) ? 0 : 1;
      const bool prior = rng.bernoulli(blend(2));
      records << region_id << ',' << district_id << ',' << detail::format_age(age) << ','
              << kGenders[gender] << ',' << kParties[party] << ',' << kEthnicities[eth] << ','
              << (prior ? '1' : '0') << '\n';
    }
  }
  records.close();

  nlohmann::json joints = nlohmann::json::object();
  for (int reg = 0; reg < cfg.n_regions; ++reg) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t p = 0; p < kPartyCount; ++p) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t e = 0; e < kEthnicityCount; ++e) row.push_back(region_joint[reg](p, e));
      rows.push_back(std::move(row));
    }
    joints[detail::region_name(reg)] = std::move(rows);
  }
  nlohmann::json manifest{{"row_order", "parties"},
                          {"column_order", "ethnicities"},
                          {"parties", kParties},
                          {"ethnicities", kEthnicities}};
  nlohmann::json truth{{"manifest", std::move(manifest)},
                       {"joints", std::move(joints)},
                       {"hidden_cost", matrix_to_json(hidden_cost)},
                       {"survey_proportions", matrix_to_json(survey)},
                       {"config",
                        {{"n_regions", cfg.n_regions},
                         {"records_per_region", cfg.records_per_region},
                         {"coupling_strength", cfg.coupling_strength},
                         {"seed", cfg.seed}}}};
  std::ofstream truth_file(out.truth_path);
  if (!truth_file) throw std::runtime_error("synthesize_dataset: cannot write " + out.truth_path);
  truth_file << truth.dump(2) << '\n';
  return out;
}

}  // namespace trot::eco
