#pragma once

#include <json.hpp>

#include "trot/matrix.hpp"
#include "trot/transport.hpp"

namespace trot {

inline nlohmann::json matrix_to_json(const Matrix& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw std::invalid_argument("matrix_from_json: expected an array of arrays");
  Matrix out(j.size(), j.front().size());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    if (j[i].size() != out.cols()) throw std::invalid_argument("matrix_from_json: ragged rows");
    for (std::size_t k = 0; k < out.cols(); ++k) out(i, k) = j[i][k].get<double>();
  }
  return out;
}

/// Problem wire format: {"r": [...], "c": [...], "M": [[...]]}.
inline nlohmann::json problem_to_json(const TransportProblem& prob) {
  return nlohmann::json{{"r", prob.r}, {"c", prob.c}, {"M", matrix_to_json(prob.M)}};
}

inline TransportProblem problem_from_json(const nlohmann::json& j) {
  if (!j.contains("r") || !j.contains("c") || !j.contains("M"))
    throw std::invalid_argument("problem JSON must contain r, c and M");
  TransportProblem prob;
  prob.r = j.at("r").get<Vector>();
  prob.c = j.at("c").get<Vector>();
  prob.M = matrix_from_json(j.at("M"));
  prob.validate();
  return prob;
}

}  // namespace trot
