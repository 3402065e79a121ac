#ifndef ASMC_MODEL_IO_HPP
#define ASMC_MODEL_IO_HPP

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <variant>

#include <json.hpp>

#include "error.hpp"
#include "model.hpp"

namespace asmc {

using AnyModel = std::variant<LinearGaussianModel, StochasticVolatilityModel, FiniteStateModel>;

/// Shortest round-tripping decimal form (17 significant digits).
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline double number_field(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ValidationError(std::string("model field '") + key + "' must be numeric");
  return j.at(key).get<double>();
}

inline std::vector<double> vector_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw ValidationError(std::string("model field '") + key + "' must be an array of numbers");
  }
  std::vector<double> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_number()) throw ValidationError(std::string("model field '") + key + "' must be numeric");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace detail

/// Builds a model from a JSON object of the form
///   {"kind": "linear_gaussian", "a": 0.9, "state_noise_sd": 1, "obs_coeff": 1,
///    "obs_noise_sd": 1, "prior_mean": 0, "prior_sd": 1}
///   {"kind": "stochastic_volatility", "a": 0.9, "sigma": 0.25, "epsilon": 0.1}
///   {"kind": "finite_state", "prior": [...], "transition": [[...], ...],
///    "means": [...], "sd": 1}
/// Missing numeric fields take the defaults shown by the model structs.
inline AnyModel model_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("kind") && j.at("kind").is_string(),
          "model config needs a string 'kind'");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == LinearGaussianModel::tag) {
    LinearGaussianModel m;
    m.a = detail::number_field(j, "a", m.a);
    m.state_noise_sd = detail::number_field(j, "state_noise_sd", m.state_noise_sd);
    m.obs_coeff = detail::number_field(j, "obs_coeff", m.obs_coeff);
    m.obs_noise_sd = detail::number_field(j, "obs_noise_sd", m.obs_noise_sd);
    m.prior_mean = detail::number_field(j, "prior_mean", m.prior_mean);
    m.prior_sd = detail::number_field(j, "prior_sd", m.prior_sd);
    m.validate();
    return m;
  }
  if (kind == StochasticVolatilityModel::tag) {
    StochasticVolatilityModel m;
    m.a = detail::number_field(j, "a", m.a);
    m.sigma = detail::number_field(j, "sigma", m.sigma);
    m.epsilon = detail::number_field(j, "epsilon", m.epsilon);
    m.validate();
    return m;
  }
  if (kind == FiniteStateModel::tag) {
    auto prior = detail::vector_field(j, "prior");
    require(j.contains("transition") && j.at("transition").is_array(),
            "model field 'transition' must be a matrix");
    std::vector<double> transition;
    for (const auto& row : j.at("transition")) {
      require(row.is_array() && row.size() == prior.size(), "transition rows must have length S");
      for (const auto& v : row) transition.push_back(v.get<double>());
    }
    auto means = detail::vector_field(j, "means");
    return FiniteStateModel::gaussian(std::move(prior), std::move(transition), std::move(means),
                                      detail::number_field(j, "sd", 1.0));
  }
  throw ValidationError("unknown model kind '" + kind + "'");
}

inline nlohmann::json model_to_json(const AnyModel& model) {
  return std::visit(
      [](const auto& m) -> nlohmann::json {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LinearGaussianModel>) {
          return {{"kind", M::tag}, {"a", m.a}, {"state_noise_sd", m.state_noise_sd},
                  {"obs_coeff", m.obs_coeff}, {"obs_noise_sd", m.obs_noise_sd},
                  {"prior_mean", m.prior_mean}, {"prior_sd", m.prior_sd}};
        } else if constexpr (std::is_same_v<M, StochasticVolatilityModel>) {
          return {{"kind", M::tag}, {"a", m.a}, {"sigma", m.sigma}, {"epsilon", m.epsilon}};
        } else {
          nlohmann::json rows = nlohmann::json::array();
          const std::size_t s = m.state_count();
          for (std::size_t i = 0; i < s; ++i) {
            std::vector<double> row(s);
            for (std::size_t k = 0; k < s; ++k) row[k] = m.transition(i, k);
            rows.push_back(row);
          }
          return {{"kind", M::tag}, {"prior", m.prior()}, {"transition", rows},
                  {"means", m.emission_means()}, {"sd", m.emission_sd()}};
        }
      },
      model);
}

inline std::string model_tag(const AnyModel& model) {
  return std::visit([](const auto& m) { return std::string(std::decay_t<decltype(m)>::tag); }, model);
}

/// CSV with header `t,y`, one row per observation.
inline void write_record_csv(std::ostream& os, const ObservationRecord& record) {
  os << "t,y\n";
  for (std::size_t t = 0; t < record.size(); ++t) os << t << ',' << format_real(record[t]) << '\n';
}

inline ObservationRecord read_record_csv(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "record CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "t,y", "record CSV header must be 't,y'");
  ObservationRecord record;
  std::size_t expected = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, "record CSV row without comma: " + line);
    try {
      const auto t = std::stoull(line.substr(0, comma));
      require(t == expected, "record CSV rows must be consecutive from t=0");
      record.observations.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ValidationError*>(&e)) throw;
      throw ValidationError("record CSV row not numeric: " + line);
    }
    ++expected;
  }
  require(!record.observations.empty(), "record CSV has no rows");
  return record;
}

inline ObservationRecord read_record_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open record file " + path);
  return read_record_csv(in);
}

}  // namespace asmc

#endif  // ASMC_MODEL_IO_HPP
