#pragma once

// JSON serialization of models. Matrices are arrays of rows (row-major);
// Gaussian components are stored as mean and covariance, Poisson components
// as their rate.

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "oem/dirichlet.hpp"
#include "oem/families.hpp"
#include "oem/hmm.hpp"
#include "oem/kalman.hpp"
#include "oem/mixture.hpp"

namespace oem::io {

using Json = nlohmann::json;

inline Json vector_to_json(const Vector& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Json matrix_to_json(const Matrix& m) {
    Json out = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(std::move(row));
    }
    return out;
}

inline const Json& require_key(const Json& j, const std::string& key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw ParseError(path + ": missing key '" + key + "'");
    return j.at(key);
}

inline Vector vector_from_json(const Json& j, const std::string& path) {
    if (!j.is_array()) throw ParseError(path + ": expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ParseError(path + "[" + std::to_string(i) + "]: expected a number");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline Matrix matrix_from_json(const Json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ParseError(path + ": expected a nonempty array of rows");
    const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
    Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        const Vector row = vector_from_json(j[r], path + "[" + std::to_string(r) + "]");
        if (static_cast<std::size_t>(row.size()) != cols) throw ParseError(path + ": rows have different lengths");
        m.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return m;
}

inline Vector vector_key(const Json& j, const std::string& key, const std::string& path) {
    return vector_from_json(require_key(j, key, path), path + "." + key);
}

inline Matrix matrix_key(const Json& j, const std::string& key, const std::string& path) {
    return matrix_from_json(require_key(j, key, path), path + "." + key);
}

// Per-family component encoding.
inline std::string emission_name(const GaussianFamily&) { return "gaussian"; }
inline std::string emission_name(const PoissonFamily&) { return "poisson"; }

inline Json component_to_json(const GaussianFamily& f, const ExpectationParams& mu) {
    return Json{{"mean", vector_to_json(f.mean(mu))}, {"covariance", matrix_to_json(f.covariance(mu))}};
}

inline Json component_to_json(const PoissonFamily&, const ExpectationParams& mu) {
    return Json{{"rate", mu.values[0]}};
}

inline ExpectationParams component_from_json(const GaussianFamily& f, const Json& j, const std::string& path) {
    const Vector m = vector_key(j, "mean", path);
    const Matrix cov = matrix_key(j, "covariance", path);
    if (m.size() != f.dim() || cov.rows() != f.dim() || cov.cols() != f.dim())
        throw ParseError(path + ": component dimension does not match the family");
    return f.from_moments(m, cov);
}

inline ExpectationParams component_from_json(const PoissonFamily&, const Json& j, const std::string& path) {
    const Json& rate = require_key(j, "rate", path);
    if (!rate.is_number()) throw ParseError(path + ".rate: expected a number");
    return ExpectationParams(Vector::Constant(1, rate.get<double>()));
}

inline Eigen::Index family_dim(const GaussianFamily& f) { return f.dim(); }
inline Eigen::Index family_dim(const PoissonFamily&) { return 1; }

template <ExponentialFamily F>
Json to_json(const MixtureModel<F>& m) {
    Json comps = Json::array();
    for (const auto& c : m.components) comps.push_back(component_to_json(m.family, c));
    return Json{{"family", "mixture"},
                {"emission", emission_name(m.family)},
                {"dim", family_dim(m.family)},
                {"weights", vector_to_json(m.weights)},
                {"components", std::move(comps)}};
}

template <ExponentialFamily F>
Json to_json(const HmmModel<F>& m) {
    Json comps = Json::array();
    for (const auto& c : m.emissions) comps.push_back(component_to_json(m.family, c));
    return Json{{"family", "hmm"},
                {"emission", emission_name(m.family)},
                {"dim", family_dim(m.family)},
                {"transient_count", m.transient_count},
                {"initial", vector_to_json(m.initial)},
                {"transitions", matrix_to_json(m.transitions)},
                {"emissions", std::move(comps)}};
}

inline Json to_json(const KalmanModel& m) {
    return Json{{"family", "kalman"},          {"pi1", vector_to_json(m.pi1)}, {"V", matrix_to_json(m.V)},
                {"A", matrix_to_json(m.A)},    {"C", matrix_to_json(m.C)},     {"Q", matrix_to_json(m.Q)},
                {"R", matrix_to_json(m.R)}};
}

inline Json to_json(const DirichletModel& m) {
    return Json{{"family", "dirichlet"}, {"alpha", vector_to_json(m.alpha())}};
}

inline void expect_family(const Json& j, const std::string& family) {
    const Json& f = require_key(j, "family", "model");
    if (!f.is_string() || f.get<std::string>() != family)
        throw ParseError("model: expected family '" + family + "', found " + f.dump());
}

template <ExponentialFamily F>
MixtureModel<F> mixture_from_json(const F& family, const Json& j) {
    expect_family(j, "mixture");
    MixtureModel<F> m{family, vector_key(j, "weights", "model"), {}};
    const Json& comps = require_key(j, "components", "model");
    if (!comps.is_array() || comps.size() != static_cast<std::size_t>(m.weights.size()))
        throw ParseError("model.components: expected one entry per weight");
    for (std::size_t h = 0; h < comps.size(); ++h)
        m.components.push_back(component_from_json(family, comps[h], "model.components[" + std::to_string(h) + "]"));
    try {
        validate(m);
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
    return m;
}

template <ExponentialFamily F>
HmmModel<F> hmm_from_json(const F& family, const Json& j) {
    expect_family(j, "hmm");
    const Json& s = require_key(j, "transient_count", "model");
    if (!s.is_number_integer()) throw ParseError("model.transient_count: expected an integer");
    HmmModel<F> m{family, vector_key(j, "initial", "model"), matrix_key(j, "transitions", "model"), {},
                  s.get<Eigen::Index>()};
    const Json& comps = require_key(j, "emissions", "model");
    if (!comps.is_array()) throw ParseError("model.emissions: expected an array");
    for (std::size_t h = 0; h < comps.size(); ++h)
        m.emissions.push_back(component_from_json(family, comps[h], "model.emissions[" + std::to_string(h) + "]"));
    try {
        validate(m);
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
    return m;
}

inline KalmanModel kalman_from_json(const Json& j) {
    expect_family(j, "kalman");
    KalmanModel m{vector_key(j, "pi1", "model"), matrix_key(j, "V", "model"), matrix_key(j, "A", "model"),
                  matrix_key(j, "C", "model"),   matrix_key(j, "Q", "model"), matrix_key(j, "R", "model")};
    try {
        validate(m);
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
    return m;
}

inline DirichletModel dirichlet_from_json(const Json& j) {
    expect_family(j, "dirichlet");
    try {
        return DirichletModel(vector_key(j, "alpha", "model"));
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write to " + path.string() + " failed");
}

inline Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace oem::io
