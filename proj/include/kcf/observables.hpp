#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "kcf/errors.hpp"
#include "kcf/io.hpp"
#include "kcf/tensor_algebra.hpp"

namespace kcf {

/// One multiplicative factor of a feature.
///   power:        x[index]^exponent
///   sin / cos:    sin(w . x), cos(w . x)
///   inverse_cos:  1 / (offset + scale * cos(w . x))
struct FeatureFactor {
  enum class Kind { power, sin, cos, inverse_cos };

  Kind kind = Kind::power;
  Index index = 0;
  int exponent = 1;
  std::vector<double> weights;
  double offset = 0.0;
  double scale = 0.0;

  static FeatureFactor power(Index index, int exponent = 1) {
    FeatureFactor f;
    f.kind = Kind::power;
    f.index = index;
    f.exponent = exponent;
    return f;
  }
  static FeatureFactor sine(std::vector<double> weights) {
    FeatureFactor f;
    f.kind = Kind::sin;
    f.weights = std::move(weights);
    return f;
  }
  static FeatureFactor cosine(std::vector<double> weights) {
    FeatureFactor f;
    f.kind = Kind::cos;
    f.weights = std::move(weights);
    return f;
  }
  static FeatureFactor inverse_cos(double offset, double scale, std::vector<double> weights) {
    FeatureFactor f;
    f.kind = Kind::inverse_cos;
    f.offset = offset;
    f.scale = scale;
    f.weights = std::move(weights);
    return f;
  }

  double evaluate(const Vector& x) const {
    switch (kind) {
      case Kind::power:
        return exponent == 1 ? x(index) : std::pow(x(index), exponent);
      case Kind::sin:
        return std::sin(project(x));
      case Kind::cos:
        return std::cos(project(x));
      case Kind::inverse_cos:
        return 1.0 / (offset + scale * std::cos(project(x)));
    }
    return 0.0;
  }

 private:
  double project(const Vector& x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x(static_cast<Index>(i));
    return s;
  }
};

/// coefficient * prod(factors). No factors means a constant.
struct FeatureSpec {
  std::string label;
  double coefficient = 1.0;
  std::vector<FeatureFactor> factors;

  double evaluate(const Vector& x) const {
    double v = coefficient;
    for (const auto& f : factors) v *= f.evaluate(x);
    return v;
  }
};

inline const char* to_string(FeatureFactor::Kind k) {
  switch (k) {
    case FeatureFactor::Kind::power: return "power";
    case FeatureFactor::Kind::sin: return "sin";
    case FeatureFactor::Kind::cos: return "cos";
    case FeatureFactor::Kind::inverse_cos: return "inverse_cos";
  }
  return "?";
}

inline Json factor_to_json(const FeatureFactor& f) {
  Json j{{"kind", to_string(f.kind)}};
  if (f.kind == FeatureFactor::Kind::power) {
    j["index"] = f.index;
    j["exponent"] = f.exponent;
  } else {
    j["weights"] = f.weights;
    if (f.kind == FeatureFactor::Kind::inverse_cos) {
      j["offset"] = f.offset;
      j["scale"] = f.scale;
    }
  }
  return j;
}

inline FeatureFactor factor_from_json(const Json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "power") {
    return FeatureFactor::power(j.at("index").get<Index>(), j.value("exponent", 1));
  }
  auto w = j.at("weights").get<std::vector<double>>();
  if (kind == "sin") return FeatureFactor::sine(std::move(w));
  if (kind == "cos") return FeatureFactor::cosine(std::move(w));
  if (kind == "inverse_cos") {
    return FeatureFactor::inverse_cos(j.at("offset").get<double>(), j.at("scale").get<double>(),
                                      std::move(w));
  }
  throw ConfigError("unknown feature factor kind '" + kind + "'");
}

/// A finite basis psi: R^{state_dim} -> R^{dim}. The feature order is part of every
/// downstream matrix and is frozen in the JSON descriptor.
class ObservableMap {
 public:
  ObservableMap(std::string name, Index state_dim, std::vector<FeatureSpec> features)
      : name_(std::move(name)), state_dim_(state_dim), features_(std::move(features)) {
    if (state_dim_ <= 0) throw DimensionError("ObservableMap: state_dim must be positive");
    if (features_.empty()) throw DimensionError("ObservableMap: no features");
    for (const auto& f : features_) {
      for (const auto& fac : f.factors) {
        if (fac.kind == FeatureFactor::Kind::power) {
          if (fac.index < 0 || fac.index >= state_dim_) {
            throw ConfigError("feature '" + f.label + "': state index out of range");
          }
          if (fac.exponent < 0) throw ConfigError("feature '" + f.label + "': negative exponent");
        } else if (static_cast<Index>(fac.weights.size()) > state_dim_) {
          throw ConfigError("feature '" + f.label + "': too many weights");
        }
      }
    }
  }

  const std::string& name() const { return name_; }
  Index state_dim() const { return state_dim_; }
  Index dim() const { return static_cast<Index>(features_.size()); }
  const std::vector<FeatureSpec>& features() const { return features_; }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(features_.size());
    for (const auto& f : features_) out.push_back(f.label);
    return out;
  }

  /// True when the first state_dim features are exactly x_1..x_n, so A_dec psi(x) = x.
  bool has_state_prefix() const {
    if (dim() < state_dim_) return false;
    for (Index i = 0; i < state_dim_; ++i) {
      const auto& f = features_[static_cast<std::size_t>(i)];
      if (f.coefficient != 1.0 || f.factors.size() != 1) return false;
      const auto& fac = f.factors.front();
      if (fac.kind != FeatureFactor::Kind::power || fac.index != i || fac.exponent != 1) {
        return false;
      }
    }
    return true;
  }

  Vector evaluate(const Vector& x) const {
    if (x.size() != state_dim_) {
      throw DimensionError("ObservableMap '" + name_ + "': state has length " +
                           std::to_string(x.size()) + ", expected " +
                           std::to_string(state_dim_));
    }
    Vector out(dim());
    for (Index i = 0; i < dim(); ++i) out(i) = features_[static_cast<std::size_t>(i)].evaluate(x);
    return out;
  }

  Vector operator()(const Vector& x) const { return evaluate(x); }

  Json descriptor() const {
    Json feats = Json::array();
    for (const auto& f : features_) {
      Json factors = Json::array();
      for (const auto& fac : f.factors) factors.push_back(factor_to_json(fac));
      feats.push_back(Json{{"label", f.label}, {"coefficient", f.coefficient}, {"factors", factors}});
    }
    return Json{{"name", name_}, {"state_dim", state_dim_}, {"features", feats}};
  }

  std::string descriptor_hash() const { return json_hash(descriptor()); }

  static ObservableMap from_descriptor(const Json& j) {
    std::vector<FeatureSpec> feats;
    for (const auto& fj : j.at("features")) {
      FeatureSpec f;
      f.label = fj.at("label").get<std::string>();
      f.coefficient = fj.value("coefficient", 1.0);
      for (const auto& fac : fj.value("factors", Json::array())) {
        f.factors.push_back(factor_from_json(fac));
      }
      feats.push_back(std::move(f));
    }
    return ObservableMap(j.value("name", std::string("custom")), j.at("state_dim").get<Index>(),
                         std::move(feats));
  }

 private:
  std::string name_;
  Index state_dim_;
  std::vector<FeatureSpec> features_;
};

/// A_dec = [I_n 0], extracting the state from a lifted vector.
inline Matrix decoding_operator(const ObservableMap& map) {
  if (!map.has_state_prefix()) {
    throw ConfigError("decoding_operator: map '" + map.name() +
                      "' does not lead with the original state");
  }
  Matrix a = Matrix::Zero(map.state_dim(), map.dim());
  a.leftCols(map.state_dim()).setIdentity();
  return a;
}

namespace detail {
inline FeatureSpec state_feature(const std::string& label, Index i) {
  return {label, 1.0, {FeatureFactor::power(i)}};
}
inline std::vector<double> unit(Index n, Index i) {
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  w[static_cast<std::size_t>(i)] = 1.0;
  return w;
}
}  // namespace detail

/// psi(x) = [theta, theta_dot, 1, theta^2, theta_dot^2, sin theta, sin theta_dot,
///           cos theta, cos theta_dot]
inline ObservableMap single_pendulum_map() {
  using detail::unit;
  const std::vector<std::string> s{"theta", "theta_dot"};
  std::vector<FeatureSpec> f;
  for (Index i = 0; i < 2; ++i) f.push_back(detail::state_feature(s[i], i));
  f.push_back({"1", 1.0, {}});
  for (Index i = 0; i < 2; ++i) f.push_back({s[i] + "^2", 1.0, {FeatureFactor::power(i, 2)}});
  for (Index i = 0; i < 2; ++i) {
    f.push_back({"sin(" + s[i] + ")", 1.0, {FeatureFactor::sine(unit(2, i))}});
  }
  for (Index i = 0; i < 2; ++i) {
    f.push_back({"cos(" + s[i] + ")", 1.0, {FeatureFactor::cosine(unit(2, i))}});
  }
  return ObservableMap("single_pendulum", 2, std::move(f));
}

/// psi(x) = [x, 1, D sin t1, D sin tr, D sin(t1 - 2 t2), D sin tr cos t1, D cos tr sin t1,
///           D w1^2 sin tr, D w2^2 sin tr, D w1^2 sin 2tr, D w2^2 sin 2tr]
/// with tr = t1 - t2 and D = 1 / (3 - 2 cos tr).
inline ObservableMap double_pendulum_map() {
  const std::vector<double> t1{1, 0, 0, 0};
  const std::vector<double> tr{1, -1, 0, 0};
  const std::vector<double> tr2{2, -2, 0, 0};
  const std::vector<double> t1m2t2{1, -2, 0, 0};
  const auto d = FeatureFactor::inverse_cos(3.0, -2.0, tr);
  const auto w1sq = FeatureFactor::power(2, 2);
  const auto w2sq = FeatureFactor::power(3, 2);

  std::vector<FeatureSpec> f;
  const std::vector<std::string> s{"theta1", "theta2", "theta1_dot", "theta2_dot"};
  for (Index i = 0; i < 4; ++i) f.push_back(detail::state_feature(s[i], i));
  f.push_back({"1", 1.0, {}});
  f.push_back({"D*sin(theta1)", 1.0, {d, FeatureFactor::sine(t1)}});
  f.push_back({"D*sin(theta_r)", 1.0, {d, FeatureFactor::sine(tr)}});
  f.push_back({"D*sin(theta1-2*theta2)", 1.0, {d, FeatureFactor::sine(t1m2t2)}});
  f.push_back({"D*sin(theta_r)*cos(theta1)", 1.0,
               {d, FeatureFactor::sine(tr), FeatureFactor::cosine(t1)}});
  f.push_back({"D*cos(theta_r)*sin(theta1)", 1.0,
               {d, FeatureFactor::cosine(tr), FeatureFactor::sine(t1)}});
  f.push_back({"D*theta1_dot^2*sin(theta_r)", 1.0, {d, w1sq, FeatureFactor::sine(tr)}});
  f.push_back({"D*theta2_dot^2*sin(theta_r)", 1.0, {d, w2sq, FeatureFactor::sine(tr)}});
  f.push_back({"D*theta1_dot^2*sin(2*theta_r)", 1.0, {d, w1sq, FeatureFactor::sine(tr2)}});
  f.push_back({"D*theta2_dot^2*sin(2*theta_r)", 1.0, {d, w2sq, FeatureFactor::sine(tr2)}});
  return ObservableMap("double_pendulum", 4, std::move(f));
}

/// Polynomial map [x, x^2, ..., x^degree] for a scalar state.
inline ObservableMap scalar_monomial_map(int degree, bool with_constant = false) {
  std::vector<FeatureSpec> f;
  for (int p = 1; p <= degree; ++p) {
    f.push_back({p == 1 ? "x" : "x^" + std::to_string(p), 1.0, {FeatureFactor::power(0, p)}});
  }
  if (with_constant) f.push_back({"1", 1.0, {}});
  return ObservableMap("monomial" + std::to_string(degree), 1, std::move(f));
}

/// psi(x) = x.
inline ObservableMap identity_map(Index state_dim) {
  std::vector<FeatureSpec> f;
  for (Index i = 0; i < state_dim; ++i) {
    f.push_back(detail::state_feature("x" + std::to_string(i + 1), i));
  }
  return ObservableMap("identity", state_dim, std::move(f));
}

/// Thrown by evaluate_batch; carries the index of the offending state.
class NonFiniteFeatureError : public NonFiniteError {
 public:
  NonFiniteFeatureError(std::size_t state_index, const std::string& what)
      : NonFiniteError(what), state_index_(state_index) {}
  std::size_t state_index() const { return state_index_; }

 private:
  std::size_t state_index_;
};

/// Column j of the result is psi(states[j]).
inline Matrix evaluate_batch(const ObservableMap& map, const std::vector<Vector>& states) {
  Matrix out(map.dim(), static_cast<Index>(states.size()));
  for (std::size_t j = 0; j < states.size(); ++j) {
    out.col(static_cast<Index>(j)) = map.evaluate(states[j]);
    if (!out.col(static_cast<Index>(j)).allFinite()) {
      throw NonFiniteFeatureError(j, "evaluate_batch: non-finite feature at state " +
                                         std::to_string(j));
    }
  }
  return out;
}

}  // namespace kcf
