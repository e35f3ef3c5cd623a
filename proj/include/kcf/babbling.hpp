#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "kcf/errors.hpp"
#include "kcf/io.hpp"
#include "kcf/observables.hpp"
#include "kcf/plants.hpp"

namespace kcf {

/// mt19937_64 with a portable mapping to doubles, so seeded draws are identical on every
/// standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) {
    const double unit = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
  }

  Matrix uniform_matrix(Index rows, Index cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
    }
    return m;
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// How random gains are paired with initial conditions.
///   cartesian: every gain with every initial condition (num_gains * num_ics trajectories)
///   cyclic:    initial condition j uses gain j mod num_gains (num_ics trajectories)
enum class GainPairing { cartesian, cyclic };

struct BabblingConfig {
  Index num_gains = 1;
  Index num_initial_conditions = 1;
  double gain_scale = 1.0;
  GainPairing pairing = GainPairing::cyclic;
  std::vector<Interval> state_grid;
  /// Optional explicit per-dimension grid counts; their product must equal
  /// num_initial_conditions.
  std::vector<Index> grid_counts;
  /// Per-channel saturation used during babbling. Empty means the plant's bounds.
  std::vector<Interval> input_bounds;
  int steps = 100;
  double dt = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_gains < 1 || num_initial_conditions < 1) {
      throw ConfigError("babbling: counts must be at least 1");
    }
    if (!(gain_scale >= 0.0) || !std::isfinite(gain_scale)) {
      throw ConfigError("babbling: gain_scale must be finite and non-negative");
    }
    for (const auto& iv : state_grid) {
      if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi) || iv.hi < iv.lo) {
        throw ConfigError("babbling: state grid bounds must be finite with lo <= hi");
      }
    }
    IntegratorConfig{dt, steps}.validate();
  }

  std::size_t num_trajectories() const {
    return pairing == GainPairing::cartesian
               ? static_cast<std::size_t>(num_gains * num_initial_conditions)
               : static_cast<std::size_t>(num_initial_conditions);
  }
};

inline const char* to_string(GainPairing p) {
  return p == GainPairing::cartesian ? "cartesian" : "cyclic";
}

inline GainPairing pairing_from_string(const std::string& s) {
  if (s == "cartesian") return GainPairing::cartesian;
  if (s == "cyclic") return GainPairing::cyclic;
  throw ConfigError("unknown gain pairing '" + s + "'");
}

/// Gains with entries i.i.d. uniform on [-gain_scale, gain_scale], shape d_u x d_psi_u.
inline std::vector<Matrix> sample_random_gains(const BabblingConfig& cfg, Index input_dim,
                                               Index feature_dim) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<Matrix> gains;
  gains.reserve(static_cast<std::size_t>(cfg.num_gains));
  for (Index i = 0; i < cfg.num_gains; ++i) {
    gains.push_back(rng.uniform_matrix(input_dim, feature_dim, -cfg.gain_scale, cfg.gain_scale));
  }
  return gains;
}

/// Splits n into `dims` integer factors as close to each other as possible (ascending).
/// Fails when some factor would be 1 although n >= 2^dims, i.e. the grid would collapse.
inline std::vector<Index> near_equal_factors(Index n, std::size_t dims) {
  if (n < 1 || dims == 0) throw ConfigError("grid: invalid factorization request");
  std::vector<Index> best;
  double best_spread = std::numeric_limits<double>::infinity();
  std::vector<Index> cur;
  // Enumerate non-decreasing factor tuples.
  auto recurse = [&](auto&& self, Index remaining, Index min_factor) -> void {
    if (cur.size() + 1 == dims) {
      if (remaining < min_factor) return;
      cur.push_back(remaining);
      const double spread = std::log(static_cast<double>(cur.back())) -
                            std::log(static_cast<double>(cur.front()));
      if (spread < best_spread) {
        best_spread = spread;
        best = cur;
      }
      cur.pop_back();
      return;
    }
    for (Index f = min_factor; f * f <= remaining || f == remaining; ++f) {
      if (remaining % f != 0) continue;
      cur.push_back(f);
      self(self, remaining / f, f);
      cur.pop_back();
      if (f == remaining) break;
    }
  };
  recurse(recurse, n, 1);
  if (best.empty()) throw ConfigError("grid: cannot factor " + std::to_string(n));
  const bool collapsed = best.front() == 1;
  const bool room = static_cast<double>(n) >= std::pow(2.0, static_cast<double>(dims));
  if (collapsed && room && dims > 1) {
    throw ConfigError("grid: " + std::to_string(n) + " initial conditions cannot be factored into " +
                      std::to_string(dims) + " non-degenerate grid dimensions");
  }
  return best;
}

/// Per-dimension counts: explicit grid_counts, or a near-equal factorization.
inline std::vector<Index> grid_counts(const BabblingConfig& cfg) {
  const auto dims = cfg.state_grid.size();
  if (!cfg.grid_counts.empty()) {
    if (cfg.grid_counts.size() != dims) {
      throw ConfigError("grid: grid_counts needs one entry per state dimension");
    }
    Index prod = 1;
    for (Index c : cfg.grid_counts) {
      if (c < 1) throw ConfigError("grid: counts must be positive");
      prod *= c;
    }
    if (prod != cfg.num_initial_conditions) {
      throw ConfigError("grid: grid_counts multiply to " + std::to_string(prod) + ", not " +
                        std::to_string(cfg.num_initial_conditions));
    }
    return cfg.grid_counts;
  }
  return near_equal_factors(cfg.num_initial_conditions, dims);
}

/// Cartesian grid with endpoints included; a single point per dimension sits at the lower
/// bound. The first dimension varies slowest.
inline std::vector<Vector> grid_initial_conditions(const BabblingConfig& cfg) {
  cfg.validate();
  const auto dims = cfg.state_grid.size();
  if (dims == 0) throw ConfigError("grid: state_grid is empty");
  const auto counts = grid_counts(cfg);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(cfg.num_initial_conditions));
  std::vector<Index> idx(dims, 0);
  for (Index n = 0; n < cfg.num_initial_conditions; ++n) {
    Vector x(static_cast<Index>(dims));
    for (std::size_t d = 0; d < dims; ++d) {
      const auto& iv = cfg.state_grid[d];
      x(static_cast<Index>(d)) =
          counts[d] == 1 ? iv.lo
                         : iv.lo + (iv.hi - iv.lo) * static_cast<double>(idx[d]) /
                                       static_cast<double>(counts[d] - 1);
    }
    out.push_back(std::move(x));
    for (std::size_t d = dims; d-- > 0;) {
      if (++idx[d] < counts[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

struct BabbledTrajectory {
  std::size_t gain_index = 0;
  std::size_t initial_condition_index = 0;
  Trajectory trajectory;
};

/// Snapshot triples (x_k, u_k, x_{k+1}) grouped by trajectory, in (gain, initial condition)
/// order. Diverged trajectories are dropped whole and counted.
struct SnapshotDataset {
  Index state_dim = 0;
  Index input_dim = 0;
  std::vector<BabbledTrajectory> trajectories;
  std::size_t dropped = 0;

  std::size_t num_snapshots() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.trajectory.steps();
    return n;
  }

  /// All x_k (not the final x_T) across trajectories, in dataset order.
  std::vector<Vector> current_states() const {
    std::vector<Vector> out;
    out.reserve(num_snapshots());
    for (const auto& t : trajectories) {
      const auto& s = t.trajectory.states;
      out.insert(out.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(t.trajectory.steps()));
    }
    return out;
  }
};

/// Builds a dataset directly from trajectories, e.g. synthetic or externally recorded data.
inline SnapshotDataset make_dataset(Index state_dim, Index input_dim,
                                    std::vector<Trajectory> trajectories) {
  SnapshotDataset ds;
  ds.state_dim = state_dim;
  ds.input_dim = input_dim;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    ds.trajectories.push_back({0, i, std::move(trajectories[i])});
  }
  return ds;
}

inline InputBounds babbling_bounds(const ControlAffinePlant& plant, const BabblingConfig& cfg) {
  if (cfg.input_bounds.empty()) return plant.input_bounds();
  if (static_cast<Index>(cfg.input_bounds.size()) != plant.input_dim()) {
    throw ConfigError("babbling: input_bounds needs one interval per input channel");
  }
  InputBounds b{Vector(plant.input_dim()), Vector(plant.input_dim())};
  for (Index i = 0; i < plant.input_dim(); ++i) {
    b.lower(i) = cfg.input_bounds[static_cast<std::size_t>(i)].lo;
    b.upper(i) = cfg.input_bounds[static_cast<std::size_t>(i)].hi;
  }
  return b;
}

/// Rolls out u_k = clip(K_u^(i) psi_u(x_k)) for every (gain i, initial condition j) pair.
/// Rollouts may run on `jobs` threads; assembly order is always (i, j) ascending.
inline SnapshotDataset generate_dataset(const ControlAffinePlant& plant, const ObservableMap& map_x,
                                        const ObservableMap& map_u, const BabblingConfig& cfg,
                                        unsigned jobs = 1) {
  cfg.validate();
  if (map_x.state_dim() != plant.state_dim() || map_u.state_dim() != plant.state_dim()) {
    throw DimensionError("generate_dataset: observable maps do not match the plant state");
  }
  if (static_cast<Index>(cfg.state_grid.size()) != plant.state_dim()) {
    throw ConfigError("generate_dataset: state_grid needs one interval per state dimension");
  }
  const auto gains = sample_random_gains(cfg, plant.input_dim(), map_u.dim());
  const auto inits = grid_initial_conditions(cfg);
  const InputBounds bounds = babbling_bounds(plant, cfg);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (cfg.pairing == GainPairing::cartesian) {
    for (std::size_t i = 0; i < gains.size(); ++i) {
      for (std::size_t j = 0; j < inits.size(); ++j) pairs.emplace_back(i, j);
    }
  } else {
    for (std::size_t j = 0; j < inits.size(); ++j) pairs.emplace_back(j % gains.size(), j);
    std::stable_sort(pairs.begin(), pairs.end());
  }

  std::vector<Trajectory> results(pairs.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t p = begin; p < pairs.size(); p += stride) {
      const Matrix& k = gains[pairs[p].first];
      Controller ctrl = [&](const Vector& x) -> Vector { return k * map_u.evaluate(x); };
      results[p] = rollout(plant, inits[pairs[p].second], ctrl, cfg.steps, cfg.dt, &bounds);
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(pairs.size())));
  if (n_threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    for (auto& th : pool) th.join();
  }

  SnapshotDataset ds;
  ds.state_dim = plant.state_dim();
  ds.input_dim = plant.input_dim();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    if (results[p].failed) {
      ++ds.dropped;
      continue;
    }
    ds.trajectories.push_back({pairs[p].first, pairs[p].second, std::move(results[p])});
  }
  return ds;
}

inline std::string shard_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%06zu.csv", i);
  return buf;
}

/// Writes manifest.json plus one CSV shard per trajectory under dir/shards.
inline void write_dataset(const std::filesystem::path& dir, const SnapshotDataset& ds,
                          Json manifest_extra = Json::object()) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "shards");
  std::string comment;
  if (manifest_extra.contains("provenance")) {
    const auto& p = manifest_extra["provenance"];
    comment = "config_hash=" + p.value("config_hash", std::string()) +
              " seed=" + std::to_string(p.value("seed", std::uint64_t{0})) +
              " toolkit_version=" + p.value("toolkit_version", std::string());
  }
  Json shards = Json::array();
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& t = ds.trajectories[i];
    const auto name = shard_name(i);
    std::ofstream os(dir / "shards" / name);
    if (!os) throw std::runtime_error("cannot write shard " + name);
    write_trajectory_csv(os, t.trajectory, ds.input_dim, comment);
    shards.push_back(Json{{"file", "shards/" + name},
                          {"gain_index", t.gain_index},
                          {"initial_condition_index", t.initial_condition_index}});
  }
  Json manifest = std::move(manifest_extra);
  manifest["state_dim"] = ds.state_dim;
  manifest["input_dim"] = ds.input_dim;
  manifest["trajectories"] = ds.trajectories.size();
  manifest["snapshots"] = ds.num_snapshots();
  manifest["dropped"] = ds.dropped;
  manifest["shards"] = std::move(shards);
  write_json_file(dir / "manifest.json", manifest);
}

inline SnapshotDataset read_dataset(const std::filesystem::path& dir) {
  const Json manifest = read_json_file(dir / "manifest.json");
  SnapshotDataset ds;
  ds.state_dim = manifest.at("state_dim").get<Index>();
  ds.input_dim = manifest.at("input_dim").get<Index>();
  ds.dropped = manifest.at("dropped").get<std::size_t>();
  for (const auto& s : manifest.at("shards")) {
    std::ifstream is(dir / s.at("file").get<std::string>());
    if (!is) throw std::runtime_error("missing shard " + s.at("file").get<std::string>());
    ds.trajectories.push_back({s.at("gain_index").get<std::size_t>(),
                               s.at("initial_condition_index").get<std::size_t>(),
                               read_trajectory_csv(is, ds.state_dim, ds.input_dim)});
  }
  return ds;
}

}  // namespace kcf
