#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lcl/core/random.hpp"

namespace lcl::mi {

inline constexpr std::size_t kMaxAlphabet = 16;
inline constexpr std::size_t kMaxPositions = 3;

/// p(x) over a finite input alphabet, a deterministic encoder f: X -> Z^N and
/// a deterministic causal decoder g: y_k = g_k(z_1..z_k).
struct DiscreteJointModel {
  std::vector<double> px;
  std::size_t positions = 1;
  std::size_t z_alphabet = 2;
  std::size_t y_alphabet = 2;
  std::vector<std::vector<std::uint32_t>> f;  // f[x][k]
  std::vector<std::vector<std::uint32_t>> g;  // g[k][prefix code of z_1..z_k]

  std::size_t prefix_code(const std::vector<std::uint32_t>& z, std::size_t k) const {
    std::size_t code = 0;
    for (std::size_t j = 0; j <= k; ++j) code = code * z_alphabet + z[j];
    return code;
  }

  std::vector<std::uint32_t> encode(std::size_t x) const { return f.at(x); }

  std::vector<std::uint32_t> decode(const std::vector<std::uint32_t>& z) const {
    std::vector<std::uint32_t> y(positions);
    for (std::size_t k = 0; k < positions; ++k) y[k] = g[k][prefix_code(z, k)];
    return y;
  }

  void validate() const {
    if (positions == 0 || positions > kMaxPositions) throw std::invalid_argument("DiscreteJointModel: positions must be 1..3");
    if (z_alphabet == 0 || z_alphabet > kMaxAlphabet || y_alphabet == 0 || y_alphabet > kMaxAlphabet) {
      throw std::invalid_argument("DiscreteJointModel: alphabets must have 1..16 symbols");
    }
    if (px.empty()) throw std::invalid_argument("DiscreteJointModel: empty input alphabet");
    double total = 0;
    for (double p : px) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("DiscreteJointModel: negative or non-finite p(x)");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      std::ostringstream os;
      os.precision(17);
      os << "DiscreteJointModel: p(x) sums to " << total << ", not 1";
      throw std::invalid_argument(os.str());
    }
    if (f.size() != px.size()) throw std::invalid_argument("DiscreteJointModel: f must be defined on every input symbol");
    for (const auto& z : f) {
      if (z.size() != positions) throw std::invalid_argument("DiscreteJointModel: f output has the wrong length");
      for (auto s : z)
        if (s >= z_alphabet) throw std::invalid_argument("DiscreteJointModel: f output outside Z");
    }
    if (g.size() != positions) throw std::invalid_argument("DiscreteJointModel: g needs one table per position");
    std::size_t domain = 1;
    for (std::size_t k = 0; k < positions; ++k) {
      domain *= z_alphabet;
      if (g[k].size() != domain) throw std::invalid_argument("DiscreteJointModel: g_" + std::to_string(k) + " is not total");
      for (auto s : g[k])
        if (s >= y_alphabet) throw std::invalid_argument("DiscreteJointModel: g output outside Y");
    }
  }
};

/// Per-position joint p(z_k, y_k), indexed [k][z * |Y| + y].
inline std::vector<std::vector<double>> position_joints(const DiscreteJointModel& m) {
  m.validate();
  std::vector<std::vector<double>> joint(m.positions, std::vector<double>(m.z_alphabet * m.y_alphabet, 0.0));
  for (std::size_t x = 0; x < m.px.size(); ++x) {
    const auto z = m.encode(x);
    const auto y = m.decode(z);
    for (std::size_t k = 0; k < m.positions; ++k) joint[k][z[k] * m.y_alphabet + y[k]] += m.px[x];
  }
  return joint;
}

namespace detail {

inline double plogp(double p) { return p > 0 ? p * std::log(p) : 0.0; }

struct Marginals {
  std::vector<double> z, y;
};

inline Marginals marginals(const std::vector<double>& joint, std::size_t nz, std::size_t ny) {
  Marginals mg{std::vector<double>(nz, 0.0), std::vector<double>(ny, 0.0)};
  for (std::size_t a = 0; a < nz; ++a)
    for (std::size_t b = 0; b < ny; ++b) {
      mg.z[a] += joint[a * ny + b];
      mg.y[b] += joint[a * ny + b];
    }
  return mg;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p) h -= plogp(v);
  return h;
}

}  // namespace detail

/// Sum over positions of I(y_k; z_k), in nats.
inline double exact_mutual_information(const DiscreteJointModel& m) {
  double total = 0;
  for (const auto& joint : position_joints(m)) {
    const auto mg = detail::marginals(joint, m.z_alphabet, m.y_alphabet);
    for (std::size_t a = 0; a < m.z_alphabet; ++a)
      for (std::size_t b = 0; b < m.y_alphabet; ++b) {
        const double p = joint[a * m.y_alphabet + b];
        if (p > 0) total += p * std::log(p / (mg.z[a] * mg.y[b]));
      }
  }
  return total;
}

/// Sum over positions of the marginal entropies H(z_k) and H(y_k).
inline std::pair<double, double> marginal_entropies(const DiscreteJointModel& m) {
  double hz = 0, hy = 0;
  for (const auto& joint : position_joints(m)) {
    const auto mg = detail::marginals(joint, m.z_alphabet, m.y_alphabet);
    hz += detail::entropy(mg.z);
    hy += detail::entropy(mg.y);
  }
  return {hz, hy};
}

enum class Direction { ZGivenY, YGivenZ };

/// min over q of the cross-entropy -E[log q(target | condition)], attained
/// at the exact conditional, so it equals the conditional entropy.
inline double optimal_cross_entropy(const DiscreteJointModel& m, Direction dir = Direction::ZGivenY) {
  double total = 0;
  for (const auto& joint : position_joints(m)) {
    const auto mg = detail::marginals(joint, m.z_alphabet, m.y_alphabet);
    for (std::size_t a = 0; a < m.z_alphabet; ++a)
      for (std::size_t b = 0; b < m.y_alphabet; ++b) {
        const double p = joint[a * m.y_alphabet + b];
        if (p <= 0) continue;
        const double q = dir == Direction::ZGivenY ? p / mg.y[b] : p / mg.z[a];
        total -= p * std::log(q);
      }
  }
  return total;
}

struct DecompositionReport {
  double mutual_information = 0;
  double z_form = 0;  // -H(z|y) + sum H(z_k)
  double y_form = 0;  // -H(y|z) + sum H(y_k)
  double max_deviation = 0;
  bool passed = false;

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "I=" << mutual_information << " z-form=" << z_form << " y-form=" << y_form << " max_dev=" << max_deviation;
    return os.str();
  }
};

inline DecompositionReport verify_mi_decomposition(const DiscreteJointModel& m, double tol = 1e-9) {
  DecompositionReport r;
  const auto [hz, hy] = marginal_entropies(m);
  r.mutual_information = exact_mutual_information(m);
  r.z_form = -optimal_cross_entropy(m, Direction::ZGivenY) + hz;
  r.y_form = -optimal_cross_entropy(m, Direction::YGivenZ) + hy;
  r.max_deviation = std::max({std::abs(r.mutual_information - r.z_form), std::abs(r.mutual_information - r.y_form),
                              std::abs(r.z_form - r.y_form)});
  r.passed = r.max_deviation <= tol;
  return r;
}

/// Random model: |X| = |Z| = |Y| = alphabet, p(x) from normalized
/// exponential draws with occasional zero mass, uniform random f and g tables.
inline DiscreteJointModel random_model(std::uint64_t seed, std::size_t alphabet, std::size_t positions) {
  if (alphabet == 0 || alphabet > kMaxAlphabet) throw std::invalid_argument("random_model: alphabet must be 1..16");
  if (positions == 0 || positions > kMaxPositions) throw std::invalid_argument("random_model: positions must be 1..3");
  Rng rng(seed);
  DiscreteJointModel m;
  m.positions = positions;
  m.z_alphabet = alphabet;
  m.y_alphabet = alphabet;
  m.px.resize(alphabet);
  double total = 0;
  for (auto& p : m.px) {
    p = rng.bernoulli(0.15) ? 0.0 : -std::log(1.0 - rng.uniform());
    total += p;
  }
  if (total == 0) {
    m.px[0] = 1.0;
    total = 1.0;
  }
  for (auto& p : m.px) p /= total;
  double drift = 1.0;
  for (double p : m.px) drift -= p;
  *std::max_element(m.px.begin(), m.px.end()) += drift;
  m.f.assign(alphabet, std::vector<std::uint32_t>(positions));
  for (auto& z : m.f)
    for (auto& s : z) s = static_cast<std::uint32_t>(rng.below(alphabet));
  std::size_t domain = 1;
  m.g.resize(positions);
  for (std::size_t k = 0; k < positions; ++k) {
    domain *= alphabet;
    m.g[k].resize(domain);
    for (auto& s : m.g[k]) s = static_cast<std::uint32_t>(rng.below(alphabet));
  }
  return m;
}

/// One position; f maps x to z through `encoder`, and y = z.
inline DiscreteJointModel single_position_model(std::vector<double> px, std::vector<std::uint32_t> encoder,
                                                std::size_t z_alphabet) {
  DiscreteJointModel m;
  m.px = std::move(px);
  m.positions = 1;
  m.z_alphabet = z_alphabet;
  m.y_alphabet = z_alphabet;
  for (auto z : encoder) m.f.push_back({z});
  m.g.resize(1);
  for (std::size_t z = 0; z < z_alphabet; ++z) m.g[0].push_back(static_cast<std::uint32_t>(z));
  m.validate();
  return m;
}

struct CollapseReport {
  double cross_entropy_const = 0;
  double mi_const = 0;
  double cross_entropy_id = 0;
  double mi_id = 0;

  double gap() const { return mi_id - mi_const; }
};

/// A constant encoder drives the compression term to its minimum of 0 yet
/// carries no information; the identity encoder keeps I(y;z) = H(x).
inline CollapseReport collapse_counterexample(const std::vector<double>& px) {
  const std::size_t n = px.size();
  if (n == 0 || n > kMaxAlphabet) throw std::invalid_argument("collapse_counterexample: input alphabet must have 1..16 symbols");
  std::vector<std::uint32_t> constant(n, 0), identity(n);
  for (std::size_t x = 0; x < n; ++x) identity[x] = static_cast<std::uint32_t>(x);
  const auto m_const = single_position_model(px, constant, n);
  const auto m_id = single_position_model(px, identity, n);
  return {optimal_cross_entropy(m_const), exact_mutual_information(m_const), optimal_cross_entropy(m_id),
          exact_mutual_information(m_id)};
}

inline CollapseReport collapse_counterexample() { return collapse_counterexample(std::vector<double>(4, 0.25)); }

struct SweepSummary {
  std::size_t models = 0;
  std::size_t failures = 0;
  double worst_deviation = 0;
  std::uint64_t worst_seed = 0;
  std::vector<std::uint64_t> failed_seeds;
};

inline SweepSummary verify_mi_sweep(std::uint64_t first_seed, std::size_t seeds, std::size_t alphabet,
                                    std::size_t positions, double tol = 1e-9) {
  SweepSummary s;
  for (std::size_t i = 0; i < seeds; ++i) {
    const std::uint64_t seed = first_seed + i;
    const auto r = verify_mi_decomposition(random_model(seed, alphabet, positions), tol);
    ++s.models;
    if (r.max_deviation >= s.worst_deviation) {
      s.worst_deviation = r.max_deviation;
      s.worst_seed = seed;
    }
    if (!r.passed) {
      ++s.failures;
      s.failed_seeds.push_back(seed);
    }
  }
  return s;
}

}  // namespace lcl::mi
