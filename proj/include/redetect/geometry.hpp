#pragma once
// Geometric verification world: a linear subspace M inside R^n, a Gaussian
// human sampler, rewrite = projection onto M plus uniform ball noise, and a
// prompt shift within M. Monte-Carlo checks of the separation claims, the
// optimal bounded pseudo-distance, and the tube-volume scaling exponent.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "redetect/common.hpp"

namespace redetect {

struct GeometryWorld {
  int n = 0;                    // ambient dimension
  int d_m = 0;                  // dimension of the subspace M
  Eigen::MatrixXd basis;        // n x d_m, orthonormal columns spanning M
  Eigen::VectorXd human_mean;   // mean of the human Gaussian
  Eigen::MatrixXd human_factor; // n x n; covariance = factor * factor^T
  double noise_radius = 0.0;    // rewrite noise ball radius within M
  Eigen::VectorXd prompt_shift; // translation within M for prompted machines
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 2) throw ValidationError("world needs ambient dimension >= 2");
    if (d_m < 1 || d_m >= n)
      throw ValidationError("subspace dimension must satisfy 1 <= d_m < n");
    if (basis.rows() != n || basis.cols() != d_m)
      throw ValidationError("basis must be n x d_m");
    const double ortho =
        (basis.transpose() * basis - Eigen::MatrixXd::Identity(d_m, d_m)).cwiseAbs().maxCoeff();
    if (ortho > 1e-10) throw ValidationError("basis columns are not orthonormal within 1e-10");
    if (human_mean.size() != n || human_factor.rows() != n || human_factor.cols() != n)
      throw ValidationError("human sampler dimensions do not match the ambient space");
    if (noise_radius < 0.0) throw ValidationError("noise radius must be >= 0");
    if (prompt_shift.size() != n) throw ValidationError("prompt shift must be an n-vector");
    const double off = (prompt_shift - basis * (basis.transpose() * prompt_shift)).norm();
    if (off > 1e-8 * std::max(1.0, prompt_shift.norm()))
      throw ValidationError("prompt shift must lie in M");
  }
};

inline Eigen::VectorXd project(const GeometryWorld& w, const Eigen::VectorXd& x) {
  if (x.size() != w.n) throw ValidationError("project: vector dimension mismatch");
  return w.basis * (w.basis.transpose() * x);
}

namespace detail {

inline Eigen::VectorXd gaussian_vector(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  return v;
}

// Uniform draw from the d-ball of the given radius.
inline Eigen::VectorXd ball_vector(int dim, double radius, std::mt19937_64& rng) {
  Eigen::VectorXd dir = gaussian_vector(dim, rng);
  const double norm = dir.norm();
  if (norm == 0.0) return Eigen::VectorXd::Zero(dim);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double r = radius * std::pow(unif(rng), 1.0 / static_cast<double>(dim));
  return dir * (r / norm);
}

struct MeanVar {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  double mean() const { return sum / static_cast<double>(count); }
  double variance() const {
    const double c = static_cast<double>(count);
    const double v = (sum_sq - sum * sum / c) / std::max(1.0, c - 1.0);
    return std::max(0.0, v);
  }
  double se() const { return std::sqrt(variance() / static_cast<double>(count)); }
};

}  // namespace detail

inline Eigen::VectorXd sample_human(const GeometryWorld& w, std::mt19937_64& rng) {
  return w.human_mean + w.human_factor * detail::gaussian_vector(w.n, rng);
}

inline Eigen::VectorXd reconstruct(const GeometryWorld& w, const Eigen::VectorXd& x,
                                   std::mt19937_64& rng) {
  Eigen::VectorXd proj = project(w, x);
  if (w.noise_radius == 0.0) return proj;
  return proj + w.basis * detail::ball_vector(w.d_m, w.noise_radius, rng);
}

// Mean norm of a k-dimensional standard Gaussian: sqrt(2)*Gamma((k+1)/2)/Gamma(k/2).
inline double chi_mean(int k) {
  if (k < 1) throw ValidationError("chi_mean needs k >= 1");
  return std::exp(0.5 * std::log(2.0) + std::lgamma(0.5 * (k + 1)) - std::lgamma(0.5 * k));
}

// Mean norm of a uniform draw from the d-ball: radius * d / (d + 1).
inline double ball_mean_norm(int d, double radius) {
  if (d < 1) throw ValidationError("ball_mean_norm needs d >= 1");
  return radius * static_cast<double>(d) / static_cast<double>(d + 1);
}

// ---------------------------------------------------------------------------
// World factories. The generic world has full-rank Gaussian noise (so humans
// live off M almost surely); the supported world confines mean and covariance
// to M, which is the equality case of the first separation claim.
// ---------------------------------------------------------------------------

inline GeometryWorld make_random_world(int n, int d_m, double noise_radius, std::uint64_t seed,
                                       double shift_scale = 0.0) {
  GeometryWorld w;
  w.n = n;
  w.d_m = d_m;
  w.noise_radius = noise_radius;
  w.seed = seed;
  auto rng = make_rng(mix_seed(seed, fnv1a64("geometry-world")));
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i) g.row(i) = detail::gaussian_vector(n, rng).transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, d_m);
  w.basis = q;
  w.human_mean = 0.5 * detail::gaussian_vector(n, rng);
  // factor = I + small random perturbation: full rank, well conditioned.
  Eigen::MatrixXd pert(n, n);
  for (int i = 0; i < n; ++i) pert.row(i) = detail::gaussian_vector(n, rng).transpose();
  w.human_factor =
      Eigen::MatrixXd::Identity(n, n) + (0.2 / std::sqrt(static_cast<double>(n))) * pert;
  if (shift_scale != 0.0) {
    Eigen::VectorXd dir = detail::gaussian_vector(d_m, rng);
    if (dir.norm() > 0.0) dir /= dir.norm();
    w.prompt_shift = w.basis * (shift_scale * dir);
  } else {
    w.prompt_shift = Eigen::VectorXd::Zero(n);
  }
  w.validate();
  return w;
}

inline GeometryWorld make_supported_world(int n, int d_m, double noise_radius,
                                          std::uint64_t seed) {
  GeometryWorld w = make_random_world(n, d_m, noise_radius, seed);
  auto rng = make_rng(mix_seed(seed, fnv1a64("geometry-supported")));
  w.human_mean = w.basis * (0.5 * detail::gaussian_vector(d_m, rng));
  Eigen::MatrixXd c(d_m, d_m);
  for (int i = 0; i < d_m; ++i) c.row(i) = detail::gaussian_vector(d_m, rng).transpose();
  Eigen::MatrixXd inner =
      Eigen::MatrixXd::Identity(d_m, d_m) + (0.2 / std::sqrt(static_cast<double>(d_m))) * c;
  w.human_factor = w.basis * inner * w.basis.transpose();
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Claim 1: humans reconstruct worse than machines (equality iff p lives on M).
// ---------------------------------------------------------------------------

struct Prop1Result {
  double mean_human_err = 0.0;
  double mean_machine_err = 0.0;
  double margin = 0.0;     // human - machine
  double pooled_se = 0.0;
  bool passed = false;     // margin >= -3 * pooled_se
};

inline Prop1Result verify_prop1(const GeometryWorld& w, std::size_t n_samples) {
  w.validate();
  if (n_samples < 100) throw ValidationError("verify_prop1 needs n_samples >= 100");
  auto rng = make_rng(mix_seed(w.seed, fnv1a64("prop1")));
  detail::MeanVar human, machine;
  for (std::size_t i = 0; i < n_samples; ++i) {
    Eigen::VectorXd x = sample_human(w, rng);
    human.add((reconstruct(w, x, rng) - x).norm());
    Eigen::VectorXd y = project(w, sample_human(w, rng));  // machine text lives on M
    machine.add((reconstruct(w, y, rng) - y).norm());
  }
  Prop1Result r;
  r.mean_human_err = human.mean();
  r.mean_machine_err = machine.mean();
  r.margin = r.mean_human_err - r.mean_machine_err;
  r.pooled_se = std::sqrt(human.se() * human.se() + machine.se() * machine.se());
  r.passed = r.margin >= -3.0 * r.pooled_se;
  return r;
}

// ---------------------------------------------------------------------------
// Claim 2: against prompted machines the gap is at least E|X - proj(X)| minus
// a noise term of order eps (constant taken as 1 from the proof, since the
// prompted reconstruction error is exactly |e| <= eps).
// ---------------------------------------------------------------------------

struct Prop2Result {
  double gap = 0.0;          // mean human err - mean prompted machine err
  double lower_bound = 0.0;  // estimated E|X - proj(X)| - eps
  double slack = 0.0;        // gap - lower_bound
  double se = 0.0;
  double mean_human_err = 0.0;
  double mean_prompted_err = 0.0;
  bool passed = false;  // slack >= -3 * se
};

// Reconstruction errors of prompted machine texts Y = proj(X) + scale * shift.
// The translation lies in M, so the error reduces to the noise draw |e| and is
// identical across shift scales when the same stream salt is used.
inline std::vector<double> prompted_machine_errors(const GeometryWorld& w, double shift_scale,
                                                   std::size_t n_samples,
                                                   std::uint64_t salt = 0) {
  w.validate();
  if (w.prompt_shift.norm() == 0.0)
    throw ValidationError("prompted machine sampling needs a nonzero prompt shift");
  auto rng = make_rng(mix_seed(w.seed, fnv1a64("prop2-prompted"), salt));
  std::vector<double> errs;
  errs.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Eigen::VectorXd y = project(w, sample_human(w, rng)) + shift_scale * w.prompt_shift;
    errs.push_back((reconstruct(w, y, rng) - y).norm());
  }
  return errs;
}

inline Prop2Result verify_prop2(const GeometryWorld& w, std::size_t n_samples) {
  w.validate();
  if (n_samples < 100) throw ValidationError("verify_prop2 needs n_samples >= 100");
  if (w.noise_radius <= 0.0) throw ValidationError("verify_prop2 needs eps > 0");
  if (w.prompt_shift.norm() == 0.0)
    throw ValidationError("verify_prop2 needs a configured prompt shift");
  auto rng = make_rng(mix_seed(w.seed, fnv1a64("prop2-human")));
  detail::MeanVar human, resid;
  for (std::size_t i = 0; i < n_samples; ++i) {
    Eigen::VectorXd x = sample_human(w, rng);
    resid.add((x - project(w, x)).norm());
    human.add((reconstruct(w, x, rng) - x).norm());
  }
  detail::MeanVar prompted;
  for (double e : prompted_machine_errors(w, 1.0, n_samples)) prompted.add(e);
  Prop2Result r;
  r.mean_human_err = human.mean();
  r.mean_prompted_err = prompted.mean();
  r.gap = r.mean_human_err - r.mean_prompted_err;
  r.lower_bound = resid.mean() - w.noise_radius;
  r.slack = r.gap - r.lower_bound;
  r.se = std::sqrt(human.se() * human.se() + prompted.se() * prompted.se() +
                   resid.se() * resid.se());
  r.passed = r.slack >= -3.0 * r.se;
  return r;
}

// ---------------------------------------------------------------------------
// Two-sample Kolmogorov-Smirnov, used to check that the prompted error
// distribution ignores the shift magnitude.
// ---------------------------------------------------------------------------

inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ValidationError("ks_statistic needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    // Compare ECDFs only just past each distinct value; advancing one pointer
    // at a time would evaluate mid-tie and overstate the gap on tied samples.
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(a.size());
    const double fb = static_cast<double>(j) / static_cast<double>(b.size());
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

inline double ks_critical_value(std::size_t n1, std::size_t n2, double alpha) {
  double c = 0.0;
  if (alpha == 0.01)
    c = 1.628;
  else if (alpha == 0.05)
    c = 1.358;
  else
    throw ValidationError("ks_critical_value supports alpha = 0.01 or 0.05");
  const double m = static_cast<double>(n1), n = static_cast<double>(n2);
  return c * std::sqrt((m + n) / (m * n));
}

inline bool ks_same_distribution(const std::vector<double>& a, const std::vector<double>& b,
                                 double alpha) {
  return ks_statistic(a, b) <= ks_critical_value(a.size(), b.size(), alpha);
}

// ---------------------------------------------------------------------------
// Claim 3: the capped membership distance maximizes the gap, reaching the cap
// exactly, and beats the Euclidean distance rescaled to the same cap.
// ---------------------------------------------------------------------------

constexpr double kMembershipTol = 1e-8;

inline double opt_distance(const GeometryWorld& w, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& y, double m_cap) {
  const bool in_x = (x - project(w, x)).norm() < kMembershipTol;
  const bool in_y = (y - project(w, y)).norm() < kMembershipTol;
  return in_x == in_y ? 0.0 : m_cap;
}

struct Prop3Result {
  double gap_opt = 0.0;     // gap under the capped membership distance
  double gap_euclid = 0.0;  // gap under Euclidean rescaled to the same cap
  double m_cap = 0.0;
  bool passed = false;  // gap_opt == m_cap (membership tol) and >= gap_euclid
};

inline Prop3Result verify_prop3(const GeometryWorld& w, double m_cap, std::size_t n_samples) {
  w.validate();
  if (m_cap <= 0.0) throw ValidationError("verify_prop3 needs a positive cap");
  if (n_samples < 100) throw ValidationError("verify_prop3 needs n_samples >= 100");
  auto rng = make_rng(mix_seed(w.seed, fnv1a64("prop3")));
  detail::MeanVar opt_h, opt_m, euc_h, euc_m;
  double d_max = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    Eigen::VectorXd x = sample_human(w, rng);
    Eigen::VectorXd rx = reconstruct(w, x, rng);
    Eigen::VectorXd y = project(w, sample_human(w, rng));
    Eigen::VectorXd ry = reconstruct(w, y, rng);
    opt_h.add(opt_distance(w, x, rx, m_cap));
    opt_m.add(opt_distance(w, y, ry, m_cap));
    const double eh = (x - rx).norm(), em = (y - ry).norm();
    euc_h.add(eh);
    euc_m.add(em);
    d_max = std::max({d_max, eh, em});
  }
  Prop3Result r;
  r.m_cap = m_cap;
  r.gap_opt = opt_h.mean() - opt_m.mean();
  r.gap_euclid = d_max > 0.0 ? (euc_h.mean() - euc_m.mean()) * (m_cap / d_max) : 0.0;
  r.passed = std::abs(r.gap_opt - m_cap) <= kMembershipTol && r.gap_opt >= r.gap_euclid;
  return r;
}

// ---------------------------------------------------------------------------
// Tube scaling: fraction of human samples within distance eps of M behaves
// like eps^kappa with kappa = codim(M); fit the exponent on a log-log grid.
// ---------------------------------------------------------------------------

struct TubeResult {
  std::vector<double> eps;        // ascending
  std::vector<double> fractions;  // same order
  std::size_t n_samples = 0;
  double fitted_exponent = 0.0;
};

inline TubeResult tube_fraction(const GeometryWorld& w, std::vector<double> eps_list,
                                std::size_t n_samples) {
  w.validate();
  if (eps_list.size() < 3) throw ValidationError("tube_fraction needs at least 3 epsilons");
  for (double e : eps_list)
    if (e <= 0.0) throw ValidationError("tube_fraction epsilons must be positive");
  std::sort(eps_list.begin(), eps_list.end());
  if (eps_list.back() / eps_list.front() < 10.0)
    throw ValidationError("tube_fraction epsilons must span at least one decade");
  if (n_samples == 0) throw ValidationError("tube_fraction needs samples");
  auto rng = make_rng(mix_seed(w.seed, fnv1a64("tube")));
  std::vector<std::size_t> counts(eps_list.size(), 0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Eigen::VectorXd x = sample_human(w, rng);
    const double dist = (x - project(w, x)).norm();
    for (std::size_t j = 0; j < eps_list.size(); ++j)
      if (dist < eps_list[j]) ++counts[j];
  }
  if (counts.front() == 0)
    throw DegenerateInputError(
        "no samples fell within the smallest tube; increase n_samples or raise the smallest "
        "epsilon");
  TubeResult r;
  r.eps = eps_list;
  r.n_samples = n_samples;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t j = 0; j < eps_list.size(); ++j) {
    const double f = static_cast<double>(counts[j]) / static_cast<double>(n_samples);
    if (f >= 0.5)
      throw ValidationError("tube_fraction: epsilon " + fmt_double(eps_list[j]) +
                            " captures half the mass; use smaller epsilons");
    r.fractions.push_back(f);
    const double lx = std::log(eps_list[j]), ly = std::log(f);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double m = static_cast<double>(eps_list.size());
  r.fitted_exponent = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return r;
}

inline void save_fractions_tsv(const std::string& path, const TubeResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "epsilon\tfraction\tn_samples\n";
  for (std::size_t j = 0; j < r.eps.size(); ++j)
    out << fmt_double(r.eps[j]) << '\t' << fmt_double(r.fractions[j]) << '\t' << r.n_samples
        << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace redetect
