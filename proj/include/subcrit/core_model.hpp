#pragma once
//!\file
//!\brief Model constants, test functions, measures on [0,1] and unit-interval paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace subcrit {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Parameter outside the admissible domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Tilt amplitude at or above the blow-up threshold of a one-particle equation.
class ThresholdError : public DomainError {
 public:
  ThresholdError(const std::string& what, double ratio) : DomainError(what), ratio_(ratio) {}
  /// ||Psi||_inf / Q0 (or the offending level over the admissible limit).
  double ratio() const { return ratio_; }

 private:
  double ratio_;
};

/// Iterative solver stopped without meeting its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_residual)
      : std::runtime_error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

/// Requested method is not available for the given combination of inputs.
class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {
inline std::string fmt_g(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Branching constants
// ---------------------------------------------------------------------------

/// Binary branching law F(s) = q s^2 + (1 - q) with exponential lifetimes of rate V
/// and Poisson immigration of intensity H.
struct BranchingParams {
  double V;  ///< lifetime rate
  double q;  ///< probability of two offspring
  double H;  ///< immigration intensity per unit time and volume

  BranchingParams(double V_, double q_, double H_) : V(V_), q(q_), H(H_) { validate(); }

  void validate() const {
    if (!(V > 0.0) || !std::isfinite(V)) throw DomainError("BranchingParams: V must be > 0, got " + detail::fmt_g(V));
    if (!(q >= 0.0 && q < 0.5)) throw DomainError("BranchingParams: q must lie in [0, 1/2), got " + detail::fmt_g(q));
    if (!(H > 0.0) || !std::isfinite(H)) throw DomainError("BranchingParams: H must be > 0, got " + detail::fmt_g(H));
  }

  /// Intensity of dying.
  double Q() const { return V * (1.0 - 2.0 * q); }
  double Vq() const { return V * q; }
  /// Generating function of the offspring law.
  double F(double s) const { return q * s * s + (1.0 - q); }
  /// G(s) = F(1 - s) - (1 - s).
  double G(double s) const { return F(1.0 - s) - (1.0 - s); }
};

struct DerivedRates {
  double Q;             ///< V(1 - 2q)
  double Q0_branching;  ///< V(1 - 2 sqrt(q(1-q)))
  double Q0_super;      ///< Q^2 / (4 V q); +inf when q = 0
};

inline DerivedRates derive_constants(const BranchingParams& p) {
  p.validate();
  DerivedRates r{};
  r.Q = p.Q();
  r.Q0_branching = p.V * (1.0 - 2.0 * std::sqrt(p.q * (1.0 - p.q)));
  r.Q0_super = p.q > 0.0 ? r.Q * r.Q / (4.0 * p.V * p.q) : std::numeric_limits<double>::infinity();
  if (!(r.Q0_branching > 0.0 && r.Q0_branching <= r.Q * (1.0 + 1e-15)))
    throw std::logic_error("derive_constants: Q0^B outside (0, Q]");
  return r;
}

/// Level-n superprocess approximation: rate V_n = 2nVq, offspring probability q_n,
/// particle mass 1/n, immigration nH.
struct ApproxParams {
  int level;
  double V_n;
  double q_n;
  double mass;
  double immigration;
  double Q;  ///< intensity of dying of the parent model
  double one_minus_2q_n;  ///< 1 - 2 q_n, formed without cancellation

  double intensity_of_dying() const { return V_n * one_minus_2q_n; }
  BranchingParams as_branching() const { return {V_n, q_n, immigration}; }
};

inline ApproxParams approx_level_params(const BranchingParams& p, int n) {
  p.validate();
  if (n < 1) throw DomainError("approx_level_params: level must be >= 1");
  if (p.q <= 0.0) throw DomainError("approx_level_params: q = 0 has no superprocess approximation");
  ApproxParams a{};
  a.level = n;
  const double nd = static_cast<double>(n);
  a.V_n = 2.0 * nd * p.V * p.q;
  a.q_n = (2.0 * nd * p.q + 2.0 * p.q - 1.0) / (4.0 * nd * p.q);
  if (a.q_n < 0.0) {
    const int min_level = static_cast<int>(std::ceil((1.0 - 2.0 * p.q) / (2.0 * p.q) - 1e-12));
    throw DomainError("approx_level_params: q_n < 0 at level " + std::to_string(n) + "; levels >= " +
                      std::to_string(min_level) + " are admissible for q = " + detail::fmt_g(p.q));
  }
  a.one_minus_2q_n = (1.0 - 2.0 * p.q) / (2.0 * nd * p.q);
  a.mass = 1.0 / nd;
  a.immigration = nd * p.H;
  a.Q = p.Q();
  return a;
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

enum class TestFunctionKind { gaussian_bump, scaled_gaussian, product_of_1d, custom };

/// Nonnegative, rapidly decreasing test function from a closed family.
///
/// Every Gaussian kind is stored as  prefactor * prod_i exp(-(x_i - c_i)^2 / W_i^2),
/// which is what the analytic semigroup and the closed-form norms work with.
/// A custom callable must come with its sup-norm and integrals.
class TestFunction {
 public:
  /// amplitude * exp(-|x - c|^2 / width^2)
  static TestFunction gaussian_bump(std::vector<double> center, double width, double amplitude = 1.0) {
    check_gaussian_args(center, width, amplitude);
    TestFunction f(TestFunctionKind::gaussian_bump);
    f.W_.assign(center.size(), width);
    f.center_ = std::move(center);
    f.prefactor_ = amplitude;
    f.amplitude_ = amplitude;
    f.finish_gaussian();
    return f;
  }

  /// Gaussian density of total mass `amplitude` and per-axis standard deviation `width`.
  static TestFunction scaled_gaussian(std::vector<double> center, double width, double amplitude = 1.0) {
    check_gaussian_args(center, width, amplitude);
    TestFunction f(TestFunctionKind::scaled_gaussian);
    const double d = static_cast<double>(center.size());
    f.W_.assign(center.size(), std::sqrt(2.0) * width);
    f.center_ = std::move(center);
    f.prefactor_ = amplitude * std::pow(2.0 * std::numbers::pi * width * width, -0.5 * d);
    f.amplitude_ = amplitude;
    f.finish_gaussian();
    return f;
  }

  /// amplitude * prod_i exp(-(x_i - c_i)^2 / w_i^2)
  static TestFunction product_of_1d(std::vector<double> center, std::vector<double> widths, double amplitude = 1.0) {
    if (center.size() != widths.size()) throw DomainError("TestFunction: center/width dimension mismatch");
    for (double w : widths) check_gaussian_args(center, w, amplitude);
    TestFunction f(TestFunctionKind::product_of_1d);
    f.center_ = std::move(center);
    f.W_ = std::move(widths);
    f.prefactor_ = amplitude;
    f.amplitude_ = amplitude;
    f.finish_gaussian();
    return f;
  }

  /// Arbitrary nonnegative callable; the caller vouches for the supplied norms.
  static TestFunction custom(std::size_t dim, std::function<double(std::span<const double>)> fn, double sup_norm,
                             double integral, double square_integral, std::vector<double> center,
                             double support_radius) {
    if (dim == 0 || center.size() != dim) throw DomainError("TestFunction: bad dimension for custom function");
    if (!(sup_norm > 0.0 && integral > 0.0 && square_integral > 0.0 && support_radius > 0.0))
      throw DomainError("TestFunction: custom norms must be positive");
    TestFunction f(TestFunctionKind::custom);
    f.fn_ = std::move(fn);
    f.center_ = std::move(center);
    f.sup_ = sup_norm;
    f.integral_ = integral;
    f.sq_integral_ = square_integral;
    f.custom_radius_ = support_radius;
    f.amplitude_ = sup_norm;
    return f;
  }

  TestFunctionKind kind() const { return kind_; }
  bool is_gaussian() const { return kind_ != TestFunctionKind::custom; }
  std::size_t dim() const { return center_.size(); }
  const std::vector<double>& center() const { return center_; }
  /// Per-axis Gaussian scale W_i (exp(-(x-c)^2/W^2)); empty for custom.
  const std::vector<double>& gaussian_widths() const { return W_; }
  double prefactor() const { return prefactor_; }
  double amplitude() const { return amplitude_; }

  double operator()(std::span<const double> x) const {
    if (kind_ == TestFunctionKind::custom) return fn_(x);
    double e = 0.0;
    for (std::size_t i = 0; i < center_.size(); ++i) {
      const double z = (x[i] - center_[i]) / W_[i];
      e += z * z;
    }
    return prefactor_ * std::exp(-e);
  }
  double operator()(double x) const { return (*this)(std::span<const double>(&x, 1)); }

  double sup_norm() const { return sup_; }
  /// <lambda, phi>
  double integral() const { return integral_; }
  /// ||phi^2||_1
  double square_integral() const { return sq_integral_; }

  /// Radius around the center outside of which phi < rel * ||phi||_inf.
  double support_radius(double rel = 1e-12) const {
    if (kind_ == TestFunctionKind::custom) return custom_radius_;
    const double wmax = *std::max_element(W_.begin(), W_.end());
    return wmax * std::sqrt(-std::log(rel));
  }

  /// ||phi1 phi2||_1 in closed form for two Gaussian test functions.
  friend double product_integral(const TestFunction& a, const TestFunction& b) {
    if (&a == &b) return a.square_integral();
    if (!a.is_gaussian() || !b.is_gaussian())
      throw UnsupportedError("product_integral: closed form needs Gaussian test functions");
    if (a.dim() != b.dim()) throw DomainError("product_integral: dimension mismatch");
    double v = a.prefactor_ * b.prefactor_;
    for (std::size_t i = 0; i < a.dim(); ++i) {
      const double pa = 1.0 / (a.W_[i] * a.W_[i]);
      const double pb = 1.0 / (b.W_[i] * b.W_[i]);
      const double dc = a.center_[i] - b.center_[i];
      v *= std::sqrt(std::numbers::pi / (pa + pb)) * std::exp(-pa * pb / (pa + pb) * dc * dc);
    }
    return v;
  }

 private:
  explicit TestFunction(TestFunctionKind k) : kind_(k) {}

  static void check_gaussian_args(const std::vector<double>& center, double width, double amplitude) {
    if (center.empty()) throw DomainError("TestFunction: dimension must be >= 1");
    if (!(width > 0.0) || !std::isfinite(width)) throw DomainError("TestFunction: width must be > 0");
    if (!(amplitude > 0.0) || !std::isfinite(amplitude)) throw DomainError("TestFunction: amplitude must be > 0");
  }

  void finish_gaussian() {
    sup_ = prefactor_;
    integral_ = prefactor_;
    sq_integral_ = prefactor_ * prefactor_;
    for (double w : W_) {
      integral_ *= std::sqrt(std::numbers::pi) * w;
      sq_integral_ *= std::sqrt(std::numbers::pi / 2.0) * w;
    }
  }

  TestFunctionKind kind_;
  std::vector<double> center_;
  std::vector<double> W_;
  double prefactor_ = 0.0;
  double amplitude_ = 0.0;
  double sup_ = 0.0;
  double integral_ = 0.0;
  double sq_integral_ = 0.0;
  double custom_radius_ = 0.0;
  std::function<double(std::span<const double>)> fn_;
};

// ---------------------------------------------------------------------------
// Measures on [0,1] and their tail functions
// ---------------------------------------------------------------------------

/// Piece [start, end) of a right-continuous step function with constant value.
struct StepPiece {
  double start;
  double end;
  double value;
};

/// Finite signed atomic measure on [0,1].
class MeasureOnUnit {
 public:
  struct Atom {
    double location;
    double weight;
  };

  MeasureOnUnit() = default;
  explicit MeasureOnUnit(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
    for (const auto& a : atoms_) {
      if (!(a.location >= 0.0 && a.location <= 1.0)) throw DomainError("MeasureOnUnit: atom outside [0,1]");
      if (!std::isfinite(a.weight)) throw DomainError("MeasureOnUnit: non-finite weight");
    }
    std::sort(atoms_.begin(), atoms_.end(), [](const Atom& x, const Atom& y) { return x.location < y.location; });
  }

  static MeasureOnUnit dirac(double location, double weight = 1.0) { return MeasureOnUnit({{location, weight}}); }

  /// nu = sum_i theta_i delta_{i/n}
  static MeasureOnUnit from_increments(std::span<const double> theta) {
    std::vector<Atom> atoms;
    const double n = static_cast<double>(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) atoms.push_back({static_cast<double>(i + 1) / n, theta[i]});
    return MeasureOnUnit(std::move(atoms));
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  bool empty() const { return atoms_.empty(); }

  /// chi(s) = nu((s, 1]).
  double chi(double s) const {
    double v = 0.0;
    for (const auto& a : atoms_)
      if (a.location > s) v += a.weight;
    return v;
  }

  /// sup_s |chi(s)|
  double chi_sup() const {
    double best = std::abs(chi(0.0));
    for (const auto& a : atoms_) best = std::max(best, std::abs(chi(a.location)));
    // left limits at atoms are chi values of the previous pieces, already covered
    return best;
  }

  /// chi as pieces covering [0,1); empty pieces are dropped.
  std::vector<StepPiece> pieces() const {
    std::vector<double> cuts{0.0};
    for (const auto& a : atoms_)
      if (a.location > 0.0 && a.location < 1.0) cuts.push_back(a.location);
    cuts.push_back(1.0);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<StepPiece> out;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) out.push_back({cuts[i], cuts[i + 1], chi(cuts[i])});
    return out;
  }

  /// <f, nu> for a function sampled on [0,1].
  template <class F>
  double pair(F&& f) const {
    double v = 0.0;
    for (const auto& a : atoms_) v += a.weight * f(a.location);
    return v;
  }

 private:
  std::vector<Atom> atoms_;
};

// ---------------------------------------------------------------------------
// Paths on the unit interval
// ---------------------------------------------------------------------------

/// Real path sampled on the uniform grid t_j = j/m, j = 0..m.
class PathSample {
 public:
  PathSample() = default;
  explicit PathSample(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw DomainError("PathSample: need m >= 1 intervals");
    for (double v : values_)
      if (!std::isfinite(v)) throw DomainError("PathSample: non-finite value");
  }

  template <class F>
  static PathSample from_function(std::size_t m, F&& f) {
    std::vector<double> v(m + 1);
    for (std::size_t j = 0; j <= m; ++j) v[j] = f(static_cast<double>(j) / static_cast<double>(m));
    return PathSample(std::move(v));
  }

  std::size_t intervals() const { return values_.size() - 1; }
  double dt() const { return 1.0 / static_cast<double>(intervals()); }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t j) const { return values_[j]; }
  double front() const { return values_.front(); }
  double back() const { return values_.back(); }

  /// Linear interpolation at t in [0,1].
  double at(double t) const {
    const double m = static_cast<double>(intervals());
    const double u = std::clamp(t, 0.0, 1.0) * m;
    const auto j = std::min(static_cast<std::size_t>(u), intervals() - 1);
    const double w = u - static_cast<double>(j);
    return (1.0 - w) * values_[j] + w * values_[j + 1];
  }

  /// Discrete H^1 seminorm squared, sum_j (f_{j+1} - f_j)^2 / dt.
  double h1_seminorm_sq() const {
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < values_.size(); ++j) {
      const double d = values_[j + 1] - values_[j];
      s += d * d;
    }
    return s / dt();
  }
  double h1_seminorm() const { return std::sqrt(h1_seminorm_sq()); }

  /// Modulus of continuity w(f, delta) over grid points with |s - t| <= delta.
  double modulus(double delta) const {
    const std::size_t m = intervals();
    const double span = delta * static_cast<double>(m);
    if (delta <= 0.0) return 0.0;
    auto k_max = static_cast<std::size_t>(std::floor(span + 1e-9));
    k_max = std::min(k_max, m);
    double best = 0.0;
    for (std::size_t i = 0; i <= m; ++i)
      for (std::size_t k = 1; k <= k_max && i + k <= m; ++k) best = std::max(best, std::abs(values_[i + k] - values_[i]));
    return best;
  }

  /// Derivative bounds: true when all difference quotients lie in (a, b).
  bool in_slope_band(double a, double b) const {
    for (std::size_t j = 0; j + 1 < values_.size(); ++j) {
      const double s = (values_[j + 1] - values_[j]) / dt();
      if (!(s > a && s < b)) return false;
    }
    return true;
  }

  /// Restriction to the coarser grid j*stride (requires stride | m).
  PathSample subsample(std::size_t stride) const {
    if (stride == 0 || intervals() % stride != 0) throw DomainError("PathSample: stride must divide m");
    std::vector<double> v;
    for (std::size_t j = 0; j < values_.size(); j += stride) v.push_back(values_[j]);
    return PathSample(std::move(v));
  }

 private:
  std::vector<double> values_;
};

}  // namespace subcrit
