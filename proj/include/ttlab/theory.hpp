#ifndef TTLAB_THEORY_HPP
#define TTLAB_THEORY_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ttlab/common.hpp"
#include "ttlab/tensor.hpp"
#include "ttlab/ymodel.hpp"

namespace ttlab {

/// Two-layer linear model with a shared matrix A and two fixed linear
/// heads: v reads out the main task, w the self-supervised one. This is
/// the smallest setting where one gradient step on the ssl loss can be
/// analyzed in closed form, so everything here runs in double precision.
struct ToyInstance {
  Eigen::MatrixXd A;  // shared weights, h x d
  Eigen::VectorXd v;  // main head, length h
  Eigen::VectorXd w;  // ssl head, length h
  Eigen::VectorXd x;  // input, length d
  double y1 = 0.0;    // main label
  double y2 = 0.0;    // ssl label
};

struct ToyLosses {
  double main_loss = 0.0;
  double ssl_loss = 0.0;
};

/// l_m = 0.5 (y1 - v'Ax)^2 and l_s = 0.5 (y2 - w'Ax)^2.
ToyLosses toy_losses(const ToyInstance& inst);

/// One gradient step on the ssl loss: A' = A - eta (y2 - w'Ax)(-w x').
/// Heads, input and labels carry over unchanged.
ToyInstance toy_step(const ToyInstance& inst, double eta);

/// The closed-form learning rate whose single ssl step zeroes the main
/// loss: eta* = (y1 - v'Ax) / ((y2 - w'Ax) v'w x'x). Throws InputError
/// when the denominator vanishes, naming the factor responsible.
double eta_star(const ToyInstance& inst);

/// Checks that sign(eta*) equals the sign of the Frobenius inner product
/// of the two loss gradients, both computed from the explicit gradient
/// matrices. Returns nullopt (inconclusive, not a failure) when a
/// precondition is violated: a zero residual, x = 0, or v'w = 0.
std::optional<bool> check_sign_lemma(const ToyInstance& inst);

/// Checks strict descent of the main loss at every point of a grid of
/// learning rates over (0, eps]. Requires eps > 0 (ConfigError otherwise);
/// returns nullopt when eta* is undefined or smaller than eps, since the
/// guarantee only covers instances with eta* >= eps.
std::optional<bool> check_lemma1(const ToyInstance& inst, double eps,
                                 int grid_points = 10);

/// Distribution of random toy instances: standard Gaussian entries with
/// dimensions drawn uniformly from small ranges. Kept as an explicit
/// config so randomized checks are reproducible from (config, seed).
struct ToyFamilyConfig {
  int min_h = 1;
  int max_h = 8;
  int min_d = 1;
  int max_d = 8;
  double entry_stddev = 1.0;

  void validate() const;
};

ToyInstance random_toy_instance(const ToyFamilyConfig& cfg, std::mt19937& rng);

/// One evaluation point of the smooth convex setting: both losses and
/// their gradients as callables over a flat parameter vector, together
/// with the constants the descent guarantee consumes. beta must bound the
/// main loss curvature globally; grad_bound covers the gradient norms at
/// theta (certification re-measures and takes the max, so a family may
/// leave it at zero to defer entirely to measurement).
struct ConvexInstance {
  Eigen::VectorXd theta;
  std::function<double(const Eigen::VectorXd&)> main_loss;
  std::function<double(const Eigen::VectorXd&)> ssl_loss;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> main_grad;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> ssl_grad;
  double beta = 0.0;
  double grad_bound = 0.0;
};

/// Generator of independent instances; the argument is the trial seed.
using ConvexFamily = std::function<ConvexInstance(std::uint64_t)>;

/// Distribution of the default certification family: two-head linear
/// regression with a shared weight matrix, i.e. the toy model lifted to
/// several samples so both losses are genuine quadratics. All entries are
/// standard Gaussian; dimensions are drawn from the ranges below.
struct QuadraticFamilyConfig {
  int min_h = 2;
  int max_h = 6;
  int min_d = 2;
  int max_d = 6;
  int min_samples = 3;
  int max_samples = 10;

  void validate() const;
};

ConvexFamily quadratic_family(const QuadraticFamilyConfig& cfg = {});

/// Top Hessian eigenvalue of a quadratic loss by power iteration on exact
/// Hessian-vector products grad(theta0 + u) - grad(theta0). The Rayleigh
/// quotient approaches the top eigenvalue from below, so the estimate
/// never overstates the curvature.
double power_iteration_beta(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
    const Eigen::VectorXd& theta0, std::uint64_t seed, double tol = 1e-8,
    int max_iters = 10000);

struct TheoremTrial {
  std::int64_t trial = 0;
  double correlation = 0.0;  // <grad l_m, grad l_s> at theta
  double decrease = 0.0;     // main loss drop after the ssl step
  bool qualifying = false;   // correlation > eps
};

struct TheoremReport {
  double eps = 0.0;
  std::int64_t generated = 0;
  std::int64_t qualifying = 0;
  std::int64_t skipped = 0;      // correlation <= eps, never failures
  std::int64_t violations = 0;   // qualifying trial without strict descent
  std::int64_t bound_misses = 0; // drop below (eta/eta*) eps^2/(2 beta G^2)
  double max_decrease = 0.0;
  double min_decrease = 0.0;
  std::vector<TheoremTrial> trials;

  bool certified() const { return qualifying > 0 && violations == 0; }
};

/// Draws instances from the family until `trials` of them qualify
/// (gradient correlation above eps) and verifies that one ssl step with
/// the fixed learning rate eta = eps / (beta G^2) strictly decreases the
/// main loss on every one of them; a single violation voids the
/// certification. G is the larger of the family's declared bound and the
/// gradient norms measured at theta. Each qualifying trial is also audited
/// against the guaranteed drop (eta/eta*) eps^2 / (2 beta G^2). Convexity
/// of the family is spot-checked first with midpoint inequalities on
/// random pairs; a non-convex family is rejected with InputError. Throws
/// StateError if the family cannot produce enough qualifying trials.
TheoremReport certify_theorem1(const ConvexFamily& family, std::int64_t trials,
                               double eps, std::uint64_t seed = 0);

std::string format_report(const TheoremReport& report);

/// One row per trial: trial, correlation, decrease. Skipped trials leave
/// the decrease field empty.
void write_report_csv(const TheoremReport& report, std::ostream& out);

/// Flat inner products of per-branch loss gradients over the shared
/// extractor parameters, in tape order. The ssl gradient always comes
/// from the fixed batch of all four rotations with no augmentation, so
/// both vectors are deterministic functions of (model, image, label).
std::vector<double> extractor_main_gradient(YModel& model, const Tensor& image,
                                            std::int64_t label);
std::vector<double> extractor_ssl_gradient(YModel& model, const Tensor& image);

/// The correlation statistic: <grad_e l_m(x, y), grad_e l_s(x)> over the
/// extractor parameters only. Positive values are the regime where a
/// test-time ssl step is expected to help the main task.
double grad_inner_product(YModel& model, const Tensor& image,
                          std::int64_t label);

}  // namespace ttlab

#endif  // TTLAB_THEORY_HPP
