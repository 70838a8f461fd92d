#pragma once

#include <vector>

#include "panelsel/distributions.hpp"
#include "panelsel/kmeans.hpp"

namespace panelsel {

/// Contrast between two selected groups. Block i of theta is v_i * w_i^T,
/// where w_i is unit i's within-group weight matrix and v_i picks out the
/// tested pair, so theta' B equals the difference of the two group slopes.
struct Contrast {
    int k = 0;
    int kp = 0;
    std::vector<double> v;    // +1 / -1 / 0 per unit
    Matrix theta;             // Np x p
    Matrix gram_theta;        // p x p, theta' theta
    Matrix selector;          // R: p x Kp, picks alpha_k - alpha_kp
    Vector group_difference;  // R alpha_hat
};

Contrast build_contrast(const std::vector<IndividualFit>& fits,
                        const ClusterRun& run, int k, int kp);

/// Affine map phi -> B(phi). Row i of slope/intercept gives unit i's block:
/// beta_i(phi) = intercept_i + slope_i * phi. `observed` is the parameter
/// value at which the path reproduces the observed coefficients exactly.
struct PerturbationPath {
    Matrix slope;      // N x p
    Matrix intercept;  // N x p
    double observed = 0.0;
    int covariate = -1;  // -1 for the joint path, else 0-based column

    Matrix betas_at(double phi) const { return intercept + phi * slope; }
};

/// Path that rescales the projection of B onto the contrast direction while
/// holding the orthogonal component fixed; parameterized by ||P_theta B||_2.
PerturbationPath projection_path(const std::vector<IndividualFit>& fits,
                                 const Contrast& contrast);

/// Single-covariate path along theta_j, parameterized by |theta_j' B|.
PerturbationPath covariate_path(const std::vector<IndividualFit>& fits,
                                const Contrast& contrast, int j);

/// B(phi) as stacked unit blocks (N x p rows).
Matrix perturb(const std::vector<IndividualFit>& fits, const Contrast& contrast,
               double phi);

struct QuadCoeffs {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;

    double eval(double phi) const { return (a * phi + b) * phi + c; }
};

/// Quadratic expansion in phi of || beta_i(phi) - beta_other(phi) ||^2 in
/// unit i's Gram metric.
QuadCoeffs pair_distance_quadratic(const PerturbationPath& path,
                                   const std::vector<IndividualFit>& fits,
                                   int i, int other);

/// Quadratic expansion in phi of the distance between unit i and the group-k
/// centroid rebuilt at iteration s from the weights frozen at the recorded
/// iteration s-1 labels.
QuadCoeffs centroid_distance_quadratic(const PerturbationPath& path,
                                       const std::vector<IndividualFit>& fits,
                                       const ClusterRun& run, int i, int k, int s);

/// The set of path parameters for which re-clustering B(phi) reproduces the
/// recorded trajectory: the intersection over every iteration, unit, and
/// candidate group of winner-minus-candidate quadratic inequalities, clipped
/// to [0, inf). The observed statistic is guaranteed to be inside.
IntervalUnion truncation_set(const std::vector<IndividualFit>& fits,
                             const ClusterRun& run, const PerturbationPath& path);

struct SelectiveTestResult {
    double statistic = 0.0;
    std::vector<double> lambdas;  // joint-test reference law
    double variance = 0.0;        // covariate-test reference law
    IntervalUnion truncation;
    double p_selective = 0.0;
    double p_naive = 0.0;
    double wald_stat = 0.0;
    int covariate = -1;  // -1 for the joint test, else 0-based index
    bool mc_fallback = false;
};

/// Joint test of equality of the two selected group slope vectors, conditional
/// on the clustering trajectory that selected them.
SelectiveTestResult selective_test(const std::vector<IndividualFit>& fits,
                                   const ClusterRun& run, int k, int kp,
                                   const Matrix& sigma);

/// Same conditioning, restricted to the j-th slope coefficient.
SelectiveTestResult selective_test_covariate(const std::vector<IndividualFit>& fits,
                                             const ClusterRun& run, int k, int kp,
                                             int j, const Matrix& sigma);

/// Classical Wald statistic and chi-square p-value for the group difference.
/// Valid for pre-registered partitions; anti-conservative after selection.
std::pair<double, double> naive_wald(const GroupEstimates& estimates,
                                     const Matrix& sigma, int k, int kp);

std::pair<double, double> naive_wald_covariate(const GroupEstimates& estimates,
                                               const Matrix& sigma, int k, int kp,
                                               int j);

}  // namespace panelsel
