#include "panelsel/inference.hpp"

#include <cmath>
#include <string>

#include "panelsel/special.hpp"

namespace panelsel {

namespace {

constexpr double kDirectionFloor = 1e-12;
constexpr double kEigenvalueCut = 1e-12;

Matrix stack_betas(const std::vector<IndividualFit>& fits) {
    const int N = static_cast<int>(fits.size());
    const int p = static_cast<int>(fits[0].beta.size());
    Matrix betas(N, p);
    for (int i = 0; i < N; ++i) betas.row(i) = fits[i].beta.transpose();
    return betas;
}

Matrix selector_matrix(int K, int p, int k, int kp) {
    Matrix r = Matrix::Zero(p, K * p);
    r.block(0, k * p, p, p) = Matrix::Identity(p, p);
    r.block(0, kp * p, p, p) = -Matrix::Identity(p, p);
    return r;
}

// Symmetric PSD square root.
Matrix sym_sqrt(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    Vector vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Contrast build_contrast(const std::vector<IndividualFit>& fits,
                        const ClusterRun& run, int k, int kp) {
    const int N = static_cast<int>(fits.size());
    const int p = static_cast<int>(fits[0].beta.size());
    const int K = run.final_partition.K;
    if (k == kp || k < 0 || kp < 0 || k >= K || kp >= K)
        throw InvalidPair("invalid group pair (" + std::to_string(k + 1) + ", " +
                          std::to_string(kp + 1) + ") for K=" + std::to_string(K));

    Contrast c;
    c.k = k;
    c.kp = kp;
    c.v.resize(N);
    c.theta = Matrix::Zero(N * p, p);
    for (int i = 0; i < N; ++i) {
        int g = run.final_partition.labels[i];
        c.v[i] = (g == k ? 1.0 : 0.0) - (g == kp ? 1.0 : 0.0);
        if (c.v[i] != 0.0)
            c.theta.block(i * p, 0, p, p) = c.v[i] * run.estimates.weights[i].transpose();
    }
    c.gram_theta = c.theta.transpose() * c.theta;
    c.gram_theta = 0.5 * (c.gram_theta + c.gram_theta.transpose());
    c.selector = selector_matrix(K, p, k, kp);
    c.group_difference =
        run.estimates.alpha.row(k).transpose() - run.estimates.alpha.row(kp).transpose();

    // The defining identity of the contrast; a violation means the weights and
    // the partition are out of sync.
    Vector lhs = Vector::Zero(p);
    for (int i = 0; i < N; ++i)
        lhs += c.theta.block(i * p, 0, p, p).transpose() * fits[i].beta;
    if ((lhs - c.group_difference).norm() >
        1e-8 * std::max(1.0, c.group_difference.norm()))
        throw Error("contrast identity theta'B = alpha_k - alpha_k' violated");
    return c;
}

PerturbationPath projection_path(const std::vector<IndividualFit>& fits,
                                 const Contrast& contrast) {
    const int N = static_cast<int>(fits.size());
    const int p = static_cast<int>(fits[0].beta.size());

    // t = (theta'theta)^{-1} theta'B, so P_theta B stacks blocks v_i w_i' t.
    Vector t = contrast.gram_theta.ldlt().solve(contrast.group_difference);
    Matrix proj(N, p);
    for (int i = 0; i < N; ++i)
        proj.row(i) =
            (contrast.theta.block(i * p, 0, p, p) * t).transpose();
    double norm = proj.norm();
    if (norm < kDirectionFloor)
        throw DegenerateDirection(
            "projection of the coefficients onto the contrast is numerically zero");

    PerturbationPath path;
    path.observed = norm;
    path.covariate = -1;
    path.slope = proj / norm;
    path.intercept = stack_betas(fits) - proj;
    return path;
}

PerturbationPath covariate_path(const std::vector<IndividualFit>& fits,
                                const Contrast& contrast, int j) {
    const int N = static_cast<int>(fits.size());
    const int p = static_cast<int>(fits[0].beta.size());
    if (j < 0 || j >= p)
        throw InvalidSpec("covariate index " + std::to_string(j + 1) +
                          " outside [1, p=" + std::to_string(p) + "]");

    double stat = std::fabs(contrast.group_difference(j));
    double theta_j_sq = contrast.gram_theta(j, j);  // ||theta_j||^2
    if (stat / std::sqrt(theta_j_sq) < kDirectionFloor)
        throw DegenerateDirection("covariate difference is numerically zero");
    double sign = contrast.group_difference(j) >= 0 ? 1.0 : -1.0;

    // B(phi_j) = B + theta_j * sign * (phi_j - |theta_j'B|) / ||theta_j||^2,
    // so phi_j tracks |theta_j'B(phi_j)| directly.
    PerturbationPath path;
    path.observed = stat;
    path.covariate = j;
    path.slope.resize(N, p);
    for (int i = 0; i < N; ++i)
        path.slope.row(i) =
            contrast.theta.block(i * p, 0, p, p).col(j).transpose() * (sign / theta_j_sq);
    path.intercept = stack_betas(fits) - stat * path.slope;
    return path;
}

Matrix perturb(const std::vector<IndividualFit>& fits, const Contrast& contrast,
               double phi) {
    if (phi < 0) throw InvalidSpec("perturbation parameter must be nonnegative");
    return projection_path(fits, contrast).betas_at(phi);
}

namespace {

QuadCoeffs quad_from_blocks(const Vector& d_slope, const Vector& d_intercept,
                            const Matrix& gram) {
    QuadCoeffs q;
    Vector gs = gram * d_slope;
    q.a = d_slope.dot(gs);
    q.b = 2.0 * d_intercept.dot(gs);
    q.c = d_intercept.dot(gram * d_intercept);
    return q;
}

}  // namespace

QuadCoeffs pair_distance_quadratic(const PerturbationPath& path,
                                   const std::vector<IndividualFit>& fits,
                                   int i, int other) {
    Vector ds = (path.slope.row(i) - path.slope.row(other)).transpose();
    Vector di = (path.intercept.row(i) - path.intercept.row(other)).transpose();
    return quad_from_blocks(ds, di, fits[i].gram);
}

namespace {

// Slope/intercept rows of the group-k centroid at iteration s (weights frozen
// at the recorded iteration s-1 labels). Re-seeded centroids reduce to the
// chosen unit's own path blocks.
struct CentroidPath {
    Matrix slope;      // K x p
    Matrix intercept;  // K x p
};

CentroidPath centroid_path_at(const PerturbationPath& path,
                              const std::vector<IndividualFit>& fits,
                              const ClusterRun& run, int s) {
    const int N = static_cast<int>(fits.size());
    const int p = static_cast<int>(path.slope.cols());
    const int K = run.final_partition.K;
    const std::vector<int>& prev = run.trace[s - 1];

    std::vector<Matrix> gram_sum(K, Matrix::Zero(p, p));
    for (int i = 0; i < N; ++i) gram_sum[prev[i]] += fits[i].gram;

    CentroidPath cp;
    cp.slope = Matrix::Zero(K, p);
    cp.intercept = Matrix::Zero(K, p);
    for (int k = 0; k < K; ++k) {
        int reseed = run.reseed_units[s][k];
        if (reseed >= 0) {
            cp.slope.row(k) = path.slope.row(reseed);
            cp.intercept.row(k) = path.intercept.row(reseed);
            continue;
        }
        Matrix inv = gram_sum[k].ldlt().solve(Matrix::Identity(p, p));
        Vector ms = Vector::Zero(p);
        Vector mi = Vector::Zero(p);
        for (int i = 0; i < N; ++i) {
            if (prev[i] != k) continue;
            ms += inv * (fits[i].gram * path.slope.row(i).transpose());
            mi += inv * (fits[i].gram * path.intercept.row(i).transpose());
        }
        cp.slope.row(k) = ms.transpose();
        cp.intercept.row(k) = mi.transpose();
    }
    return cp;
}

QuadCoeffs unit_vs_centroid(const PerturbationPath& path,
                            const std::vector<IndividualFit>& fits,
                            const CentroidPath& cp, int i, int k) {
    Vector ds = (path.slope.row(i) - cp.slope.row(k)).transpose();
    Vector di = (path.intercept.row(i) - cp.intercept.row(k)).transpose();
    return quad_from_blocks(ds, di, fits[i].gram);
}

}  // namespace

QuadCoeffs centroid_distance_quadratic(const PerturbationPath& path,
                                       const std::vector<IndividualFit>& fits,
                                       const ClusterRun& run, int i, int k, int s) {
    if (s < 1 || s > run.iterations) throw InvalidSpec("iteration index out of range");
    CentroidPath cp = centroid_path_at(path, fits, run, s);
    return unit_vs_centroid(path, fits, cp, i, k);
}

IntervalUnion truncation_set(const std::vector<IndividualFit>& fits,
                             const ClusterRun& run, const PerturbationPath& path) {
    const int N = static_cast<int>(fits.size());
    const int K = run.final_partition.K;

    IntervalUnion set = IntervalUnion::segment(0.0, std::numeric_limits<double>::infinity());
    int bad_s = -1, bad_i = -1, bad_k = -1;

    auto clip_with = [&](const QuadCoeffs& win, const QuadCoeffs& cand, int s, int i,
                         int k) {
        IntervalUnion sol =
            solve_quadratic_leq(win.a - cand.a, win.b - cand.b, win.c - cand.c);
        set = intersect(set, sol);
        if (bad_s < 0 && !set.contains(path.observed)) {
            bad_s = s;
            bad_i = i;
            bad_k = k;
        }
    };

    // Iteration 0: assignments against the sampled centroids, which travel
    // along the path with their units.
    for (int i = 0; i < N; ++i) {
        int win = run.trace[0][i];
        QuadCoeffs win_q =
            pair_distance_quadratic(path, fits, i, run.init_indices[win]);
        for (int k = 0; k < K; ++k) {
            if (k == win) continue;
            clip_with(win_q, pair_distance_quadratic(path, fits, i, run.init_indices[k]),
                      0, i, k);
        }
    }

    // Iterations 1..S: assignments against rebuilt centroids, plus the
    // farthest-unit inequalities behind any recorded centroid re-seed.
    for (int s = 1; s <= run.iterations; ++s) {
        CentroidPath cp = centroid_path_at(path, fits, run, s);
        const std::vector<int>& prev = run.trace[s - 1];

        std::vector<bool> taken(N, false);
        for (int k = 0; k < K; ++k) {
            int reseed = run.reseed_units[s][k];
            if (reseed < 0) continue;
            QuadCoeffs far_q = unit_vs_centroid(path, fits, cp, reseed, prev[reseed]);
            for (int u = 0; u < N; ++u) {
                if (u == reseed || taken[u]) continue;
                clip_with(unit_vs_centroid(path, fits, cp, u, prev[u]), far_q, s, u, k);
            }
            taken[reseed] = true;
        }

        for (int i = 0; i < N; ++i) {
            int win = run.trace[s][i];
            QuadCoeffs win_q = unit_vs_centroid(path, fits, cp, i, win);
            for (int k = 0; k < K; ++k) {
                if (k == win) continue;
                clip_with(win_q, unit_vs_centroid(path, fits, cp, i, k), s, i, k);
            }
        }
    }

    set = set.clip_nonnegative();
    if (!set.contains(path.observed)) {
        throw ObservedStatExcluded(
            "observed statistic excluded from its truncation set at (s=" +
            std::to_string(bad_s) + ", i=" + std::to_string(bad_i + 1) +
            ", k=" + std::to_string(bad_k + 1) + ")");
    }
    return set;
}

namespace {

Matrix restricted_covariance(const Contrast& contrast, const Matrix& sigma) {
    const int kp_dim = static_cast<int>(contrast.selector.cols());
    if (sigma.rows() != kp_dim || sigma.cols() != kp_dim)
        throw InvalidSpec("covariance matrix has wrong dimensions");
    Matrix rsr = contrast.selector * sigma * contrast.selector.transpose();
    return 0.5 * (rsr + rsr.transpose());
}

}  // namespace

SelectiveTestResult selective_test(const std::vector<IndividualFit>& fits,
                                   const ClusterRun& run, int k, int kp,
                                   const Matrix& sigma) {
    Contrast contrast = build_contrast(fits, run, k, kp);
    PerturbationPath path = projection_path(fits, contrast);

    Matrix rsr = restricted_covariance(contrast, sigma);
    Matrix rsr_half = sym_sqrt(rsr);
    Matrix gram_inv = contrast.gram_theta.ldlt().solve(
        Matrix::Identity(contrast.gram_theta.rows(), contrast.gram_theta.cols()));
    Matrix m = rsr_half * gram_inv * rsr_half;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()),
                                             Eigen::EigenvaluesOnly);

    SelectiveTestResult result;
    result.statistic = path.observed;
    result.covariate = -1;
    double lam_max = es.eigenvalues().maxCoeff();
    for (int j = 0; j < es.eigenvalues().size(); ++j) {
        double lam = es.eigenvalues()(j);
        if (lam > kEigenvalueCut * lam_max) result.lambdas.push_back(lam);
    }
    result.truncation = truncation_set(fits, run, path);

    TruncatedLaw law = TruncatedLaw::sqrt_wchisq(WeightedChiSq{result.lambdas},
                                                 result.truncation);
    TruncatedSurvivalResult surv = truncated_survival_ex(result.statistic, law);
    result.p_selective = surv.value;
    result.mc_fallback = surv.mc_fallback;

    auto [wald, p_naive] = naive_wald(run.estimates, sigma, k, kp);
    result.wald_stat = wald;
    result.p_naive = p_naive;
    return result;
}

SelectiveTestResult selective_test_covariate(const std::vector<IndividualFit>& fits,
                                             const ClusterRun& run, int k, int kp,
                                             int j, const Matrix& sigma) {
    Contrast contrast = build_contrast(fits, run, k, kp);
    PerturbationPath path = covariate_path(fits, contrast, j);

    Matrix rsr = restricted_covariance(contrast, sigma);

    SelectiveTestResult result;
    result.statistic = path.observed;
    result.covariate = j;
    result.variance = rsr(j, j);
    result.truncation = truncation_set(fits, run, path);

    TruncatedLaw law = TruncatedLaw::folded_normal(result.variance, result.truncation);
    TruncatedSurvivalResult surv = truncated_survival_ex(result.statistic, law);
    result.p_selective = surv.value;
    result.mc_fallback = surv.mc_fallback;

    auto [wald, p_naive] = naive_wald_covariate(run.estimates, sigma, k, kp, j);
    result.wald_stat = wald;
    result.p_naive = p_naive;
    return result;
}

std::pair<double, double> naive_wald(const GroupEstimates& estimates,
                                     const Matrix& sigma, int k, int kp) {
    const int K = static_cast<int>(estimates.alpha.rows());
    const int p = static_cast<int>(estimates.alpha.cols());
    if (k == kp || k < 0 || kp < 0 || k >= K || kp >= K)
        throw InvalidPair("invalid group pair for the Wald statistic");

    Matrix r = selector_matrix(K, p, k, kp);
    Matrix rsr = r * sigma * r.transpose();
    rsr = 0.5 * (rsr + rsr.transpose());
    if (sym_condition(rsr) > kGramConditionLimit)
        throw SingularCovariance("restricted covariance is numerically singular");

    Vector diff = estimates.alpha.row(k).transpose() - estimates.alpha.row(kp).transpose();
    double w = diff.dot(rsr.ldlt().solve(diff));
    return {w, 1.0 - chi2_cdf(w, p)};
}

std::pair<double, double> naive_wald_covariate(const GroupEstimates& estimates,
                                               const Matrix& sigma, int k, int kp,
                                               int j) {
    const int K = static_cast<int>(estimates.alpha.rows());
    const int p = static_cast<int>(estimates.alpha.cols());
    if (k == kp || k < 0 || kp < 0 || k >= K || kp >= K)
        throw InvalidPair("invalid group pair for the Wald statistic");
    if (j < 0 || j >= p) throw InvalidSpec("covariate index out of range");

    Matrix r = selector_matrix(K, p, k, kp);
    Matrix rsr = r * sigma * r.transpose();
    double var = rsr(j, j);
    if (!(var > 0.0))
        throw SingularCovariance("covariate variance is not positive");
    double diff = estimates.alpha(k, j) - estimates.alpha(kp, j);
    double w = diff * diff / var;
    return {w, 1.0 - chi2_cdf(w, 1.0)};
}

}  // namespace panelsel
