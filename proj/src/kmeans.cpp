#include "panelsel/kmeans.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace panelsel {

namespace {

double weighted_sqdist(const Vector& d, const Matrix& gram) {
    return d.dot(gram * d);
}

Matrix stack_betas(const std::vector<IndividualFit>& fits) {
    const int N = static_cast<int>(fits.size());
    const int p = static_cast<int>(fits[0].beta.size());
    Matrix betas(N, p);
    for (int i = 0; i < N; ++i) betas.row(i) = fits[i].beta.transpose();
    return betas;
}

std::vector<int> assign_rows(const std::vector<IndividualFit>& fits,
                             const Matrix& betas, const Matrix& centroids) {
    const int N = static_cast<int>(betas.rows());
    const int K = static_cast<int>(centroids.rows());
    std::vector<int> labels(N);
    for (int i = 0; i < N; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < K; ++k) {
            Vector d = betas.row(i) - centroids.row(k);
            double dist = weighted_sqdist(d, fits[i].gram);
            if (dist < best_d) {
                best_d = dist;
                best = k;
            }
        }
        labels[i] = best;
    }
    return labels;
}

struct StepResult {
    Matrix centroids;
    std::vector<int> labels;
    std::vector<int> reseed;  // K entries, -1 unless the centroid was re-seeded
};

// One update+assign round: centroids are the Gram-weighted combinations of the
// previous labeling; an empty group gets re-seeded with the unit farthest (in
// its own metric) from its current centroid, smallest index on ties.
StepResult update_and_assign(const std::vector<IndividualFit>& fits,
                             const Matrix& betas,
                             const std::vector<int>& prev_labels, int K) {
    const int N = static_cast<int>(betas.rows());
    const int p = static_cast<int>(betas.cols());

    std::vector<Matrix> gram_sum(K, Matrix::Zero(p, p));
    std::vector<int> counts(K, 0);
    for (int i = 0; i < N; ++i) {
        gram_sum[prev_labels[i]] += fits[i].gram;
        ++counts[prev_labels[i]];
    }

    StepResult step;
    step.centroids = Matrix::Zero(K, p);
    step.reseed.assign(K, -1);
    for (int k = 0; k < K; ++k) {
        if (counts[k] == 0) continue;
        Matrix inv = gram_sum[k].ldlt().solve(Matrix::Identity(p, p));
        Vector m = Vector::Zero(p);
        for (int i = 0; i < N; ++i)
            if (prev_labels[i] == k) m += inv * (fits[i].gram * betas.row(i).transpose());
        step.centroids.row(k) = m.transpose();
    }

    std::vector<bool> taken(N, false);
    for (int k = 0; k < K; ++k) {
        if (counts[k] > 0) continue;
        int far = -1;
        double far_d = -1.0;
        for (int i = 0; i < N; ++i) {
            if (taken[i]) continue;
            Vector d = betas.row(i) - step.centroids.row(prev_labels[i]);
            double dist = weighted_sqdist(d, fits[i].gram);
            if (dist > far_d) {
                far_d = dist;
                far = i;
            }
        }
        step.centroids.row(k) = betas.row(far);
        step.reseed[k] = far;
        taken[far] = true;
    }

    step.labels = assign_rows(fits, betas, step.centroids);
    return step;
}

}  // namespace

std::vector<int> init_centroids(int n_units, int K, std::uint64_t seed) {
    if (K < 1 || K > n_units)
        throw KTooLarge("K=" + std::to_string(K) + " outside [1, N=" +
                        std::to_string(n_units) + "]");
    std::mt19937_64 rng(seed);
    std::vector<int> idx(n_units);
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < K; ++k) {
        std::uniform_int_distribution<int> pick(k, n_units - 1);
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(K);
    return idx;
}

std::vector<int> assign(const std::vector<IndividualFit>& fits, const Matrix& centroids) {
    return assign_rows(fits, stack_betas(fits), centroids);
}

double kmeans_objective(const std::vector<IndividualFit>& fits,
                        const std::vector<int>& labels, int K) {
    GroupPartition part{labels, K};
    GroupEstimates est = group_estimate(fits, part);
    double total = 0.0;
    for (std::size_t i = 0; i < fits.size(); ++i) {
        Vector d = fits[i].beta - est.alpha.row(labels[i]).transpose();
        total += weighted_sqdist(d, fits[i].gram);
    }
    return total;
}

ClusterRun run_kmeans_with_init(const std::vector<IndividualFit>& fits,
                                std::vector<int> init_indices,
                                std::uint64_t seed, int s_max) {
    if (fits.empty()) throw InvalidSpec("no fitted units");
    if (s_max < 1) throw InvalidSpec("s_max must be at least 1");
    const int K = static_cast<int>(init_indices.size());
    const Matrix betas = stack_betas(fits);

    ClusterRun run;
    run.seed = seed;
    run.init_indices = std::move(init_indices);

    Matrix centroids0(K, betas.cols());
    for (int k = 0; k < K; ++k) centroids0.row(k) = betas.row(run.init_indices[k]);
    run.centroid_trace.push_back(centroids0);
    run.trace.push_back(assign_rows(fits, betas, centroids0));
    run.reseed_units.push_back(std::vector<int>(K, -1));

    for (int s = 0; s < s_max; ++s) {
        StepResult step = update_and_assign(fits, betas, run.trace.back(), K);
        run.centroid_trace.push_back(step.centroids);
        run.reseed_units.push_back(step.reseed);
        bool fixed = step.labels == run.trace.back();
        run.trace.push_back(std::move(step.labels));
        if (fixed) {
            run.converged = true;
            break;
        }
    }
    run.iterations = static_cast<int>(run.trace.size()) - 1;

    run.final_partition.labels = run.trace.back();
    run.final_partition.K = K;
    // Groups can be empty only transiently; the re-seed rule repopulates them
    // before the final assignment, so group_estimate's check should hold.
    run.estimates = group_estimate(fits, run.final_partition);
    return run;
}

ClusterRun run_kmeans(const std::vector<IndividualFit>& fits, int K,
                      std::uint64_t seed, int s_max) {
    return run_kmeans_with_init(fits, init_centroids(static_cast<int>(fits.size()), K, seed),
                                seed, s_max);
}

bool replay_matches_trace(const std::vector<IndividualFit>& fits,
                          const Matrix& betas, const ClusterRun& run) {
    const int K = static_cast<int>(run.init_indices.size());

    Matrix centroids0(K, betas.cols());
    for (int k = 0; k < K; ++k) centroids0.row(k) = betas.row(run.init_indices[k]);
    std::vector<int> labels = assign_rows(fits, betas, centroids0);
    if (labels != run.trace[0]) return false;

    for (int s = 1; s <= run.iterations; ++s) {
        StepResult step = update_and_assign(fits, betas, labels, K);
        if (step.reseed != run.reseed_units[s]) return false;
        if (step.labels != run.trace[s]) return false;
        labels = std::move(step.labels);
    }
    return true;
}

}  // namespace panelsel
