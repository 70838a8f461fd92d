#pragma once

#include <cstdint>
#include <vector>

#include "panelsel/panel.hpp"

namespace panelsel {

/// Complete record of one matrix-weighted k-means trajectory. The trace keeps
/// every assignment vector from s = 0 (against the sampled centroids) through
/// the final fixed point, which downstream inference conditions on.
struct ClusterRun {
    std::uint64_t seed = 0;
    std::vector<int> init_indices;            // K sampled unit indices
    std::vector<std::vector<int>> trace;      // iterations+1 label vectors
    std::vector<Matrix> centroid_trace;       // centroids used at each assignment (K x p)
    std::vector<std::vector<int>> reseed_units;  // per step: K entries, -1 unless re-seeded
    GroupPartition final_partition;
    GroupEstimates estimates;
    int iterations = 0;  // update+assign rounds performed
    bool converged = false;
};

/// K distinct unit indices sampled without replacement, deterministic in seed.
std::vector<int> init_centroids(int n_units, int K, std::uint64_t seed);

/// Nearest-centroid labels under each unit's own Gram metric; ties go to the
/// smallest group index.
std::vector<int> assign(const std::vector<IndividualFit>& fits, const Matrix& centroids);

/// Pooled weighted SSE of a labeling with its own optimal group centroids.
double kmeans_objective(const std::vector<IndividualFit>& fits,
                        const std::vector<int>& labels, int K);

ClusterRun run_kmeans(const std::vector<IndividualFit>& fits, int K,
                      std::uint64_t seed, int s_max = 100);

/// Same trajectory machinery with the initial centroids pinned externally.
ClusterRun run_kmeans_with_init(const std::vector<IndividualFit>& fits,
                                std::vector<int> init_indices,
                                std::uint64_t seed, int s_max = 100);

/// Re-runs the recorded trajectory on substituted coefficient rows (same Gram
/// metrics, same initial indices) and reports whether every intermediate
/// assignment, including any centroid re-seeds, reproduces the recorded run.
bool replay_matches_trace(const std::vector<IndividualFit>& fits,
                          const Matrix& betas, const ClusterRun& run);

}  // namespace panelsel
