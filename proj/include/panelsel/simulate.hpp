#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "panelsel/inference.hpp"

namespace panelsel {

/// Data generating processes. Three equally sized true groups throughout.
enum class Dgp {
    StaticNormal = 1,   // two exogenous regressors, normal errors
    StaticStudentT = 2, // t(3)/sqrt(3) errors
    StaticChiSq = 3,    // (chi2_3 - 3)/sqrt(6) errors
    DynamicAr1 = 4,     // lagged response plus two exogenous regressors
    WideP4 = 5,         // p regressors, half shifted per group (p = 4)
    WideP6 = 6,         // same with p = 6
};

struct DgpSpec {
    Dgp id = Dgp::StaticNormal;
    int N = 60;
    int T = 15;
    double delta = 0.0;
    double kappa = 0.0;  // AR-coefficient spread, DynamicAr1 only
    int p = 4;           // WideP* only: 4 or 6
    std::uint64_t seed = 1;
    bool zero_noise = false;  // test hook: idiosyncratic errors forced to zero
};

/// True group slope table, one row per group.
Matrix dgp_group_coefficients(const DgpSpec& spec);

/// Deterministic in the seed; true labels recorded in the dataset metadata.
/// The dynamic design emits the lagged response as the first regressor and
/// (y_{t-2}, y_{t-3}, dx_1, dx_2) instrument columns.
PanelDataset dgp_generate(const DgpSpec& spec);

enum class Method { LeastSquares, Gmm };

struct ReplicationRecord {
    std::uint64_t seed = 0;
    int pair_k = 0;
    int pair_kp = 1;
    int covariate = -1;
    bool recovered = false;
    bool converged = true;
    bool degenerate = false;
    double statistic = 0.0;
    double p_selective = 1.0;
    double p_naive = 1.0;
    double wald_stat = 0.0;
};

struct ExperimentReport {
    std::vector<ReplicationRecord> rows;
    std::vector<double> pvalues;  // selective p-values of non-degenerate rows
    double ks_stat = 0.0;
    double recovery_probability = 0.0;
    bool power_defined = false;
    double conditional_power = 0.0;
    int rejections = 0;
    int M = 0;
    int degenerate_count = 0;
    int unconverged_count = 0;
    double alpha = 0.05;
};

struct ExperimentConfig {
    int K = 2;
    int M = 1000;
    Method method = Method::LeastSquares;
    double alpha = 0.05;
    int s_max = 100;
    bool covariate_test = false;  // random coefficient per replication
    int threads = 0;              // 0: PANEL_SELINF_THREADS or hardware
};

/// Null-calibration experiment: requires delta = 0 (and kappa = 0), reports
/// the KS distance of the selective p-values to Uniform(0,1). Replications
/// with a degenerate contrast direction are recorded and excluded.
ExperimentReport run_size_experiment(const DgpSpec& spec, const ExperimentConfig& config);

/// Power experiment: requires delta > 0; conditional power is computed over
/// the replications whose selected pair exactly matches two true groups.
ExperimentReport run_power_experiment(const DgpSpec& spec, const ExperimentConfig& config);

/// Sorted (uniform quantile, empirical quantile) pairs: (i/(M+1), p_(i)).
std::vector<std::pair<double, double>> qq_data(std::vector<double> pvalues);

/// Kolmogorov-Smirnov distance of a sample to Uniform(0,1).
double ks_uniform_distance(std::vector<double> pvalues);

/// Signed deviations (max of ecdf - diagonal, max of diagonal - ecdf).
std::pair<double, double> ks_signed_deviations(std::vector<double> pvalues);

std::uint64_t mix_seed(std::uint64_t x);

}  // namespace panelsel
