#include "panelsel/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "panelsel/parallel.hpp"

namespace panelsel {

namespace {

void validate_spec(const DgpSpec& spec) {
    if (spec.N < 3 || spec.N % 3 != 0)
        throw InvalidSpec("N must be a positive multiple of 3");
    if (spec.T < 2) throw InvalidSpec("T must be at least 2");
    if (spec.delta < 0) throw InvalidSpec("delta must be nonnegative");
    if (spec.kappa < 0) throw InvalidSpec("kappa must be nonnegative");
    if (spec.id == Dgp::DynamicAr1) {
        if (spec.kappa >= 0.4)
            throw InvalidSpec("kappa must stay below 0.4 to keep every group stationary");
        if (spec.T < 5) throw InvalidSpec("the dynamic design needs T >= 5");
    }
    if (spec.id == Dgp::WideP4 && spec.p != 4)
        throw InvalidSpec("this design uses p = 4");
    if (spec.id == Dgp::WideP6 && spec.p != 6)
        throw InvalidSpec("this design uses p = 6");
    if ((spec.id == Dgp::WideP4 || spec.id == Dgp::WideP6) && spec.T < spec.p + 2)
        throw InvalidSpec("T too short for the number of regressors");
}

// Idiosyncratic error draw, standardized to unit variance.
double draw_error(const DgpSpec& spec, std::mt19937_64& rng,
                  std::normal_distribution<double>& normal) {
    if (spec.zero_noise) return 0.0;
    switch (spec.id) {
        case Dgp::StaticStudentT: {
            std::student_t_distribution<double> t3(3.0);
            return t3(rng) / std::sqrt(3.0);
        }
        case Dgp::StaticChiSq: {
            std::chi_squared_distribution<double> chi3(3.0);
            return (chi3(rng) - 3.0) / std::sqrt(6.0);
        }
        default:
            return normal(rng);
    }
}

std::string unit_name(int i, int n) {
    int width = 1;
    for (int v = n; v >= 10; v /= 10) ++width;
    std::string s = std::to_string(i + 1);
    return "u" + std::string(width - s.size(), '0') + s;
}

PanelDataset generate_static(const DgpSpec& spec, int p) {
    const int N = spec.N;
    const int T = spec.T;
    Matrix coef = dgp_group_coefficients(spec);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    PanelDataset data;
    data.y.resize(T, N);
    data.X.resize(N);
    data.times.resize(T);
    for (int t = 0; t < T; ++t) data.times[t] = t + 1;

    const int per_group = N / 3;
    for (int i = 0; i < N; ++i) {
        int g = i / per_group;
        data.units.push_back(unit_name(i, N));
        data.true_labels.push_back(g);
        double eta = normal(rng);
        data.X[i].resize(T, p);
        for (int t = 0; t < T; ++t) {
            double xb = 0.0;
            for (int j = 0; j < p; ++j) {
                double x = 0.2 * eta + normal(rng);
                data.X[i](t, j) = x;
                xb += x * coef(g, j);
            }
            data.y(t, i) = xb + eta + draw_error(spec, rng, normal);
        }
    }
    return data;
}

// Dynamic AR(1) design. The recursion starts at t = 0; emitted rows cover
// t = 2..T so that every differenced row t >= 3 has valid (y_{t-2}, y_{t-3})
// instruments. The first emitted row's lagged-level instruments are
// placeholders; first differencing drops that row.
PanelDataset generate_dynamic(const DgpSpec& spec) {
    const int N = spec.N;
    const int T = spec.T;
    Matrix coef = dgp_group_coefficients(spec);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const int rows = T - 1;  // t = 2..T
    PanelDataset data;
    data.y.resize(rows, N);
    data.X.resize(N);
    data.Z.resize(N);
    data.times.resize(rows);
    for (int t = 0; t < rows; ++t) data.times[t] = t + 2;

    const int per_group = N / 3;
    for (int i = 0; i < N; ++i) {
        int g = i / per_group;
        data.units.push_back(unit_name(i, N));
        data.true_labels.push_back(g);
        double rho = coef(g, 0);
        double b1 = coef(g, 1);
        double b2 = coef(g, 2);
        double eta = normal(rng);

        std::vector<double> x1(T + 1), x2(T + 1), y(T + 1);
        for (int t = 0; t <= T; ++t) {
            x1[t] = normal(rng);
            x2[t] = normal(rng);
        }
        y[0] = b1 * x1[0] + b2 * x2[0] + eta + draw_error(spec, rng, normal);
        for (int t = 1; t <= T; ++t)
            y[t] = rho * y[t - 1] + b1 * x1[t] + b2 * x2[t] + eta * (1.0 - rho) +
                   draw_error(spec, rng, normal);

        data.X[i].resize(rows, 3);
        data.Z[i].resize(rows, 4);
        for (int t = 2; t <= T; ++t) {
            int r = t - 2;
            data.y(r, i) = y[t];
            data.X[i](r, 0) = y[t - 1];
            data.X[i](r, 1) = x1[t];
            data.X[i](r, 2) = x2[t];
            data.Z[i](r, 0) = y[t - 2];
            data.Z[i](r, 1) = t >= 3 ? y[t - 3] : 0.0;
            data.Z[i](r, 2) = x1[t] - x1[t - 1];
            data.Z[i](r, 3) = x2[t] - x2[t - 1];
        }
    }
    return data;
}

}  // namespace

Matrix dgp_group_coefficients(const DgpSpec& spec) {
    switch (spec.id) {
        case Dgp::StaticNormal:
        case Dgp::StaticStudentT:
        case Dgp::StaticChiSq: {
            Matrix coef(3, 2);
            coef << 1.0 - spec.delta, 1.0,
                    1.0, 1.0 + std::sqrt(3.0) * spec.delta,
                    1.0 + spec.delta, 1.0;
            return coef;
        }
        case Dgp::DynamicAr1: {
            Matrix coef(3, 3);
            coef << 0.6 - spec.kappa, 1.0 - spec.delta, 1.0,
                    0.6, 1.0, 1.0 + std::sqrt(3.0) * spec.delta,
                    0.6 + spec.kappa, 1.0 + spec.delta, 1.0;
            return coef;
        }
        case Dgp::WideP4:
        case Dgp::WideP6: {
            const int p = spec.p;
            Matrix coef = Matrix::Ones(3, p);
            coef.row(0).head(p / 2).array() = 1.0 - spec.delta;
            coef.row(1).tail(p / 2).array() = 1.0 + spec.delta;
            coef.row(2).head(p / 2).array() = 1.0 + spec.delta;
            return coef;
        }
    }
    throw InvalidSpec("unknown design");
}

PanelDataset dgp_generate(const DgpSpec& spec) {
    validate_spec(spec);
    switch (spec.id) {
        case Dgp::StaticNormal:
        case Dgp::StaticStudentT:
        case Dgp::StaticChiSq:
            return generate_static(spec, 2);
        case Dgp::DynamicAr1:
            return generate_dynamic(spec);
        case Dgp::WideP4:
        case Dgp::WideP6:
            return generate_static(spec, spec.p);
    }
    throw InvalidSpec("unknown design");
}

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {

// True iff each selected group coincides exactly with some true group.
bool pair_recovered(const std::vector<int>& labels, const std::vector<int>& truth,
                    int k, int kp) {
    auto group_matches_truth = [&](int g) {
        int target = -1;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != g) continue;
            if (target < 0) target = truth[i];
            if (truth[i] != target) return false;
        }
        // All members share true group `target`; the match is exact when no
        // outside unit has that true group.
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] != g && truth[i] == target) return false;
        return true;
    };
    return group_matches_truth(k) && group_matches_truth(kp);
}

ExperimentReport run_experiment(const DgpSpec& spec, const ExperimentConfig& config) {
    if (config.M < 1) throw InvalidSpec("M must be positive");
    if (config.K < 2) throw InvalidSpec("the tested pair needs K >= 2");
    if (!(config.alpha > 0.0 && config.alpha < 1.0))
        throw InvalidSpec("alpha must lie in (0,1)");
    validate_spec(spec);

    ExperimentReport report;
    report.M = config.M;
    report.alpha = config.alpha;
    report.rows.resize(config.M);

    parallel_for_indexed(config.M, config.threads, [&](int m) {
        DgpSpec rep_spec = spec;
        rep_spec.seed = spec.seed + static_cast<std::uint64_t>(m);

        ReplicationRecord row;
        row.seed = rep_spec.seed;

        PanelDataset data = dgp_generate(rep_spec);
        std::vector<IndividualFit> fits;
        if (config.method == Method::Gmm) {
            fits = fit_all_gmm(first_difference(data));
        } else {
            fits = fit_all_ols(within_demean(data));
        }

        std::uint64_t kmeans_seed = mix_seed(rep_spec.seed);
        ClusterRun run = run_kmeans(fits, config.K, kmeans_seed, config.s_max);
        row.converged = run.converged;

        // Pair (and coefficient) choice from a per-replication stream.
        std::mt19937_64 chooser(mix_seed(rep_spec.seed ^ 0xc0ffee1234abcdefULL));
        std::uniform_int_distribution<int> pick_k(0, config.K - 1);
        int k = pick_k(chooser);
        int kp = pick_k(chooser);
        while (kp == k) kp = pick_k(chooser);
        if (k > kp) std::swap(k, kp);
        row.pair_k = k;
        row.pair_kp = kp;
        row.recovered =
            pair_recovered(run.final_partition.labels, data.true_labels, k, kp);

        try {
            Matrix sigma = plugin_covariance(fits, run.final_partition);
            SelectiveTestResult result;
            if (config.covariate_test) {
                const int p = static_cast<int>(fits[0].beta.size());
                std::uniform_int_distribution<int> pick_j(0, p - 1);
                row.covariate = pick_j(chooser);
                result = selective_test_covariate(fits, run, k, kp, row.covariate, sigma);
            } else {
                result = selective_test(fits, run, k, kp, sigma);
            }
            row.statistic = result.statistic;
            row.p_selective = result.p_selective;
            row.p_naive = result.p_naive;
            row.wald_stat = result.wald_stat;
        } catch (const DegenerateDirection&) {
            row.degenerate = true;
        }
        report.rows[m] = row;
    });

    int recovered = 0;
    int rejected_given_recovered = 0;
    for (const ReplicationRecord& row : report.rows) {
        if (!row.converged) ++report.unconverged_count;
        if (row.degenerate) {
            ++report.degenerate_count;
            continue;
        }
        report.pvalues.push_back(row.p_selective);
        if (row.recovered) {
            ++recovered;
            if (row.p_selective <= config.alpha) ++rejected_given_recovered;
        }
    }
    report.recovery_probability = static_cast<double>(recovered) / config.M;
    report.power_defined = recovered > 0;
    report.conditional_power =
        report.power_defined
            ? static_cast<double>(rejected_given_recovered) / recovered
            : 0.0;
    report.rejections = rejected_given_recovered;
    if (!report.pvalues.empty()) report.ks_stat = ks_uniform_distance(report.pvalues);
    return report;
}

}  // namespace

ExperimentReport run_size_experiment(const DgpSpec& spec, const ExperimentConfig& config) {
    if (spec.delta != 0.0 || spec.kappa != 0.0)
        throw InvalidSpec("size experiments require delta = 0 and kappa = 0");
    if (config.M < 100) throw InvalidSpec("size experiments need M >= 100");
    return run_experiment(spec, config);
}

ExperimentReport run_power_experiment(const DgpSpec& spec, const ExperimentConfig& config) {
    if (!(spec.delta > 0.0))
        throw InvalidSpec("power experiments require delta > 0");
    return run_experiment(spec, config);
}

std::vector<std::pair<double, double>> qq_data(std::vector<double> pvalues) {
    if (pvalues.empty()) throw InvalidSpec("no p-values");
    std::sort(pvalues.begin(), pvalues.end());
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(pvalues.size());
    const double m = static_cast<double>(pvalues.size());
    for (std::size_t i = 0; i < pvalues.size(); ++i)
        pairs.emplace_back((i + 1) / (m + 1.0), pvalues[i]);
    return pairs;
}

double ks_uniform_distance(std::vector<double> pvalues) {
    auto [above, below] = ks_signed_deviations(std::move(pvalues));
    return std::max(above, below);
}

std::pair<double, double> ks_signed_deviations(std::vector<double> pvalues) {
    if (pvalues.empty()) throw InvalidSpec("no p-values");
    std::sort(pvalues.begin(), pvalues.end());
    const double m = static_cast<double>(pvalues.size());
    double above = 0.0;  // ecdf above the diagonal
    double below = 0.0;
    for (std::size_t i = 0; i < pvalues.size(); ++i) {
        above = std::max(above, (i + 1) / m - pvalues[i]);
        below = std::max(below, pvalues[i] - i / m);
    }
    return {above, below};
}

}  // namespace panelsel
