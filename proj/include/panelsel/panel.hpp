#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "panelsel/types.hpp"

namespace panelsel {

struct ColumnSchema {
    std::string unit = "unit";
    std::string time = "time";
    std::string response = "y";
    std::string regressor_prefix = "x";
    std::string instrument_prefix = "z";
};

/// Balanced long-format panel, sorted by (unit, time). Column i of `y` and
/// block i of `X` / `Z` belong to unit i in `units` order.
struct PanelDataset {
    std::vector<std::string> units;
    std::vector<long long> times;
    Matrix y;               // T x N
    std::vector<Matrix> X;  // N blocks of T x p
    std::vector<Matrix> Z;  // empty, or N blocks of T x q (q >= p)

    // Simulation metadata: true group index per unit. Empty for loaded data.
    std::vector<int> true_labels;

    int n_units() const { return static_cast<int>(units.size()); }
    int n_periods() const { return static_cast<int>(times.size()); }
    int n_regressors() const { return X.empty() ? 0 : static_cast<int>(X[0].cols()); }
    int n_instruments() const { return Z.empty() ? 0 : static_cast<int>(Z[0].cols()); }
    bool has_instruments() const { return !Z.empty(); }
};

PanelDataset load_panel(std::istream& source, const ColumnSchema& schema = {});
void write_panel_csv(std::ostream& out, const PanelDataset& data);

/// Within-transformed panel: every column demeaned per unit.
struct DemeanedPanel {
    Matrix y;               // T x N
    std::vector<Matrix> X;  // N blocks of T x p

    int n_units() const { return static_cast<int>(X.size()); }
    int n_regressors() const { return X.empty() ? 0 : static_cast<int>(X[0].cols()); }
};

/// First-differenced panel; instrument rows are aligned with the differenced
/// rows (the first period's instruments are dropped alongside it).
struct DifferencedPanel {
    Matrix y;               // (T-1) x N
    std::vector<Matrix> X;  // N blocks of (T-1) x p
    std::vector<Matrix> Z;  // N blocks of (T-1) x q

    int n_units() const { return static_cast<int>(X.size()); }
    int n_regressors() const { return X.empty() ? 0 : static_cast<int>(X[0].cols()); }
};

DemeanedPanel within_demean(const PanelDataset& data);
DifferencedPanel first_difference(const PanelDataset& data);

/// Per-unit initial estimate together with the weighting Gram matrix that
/// defines the unit's distance metric in the clustering objective.
struct IndividualFit {
    Vector beta;
    Matrix gram;      // symmetric positive definite
    Vector residuals;
};

enum class GmmWeight { TwoStageLS, Identity };

IndividualFit ols_individual(const DemeanedPanel& panel, int unit);
IndividualFit gmm_individual(const DifferencedPanel& panel, int unit,
                             GmmWeight rule = GmmWeight::TwoStageLS);

std::vector<IndividualFit> fit_all_ols(const DemeanedPanel& panel);
std::vector<IndividualFit> fit_all_gmm(const DifferencedPanel& panel,
                                       GmmWeight rule = GmmWeight::TwoStageLS);

struct GroupPartition {
    std::vector<int> labels;  // values in [0, K)
    int K = 0;
};

/// Group-level aggregation of the individual fits. Row k of `alpha` is the
/// group slope; weights[i] is unit i's weight matrix within its own group,
/// so that alpha_k = sum_{i in group k} weights[i] * beta_i and the weights
/// of every group sum to the identity.
struct GroupEstimates {
    Matrix alpha;                 // K x p
    std::vector<Matrix> weights;  // N blocks of p x p
    Matrix sigma;                 // Kp x Kp; empty until filled by the caller
};

GroupEstimates group_estimate(const std::vector<IndividualFit>& fits,
                              const GroupPartition& partition);

/// Block-diagonal plug-in covariance of the stacked group slopes: per group
/// the cluster-robust (by unit) sandwich A^-1 B A^-1 at the scale of the
/// estimates themselves, with a m/(m-1) small-sample factor on B.
Matrix plugin_covariance(const std::vector<IndividualFit>& fits,
                         const GroupPartition& partition);

/// Condition number of a symmetric PSD matrix (ratio of extreme eigenvalues).
double sym_condition(const Matrix& m);

/// Threshold above which Gram matrices are rejected as numerically singular.
inline constexpr double kGramConditionLimit = 1e12;

}  // namespace panelsel
