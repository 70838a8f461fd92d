#include "panelsel/panel.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace panelsel {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, int line_no, const std::string& col) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        if (!std::isfinite(v)) throw std::invalid_argument("nonfinite");
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": column '" + col +
                         "' is not a finite number: '" + s + "'");
    }
}

long long parse_time(const std::string& s, int line_no) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": time is not an integer: '" + s + "'");
    }
}

int count_prefixed(const std::vector<std::string>& header, const std::string& prefix) {
    int n = 0;
    while (std::find(header.begin(), header.end(), prefix + std::to_string(n + 1)) !=
           header.end())
        ++n;
    return n;
}

}  // namespace

PanelDataset load_panel(std::istream& source, const ColumnSchema& schema) {
    std::string line;
    if (!std::getline(source, line)) throw ParseError("empty input");
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) h = trim(h);

    auto col_index = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw ParseError("missing required column '" + name + "'");
        return static_cast<int>(it - header.begin());
    };

    const int unit_col = col_index(schema.unit);
    const int time_col = col_index(schema.time);
    const int y_col = col_index(schema.response);
    const int p = count_prefixed(header, schema.regressor_prefix);
    if (p < 1) throw ParseError("no regressor columns ('" + schema.regressor_prefix + "1', ...)");
    const int q = count_prefixed(header, schema.instrument_prefix);
    if (q > 0 && q < p)
        throw ParseError("fewer instrument than regressor columns (q=" +
                         std::to_string(q) + " < p=" + std::to_string(p) + ")");
    std::vector<int> x_cols(p), z_cols(q);
    for (int j = 0; j < p; ++j)
        x_cols[j] = col_index(schema.regressor_prefix + std::to_string(j + 1));
    for (int j = 0; j < q; ++j)
        z_cols[j] = col_index(schema.instrument_prefix + std::to_string(j + 1));

    struct Row {
        long long time;
        double y;
        std::vector<double> x;
        std::vector<double> z;
    };
    std::map<std::string, std::vector<Row>> by_unit;

    int line_no = 1;
    while (std::getline(source, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> f = split_csv_line(line);
        if (static_cast<int>(f.size()) < static_cast<int>(header.size()))
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(f.size()));
        Row row;
        row.time = parse_time(trim(f[time_col]), line_no);
        row.y = parse_double(trim(f[y_col]), line_no, schema.response);
        row.x.resize(p);
        for (int j = 0; j < p; ++j)
            row.x[j] = parse_double(trim(f[x_cols[j]]), line_no,
                                    schema.regressor_prefix + std::to_string(j + 1));
        row.z.resize(q);
        for (int j = 0; j < q; ++j)
            row.z[j] = parse_double(trim(f[z_cols[j]]), line_no,
                                    schema.instrument_prefix + std::to_string(j + 1));
        by_unit[trim(f[unit_col])].push_back(std::move(row));
    }
    if (by_unit.empty()) throw ParseError("no data rows");

    // Balance check against the first unit's period set.
    std::vector<long long> times;
    for (auto& [unit, rows] : by_unit) {
        std::sort(rows.begin(), rows.end(),
                  [](const Row& a, const Row& b) { return a.time < b.time; });
        std::vector<long long> ut(rows.size());
        for (std::size_t t = 0; t < rows.size(); ++t) ut[t] = rows[t].time;
        if (std::adjacent_find(ut.begin(), ut.end()) != ut.end())
            throw ParseError("unit '" + unit + "' has duplicate time indices");
        if (times.empty()) {
            times = ut;
        } else if (ut != times) {
            throw UnbalancedPanel("unit '" + unit +
                                  "' does not share the common time grid");
        }
    }

    const int T = static_cast<int>(times.size());
    const int N = static_cast<int>(by_unit.size());
    if (T < p + 1)
        throw ParseError("T=" + std::to_string(T) + " too short for p=" +
                         std::to_string(p) + " regressors (need T >= p+1)");

    PanelDataset data;
    data.times = times;
    data.y.resize(T, N);
    data.X.resize(N);
    if (q > 0) data.Z.resize(N);
    int i = 0;
    for (auto& [unit, rows] : by_unit) {
        data.units.push_back(unit);
        data.X[i].resize(T, p);
        if (q > 0) data.Z[i].resize(T, q);
        for (int t = 0; t < T; ++t) {
            data.y(t, i) = rows[t].y;
            for (int j = 0; j < p; ++j) data.X[i](t, j) = rows[t].x[j];
            for (int j = 0; j < q; ++j) data.Z[i](t, j) = rows[t].z[j];
        }
        // A regressor column that is constant within a unit demeans to zero.
        for (int j = 0; j < p; ++j) {
            double mean = data.X[i].col(j).mean();
            double dev = (data.X[i].col(j).array() - mean).abs().maxCoeff();
            if (dev <= 1e-13 * std::max(1.0, std::fabs(mean)))
                throw DegenerateRegressor("regressor x" + std::to_string(j + 1) +
                                          " is constant within unit '" + unit + "'");
        }
        ++i;
    }
    return data;
}

void write_panel_csv(std::ostream& out, const PanelDataset& data) {
    const int p = data.n_regressors();
    const int q = data.n_instruments();
    out << "unit,time,y";
    for (int j = 1; j <= p; ++j) out << ",x" << j;
    for (int j = 1; j <= q; ++j) out << ",z" << j;
    out << "\n";
    out.precision(17);
    for (int i = 0; i < data.n_units(); ++i) {
        for (int t = 0; t < data.n_periods(); ++t) {
            out << data.units[i] << ',' << data.times[t] << ',' << data.y(t, i);
            for (int j = 0; j < p; ++j) out << ',' << data.X[i](t, j);
            for (int j = 0; j < q; ++j) out << ',' << data.Z[i](t, j);
            out << "\n";
        }
    }
}

DemeanedPanel within_demean(const PanelDataset& data) {
    DemeanedPanel out;
    const int N = data.n_units();
    out.y = data.y;
    out.X.resize(N);
    for (int i = 0; i < N; ++i) {
        out.y.col(i).array() -= data.y.col(i).mean();
        out.X[i] = data.X[i].rowwise() - data.X[i].colwise().mean();
    }
    return out;
}

DifferencedPanel first_difference(const PanelDataset& data) {
    const int N = data.n_units();
    const int T = data.n_periods();
    if (T < 2) throw InvalidSpec("first differencing needs at least two periods");
    DifferencedPanel out;
    out.y.resize(T - 1, N);
    out.X.resize(N);
    out.Z.resize(N);
    for (int i = 0; i < N; ++i) {
        out.y.col(i) = data.y.col(i).tail(T - 1) - data.y.col(i).head(T - 1);
        out.X[i] = data.X[i].bottomRows(T - 1) - data.X[i].topRows(T - 1);
        if (data.has_instruments()) out.Z[i] = data.Z[i].bottomRows(T - 1);
    }
    return out;
}

double sym_condition(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    double lo = es.eigenvalues().minCoeff();
    double hi = es.eigenvalues().maxCoeff();
    if (lo <= 0.0) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

IndividualFit ols_individual(const DemeanedPanel& panel, int unit) {
    const Matrix& x = panel.X.at(unit);
    Vector y = panel.y.col(unit);
    IndividualFit fit;
    fit.gram = x.transpose() * x;
    if (sym_condition(fit.gram) > kGramConditionLimit)
        throw SingularGram("unit " + std::to_string(unit) +
                           ": demeaned regressor Gram is numerically singular");
    fit.beta = fit.gram.ldlt().solve(x.transpose() * y);
    fit.residuals = y - x * fit.beta;
    return fit;
}

IndividualFit gmm_individual(const DifferencedPanel& panel, int unit, GmmWeight rule) {
    const Matrix& x = panel.X.at(unit);
    const Matrix& z = panel.Z.at(unit);
    Vector y = panel.y.col(unit);
    const int q = static_cast<int>(z.cols());
    const int p = static_cast<int>(x.cols());
    if (q < p)
        throw RankDeficientInstruments("unit " + std::to_string(unit) +
                                       ": fewer instruments than regressors");

    Matrix omega;
    if (rule == GmmWeight::TwoStageLS) {
        Matrix zz = z.transpose() * z / static_cast<double>(z.rows());
        if (sym_condition(zz) > kGramConditionLimit)
            throw RankDeficientInstruments("unit " + std::to_string(unit) +
                                           ": instrument Gram is numerically singular");
        omega = zz.ldlt().solve(Matrix::Identity(q, q));
    } else {
        omega = Matrix::Identity(q, q);
    }

    Matrix zx = z.transpose() * x;  // q x p
    IndividualFit fit;
    fit.gram = zx.transpose() * omega * zx;
    fit.gram = 0.5 * (fit.gram + fit.gram.transpose());
    if (sym_condition(fit.gram) > kGramConditionLimit)
        throw SingularGram("unit " + std::to_string(unit) +
                           ": GMM Gram is numerically singular");
    fit.beta = fit.gram.ldlt().solve(zx.transpose() * omega * (z.transpose() * y));
    fit.residuals = y - x * fit.beta;
    return fit;
}

std::vector<IndividualFit> fit_all_ols(const DemeanedPanel& panel) {
    std::vector<IndividualFit> fits(panel.n_units());
    for (int i = 0; i < panel.n_units(); ++i) fits[i] = ols_individual(panel, i);
    return fits;
}

std::vector<IndividualFit> fit_all_gmm(const DifferencedPanel& panel, GmmWeight rule) {
    std::vector<IndividualFit> fits(panel.n_units());
    for (int i = 0; i < panel.n_units(); ++i) fits[i] = gmm_individual(panel, i, rule);
    return fits;
}

namespace {

void check_partition(const GroupPartition& partition, int n_units) {
    if (static_cast<int>(partition.labels.size()) != n_units)
        throw InvalidSpec("partition size does not match number of units");
    std::vector<int> counts(partition.K, 0);
    for (int g : partition.labels) {
        if (g < 0 || g >= partition.K) throw InvalidSpec("group label out of range");
        ++counts[g];
    }
    for (int k = 0; k < partition.K; ++k)
        if (counts[k] == 0)
            throw InvalidSpec("group " + std::to_string(k + 1) + " is empty");
}

}  // namespace

GroupEstimates group_estimate(const std::vector<IndividualFit>& fits,
                              const GroupPartition& partition) {
    const int N = static_cast<int>(fits.size());
    check_partition(partition, N);
    const int p = static_cast<int>(fits[0].beta.size());
    const int K = partition.K;

    std::vector<Matrix> gram_sum(K, Matrix::Zero(p, p));
    for (int i = 0; i < N; ++i) gram_sum[partition.labels[i]] += fits[i].gram;

    std::vector<Matrix> gram_sum_inv(K);
    for (int k = 0; k < K; ++k) {
        if (sym_condition(gram_sum[k]) > kGramConditionLimit)
            throw SingularGram("group " + std::to_string(k + 1) +
                               ": summed Gram is numerically singular");
        gram_sum_inv[k] = gram_sum[k].ldlt().solve(Matrix::Identity(p, p));
    }

    GroupEstimates est;
    est.alpha = Matrix::Zero(K, p);
    est.weights.resize(N);
    for (int i = 0; i < N; ++i) {
        int k = partition.labels[i];
        est.weights[i] = gram_sum_inv[k] * fits[i].gram;
        est.alpha.row(k) += (est.weights[i] * fits[i].beta).transpose();
    }
    return est;
}

Matrix plugin_covariance(const std::vector<IndividualFit>& fits,
                         const GroupPartition& partition) {
    const int N = static_cast<int>(fits.size());
    check_partition(partition, N);
    const int p = static_cast<int>(fits[0].beta.size());
    const int K = partition.K;

    GroupEstimates est = group_estimate(fits, partition);

    std::vector<Matrix> a(K, Matrix::Zero(p, p));
    std::vector<Matrix> b(K, Matrix::Zero(p, p));
    std::vector<int> counts(K, 0);
    for (int i = 0; i < N; ++i) {
        int k = partition.labels[i];
        a[k] += fits[i].gram;
        // Group-level score of unit i. By the per-unit normal equations,
        // X'(y - X alpha) = gram * (beta_i - alpha).
        Vector s = fits[i].gram * (fits[i].beta - est.alpha.row(k).transpose());
        b[k] += s * s.transpose();
        ++counts[k];
    }

    Matrix sigma = Matrix::Zero(K * p, K * p);
    for (int k = 0; k < K; ++k) {
        Matrix ainv = a[k].ldlt().solve(Matrix::Identity(p, p));
        double dof = counts[k] > 1 ? static_cast<double>(counts[k]) / (counts[k] - 1) : 1.0;
        Matrix block = ainv * (dof * b[k]) * ainv;
        sigma.block(k * p, k * p, p, p) = 0.5 * (block + block.transpose());
    }
    return sigma;
}

}  // namespace panelsel
