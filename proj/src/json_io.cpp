#include "panelsel/json_io.hpp"

#include <cmath>
#include <ostream>

namespace panelsel {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_to_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

json labels_to_json(const std::vector<int>& labels) {
    json out = json::array();
    for (int g : labels) out.push_back(g + 1);
    return out;
}

}  // namespace

json fit_to_json(const std::string& unit, const IndividualFit& fit) {
    return json{{"unit", unit},
                {"beta", vector_to_json(fit.beta)},
                {"gram", matrix_to_json(fit.gram)}};
}

json interval_union_to_json(const IntervalUnion& set) {
    json out = json::array();
    for (const Interval& iv : set.parts()) {
        json pair = json::array();
        pair.push_back(iv.lo);
        if (std::isinf(iv.hi)) {
            pair.push_back("inf");
        } else {
            pair.push_back(iv.hi);
        }
        out.push_back(std::move(pair));
    }
    return out;
}

json cluster_run_to_json(const ClusterRun& run, const std::vector<std::string>& units) {
    json init = json::array();
    json init_units = json::array();
    for (int idx : run.init_indices) {
        init.push_back(idx + 1);
        init_units.push_back(units.at(idx));
    }
    json trace = json::array();
    for (const auto& labels : run.trace) trace.push_back(labels_to_json(labels));
    return json{{"seed", run.seed},
                {"init_indices", init},
                {"init_units", init_units},
                {"trace", trace},
                {"labels", labels_to_json(run.final_partition.labels)},
                {"K", run.final_partition.K},
                {"alpha", matrix_to_json(run.estimates.alpha)},
                {"iterations", run.iterations},
                {"converged", run.converged}};
}

json test_result_to_json(const SelectiveTestResult& result, const std::string& method) {
    json out{{"statistic", result.statistic},
             {"truncation", interval_union_to_json(result.truncation)},
             {"p_selective", result.p_selective},
             {"p_naive", result.p_naive},
             {"wald_stat", result.wald_stat},
             {"metadata",
              json{{"method", method},
                   {"target", result.covariate < 0
                                  ? json("all")
                                  : json("covariate " + std::to_string(result.covariate + 1))},
                   {"mc_fallback", result.mc_fallback}}}};
    if (result.covariate < 0) {
        out["lambdas"] = result.lambdas;
    } else {
        out["variance"] = result.variance;
    }
    return out;
}

json experiment_report_to_json(const ExperimentReport& report) {
    json out{{"M", report.M},
             {"alpha", report.alpha},
             {"ks_stat", report.ks_stat},
             {"recovery_probability", report.recovery_probability},
             {"rejections", report.rejections},
             {"degenerate_count", report.degenerate_count},
             {"unconverged_count", report.unconverged_count}};
    if (report.power_defined) {
        out["conditional_power"] = report.conditional_power;
    } else {
        out["conditional_power"] = nullptr;
    }
    return out;
}

void write_replication_csv(std::ostream& out, const ExperimentReport& report) {
    out << "rep,seed,recovered,converged,degenerate,pair,covariate,"
           "p_selective,p_naive\n";
    out.precision(17);
    int rep = 0;
    for (const ReplicationRecord& row : report.rows) {
        out << ++rep << ',' << row.seed << ',' << (row.recovered ? 1 : 0) << ','
            << (row.converged ? 1 : 0) << ',' << (row.degenerate ? 1 : 0) << ','
            << (row.pair_k + 1) << '-' << (row.pair_kp + 1) << ','
            << (row.covariate >= 0 ? std::to_string(row.covariate + 1) : "") << ','
            << row.p_selective << ',' << row.p_naive << "\n";
    }
}

void write_qq_csv(std::ostream& out,
                  const std::vector<std::pair<double, double>>& pairs) {
    out << "uniform_quantile,empirical_quantile\n";
    out.precision(17);
    for (const auto& [u, p] : pairs) out << u << ',' << p << "\n";
}

}  // namespace panelsel
