#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "panelsel/inference.hpp"
#include "panelsel/simulate.hpp"

namespace panelsel {

/// {unit, beta:[...], gram:[[...]]}
nlohmann::json fit_to_json(const std::string& unit, const IndividualFit& fit);

/// List of [lo, hi] pairs with an "inf" sentinel for unbounded upper ends.
nlohmann::json interval_union_to_json(const IntervalUnion& set);

/// Seed, sampled centroid units, full assignment trace, final labels, alpha.
/// Unit and group indices are 1-based on the wire.
nlohmann::json cluster_run_to_json(const ClusterRun& run,
                                   const std::vector<std::string>& units);

nlohmann::json test_result_to_json(const SelectiveTestResult& result,
                                   const std::string& method);

nlohmann::json experiment_report_to_json(const ExperimentReport& report);

/// One row per replication: seed, recovered, p_selective, p_naive (plus
/// bookkeeping columns).
void write_replication_csv(std::ostream& out, const ExperimentReport& report);

void write_qq_csv(std::ostream& out,
                  const std::vector<std::pair<double, double>>& pairs);

}  // namespace panelsel
