#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace panelsel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Library-wide error root. The CLI maps subtypes onto exit codes: data/spec
// problems exit 2, numerical/degenerate-inference problems exit 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error { using Error::Error; };
struct UnbalancedPanel : Error { using Error::Error; };
struct DegenerateRegressor : Error { using Error::Error; };
struct SingularGram : Error { using Error::Error; };
struct RankDeficientInstruments : Error { using Error::Error; };
struct KTooLarge : Error { using Error::Error; };
struct InvalidPair : Error { using Error::Error; };
struct DegenerateDirection : Error { using Error::Error; };
struct ObservedStatExcluded : Error { using Error::Error; };
struct StatOutsideSupport : Error { using Error::Error; };
struct ZeroMassSupport : Error { using Error::Error; };
struct QuadratureFailure : Error { using Error::Error; };
struct SingularCovariance : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };

}  // namespace panelsel
