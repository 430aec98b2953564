#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reltrans {

enum class ErrorCode {
    ConfigError,
    SchemaError,
    ParseError,
    StructuralError,
    ScenarioMismatch,
    DegenerateKappa,
    StratumEmpty,
    PositivityViolation,
    NumericalSingularity,
    FoldInfeasible,
    ParameterError,
    DimensionError,
    SpecError,
    RootNotFound,
    InconsistentInput,
    IoError,
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ConfigError:          return "CONFIG_ERROR";
    case ErrorCode::SchemaError:          return "SCHEMA_ERROR";
    case ErrorCode::ParseError:           return "PARSE_ERROR";
    case ErrorCode::StructuralError:      return "STRUCTURAL_ERROR";
    case ErrorCode::ScenarioMismatch:     return "SCENARIO_MISMATCH";
    case ErrorCode::DegenerateKappa:      return "DEGENERATE_KAPPA";
    case ErrorCode::StratumEmpty:         return "STRATUM_EMPTY";
    case ErrorCode::PositivityViolation:  return "POSITIVITY_VIOLATION";
    case ErrorCode::NumericalSingularity: return "NUMERICAL_SINGULARITY";
    case ErrorCode::FoldInfeasible:       return "FOLD_INFEASIBLE";
    case ErrorCode::ParameterError:       return "PARAMETER_ERROR";
    case ErrorCode::DimensionError:       return "DIMENSION_ERROR";
    case ErrorCode::SpecError:            return "SPEC_ERROR";
    case ErrorCode::RootNotFound:         return "ROOT_NOT_FOUND";
    case ErrorCode::InconsistentInput:    return "INCONSISTENT_INPUT";
    case ErrorCode::IoError:              return "IO_ERROR";
    }
    return "UNKNOWN";
}

/// Process exit code for the CLI: 2 config, 3 data/structural, 4 numerical.
inline int exit_code(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::SpecError:
    case ErrorCode::ParameterError:
        return 2;
    case ErrorCode::NumericalSingularity:
    case ErrorCode::RootNotFound:
    case ErrorCode::InconsistentInput:
    case ErrorCode::PositivityViolation:
        return 4;
    default:
        return 3;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string module, const std::string& message)
        : std::runtime_error(message), code_(code), module_(std::move(module))
    {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& module() const noexcept { return module_; }

private:
    ErrorCode code_;
    std::string module_;
};

} // namespace reltrans
