#pragma once

#include <stdexcept>
#include <string>

namespace mmfuse {

// Base class for all engine errors. Subclasses map to CLI exit codes:
// ConfigError -> 1, FormatError/ConsistencyError -> 2, everything else -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between tensors (message names both shapes).
struct DimensionError : Error {
    using Error::Error;
};

// Input outside an op's mathematical domain (log of non-positive value,
// zero-norm row fed to the normalizer).
struct DomainError : Error {
    using Error::Error;
};

// NaN or Inf encountered where a finite value is required.
struct NumericError : Error {
    using Error::Error;
};

// API misuse: non-scalar loss, missing modality for the requested mode.
struct ContractError : Error {
    using Error::Error;
};

// Malformed file (bad magic, wrong payload size, schema violation).
struct FormatError : Error {
    using Error::Error;
};

// Dataset-level inconsistency: unknown sample id, missing rows,
// fewer patients than folds.
struct ConsistencyError : Error {
    using Error::Error;
};

// Invalid configuration value or unknown config key.
struct ConfigError : Error {
    using Error::Error;
};

// Validation split unusable for model selection (single class).
struct ModelSelectionError : Error {
    using Error::Error;
};

} // namespace mmfuse
