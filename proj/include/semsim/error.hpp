#pragma once

#include <stdexcept>
#include <string>

namespace semsim {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape disagreement between tensor operands.
struct DimensionError : Error {
    using Error::Error;
};

// Malformed or out-of-contract input data (empty corpus, bad record, ...).
struct DataError : Error {
    using Error::Error;
};

// NaN/Inf where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

// Token id or index outside its table.
struct IndexError : Error {
    using Error::Error;
};

// Sequence longer than the model admits.
struct LengthError : Error {
    using Error::Error;
};

// Invalid configuration or API misuse.
struct ConfigError : Error {
    using Error::Error;
};

// SoftSequence rows violating the distribution contract.
struct ValidationError : Error {
    using Error::Error;
};

// Degenerate statistical input (zero variance, sample too small).
struct StatsError : Error {
    using Error::Error;
};

}  // namespace semsim
