#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace decmet {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Configuration / CLI problems. Fatal to the run.
struct ConfigError : Error {
    using Error::Error;
};

// Input files that are unreadable or structurally broken beyond row level.
struct IngestError : Error {
    using Error::Error;
};
struct EmptyInputError : IngestError {
    using IngestError::IngestError;
};
struct DuplicateHeightError : IngestError {
    using IngestError::IngestError;
};
struct DuplicateAddressError : IngestError {
    using IngestError::IngestError;
};

// Domain-level failures.
struct ZeroTotalError : Error {
    using Error::Error;
};
struct InvalidTauError : Error {
    using Error::Error;
};
struct InvalidMError : Error {
    using Error::Error;
};
struct InvalidThresholdError : Error {
    using Error::Error;
};
struct EmptyWindowError : Error {
    using Error::Error;
};
struct EmptyStudyWindowError : Error {
    using Error::Error;
};
struct MissingSnapshotError : Error {
    using Error::Error;
};
struct CyclicMergeError : Error {
    using Error::Error;
};

// Statistics layer.
struct ConstantSeriesError : Error {
    using Error::Error;
};
struct NonPositiveDataError : Error {
    using Error::Error;
};
struct SingularCorrelationError : Error {
    using Error::Error;
};
struct NoConvergenceError : Error {
    using Error::Error;
};
struct AdequacyError : Error {
    using Error::Error;
};

// Non-fatal diagnostics collected while a pipeline runs. Order of insertion
// is preserved so reports stay deterministic.
struct Warnings {
    std::vector<std::string> items;

    void add(std::string msg) { items.push_back(std::move(msg)); }
    bool empty() const { return items.empty(); }
};

// Convenience: append to a nullable sink.
inline void warn(Warnings* w, std::string msg) {
    if (w) w->add(std::move(msg));
}

}  // namespace decmet
