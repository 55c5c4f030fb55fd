#pragma once

#include <stdexcept>
#include <string>

namespace dygen {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A record is missing a required field or has the wrong shape.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Feature vectors (or other tensors) disagree on dimension.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A class index is outside [0, num_classes).
class LabelRangeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value (ratios, pairings, hyper-parameters).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed numeric input (NaN/Inf features, ragged batches, bad dims).
class InputError : public Error {
public:
    using Error::Error;
};

/// Loss became non-finite during optimization.
class TrainingDivergenceError : public Error {
public:
    using Error::Error;
};

/// A trajectory store is incomplete or inconsistent with its metadata.
class StoreIntegrityError : public Error {
public:
    using Error::Error;
};

/// A class has no assigned instances where one is required.
class DegenerateClassError : public Error {
public:
    using Error::Error;
};

/// Prior construction impossible (e.g. empty clean reference set).
class PriorConstructionError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Posterior concentrations too small for a well-defined mode.
class DegeneratePosteriorError : public Error {
public:
    using Error::Error;
};

/// Requested evaluation needs ground truth that is not available.
class EvaluationUnavailableError : public Error {
public:
    using Error::Error;
};

/// Missing intermediate artifact (diagnostics table, run directory, ...).
class PlumbingError : public Error {
public:
    using Error::Error;
};

} // namespace dygen
