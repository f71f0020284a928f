#pragma once

#include <stdexcept>
#include <string>

namespace rankguard {

// Error taxonomy. The CLI maps categories onto exit codes:
// ConfigError -> 2, DataError -> 3, NumericalError -> 4.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateCrossSection : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class InvalidValue : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class UndefinedCorrelation : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class UndefinedAUROC : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SingularDesign : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class UndefinedSharpe : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class IngestError : public DataError {
public:
    using DataError::DataError;
};

class DuplicateKey : public DataError {
public:
    using DataError::DataError;
};

class EmptyTrainSet : public DataError {
public:
    using DataError::DataError;
};

class InsufficientUniverse : public DataError {
public:
    using DataError::DataError;
};

class GenerationError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

} // namespace rankguard
