#pragma once

#include <stdexcept>
#include <string>

namespace edl {

// Bad input: malformed configs, violated preconditions, unparsable files.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Analysis or simulation could not produce a result from valid input.
class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FitError : public AnalysisError {
public:
    using AnalysisError::AnalysisError;
};

class ComponentNotDetected : public AnalysisError {
public:
    using AnalysisError::AnalysisError;
};

} // namespace edl
