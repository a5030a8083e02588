#pragma once

#include <stdexcept>
#include <string>

namespace spinres {

// Base class for all toolkit errors. The CLI maps these to exit code 3
// (runtime) unless they surface during spec validation (exit code 2).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class CriticalCurrentExceeded : public Error {
public:
    using Error::Error;
};

class TargetUnreachable : public Error {
public:
    using Error::Error;
};

class SlewTooFast : public Error {
public:
    using Error::Error;
};

class NoPeakFound : public Error {
public:
    using Error::Error;
};

class MultiplePeaks : public Error {
public:
    using Error::Error;
};

class FitDiverged : public Error {
public:
    using Error::Error;
};

class IllConditioned : public Error {
public:
    using Error::Error;
};

class StepTooLarge : public Error {
public:
    using Error::Error;
};

class TimingViolation : public Error {
public:
    using Error::Error;
};

class DoesNotFit : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line = -1, int column = -1)
        : Error(what), line(line), column(column) {}
    int line;
    int column;
};

}  // namespace spinres
