#pragma once

#include <stdexcept>
#include <string>

namespace qtewma {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidTrainingError : public Error {
public:
    using Error::Error;
};

class DegenerateCutError : public Error {
public:
    DegenerateCutError(std::size_t dimension, const std::string& what)
        : Error(what), dimension_(dimension) {}
    std::size_t dimension() const noexcept { return dimension_; }

private:
    std::size_t dimension_;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidArgumentError : public Error {
public:
    using Error::Error;
};

class CalibrationMismatchError : public Error {
public:
    using Error::Error;
};

class MonitoringHaltedError : public Error {
public:
    using Error::Error;
};

class FitError : public Error {
public:
    using Error::Error;
};

class BudgetExceededError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ExhaustedError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace qtewma
