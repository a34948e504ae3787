#pragma once

#include <stdexcept>
#include <string>

namespace cgr {

// Every error raised by the library derives from Error so callers can catch
// the whole family at once; the subclasses name the failure category.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
   public:
    using Error::Error;
};

class IndexError : public Error {
   public:
    using Error::Error;
};

// A caller broke a documented precondition (non-scalar loss, empty batch, ...).
class ContractError : public Error {
   public:
    using Error::Error;
};

class NumericError : public Error {
   public:
    using Error::Error;
};

class ValidationError : public Error {
   public:
    using Error::Error;
};

class ParseError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

class IncompatibleVersionError : public Error {
   public:
    using Error::Error;
};

}  // namespace cgr
