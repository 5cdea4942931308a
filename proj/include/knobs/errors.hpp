#pragma once

#include <stdexcept>
#include <string>

namespace knobs {

// Every failure the toolkit raises derives from Error so callers can catch
// the family at once; the subclasses mirror the error kinds each module
// documents (shape, data, config, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class LockError : public Error {
 public:
  using Error::Error;
};

class ScorerUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace knobs
