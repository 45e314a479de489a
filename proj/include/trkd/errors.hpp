#pragma once

#include <stdexcept>
#include <string>

namespace trkd {

/// Root of every error the library throws. Each subclass maps to one
/// failure category so callers (the CLI in particular) can pick exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class EmptySetError : public Error { public: using Error::Error; };
class DegenerateMass : public Error { public: using Error::Error; };
class DegenerateInput : public Error { public: using Error::Error; };
class StateError : public Error { public: using Error::Error; };

/// Non-finite loss during training. Carries the optimizer step that failed.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

// On-disk formats.
class IoError : public Error { public: using Error::Error; };
class FormatError : public IoError { public: using IoError::IoError; };
class VersionError : public IoError { public: using IoError::IoError; };
class TruncationError : public IoError { public: using IoError::IoError; };
class ValidationError : public IoError { public: using IoError::IoError; };

/// Config-file / flag validation. `key()` names the offending field.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace trkd
