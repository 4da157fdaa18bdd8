#pragma once

#include <stdexcept>
#include <string>

namespace dift {

/// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind : int {
    Usage = 1,    // bad flags or configuration
    Data = 2,     // missing/malformed dataset or artifact files
    Backend = 3,  // discriminator transport failures
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class BackendError : public Error {
public:
    explicit BackendError(const std::string& what) : Error(ErrorKind::Backend, what) {}
};

}  // namespace dift
