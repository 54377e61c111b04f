#pragma once

#include <stdexcept>
#include <string>

namespace ctpe {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorKind {
    Usage    = 1,  // bad arguments, malformed config, missing paths
    Data     = 2,  // malformed or out-of-contract input data
    Contract = 3,  // internal contract violation (shape mismatch, degenerate inputs)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    int exit_code() const { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& msg)    { return Error(ErrorKind::Usage, msg); }
inline Error data_error(const std::string& msg)     { return Error(ErrorKind::Data, msg); }
inline Error contract_error(const std::string& msg) { return Error(ErrorKind::Contract, msg); }

} // namespace ctpe
