#pragma once

#include <stdexcept>
#include <string>

namespace palu {

enum class ErrorCode {
    kInvalidInput,
    kUndefinedValue,
    kOracleFailure,
    kCapacity,
    kParse,
    kIo,
    kPrecondition,
};

const char* to_string(ErrorCode code) noexcept;

// All library failures surface as this exception; the C API maps `code()`
// onto palu_status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool condition, const std::string& what) {
    if (!condition) fail(ErrorCode::kInvalidInput, what);
}

}  // namespace palu
