#include "palu/error.hpp"

namespace palu {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::kInvalidInput: return "invalid input";
        case ErrorCode::kUndefinedValue: return "undefined value";
        case ErrorCode::kOracleFailure: return "oracle failure";
        case ErrorCode::kCapacity: return "capacity";
        case ErrorCode::kParse: return "parse error";
        case ErrorCode::kIo: return "io error";
        case ErrorCode::kPrecondition: return "precondition failure";
    }
    return "unknown";
}

}  // namespace palu
