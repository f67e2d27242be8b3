#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cmix {

enum class Errc {
    SigningWithExpiredCredential,
    DecryptionDenied,
    FilterSaturated,
    RemoveAbsent,
    DeserializeError,
    OffNetwork,
    TraceOrderError,
    SynthesisFailed,
    NotRegistered,
    UnknownChaff,
    AlreadyRetired,
    NeverAssigned,
    AuthFailure,
    StaleRequest,
    OutOfRange,
    NoResponder,
    ConfigError,
    ParseError,
    IoError,
};

constexpr std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::SigningWithExpiredCredential: return "SigningWithExpiredCredential";
        case Errc::DecryptionDenied: return "DecryptionDenied";
        case Errc::FilterSaturated: return "FilterSaturated";
        case Errc::RemoveAbsent: return "RemoveAbsent";
        case Errc::DeserializeError: return "DeserializeError";
        case Errc::OffNetwork: return "OffNetwork";
        case Errc::TraceOrderError: return "TraceOrderError";
        case Errc::SynthesisFailed: return "SynthesisFailed";
        case Errc::NotRegistered: return "NotRegistered";
        case Errc::UnknownChaff: return "UnknownChaff";
        case Errc::AlreadyRetired: return "AlreadyRetired";
        case Errc::NeverAssigned: return "NeverAssigned";
        case Errc::AuthFailure: return "AuthFailure";
        case Errc::StaleRequest: return "StaleRequest";
        case Errc::OutOfRange: return "OutOfRange";
        case Errc::NoResponder: return "NoResponder";
        case Errc::ConfigError: return "ConfigError";
        case Errc::ParseError: return "ParseError";
        case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every recoverable failure in the library is reported as a cmix::Error
/// carrying a machine-checkable code.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace cmix
