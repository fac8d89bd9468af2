#pragma once

#include <stdexcept>
#include <string>

namespace ldlab {

// Error codes exposed by the library. The CLI maps these to machine-readable
// diagnostics on stderr; tests match on the code, not the message text.
enum class Err {
    WrongCount,
    NonFinite,
    OutOfRange,
    DegenerateFace,
    BadResolution,
    BadRange,
    ShapeMismatch,
    TimestepOutOfRange,
    BadTimestepPair,
    UnknownKind,
    IllegalStrength,
    TooFewKinds,
    BadConfig,
    EmptyCorpus,
    IncompatibleAutoencoder,
    WrongStage,
    IoError,
    CheckpointMismatch,
    CountMismatch,
    EmptyList,
    FeatureNotFound,
    DegenerateMap,
    BadFormat,
};

inline const char* err_name(Err e) {
    switch (e) {
        case Err::WrongCount: return "WrongCount";
        case Err::NonFinite: return "NonFinite";
        case Err::OutOfRange: return "OutOfRange";
        case Err::DegenerateFace: return "DegenerateFace";
        case Err::BadResolution: return "BadResolution";
        case Err::BadRange: return "BadRange";
        case Err::ShapeMismatch: return "ShapeMismatch";
        case Err::TimestepOutOfRange: return "TimestepOutOfRange";
        case Err::BadTimestepPair: return "BadTimestepPair";
        case Err::UnknownKind: return "UnknownKind";
        case Err::IllegalStrength: return "IllegalStrength";
        case Err::TooFewKinds: return "TooFewKinds";
        case Err::BadConfig: return "BadConfig";
        case Err::EmptyCorpus: return "EmptyCorpus";
        case Err::IncompatibleAutoencoder: return "IncompatibleAutoencoder";
        case Err::WrongStage: return "WrongStage";
        case Err::IoError: return "IoError";
        case Err::CheckpointMismatch: return "CheckpointMismatch";
        case Err::CountMismatch: return "CountMismatch";
        case Err::EmptyList: return "EmptyList";
        case Err::FeatureNotFound: return "FeatureNotFound";
        case Err::DegenerateMap: return "DegenerateMap";
        case Err::BadFormat: return "BadFormat";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
  public:
    Error(Err code, const std::string& msg)
        : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}

    Err code() const noexcept { return code_; }
    const char* code_name() const noexcept { return err_name(code_); }

  private:
    Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, Err code, const std::string& msg) {
    if (!ok) fail(code, msg);
}

}  // namespace ldlab
