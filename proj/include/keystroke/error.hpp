#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace keystroke {

// Machine-readable error classes. The names double as the reason codes
// returned by the capture service and map onto CLI exit codes.
enum class Errc {
  UnmatchedEvent,
  MalformedStream,
  TooFewKeys,
  DimensionMismatch,
  InsufficientSamples,
  KindMismatch,
  EmptyScoreList,
  EmptySelection,
  MissingTemplatePart,
  EmptyPassword,
  EmptyScores,
  NoEligibleUsers,
  InvalidInput,
  FormatError,
  ChecksumMismatch,
  IoError,
  UnknownUser,
  AlreadyRegistered,
  Unauthorized,
  UnknownSession,
  NoImpostorTargets,
  TextMismatch,
  SessionComplete,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::UnmatchedEvent: return "UnmatchedEvent";
    case Errc::MalformedStream: return "MalformedStream";
    case Errc::TooFewKeys: return "TooFewKeys";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::KindMismatch: return "KindMismatch";
    case Errc::EmptyScoreList: return "EmptyScoreList";
    case Errc::EmptySelection: return "EmptySelection";
    case Errc::MissingTemplatePart: return "MissingTemplatePart";
    case Errc::EmptyPassword: return "EmptyPassword";
    case Errc::EmptyScores: return "EmptyScores";
    case Errc::NoEligibleUsers: return "NoEligibleUsers";
    case Errc::InvalidInput: return "InvalidInput";
    case Errc::FormatError: return "FormatError";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::IoError: return "IoError";
    case Errc::UnknownUser: return "UnknownUser";
    case Errc::AlreadyRegistered: return "AlreadyRegistered";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::UnknownSession: return "UnknownSession";
    case Errc::NoImpostorTargets: return "NoImpostorTargets";
    case Errc::TextMismatch: return "TextMismatch";
    case Errc::SessionComplete: return "SessionComplete";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace keystroke
