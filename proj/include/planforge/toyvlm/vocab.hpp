#pragma once

#include <cstddef>

namespace planforge::toyvlm::vocab {

// Reserved token ids shared by calibration data and probe tasks.
inline constexpr std::size_t kYes = 0;
inline constexpr std::size_t kNo = 1;
inline constexpr std::size_t kChoiceA = 2;  // choices A..D are 2..5
inline constexpr std::size_t kNumChoices = 4;
inline constexpr std::size_t kQuery = 6;     // "is there a <object>?"
inline constexpr std::size_t kQuestion = 7;  // multiple-choice question marker
inline constexpr std::size_t kAnswer = 8;    // answer prompt, always last
inline constexpr std::size_t kFirstObject = 9;

/// Smallest vocabulary that leaves room for a useful object range.
inline constexpr std::size_t kMinVocab = kFirstObject + 8;

}  // namespace planforge::toyvlm::vocab
