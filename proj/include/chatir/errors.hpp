#pragma once

#include <stdexcept>
#include <string>

namespace chatir {

// Base for every recoverable error raised by the library. The CLI maps these
// to exit code 2 (data/model error).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CHATIR_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    explicit Name(const std::string& what) \
        : Error(#Name ": " + what) {}      \
  }

CHATIR_DEFINE_ERROR(EmptyCorpus);
CHATIR_DEFINE_ERROR(CorpusTooSmall);
CHATIR_DEFINE_ERROR(UnknownPairId);
CHATIR_DEFINE_ERROR(ShapeMismatch);
CHATIR_DEFINE_ERROR(StaleCache);
CHATIR_DEFINE_ERROR(NonFiniteGradient);
CHATIR_DEFINE_ERROR(FormatVersionMismatch);
CHATIR_DEFINE_ERROR(CorruptCheckpoint);
CHATIR_DEFINE_ERROR(CorruptIndex);
CHATIR_DEFINE_ERROR(NoCandidates);
CHATIR_DEFINE_ERROR(LexiconMissing);
CHATIR_DEFINE_ERROR(ClassUnderrepresented);
CHATIR_DEFINE_ERROR(UnknownSession);
CHATIR_DEFINE_ERROR(EngineNotReady);
CHATIR_DEFINE_ERROR(InvalidCorpus);
CHATIR_DEFINE_ERROR(InvalidConfig);

#undef CHATIR_DEFINE_ERROR

}  // namespace chatir
