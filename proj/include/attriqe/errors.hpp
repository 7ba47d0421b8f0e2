#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attriqe {

// Broad failure classes. The CLI maps each one to a distinct exit status.
enum class ErrorCategory {
  dimension,
  contract,
  state,
  numeric,
  data,
  parse,
  config,
  path,
  alignment,
  vocabulary,
  length,
  bucket,
  divergence,
};

std::string_view category_name(ErrorCategory category) noexcept;
int exit_code(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define ATTRIQE_DEFINE_ERROR(Name, cat)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(cat, message) {}   \
  };

ATTRIQE_DEFINE_ERROR(DimensionError, ErrorCategory::dimension)
ATTRIQE_DEFINE_ERROR(ContractError, ErrorCategory::contract)
ATTRIQE_DEFINE_ERROR(StateError, ErrorCategory::state)
ATTRIQE_DEFINE_ERROR(NumericError, ErrorCategory::numeric)
ATTRIQE_DEFINE_ERROR(DataError, ErrorCategory::data)
ATTRIQE_DEFINE_ERROR(ParseError, ErrorCategory::parse)
ATTRIQE_DEFINE_ERROR(ConfigError, ErrorCategory::config)
ATTRIQE_DEFINE_ERROR(PathError, ErrorCategory::path)
ATTRIQE_DEFINE_ERROR(AlignmentError, ErrorCategory::alignment)
ATTRIQE_DEFINE_ERROR(VocabularyError, ErrorCategory::vocabulary)
ATTRIQE_DEFINE_ERROR(LengthError, ErrorCategory::length)
ATTRIQE_DEFINE_ERROR(BucketError, ErrorCategory::bucket)
ATTRIQE_DEFINE_ERROR(DivergenceError, ErrorCategory::divergence)

#undef ATTRIQE_DEFINE_ERROR

}  // namespace attriqe
