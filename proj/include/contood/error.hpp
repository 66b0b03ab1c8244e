#pragma once

#include <exception>
#include <string>
#include <string_view>
#include <utility>

namespace contood {

// Base of every error raised by the library. Callers higher up the stack
// prepend context (file name, stage index, left-out class) and rethrow.
class Error : public std::exception {
 public:
  explicit Error(std::string message) : message_(std::move(message)) {}

  const char* what() const noexcept override { return message_.c_str(); }

  void add_context(std::string_view context) {
    message_ = std::string(context) + ": " + message_;
  }

 private:
  std::string message_;
};

#define CONTOOD_DEFINE_ERROR(Name)         \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  };

// Malformed file contents (bad magic, wrong record size).
CONTOOD_DEFINE_ERROR(FormatError)
// Input shorter or longer than its header declares.
CONTOOD_DEFINE_ERROR(LengthError)
// Two inputs that must agree do not (image count vs label count).
CONTOOD_DEFINE_ERROR(ConsistencyError)
CONTOOD_DEFINE_ERROR(ValueError)
CONTOOD_DEFINE_ERROR(ShapeError)
CONTOOD_DEFINE_ERROR(DivergenceError)
CONTOOD_DEFINE_ERROR(DegenerateScaleError)
CONTOOD_DEFINE_ERROR(IoError)

#undef CONTOOD_DEFINE_ERROR

// A class has fewer than two correctly classified points, so its score
// statistics cannot be estimated.
class InsufficientDataError : public Error {
 public:
  InsufficientDataError(std::string message, int class_id)
      : Error(std::move(message)), class_id_(class_id) {}

  int class_id() const noexcept { return class_id_; }

 private:
  int class_id_;
};

}  // namespace contood
