#ifndef PEST_TESTS_TEST_UTIL_HPP_
#define PEST_TESTS_TEST_UTIL_HPP_

#include <gtest/gtest.h>

#include "pest/error.hpp"

namespace pest::test_util {

/// Runs f and returns the code of the pest::Error it throws.
template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected pest::Error";
  return ErrorCode::NumericError;
}

}  // namespace pest::test_util

#endif  // PEST_TESTS_TEST_UTIL_HPP_
