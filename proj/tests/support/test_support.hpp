#pragma once

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "splinemix/error.hpp"

namespace splinemix::testing {

template <class F>
void expect_code(ErrorCode code, F&& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace splinemix::testing
