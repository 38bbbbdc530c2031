#pragma once

#include <doctest.h>

#include "coached/error.hpp"
#include "fixtures.hpp"

// Checks that `expr` throws coached::Error of the given kind.
#define CHECK_THROWS_KIND(expr, expected_kind)                     \
  do {                                                             \
    bool thrown_ = false;                                          \
    try {                                                          \
      (void)(expr);                                                \
    } catch (const ::coached::Error& e_) {                         \
      thrown_ = true;                                              \
      CHECK_MESSAGE(e_.kind() == (expected_kind), e_.what());      \
    }                                                              \
    CHECK_MESSAGE(thrown_, "expected an exception from " #expr);   \
  } while (false)
