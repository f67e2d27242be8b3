#pragma once

#include <functional>

#include <gtest/gtest.h>

#include "scenarios.hpp"

namespace cmix::testing {

inline Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no cmix::Error thrown";
    return Errc::IoError;
}

}  // namespace cmix::testing
