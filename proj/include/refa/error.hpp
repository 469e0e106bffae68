// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace refa {

enum class ErrorKind {
    validation,
    parse,
    degenerate_group,
    infinite_penalty,
    oracle,
    io,
    config,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::validation, what);
}

}  // namespace refa
