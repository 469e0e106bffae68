// SPDX-License-Identifier: Apache-2.0
#include "refa/error.hpp"

namespace refa {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::validation: return "validation";
        case ErrorKind::parse: return "parse";
        case ErrorKind::degenerate_group: return "degenerate_group";
        case ErrorKind::infinite_penalty: return "infinite_penalty";
        case ErrorKind::oracle: return "oracle";
        case ErrorKind::io: return "io";
        case ErrorKind::config: return "config";
    }
    return "unknown";
}

}  // namespace refa
