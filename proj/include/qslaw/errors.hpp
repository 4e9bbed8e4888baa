// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace qslaw {

// Error taxonomy shared by all modules. The CLI maps ConfigError (and bad
// usage) to exit code 2, everything else to exit code 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IndexError : Error {
    using Error::Error;
};
struct EncodingError : Error {
    using Error::Error;
};
struct StateError : Error {
    using Error::Error;
};
struct SequenceError : Error {
    using Error::Error;
};
struct FileError : Error {
    using Error::Error;
};

}  // namespace qslaw
