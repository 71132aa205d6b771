// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace wmmon {

// Error taxonomy shared by all modules; the C API maps Kind to status codes.
class Error : public std::runtime_error {
public:
    enum class Kind { Io, Format, Invalid, State, Numeric, Internal };

    Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(Error::Kind::Io, msg); }
[[noreturn]] inline void throw_format(const std::string& msg) { throw Error(Error::Kind::Format, msg); }
[[noreturn]] inline void throw_invalid(const std::string& msg) { throw Error(Error::Kind::Invalid, msg); }
[[noreturn]] inline void throw_state(const std::string& msg) { throw Error(Error::Kind::State, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(Error::Kind::Numeric, msg); }

} // namespace wmmon
