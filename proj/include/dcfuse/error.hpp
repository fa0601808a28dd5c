#pragma once

#include <stdexcept>
#include <string>

namespace dcfuse {

// Every failure raised by the library. `code()` is a short stable token that
// the CLI prints as the first field of its one-line error message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Invalid invocation of a command: bad or missing flags. Maps to exit code 2.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error("usage", what) {}
};

inline void require(bool cond, const char* code, const std::string& what)
{
    if (!cond) throw Error(code, what);
}

} // namespace dcfuse
