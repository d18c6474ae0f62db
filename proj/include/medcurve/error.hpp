#pragma once

#include <stdexcept>
#include <string>

namespace medcurve {

// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind { input = 2, solver = 3, design = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

inline Error input_error(const std::string& what) { return {ErrorKind::input, what}; }
inline Error solver_error(const std::string& what) { return {ErrorKind::solver, what}; }
inline Error design_error(const std::string& what) { return {ErrorKind::design, what}; }

} // namespace medcurve
