#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace goct {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value violates a documented invariant (tempo map, chart, config...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// An argument lies outside the domain of a mathematical operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed text input. Line and column are 1-based; 0 means unknown.
class ParseError : public Error {
public:
    ParseError(std::size_t line, std::size_t column, const std::string& message)
        : ParseError(std::string(), line, column, message) {}
    /// Same position, reported as `file:line:column: message`.
    ParseError(std::string file, std::size_t line, std::size_t column, const std::string& message)
        : Error(format(file, line, column, message)), file_(std::move(file)), line_(line), column_(column),
          message_(message) {}

    const std::string& file() const { return file_; }
    std::size_t line() const { return line_; }
    std::size_t column() const { return column_; }
    const std::string& message() const { return message_; }

private:
    static std::string format(const std::string& file, std::size_t line, std::size_t column,
                              const std::string& message) {
        if (!file.empty()) {
            if (line == 0) {
                return file + ": " + message;
            }
            return file + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + message;
        }
        if (line == 0) {
            return message;
        }
        return "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message;
    }

    std::string file_;
    std::size_t line_;
    std::size_t column_;
    std::string message_;
};

/// Binary file or container format problem (bad magic, version, truncation).
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace goct
