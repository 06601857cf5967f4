#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nevicut {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid user input: bad configuration, malformed files, wrong dimensions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

namespace ad {

/// Raised when an operation on the tape receives operands of the wrong shape.
class ShapeError : public Error {
public:
    ShapeError(std::size_t node, std::string op, const std::string& what)
        : Error("shape mismatch at node " + std::to_string(node) + " (" + op + "): " + what),
          node_(node),
          op_(std::move(op)) {}
    std::size_t node() const { return node_; }
    const std::string& op() const { return op_; }

private:
    std::size_t node_;
    std::string op_;
};

/// Raised when an operation produces a NaN or infinity.
class NonFiniteError : public Error {
public:
    NonFiniteError(std::size_t node, std::string op)
        : Error("non-finite value at node " + std::to_string(node) + " (" + op + ")"),
          node_(node),
          op_(std::move(op)) {}
    std::size_t node() const { return node_; }
    const std::string& op() const { return op_; }

private:
    std::size_t node_;
    std::string op_;
};

}  // namespace ad
}  // namespace nevicut
