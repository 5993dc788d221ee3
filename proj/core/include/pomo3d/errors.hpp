#pragma once

#include <stdexcept>
#include <string>

namespace pomo3d {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad or inconsistent configuration (dimension mismatch, empty data group, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A caller handed in data that violates an operation's precondition.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or logits during optimization.
class TrainingFault : public Error {
public:
    TrainingFault(const std::string& what, long step) : Error(what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

/// Checkpoint content hash does not verify.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// Checkpoint written by a newer format version.
class VersionError : public Error {
public:
    using Error::Error;
};

/// Unknown session or accessory handle.
class NotFound : public Error {
public:
    using Error::Error;
};

/// A requested capability is not loaded (e.g. no scribble encoder in the checkpoint).
class Unavailable : public Error {
public:
    using Error::Error;
};

}  // namespace pomo3d
