#pragma once

#include <stdexcept>
#include <string>

namespace ate {

// Base class for every error the toolkit raises on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/operation shape mismatch; message names both shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Violated API contract (non-scalar backward root, missing gradient, ...).
struct ContractError : Error {
    using Error::Error;
};

// Requested autodiff leaf is not a leaf on the tape.
struct UnknownLeafError : Error {
    using Error::Error;
};

// Label or element index out of range.
struct IndexError : Error {
    using Error::Error;
};

// Invalid model/feature/run configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Byte-level container problems: bad magic, malformed chunk, truncation.
struct FormatError : Error {
    using Error::Error;
};

// Readable container, unsupported variant (e.g. stereo WAV); message names the field.
struct UnsupportedFormatError : Error {
    using Error::Error;
};

// Version field of a known container is not the one this build writes.
struct VersionError : Error {
    using Error::Error;
};

// Container parsed but its parts disagree (checkpoint tensor list vs config, ...).
struct IntegrityError : Error {
    using Error::Error;
};

// Text input could not be parsed; message carries the line number where known.
struct ParseError : Error {
    using Error::Error;
};

// Manifest/dataset content fails validation (duplicate ids, bad fold, ...).
struct ValidationError : Error {
    using Error::Error;
};

// A referenced file does not exist on disk.
struct ExistenceError : Error {
    using Error::Error;
};

// Training produced a non-finite loss; message reports epoch and step.
struct DivergenceError : Error {
    using Error::Error;
};

// Empty input where at least one element is required.
struct EmptyInputError : Error {
    using Error::Error;
};

} // namespace ate
