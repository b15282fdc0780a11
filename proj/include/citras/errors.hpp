#pragma once

#include <stdexcept>
#include <string>

namespace citras {

// Base of every error raised by the library. Subclasses carry the failing
// contract so callers (notably the CLI) can map them to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class DegenerateMaskError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class DeterminismError : public Error { using Error::Error; };

class ManifestError : public Error { using Error::Error; };
class IngestionError : public Error { using Error::Error; };
class SplitError : public Error { using Error::Error; };
class DivisibilityError : public Error { using Error::Error; };
class AlignmentError : public Error { using Error::Error; };

class ConfigError : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };
class UnsupportedError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

}  // namespace citras
