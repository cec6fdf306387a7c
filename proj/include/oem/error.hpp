#pragma once

#include <stdexcept>
#include <string>

namespace oem {

// Precondition violations: bad shapes, empty inputs, parameters outside
// their documented ranges.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A parameter vector outside the natural domain of its family.
class InvalidParameter : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// A model whose structural invariants do not hold (e.g. a non-absorbing chain
// passed where expected usages are needed).
class InvalidModel : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

// Non-finite densities, singular systems, loss of positive definiteness.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Rethrows the in-flight exception with `context` prepended, preserving its
// category. Must be called from inside a catch block.
[[noreturn]] inline void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const InvalidParameter& e) {
        throw InvalidParameter(context + ": " + e.what());
    } catch (const InvalidModel& e) {
        throw InvalidModel(context + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(context + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(context + ": " + e.what());
    } catch (const ParseError& e) {
        throw ParseError(context + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(context + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(context + ": " + e.what());
    }
}

}  // namespace oem
