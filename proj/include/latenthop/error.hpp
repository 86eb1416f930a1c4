#pragma once

#include <stdexcept>
#include <string>

namespace latenthop {

/// Weight file, tokenizer file or config could not be read or is inconsistent.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (bad coordinates, bad spec).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Text that the tokenizer vocabulary cannot represent.
class TokenizeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input records (dumps, registries, raw experiment records).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace latenthop
