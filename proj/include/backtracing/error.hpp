#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace backtracing {

// Every failure raised by the library derives from Error. The kind string is
// stable and doubles as the wire-level error kind where one exists.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class EmptyDocument : public Error {
public:
    EmptyDocument() : Error("empty_document", "document text is empty") {}
};

class ParseError : public Error {
public:
    ParseError(std::string source, std::size_t line, const std::string& what)
        : Error("parse_error", source + ":" + std::to_string(line) + ": " + what),
          source_(std::move(source)), line_(line) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string source_;
    std::size_t line_;
};

class ValidationError : public Error {
public:
    ValidationError(std::string example_id, std::vector<std::string> diagnostics)
        : Error("validation_error", format(example_id, diagnostics)),
          example_id_(std::move(example_id)), diagnostics_(std::move(diagnostics)) {}

    const std::string& example_id() const noexcept { return example_id_; }
    const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

private:
    static std::string format(const std::string& id, const std::vector<std::string>& diags) {
        std::string out = "example '" + id + "' is invalid:";
        for (const auto& d : diags) out += " [" + d + "]";
        return out;
    }

    std::string example_id_;
    std::vector<std::string> diagnostics_;
};

class EmptyContext : public Error {
public:
    EmptyContext() : Error("empty_context", "context range is empty after omission") {}
};

class MissingEmotion : public Error {
public:
    MissingEmotion() : Error("missing_emotion", "conversation query has no emotion label") {}
};

// Judge output could not be turned into at least one valid pick.
class JudgeParseFailure : public Error {
public:
    JudgeParseFailure(std::string reason, std::string raw)
        : Error("parse_failure", "judge answer unparsable: " + reason),
          reason_(std::move(reason)), raw_(std::move(raw)) {}

    const std::string& reason() const noexcept { return reason_; }
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string reason_;
    std::string raw_;
};

class EmptyReport : public Error {
public:
    EmptyReport() : Error("empty_report", "no results to aggregate") {}
};

// Protocol-level failures.

// Transport could not reach the model server; retryable.
class Unavailable : public Error {
public:
    explicit Unavailable(const std::string& message) : Error("unavailable", message) {}
};

// The server answered with something that breaks the wire contract; fatal.
class ProtocolViolation : public Error {
public:
    explicit ProtocolViolation(const std::string& message)
        : Error("protocol_violation", message) {}
};

class WindowOverflow : public Error {
public:
    WindowOverflow(std::size_t needed, std::size_t window)
        : Error("window_overflow", "request needs " + std::to_string(needed) +
                                       " tokens, window is " + std::to_string(window)),
          needed_(needed), window_(window) {}

    std::size_t needed() const noexcept { return needed_; }
    std::size_t window() const noexcept { return window_; }

private:
    std::size_t needed_;
    std::size_t window_;
};

// Server-reported error that is neither overflow nor transport.
class ServerError : public Error {
public:
    ServerError(std::string kind, const std::string& message) : Error(std::move(kind), message) {}
};

// Scorer-level failures seen by the runner.

// A neural scorer could not get its model responses; the example is skipped.
class ScorerUnavailable : public Error {
public:
    explicit ScorerUnavailable(const std::string& message)
        : Error("scorer_unavailable", message) {}
};

// A scorer got responses but could not produce a ranking; counted as a miss.
class ScorerFailed : public Error {
public:
    explicit ScorerFailed(const std::string& message) : Error("scorer_failed", message) {}
};

}  // namespace backtracing
