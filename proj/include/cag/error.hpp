// Copyright 2026 The CAG Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cag {

enum class ErrorCode {
    InvalidArgument,
    ZeroVector,
    DimensionMismatch,
    EmptyCorpus,
    ParseError,
    MissingEmbedding,
    DuplicateId,
    ReferentialIntegrity,
    InsufficientSamples,
    EmptySamples,
    UnfittedIndex,
    IoError,
    CorruptIndex,
    VersionUnsupported,
    FingerprintMismatch,
    TransformerFailure,
    TemplateError,
    AuthError,
    TimeoutError,
    ProviderError,
    InconsistentDim,
    MalformedResponse,
    InfeasibleSpec,
    EmptyQuerySet,
    BindError,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::MissingEmbedding: return "MissingEmbedding";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::ReferentialIntegrity: return "ReferentialIntegrity";
        case ErrorCode::InsufficientSamples: return "InsufficientSamples";
        case ErrorCode::EmptySamples: return "EmptySamples";
        case ErrorCode::UnfittedIndex: return "UnfittedIndex";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::CorruptIndex: return "CorruptIndex";
        case ErrorCode::VersionUnsupported: return "VersionUnsupported";
        case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
        case ErrorCode::TransformerFailure: return "TransformerFailure";
        case ErrorCode::TemplateError: return "TemplateError";
        case ErrorCode::AuthError: return "AuthError";
        case ErrorCode::TimeoutError: return "TimeoutError";
        case ErrorCode::ProviderError: return "ProviderError";
        case ErrorCode::InconsistentDim: return "InconsistentDim";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
        case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
        case ErrorCode::EmptyQuerySet: return "EmptyQuerySet";
        case ErrorCode::BindError: return "BindError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code so
/// callers (the CLI exit-code mapping, the HTTP status mapping) can dispatch
/// without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace cag
