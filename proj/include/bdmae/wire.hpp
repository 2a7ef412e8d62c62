// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bdmae/core.hpp"

/// bdmae-oracle/1: newline-delimited JSON between the engine and an oracle
/// process. One JSON object per line, no embedded newlines.
namespace bdmae::wire {

inline constexpr std::string_view kProtocol = "bdmae-oracle/1";

/// 8-bit RGB bytes, row-major: round(p * 255) clamped to [0, 255].
std::vector<std::uint8_t> quantize(const Image& image);
/// Inverse of quantize: byte / 255. Throws ProtocolError on a size mismatch.
Image dequantize(std::span<const std::uint8_t> bytes, int height, int width);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Standard alphabet with padding. Throws ProtocolError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

struct Handshake {
  std::vector<std::string> ops;
  int num_classes = 0;
  int max_in_flight = 1;

  bool supports(std::string_view op) const;
};

enum class Op { kClassify, kRestore };

struct Request {
  std::uint64_t id = 0;
  Op op = Op::kClassify;
  Image image;
  TokenMask mask;  // restore only
};

/// Exactly one of label, pixels or error is set.
struct Response {
  std::uint64_t id = 0;
  std::optional<int> label;
  std::optional<std::string> pixels;  // base64
  std::optional<std::string> error;
};

std::string encode_handshake(const Handshake& handshake);
/// Throws ProtocolError unless the line is a valid bdmae-oracle/1 handshake.
Handshake parse_handshake(std::string_view line);

std::string encode_classify(std::uint64_t id, const Image& image);
std::string encode_restore(std::uint64_t id, const Image& image224, const TokenMask& mask);
/// Server side. Throws ProtocolError on malformed requests; `id_out` receives
/// the request id whenever one could be read, so the error can be answered.
Request parse_request(std::string_view line, std::optional<std::uint64_t>* id_out = nullptr);

std::string encode_label(std::uint64_t id, Label label);
std::string encode_pixels(std::uint64_t id, const Image& image);
std::string encode_error(std::uint64_t id, std::string_view message);
/// Client side. Rejects unknown fields, so a response cannot smuggle
/// confidences past the hard-label contract.
Response parse_response(std::string_view line);

}  // namespace bdmae::wire
