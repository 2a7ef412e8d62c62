// SPDX-License-Identifier: Apache-2.0
#include "bdmae/wire.hpp"

#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "bdmae/oracles.hpp"

namespace bdmae::wire {

namespace {

using nlohmann::json;

constexpr int kSodiumVariant = sodium_base64_VARIANT_ORIGINAL;

json parse_object(std::string_view line) {
  json doc = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw ProtocolError("line is not valid JSON");
  if (!doc.is_object()) throw ProtocolError("message is not a JSON object");
  return doc;
}

std::uint64_t read_id(const json& doc) {
  const auto it = doc.find("id");
  if (it == doc.end() || !it->is_number_unsigned()) {
    throw ProtocolError("message lacks an unsigned integer id");
  }
  return it->get<std::uint64_t>();
}

int read_int(const json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end() || !it->is_number_integer()) {
    throw ProtocolError(std::string("field '") + key + "' must be an integer");
  }
  const auto value = it->get<std::int64_t>();
  if (value < INT32_MIN || value > INT32_MAX) {
    throw ProtocolError(std::string("field '") + key + "' out of range");
  }
  return static_cast<int>(value);
}

const std::string& read_string(const json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end() || !it->is_string()) {
    throw ProtocolError(std::string("field '") + key + "' must be a string");
  }
  return it->get_ref<const std::string&>();
}

std::string pixel_message(std::uint64_t id, const char* op, const Image& image,
                          const TokenMask* mask = nullptr) {
  json doc;
  doc["id"] = id;
  if (op != nullptr) {
    doc["op"] = op;
    doc["width"] = image.width();
    doc["height"] = image.height();
  }
  doc["pixels"] = base64_encode(quantize(image));
  if (mask != nullptr) doc["mask"] = mask->to_string();
  return doc.dump();
}

void ensure_sodium() {
  static const int status = sodium_init();
  if (status < 0) throw std::runtime_error("libsodium failed to initialise");
}

}  // namespace

std::vector<std::uint8_t> quantize(const Image& image) {
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::round(image.data()[i] * 255.0);
    bytes[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return bytes;
}

Image dequantize(std::span<const std::uint8_t> bytes, int height, int width) {
  if (height < 1 || width < 1) throw ProtocolError("image dimensions must be positive");
  const std::size_t expected = static_cast<std::size_t>(height) * width * 3;
  if (bytes.size() != expected) {
    throw ProtocolError("pixel payload has " + std::to_string(bytes.size()) +
                        " bytes, expected " + std::to_string(expected));
  }
  Image image(height, width);
  for (std::size_t i = 0; i < expected; ++i) image.data()[i] = bytes[i] / 255.0;
  return image;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  ensure_sodium();
  std::string out(sodium_base64_ENCODED_LEN(bytes.size(), kSodiumVariant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), kSodiumVariant);
  out.pop_back();  // terminating NUL
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  ensure_sodium();
  if (text.size() % 4 != 0) throw ProtocolError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  std::size_t written = 0;
  const char* end = nullptr;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr,
                        &written, &end, kSodiumVariant) != 0 ||
      end != text.data() + text.size()) {
    throw ProtocolError("malformed base64 payload");
  }
  out.resize(written);
  return out;
}

bool Handshake::supports(std::string_view op) const {
  return std::find(ops.begin(), ops.end(), op) != ops.end();
}

std::string encode_handshake(const Handshake& handshake) {
  json doc;
  doc["proto"] = kProtocol;
  doc["ops"] = handshake.ops;
  doc["num_classes"] = handshake.num_classes;
  doc["max_in_flight"] = handshake.max_in_flight;
  return doc.dump();
}

Handshake parse_handshake(std::string_view line) {
  const json doc = parse_object(line);
  if (read_string(doc, "proto") != kProtocol) {
    throw ProtocolError("unsupported protocol '" + read_string(doc, "proto") + "'");
  }
  Handshake h;
  const auto ops = doc.find("ops");
  if (ops == doc.end() || !ops->is_array() || ops->empty()) {
    throw ProtocolError("handshake must list at least one op");
  }
  for (const auto& op : *ops) {
    if (!op.is_string() || (op != "classify" && op != "restore")) {
      throw ProtocolError("handshake lists an unknown op");
    }
    h.ops.push_back(op.get<std::string>());
  }
  h.max_in_flight = read_int(doc, "max_in_flight");
  if (h.max_in_flight < 1) throw ProtocolError("max_in_flight must be >= 1");
  if (h.supports("classify")) {
    h.num_classes = read_int(doc, "num_classes");
    if (h.num_classes < 1) throw ProtocolError("num_classes must be >= 1");
  } else if (doc.contains("num_classes")) {
    h.num_classes = read_int(doc, "num_classes");
  }
  return h;
}

std::string encode_classify(std::uint64_t id, const Image& image) {
  return pixel_message(id, "classify", image);
}

std::string encode_restore(std::uint64_t id, const Image& image224, const TokenMask& mask) {
  if (image224.height() != kRestorerSize || image224.width() != kRestorerSize) {
    throw InvalidArgument("restore requests carry 224x224 images");
  }
  return pixel_message(id, "restore", image224, &mask);
}

Request parse_request(std::string_view line, std::optional<std::uint64_t>* id_out) {
  const json doc = parse_object(line);
  Request req;
  req.id = read_id(doc);
  if (id_out != nullptr) *id_out = req.id;
  const std::string& op = read_string(doc, "op");
  if (op == "classify") {
    req.op = Op::kClassify;
  } else if (op == "restore") {
    req.op = Op::kRestore;
  } else {
    throw ProtocolError("unknown op '" + op + "'");
  }
  const int width = read_int(doc, "width");
  const int height = read_int(doc, "height");
  if (req.op == Op::kRestore && (width != kRestorerSize || height != kRestorerSize)) {
    throw ProtocolError("restore requests must be 224x224");
  }
  req.image = dequantize(base64_decode(read_string(doc, "pixels")), height, width);
  if (req.op == Op::kRestore) {
    try {
      req.mask = TokenMask::from_string(read_string(doc, "mask"));
    } catch (const InvalidArgument& e) {
      throw ProtocolError(std::string("bad mask: ") + e.what());
    }
  }
  return req;
}

std::string encode_label(std::uint64_t id, Label label) {
  json doc;
  doc["id"] = id;
  doc["label"] = label.id;
  return doc.dump();
}

std::string encode_pixels(std::uint64_t id, const Image& image) {
  return pixel_message(id, nullptr, image);
}

std::string encode_error(std::uint64_t id, std::string_view message) {
  json doc;
  doc["id"] = id;
  doc["error"] = message;
  return doc.dump();
}

Response parse_response(std::string_view line) {
  const json doc = parse_object(line);
  Response r;
  r.id = read_id(doc);
  for (const auto& [key, value] : doc.items()) {
    if (key == "id") continue;
    if (key == "label") {
      r.label = read_int(doc, "label");
    } else if (key == "pixels") {
      r.pixels = read_string(doc, "pixels");
    } else if (key == "error") {
      r.error = read_string(doc, "error");
    } else {
      throw ProtocolError("unexpected response field '" + key + "'");
    }
  }
  const int payloads = r.label.has_value() + r.pixels.has_value() + r.error.has_value();
  if (payloads != 1) {
    throw ProtocolError("response must carry exactly one of label, pixels, error");
  }
  return r;
}

}  // namespace bdmae::wire
