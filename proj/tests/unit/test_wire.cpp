// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "bdmae/oracles.hpp"
#include "bdmae/wire.hpp"
#include "reference.hpp"

namespace bdmae {
namespace {

TEST(Quantize, RoundsAndClamps) {
  Image img(1, 2);
  const double values[] = {0.0, 1.0, 0.5, 0.499 / 255, 1.5 / 255, -0.2};
  for (int i = 0; i < 6; ++i) img.data()[i] = values[i];
  const auto bytes = wire::quantize(img);
  EXPECT_EQ(bytes, (std::vector<std::uint8_t>{0, 255, 128, 0, 2, 0}));
}

TEST(Quantize, DequantizeInverts8BitValues) {
  std::vector<std::uint8_t> bytes(14 * 14 * 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(i * 7);
  const Image img = wire::dequantize(bytes, 14, 14);
  EXPECT_EQ(wire::quantize(img), bytes);
  EXPECT_THROW(wire::dequantize(bytes, 14, 15), ProtocolError);
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  auto enc = [](std::string s) {
    return wire::base64_encode(std::vector<std::uint8_t>(s.begin(), s.end()));
  };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("f"), "Zg==");
  EXPECT_EQ(enc("fo"), "Zm8=");
  EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
  std::mt19937 rng(1);
  for (int n = 0; n < 100; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(wire::base64_decode(wire::base64_encode(bytes)), bytes);
  }
}

TEST(Base64, RejectsMalformedText) {
  for (const char* bad : {"Zg=", "Zg===", "Z!==", "Zm9v\n", "Zm9vY", "====", "Zm9v Ym"}) {
    EXPECT_THROW(wire::base64_decode(bad), ProtocolError) << bad;
  }
}

TEST(Handshake, RoundTripAndValidation) {
  const wire::Handshake h{{"classify", "restore"}, 10, 4};
  const auto back = wire::parse_handshake(wire::encode_handshake(h));
  EXPECT_EQ(back.ops, h.ops);
  EXPECT_EQ(back.num_classes, 10);
  EXPECT_EQ(back.max_in_flight, 4);
  EXPECT_TRUE(back.supports("restore"));
  EXPECT_FALSE(back.supports("explain"));
  for (const char* bad : {
           R"({"proto":"bdmae-oracle/2","ops":["classify"],"num_classes":2,"max_in_flight":1})",
           R"({"proto":"bdmae-oracle/1","ops":[],"num_classes":2,"max_in_flight":1})",
           R"({"proto":"bdmae-oracle/1","ops":["dance"],"num_classes":2,"max_in_flight":1})",
           R"({"proto":"bdmae-oracle/1","ops":["classify"],"num_classes":0,"max_in_flight":1})",
           R"({"proto":"bdmae-oracle/1","ops":["classify"],"num_classes":2,"max_in_flight":0})",
           "not json"}) {
    EXPECT_THROW(wire::parse_handshake(bad), ProtocolError) << bad;
  }
  // A restore-only server need not declare classes.
  EXPECT_NO_THROW(wire::parse_handshake(
      R"({"proto":"bdmae-oracle/1","ops":["restore"],"num_classes":0,"max_in_flight":1})"));
}

TEST(Requests, ClassifyAndRestoreRoundTrip) {
  Image img = testing::random_image(1, 20, 30);
  img = wire::dequantize(wire::quantize(img), 20, 30);
  const auto c = wire::parse_request(wire::encode_classify(7, img));
  EXPECT_EQ(c.id, 7u);
  EXPECT_EQ(c.op, wire::Op::kClassify);
  EXPECT_EQ(c.image, img);

  Image big = wire::dequantize(wire::quantize(testing::random_image(2, 224, 224)), 224, 224);
  TokenMask m;
  m.set(3);
  m.set(190);
  const auto r = wire::parse_request(wire::encode_restore(8, big, m));
  EXPECT_EQ(r.op, wire::Op::kRestore);
  EXPECT_EQ(r.mask, m);
  EXPECT_EQ(r.image, big);
  EXPECT_THROW(wire::encode_restore(9, img, m), InvalidArgument);
}

TEST(Requests, MalformedRequestsReportTheirId) {
  std::optional<std::uint64_t> id;
  EXPECT_THROW(wire::parse_request(R"({"id":5,"op":"dance"})", &id), ProtocolError);
  EXPECT_EQ(id, 5u);
  EXPECT_THROW(
      wire::parse_request(R"({"id":6,"op":"classify","width":1,"height":1,"pixels":"AAA"})", &id),
      ProtocolError);
  EXPECT_EQ(id, 6u);
}

TEST(Responses, ExactlyOnePayload) {
  EXPECT_EQ(wire::parse_response(wire::encode_label(3, Label{2})).label, 2);
  EXPECT_EQ(wire::parse_response(wire::encode_error(4, "nope")).error, "nope");
  const Image img(224, 224, 0.5);
  const auto p = wire::parse_response(wire::encode_pixels(5, img));
  ASSERT_TRUE(p.pixels.has_value());
  EXPECT_EQ(wire::base64_decode(*p.pixels), wire::quantize(img));
  EXPECT_THROW(wire::parse_response(R"({"id":1})"), ProtocolError);
  EXPECT_THROW(wire::parse_response(R"({"id":1,"label":1,"error":"x"})"), ProtocolError);
}

TEST(Responses, HardLabelContractRejectsExtraFields) {
  EXPECT_THROW(wire::parse_response(R"({"id":1,"label":1,"confidence":0.93})"), ProtocolError);
  EXPECT_THROW(wire::parse_response(R"({"id":1,"label":1,"logits":[1,2]})"), ProtocolError);
  EXPECT_THROW(wire::parse_response(R"({"id":1,"label":1.5})"), ProtocolError);
  EXPECT_THROW(wire::parse_response(R"({"id":-1,"label":1})"), ProtocolError);
}

TEST(Responses, FuzzedLinesNeverCrash) {
  // Random mutations of valid lines must either parse or throw ProtocolError.
  std::mt19937 rng(99);
  const std::vector<std::string> seeds = {
      wire::encode_label(1, Label{3}), wire::encode_error(2, "bad"),
      wire::encode_pixels(3, Image(14, 14, 0.25)),
      wire::encode_handshake({{"classify"}, 3, 2})};
  int parsed = 0;
  for (int i = 0; i < 5000; ++i) {
    std::string line = seeds[rng() % seeds.size()];
    const int edits = 1 + static_cast<int>(rng() % 4);
    for (int e = 0; e < edits && !line.empty(); ++e) {
      const std::size_t pos = rng() % line.size();
      switch (rng() % 3) {
        case 0: line[pos] = static_cast<char>(rng() % 128); break;
        case 1: line.erase(pos, 1); break;
        default: line.insert(pos, 1, "{}[]\":,0a"[rng() % 9]); break;
      }
    }
    try {
      wire::parse_response(line);
      ++parsed;
    } catch (const ProtocolError&) {
    }
    try {
      wire::parse_request(line);
    } catch (const ProtocolError&) {
    }
    try {
      wire::parse_handshake(line);
    } catch (const ProtocolError&) {
    }
  }
  EXPECT_GT(parsed, 0);
}

}  // namespace
}  // namespace bdmae
