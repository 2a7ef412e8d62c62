// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include "bdmae/oracles.hpp"
#include "bdmae/wire.hpp"

namespace bdmae {

/// Where an external oracle lives.
struct OracleEndpoint {
  enum class Transport { kStdio, kTcp };

  Transport transport = Transport::kStdio;
  std::string command;  // stdio: run through /bin/sh -c
  std::string host;     // tcp
  int port = 0;         // tcp
  int timeout_ms = 30000;

  /// Parses "exec:<command>" or "tcp:<host>:<port>"; the timeout comes from
  /// `timeout_ms`. Throws InvalidArgument on anything else.
  static OracleEndpoint parse(std::string_view spec, int timeout_ms);
  void validate() const;
};

/// Timeout from BDMAE_ORACLE_TIMEOUT_MS, or 30000 when unset. Throws
/// InvalidArgument if the variable is not a positive integer.
int oracle_timeout_from_env();

/// One connection to an oracle process. Requests from any number of threads
/// are multiplexed by id; at most `max_in_flight` (from the handshake) are
/// outstanding at once and responses may arrive in any order.
///
/// Failure modes: a request unanswered within the timeout throws
/// OracleTimeout; an error response throws OracleError; a malformed line
/// poisons the connection and every pending or later request throws
/// ProtocolError.
class OracleConnection {
 public:
  /// Connects (spawning the process for stdio) and waits for the handshake.
  static std::shared_ptr<OracleConnection> open(const OracleEndpoint& endpoint);

  virtual ~OracleConnection() = default;
  virtual const wire::Handshake& handshake() const = 0;
  /// Sends the encoded request for a fresh id and waits for its response.
  /// `encode` receives the id.
  virtual wire::Response call(const std::function<std::string(std::uint64_t)>& encode) = 0;
};

class ExternalClassifier : public Classifier {
 public:
  /// Throws OracleError if the server does not offer classify.
  explicit ExternalClassifier(std::shared_ptr<OracleConnection> connection);
  int num_classes() const override;
  /// Throws ProtocolError on a label outside [0, num_classes).
  Label classify(const Image& image) const override;

 private:
  std::shared_ptr<OracleConnection> connection_;
};

class ExternalRestorer : public Restorer {
 public:
  /// Throws OracleError if the server does not offer restore.
  explicit ExternalRestorer(std::shared_ptr<OracleConnection> connection);
  /// The image crosses the wire as 8-bit RGB. Throws ProtocolError unless
  /// the response decodes to a 224x224 image.
  Image restore(const Image& image224, const TokenMask& mask) const override;

 private:
  std::shared_ptr<OracleConnection> connection_;
};

}  // namespace bdmae
