#pragma once

#include <functional>
#include <string>

namespace icvid {

// External-judge wire protocol. The request is a single JSON object naming
// the two video files plus free-text evaluation rules; the response is
// exactly ONE line of JSON holding an integer score in 1..100:
//   {"score": 73}
// Anything else - extra lines, missing or extra keys, non-integer or
// out-of-range scores, trailing garbage - is a ProtocolError that retains
// the raw payload.

struct JudgeRequest {
  std::string ref_path;     // reference video (the semantic to imitate)
  std::string gen_path;     // generated video under test
  std::string template_id;  // evaluation template identifier
  std::string criteria;     // per-semantic success checklist, carried opaquely
};

std::string judge_request_encode(const JudgeRequest& req);
JudgeRequest judge_request_decode(const std::string& bytes);

std::string judge_response_encode(int score);
int judge_response_decode(const std::string& bytes);

// Synchronous byte-stream transport: one request in, one response out.
class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  virtual std::string roundtrip(const std::string& request_bytes) = 0;
};

using JudgeServer = std::function<std::string(const std::string&)>;

// In-process handoff (local-socket stand-in).
class CallbackTransport : public JudgeTransport {
 public:
  explicit CallbackTransport(JudgeServer server) : server_(std::move(server)) {}
  std::string roundtrip(const std::string& request_bytes) override;

 private:
  JudgeServer server_;
};

// File-pair handoff: the request bytes land in `request_path`, the server is
// pumped once, and the response is read back from `response_path`. Both
// sides of the exchange genuinely transit the filesystem.
class FilePairTransport : public JudgeTransport {
 public:
  FilePairTransport(std::string request_path, std::string response_path,
                    JudgeServer server);
  std::string roundtrip(const std::string& request_bytes) override;

 private:
  std::string request_path_, response_path_;
  JudgeServer server_;
};

// Client: encodes the request, runs the transport, strictly decodes the
// response.
int judge_score(JudgeTransport& transport, const JudgeRequest& req);

// Oracle-backed stand-in for the external judge. Loads the generated video
// from gen_path, the target subject from "<gen_path>.subject.json", scores
// with the rendering oracle, and answers on the wire (score floored at 1,
// the protocol minimum).
std::string judge_serve_oracle(const std::string& request_bytes);

}  // namespace icvid
