#include "icvid/judge.hpp"

#include <cmath>

#include <json.hpp>

#include "icvid/corpus.hpp"
#include "icvid/errors.hpp"
#include "icvid/eval.hpp"
#include "icvid/tensor_io.hpp"

namespace icvid {

using nlohmann::json;

std::string judge_request_encode(const JudgeRequest& req) {
  if (req.criteria.empty())
    throw UsageError("judge request requires a nonempty criteria string");
  const json j{{"ref_path", req.ref_path},
               {"gen_path", req.gen_path},
               {"template", req.template_id},
               {"criteria", req.criteria}};
  return j.dump() + "\n";
}

JudgeRequest judge_request_decode(const std::string& bytes) {
  try {
    const json j = json::parse(bytes);
    JudgeRequest req;
    req.ref_path = j.at("ref_path").get<std::string>();
    req.gen_path = j.at("gen_path").get<std::string>();
    req.template_id = j.at("template").get<std::string>();
    req.criteria = j.at("criteria").get<std::string>();
    if (req.criteria.empty())
      throw ProtocolError("judge request has empty criteria", bytes);
    return req;
  } catch (const json::exception& e) {
    throw ProtocolError("judge request is not valid JSON: " + std::string(e.what()),
                        bytes);
  }
}

std::string judge_response_encode(int score) {
  if (score < 1 || score > 100)
    throw UsageError("judge score must lie in 1..100");
  return "{\"score\": " + std::to_string(score) + "}\n";
}

int judge_response_decode(const std::string& bytes) {
  // Exactly ONE line: an optional single trailing newline, nothing after it,
  // no interior newlines or carriage returns.
  std::string line = bytes;
  if (!line.empty() && line.back() == '\n') line.pop_back();
  if (line.find('\n') != std::string::npos || line.find('\r') != std::string::npos)
    throw ProtocolError("judge response must be exactly one line", bytes);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ProtocolError("judge response is not valid JSON: " + std::string(e.what()),
                        bytes);
  }
  if (!j.is_object() || j.size() != 1 || !j.contains("score"))
    throw ProtocolError("judge response must be exactly {\"score\": int}", bytes);
  const json& s = j.at("score");
  if (!s.is_number_integer() || s.is_number_float())
    throw ProtocolError("judge score must be an integer", bytes);
  const long long v = s.get<long long>();
  if (v < 1 || v > 100)
    throw ProtocolError("judge score " + std::to_string(v) + " outside 1..100",
                        bytes);
  return static_cast<int>(v);
}

std::string CallbackTransport::roundtrip(const std::string& request_bytes) {
  return server_(request_bytes);
}

FilePairTransport::FilePairTransport(std::string request_path,
                                     std::string response_path,
                                     JudgeServer server)
    : request_path_(std::move(request_path)),
      response_path_(std::move(response_path)),
      server_(std::move(server)) {}

std::string FilePairTransport::roundtrip(const std::string& request_bytes) {
  write_text_file(request_path_, request_bytes);
  const std::string landed = read_text_file(request_path_);
  write_text_file(response_path_, server_(landed));
  return read_text_file(response_path_);
}

int judge_score(JudgeTransport& transport, const JudgeRequest& req) {
  return judge_response_decode(transport.roundtrip(judge_request_encode(req)));
}

std::string judge_serve_oracle(const std::string& request_bytes) {
  const JudgeRequest req = judge_request_decode(request_bytes);
  const VideoClip gen = read_vapt<float>(req.gen_path);
  const Subject subject =
      subject_from_json_string(read_text_file(req.gen_path + ".subject.json"));
  const AlignmentResult a = oracle_alignment(gen, subject);
  const int score =
      std::max(1, std::min(100, static_cast<int>(std::lround(a.score))));
  return judge_response_encode(score);
}

}  // namespace icvid
