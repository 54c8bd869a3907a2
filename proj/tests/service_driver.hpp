#pragma once

#include <functional>
#include <string>

#include <json.hpp>

#include "xvqa/service.hpp"

namespace xvqa::testing {

using Transport = std::function<ApiResponse(const std::string& method, const std::string& path, const std::string& body)>;

inline Transport in_process(StudyService& svc) {
  return [&svc](const std::string& m, const std::string& p, const std::string& b) { return svc.handle(m, p, b); };
}

struct DriveResult {
  std::string session_id;
  int requests = 0;
  int trials = 0;
  std::string end_reason;
  // Every response received before the matching reveal.
  std::vector<nlohmann::json> pre_reveal;
};

// Plays one session to completion through `call` with fixed, trial-dependent
// choices. Any unexpected status throws std::runtime_error.
inline DriveResult drive_session(const Transport& call, const std::string& group, uint64_t seed, int grid,
                                 bool nested_map = false) {
  using nlohmann::json;
  DriveResult out;
  auto req = [&](const std::string& m, const std::string& p, const json& body, int want) {
    ++out.requests;
    auto r = call(m, p, body.is_null() ? "" : body.dump());
    if (r.status != want)
      throw std::runtime_error(m + " " + p + " -> " + std::to_string(r.status) + " " + r.body.dump());
    return r.body;
  };
  json trial = req("POST", "/api/sessions", {{"group", group}, {"seed", seed}}, 201);
  out.session_id = trial["session_id"].get<std::string>();
  const std::string base = "/api/sessions/" + out.session_id;
  if (!trial.contains("trial")) {
    out.end_reason = "empty";
    return out;
  }
  trial = trial["trial"];
  for (int guard = 0; guard < 100000; ++guard) {
    const int idx = trial["trial_index"].get<int>();
    ++out.trials;
    out.pre_reveal.push_back(trial);
    out.pre_reveal.push_back(req("GET", base + "/trial", nullptr, 200));
    for (;;) {
      const json st = req("GET", base, nullptr, 200);
      const std::string phase = st["phase"];
      if (phase == "await_helpfulness") {
        json ratings = json::object();
        int r = 1;
        for (const auto& m : trial["bundle"]["modes"]) ratings[m.get<std::string>()] = 1 + (idx + r++) % 5;
        out.pre_reveal.push_back(req("POST", base + "/trial/helpfulness", {{"ratings", ratings}}, 200));
      } else if (phase == "await_prediction") {
        req("POST", base + "/trial/prediction", {{"will_be_correct", idx % 3 != 0}, {"confidence", 1 + idx % 5}}, 200);
      } else if (phase == "await_user_attention") {
        json map = json::array();
        for (int y = 0; y < grid; ++y) {
          json row = json::array();
          for (int x = 0; x < grid; ++x) row.push_back((x + y + idx) % 4 == 0 ? 1.0 : 0.0);
          if (nested_map) map.push_back(row);
          else map.insert(map.end(), row.begin(), row.end());
        }
        req("POST", base + "/trial/attention", {{"map", map}}, 200);
      } else if (phase == "await_secondary_prediction") {
        req("POST", base + "/trial/secondary", {{"will_be_correct", idx % 2 == 0}, {"confidence", 2}}, 200);
      } else if (phase == "await_reliance") {
        req("POST", base + "/trial/reliance", {{"reliance", 1 + (idx * 7) % 5}}, 200);
      } else if (phase == "trial_done") {
        break;
      } else {
        throw std::runtime_error("unexpected phase " + phase);
      }
    }
    const json next = req("POST", base + "/trial/advance", nullptr, 200);
    if (next.contains("complete")) {
      out.end_reason = next["reason"];
      return out;
    }
    trial = next;
  }
  throw std::runtime_error("session did not finish");
}

}  // namespace xvqa::testing
