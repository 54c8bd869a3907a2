#include "xvqa/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include <httplib.h>

#include "xvqa/error.hpp"
#include "xvqa/metrics.hpp"
#include "xvqa/util.hpp"

namespace xvqa {

namespace fs = std::filesystem;
using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::PhaseError:
    case ErrorCode::SessionComplete:
    case ErrorCode::Quarantined:
      return 409;
    case ErrorCode::RangeError:
    case ErrorCode::ShapeError:
    case ErrorCode::BoundsError:
    case ErrorCode::UnknownMode:
    case ErrorCode::ConfigError:
      return 422;
    case ErrorCode::UnknownSession:
      return 404;
    case ErrorCode::ParseError:
      return 400;
    default:
      return 500;
  }
}

struct StudyService::Entry {
  std::mutex mu;
  std::optional<Session> session;
  std::unique_ptr<EventLogWriter> writer;
  std::string quarantine_reason;
  size_t persisted = 0;

  // Appends events not yet on disk. Must hold `mu`.
  void persist() {
    const auto& ev = session->events();
    if (persisted == ev.size()) return;
    writer->append(std::span(ev).subspan(persisted));
    persisted = ev.size();
  }
};

namespace {

int64_t system_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

StudyService::IdGenerator random_ids() {
  auto rng = std::make_shared<SplitMix64>((static_cast<uint64_t>(std::random_device{}()) << 32) ^
                                          static_cast<uint64_t>(system_now_ms()));
  auto mu = std::make_shared<std::mutex>();
  return [rng, mu](GroupTag g) {
    std::lock_guard lock(*mu);
    return std::string(group_name(g)) + "-" + hex64(rng->next()).substr(0, 10);
  };
}

ApiResponse error_response(const Error& e, std::optional<Phase> phase = std::nullopt) {
  json body = {{"code", error_code_name(e.code())}, {"message", e.what()}};
  if (phase) body["phase"] = phase_name(*phase);
  return {http_status(e.code()), body};
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const size_t j = path.find('/', i);
    const size_t end = j == std::string_view::npos ? path.size() : j;
    if (end > i) parts.emplace_back(path.substr(i, end - i));
    i = end;
  }
  return parts;
}

const json& field(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key))
    fail(ErrorCode::ParseError, std::string("request body needs field '") + key + "'");
  return body.at(key);
}

bool bool_field(const json& body, const char* key) {
  const auto& v = field(body, key);
  if (!v.is_boolean()) fail(ErrorCode::ParseError, std::string("field '") + key + "' must be a boolean");
  return v.get<bool>();
}

int int_field(const json& body, const char* key) {
  const auto& v = field(body, key);
  if (!v.is_number_integer()) fail(ErrorCode::ParseError, std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

std::map<Mode, int> ratings_field(const json& body) {
  const auto& r = field(body, "ratings");
  if (!r.is_object()) fail(ErrorCode::ParseError, "field 'ratings' must be an object");
  std::map<Mode, int> out;
  for (auto it = r.begin(); it != r.end(); ++it) {
    if (!it.value().is_number_integer()) fail(ErrorCode::ParseError, "ratings must be integers");
    out[parse_mode(it.key())] = it.value().get<int>();
  }
  return out;
}

AttentionMap map_field(const json& body) {
  const auto& m = field(body, "map");
  if (!m.is_array()) fail(ErrorCode::ParseError, "field 'map' must be an array");
  AttentionMap out;
  out.kind = MapKind::User;
  auto number = [](const json& v) {
    if (!v.is_number()) fail(ErrorCode::ParseError, "attention entries must be numbers");
    return v.get<double>();
  };
  if (!m.empty() && m.front().is_array()) {
    out.grid = static_cast<int>(m.size());
    for (const auto& row : m) {
      if (!row.is_array() || row.size() != m.size()) fail(ErrorCode::ShapeError, "attention map must be square");
      for (const auto& v : row) out.weights.push_back(number(v));
    }
  } else {
    for (const auto& v : m) out.weights.push_back(number(v));
    const auto g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(out.weights.size()))));
    if (static_cast<size_t>(g) * static_cast<size_t>(g) != out.weights.size())
      fail(ErrorCode::ShapeError, "flat attention map length must be a perfect square");
    out.grid = g;
  }
  return out;
}

}  // namespace

StudyService::StudyService(ServiceConfig config, std::shared_ptr<const StudyContext> ctx, Clock clock,
                           IdGenerator ids)
    : config_(std::move(config)), ctx_(std::move(ctx)), clock_(std::move(clock)), ids_(std::move(ids)) {
  if (!clock_) clock_ = system_now_ms;
  if (!ids_) ids_ = random_ids();
  std::error_code ec;
  fs::create_directories(config_.data_dir / "sessions", ec);
  if (ec) fail(ErrorCode::IoError, "cannot create data directory " + config_.data_dir.string() + ": " + ec.message());
}

StudyService::~StudyService() = default;

fs::path StudyService::log_path(const std::string& session_id) const {
  return config_.data_dir / "sessions" / (session_id + ".jsonl");
}

RecoveryReport StudyService::recover() {
  RecoveryReport report;
  std::vector<fs::path> logs;
  for (const auto& entry : fs::directory_iterator(config_.data_dir / "sessions"))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") logs.push_back(entry.path());
  std::sort(logs.begin(), logs.end());
  std::unique_lock lock(registry_mu_);
  for (const auto& path : logs) {
    const std::string id = path.stem().string();
    auto e = std::make_shared<Entry>();
    try {
      const auto events = read_event_log(path);
      if (events.empty()) fail(ErrorCode::ReplayError, "empty log");
      if (events.front().session_id != id) fail(ErrorCode::ReplayError, "log belongs to " + events.front().session_id);
      e->session = replay(events, ctx_);
      e->persisted = events.size();
      e->writer = std::make_unique<EventLogWriter>(path);
      report.recovered.push_back(id);
    } catch (const Error& ex) {
      e->session.reset();
      e->quarantine_reason = ex.what();
      report.quarantined[id] = ex.what();
    }
    sessions_[id] = std::move(e);
  }
  return report;
}

std::shared_ptr<StudyService::Entry> StudyService::find(const std::string& id) const {
  std::shared_lock lock(registry_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, "unknown session '" + id + "'");
  return it->second;
}

std::vector<std::string> StudyService::session_ids() const {
  std::shared_lock lock(registry_mu_);
  std::vector<std::string> ids;
  for (const auto& [id, e] : sessions_) ids.push_back(id);
  return ids;
}

std::vector<EventRecord> StudyService::events_of(const std::string& session_id) const {
  auto e = find(session_id);
  std::lock_guard lock(e->mu);
  if (!e->session) return {};
  return e->session->events();
}

ApiResponse StudyService::handle(std::string_view method, std::string_view path, std::string_view body_text) {
  try {
    json body = json::object();
    if (method == "POST" && body_text.find_first_not_of(" \t\r\n") != std::string_view::npos) {
      try {
        body = json::parse(body_text);
      } catch (const json::parse_error& ex) {
        fail(ErrorCode::ParseError, std::string("malformed JSON body: ") + ex.what());
      }
    }
    const auto parts = split_path(path);
    const auto not_allowed = [&] {
      return ApiResponse{405, {{"code", "method_not_allowed"}, {"message", std::string(method) + " " + std::string(path)}}};
    };
    if (parts.size() >= 2 && parts[0] == "api") {
      if (parts[1] == "health" && parts.size() == 2) {
        if (method != "GET") return not_allowed();
        return {200, {{"ok", true}, {"dataset_id", ctx_->dataset_id}}};
      }
      if (parts[1] == "reports" && parts.size() == 3 && parts[2] == "summary") {
        if (method != "GET") return not_allowed();
        return summary();
      }
      if (parts[1] == "sessions") {
        if (parts.size() == 2) {
          if (method != "POST") return not_allowed();
          return create_session(body);
        }
        if (parts.size() == 3) {
          if (method != "GET") return not_allowed();
          return session_op(parts[2], "state", method, body);
        }
        if (parts.size() >= 4 && parts[3] == "trial") {
          const std::string op = parts.size() == 4 ? "trial" : parts.size() == 5 ? parts[4] : "";
          return session_op(parts[2], op, method, body);
        }
      }
    }
    return {404, {{"code", "not_found"}, {"message", "no route for " + std::string(path)}}};
  } catch (const Error& e) {
    return error_response(e);
  } catch (const std::exception& e) {
    return {500, {{"code", "internal_error"}, {"message", e.what()}}};
  }
}

ApiResponse StudyService::create_session(const json& body) {
  const GroupTag group = [&] {
    const auto& g = field(body, "group");
    if (!g.is_string()) fail(ErrorCode::ParseError, "field 'group' must be a string");
    return parse_group(g.get<std::string>());
  }();
  auto e = std::make_shared<Entry>();
  std::string id;
  {
    std::unique_lock lock(registry_mu_);
    for (int attempt = 0;; ++attempt) {
      id = ids_(group);
      if (!sessions_.count(id) && !fs::exists(log_path(id))) break;
      if (attempt > 100) fail(ErrorCode::InvariantError, "could not allocate a unique session id");
    }
    sessions_[id] = e;
  }
  std::lock_guard lock(e->mu);
  try {
    SessionConfig sc = config_.session;
    sc.group = group;
    sc.dataset_id = ctx_->dataset_id;
    if (body.contains("seed")) {
      if (!body["seed"].is_number_unsigned()) fail(ErrorCode::ParseError, "field 'seed' must be a non-negative integer");
      sc.seed = body["seed"].get<uint64_t>();
    } else {
      sc.seed = fnv1a64(id);
    }
    const int64_t now = clock_();
    e->session = Session::create(ctx_, id, sc, now);
    e->writer = std::make_unique<EventLogWriter>(log_path(id));
    auto view = e->session->start_trial(now);
    e->persist();
    json out = {{"session_id", id}, {"group", group_name(group)}, {"total_trials", e->session->state().total_trials}};
    if (view) out["trial"] = to_json(*view);
    else out["complete"] = true;
    return {201, out};
  } catch (...) {
    if (e->writer && e->session) e->persist();
    if (!e->session) {
      std::unique_lock lock(registry_mu_);
      sessions_.erase(id);
    }
    throw;
  }
}

ApiResponse StudyService::session_op(const std::string& id, const std::string& op, std::string_view method,
                                     const json& body) {
  auto e = find(id);
  std::lock_guard lock(e->mu);
  if (!e->session)
    return error_response(Error(ErrorCode::Quarantined, "session '" + id + "' is quarantined: " + e->quarantine_reason));
  Session& s = *e->session;
  const bool get = method == "GET";
  const bool post = method == "POST";
  const int64_t now = clock_();
  try {
    ApiResponse r;
    if (op == "state" && get) {
      const auto& st = s.state();
      r.body = {{"session_id", st.id},
                {"group", group_name(st.config.group)},
                {"phase", phase_name(st.phase)},
                {"cursor", st.cursor},
                {"total_trials", st.total_trials},
                {"complete", s.complete()},
                {"elapsed_ms", st.elapsed_ms()},
                {"events", st.next_seq}};
      if (!st.end_reason.empty()) r.body["end_reason"] = st.end_reason;
    } else if (op == "trial" && get) {
      r.body = to_json(s.trial_view());
    } else if (op == "reveal" && get) {
      r.body = to_json(s.reveal_view());
    } else if (op == "helpfulness" && post) {
      s.submit_helpfulness(ratings_field(body), now);
      r.body = {{"phase", phase_name(s.state().phase)}};
    } else if (op == "prediction" && post) {
      r.body = to_json(s.submit_prediction(bool_field(body, "will_be_correct"), int_field(body, "confidence"), now));
    } else if (op == "attention" && post) {
      r.body = to_json(s.submit_user_attention(map_field(body), now));
    } else if (op == "secondary" && post) {
      r.body = to_json(
          s.submit_secondary_prediction(bool_field(body, "will_be_correct"), int_field(body, "confidence"), now));
    } else if (op == "reliance" && post) {
      s.submit_reliance(int_field(body, "reliance"), now);
      r.body = {{"phase", phase_name(s.state().phase)}};
    } else if (op == "advance" && post) {
      auto view = s.start_trial(now);
      r.body = view ? to_json(*view) : json{{"complete", true}, {"reason", s.state().end_reason}};
    } else if (op == "trial" || op == "reveal" || op == "helpfulness" || op == "prediction" || op == "attention" ||
               op == "secondary" || op == "reliance" || op == "advance" || op == "state") {
      return {405, {{"code", "method_not_allowed"}, {"message", std::string(method) + " " + op}}};
    } else {
      return {404, {{"code", "not_found"}, {"message", "unknown trial operation '" + op + "'"}}};
    }
    e->persist();
    return r;
  } catch (const Error& ex) {
    e->persist();
    return error_response(ex, s.state().phase);
  }
}

ApiResponse StudyService::summary() const {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::shared_lock lock(registry_mu_);
    for (const auto& [id, e] : sessions_) entries.push_back(e);
  }
  std::vector<TrialOutcome> all;
  int64_t sessions = 0;
  for (const auto& e : entries) {
    std::lock_guard lock(e->mu);
    if (!e->session) continue;
    ++sessions;
    auto o = extract_outcomes(e->session->events());
    all.insert(all.end(), o.begin(), o.end());
  }
  return {200, to_json(build_report(all, sessions))};
}

struct HttpServer::Impl {
  StudyService& service;
  httplib::Server server;

  explicit Impl(StudyService& s) : service(s) {}
};

HttpServer::HttpServer(StudyService& service, fs::path static_dir) : impl_(std::make_unique<Impl>(service)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = impl_->service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  impl_->server.Get(R"(/api/.*)", handler);
  impl_->server.Post(R"(/api/.*)", handler);
  if (!static_dir.empty() && !impl_->server.set_mount_point("/", static_dir.string()))
    fail(ErrorCode::ConfigError, "static_dir " + static_dir.string() + " is not a directory");
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) fail(ErrorCode::IoError, "cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port))
    fail(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace xvqa
