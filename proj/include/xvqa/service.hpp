#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xvqa/agent.hpp"
#include "xvqa/error.hpp"
#include "xvqa/events.hpp"
#include "xvqa/explain.hpp"
#include "xvqa/protocol.hpp"

namespace xvqa {

// Agent settings used by studies, the simulator and the service: a sharper
// attention softmax than the library default so heatmaps single out objects.
AgentConfig study_agent_config();

// Key-value text file, one `key = value` per line, `#` starts a comment.
// Keys: listen, dataset, data_dir, static_dir, synthetic.seed,
// synthetic.scenes, agent.grid, agent.dim, agent.attention_temperature,
// agent.answer_temperature, agent.alpha, agent.beta, agent.embedding_seed,
// explain.top_k, explain.text_phrases, explain.heatmap_max_side,
// session.practice_trials, session.block_size, session.time_limit_s,
// session.likert_points, session.max_trials, session.explanation_first.
struct ServiceConfig {
  std::string listen = "127.0.0.1:8080";
  std::filesystem::path dataset;  // empty: generate the synthetic corpus
  uint64_t synthetic_seed = 7;
  int synthetic_scenes = 50;
  std::filesystem::path data_dir = "xvqa-data";
  std::filesystem::path static_dir;
  AgentConfig agent = study_agent_config();
  ExplainConfig explain;
  SessionConfig session;

  // Throws ConfigError naming the line.
  static ServiceConfig parse(std::string_view text);
  static ServiceConfig load(const std::filesystem::path& path);
  // XVQA_LISTEN and XVQA_DATA_DIR override the file.
  void apply_env();
  void validate() const;
  std::string host() const;
  int port() const;
};

// Builds the study context the config describes (loads or generates the
// dataset).
std::shared_ptr<const StudyContext> make_context(const ServiceConfig& config);

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct RecoveryReport {
  std::vector<std::string> recovered;
  std::map<std::string, std::string> quarantined;  // session id -> reason
};

int http_status(ErrorCode code);

// Transport-independent request handling. Each session is guarded by its own
// mutex; events are appended to <data_dir>/sessions/<id>.jsonl before a
// response is produced.
class StudyService {
 public:
  using Clock = std::function<int64_t()>;
  using IdGenerator = std::function<std::string(GroupTag)>;

  StudyService(ServiceConfig config, std::shared_ptr<const StudyContext> ctx, Clock clock = {},
               IdGenerator ids = {});
  ~StudyService();

  // Replays every stored log. Sessions whose log fails to parse or replay are
  // quarantined; the rest resume where they stopped.
  RecoveryReport recover();

  ApiResponse handle(std::string_view method, std::string_view path, std::string_view body);

  std::vector<std::string> session_ids() const;
  std::vector<EventRecord> events_of(const std::string& session_id) const;
  std::filesystem::path log_path(const std::string& session_id) const;
  const ServiceConfig& config() const { return config_; }

 private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& id) const;
  ApiResponse create_session(const nlohmann::json& body);
  ApiResponse session_op(const std::string& id, const std::string& op, std::string_view method,
                         const nlohmann::json& body);
  ApiResponse summary() const;

  ServiceConfig config_;
  std::shared_ptr<const StudyContext> ctx_;
  Clock clock_;
  IdGenerator ids_;
  mutable std::shared_mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

// HTTP/1.1 front end over a StudyService.
class HttpServer {
 public:
  HttpServer(StudyService& service, std::filesystem::path static_dir = {});
  ~HttpServer();

  // Port 0 picks a free port. Returns the bound port; throws IoError.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace xvqa
