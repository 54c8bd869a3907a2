#include <cstdlib>
#include <fstream>
#include <sstream>

#include "xvqa/error.hpp"
#include "xvqa/service.hpp"

namespace xvqa {

AgentConfig study_agent_config() {
  AgentConfig c;
  c.attention_temperature = 0.1;
  return c;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int64_t to_int(const std::string& v, const std::string& where) {
  try {
    size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::ConfigError, where + ": expected an integer, got '" + v + "'");
}

double to_double(const std::string& v, const std::string& where) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::ConfigError, where + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::ConfigError, where + ": expected true or false, got '" + v + "'");
}

}  // namespace

ServiceConfig ServiceConfig::parse(std::string_view text) {
  ServiceConfig c;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string::npos) fail(ErrorCode::ConfigError, where + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string v = trim(std::string_view(line).substr(eq + 1));
    const std::string at = where + " (" + key + ")";
    if (key == "listen") c.listen = v;
    else if (key == "dataset") c.dataset = v;
    else if (key == "data_dir") c.data_dir = v;
    else if (key == "static_dir") c.static_dir = v;
    else if (key == "synthetic.seed") c.synthetic_seed = static_cast<uint64_t>(to_int(v, at));
    else if (key == "synthetic.scenes") c.synthetic_scenes = static_cast<int>(to_int(v, at));
    else if (key == "agent.grid") c.agent.grid = static_cast<int>(to_int(v, at));
    else if (key == "agent.dim") c.agent.dim = static_cast<int>(to_int(v, at));
    else if (key == "agent.attention_temperature") c.agent.attention_temperature = to_double(v, at);
    else if (key == "agent.answer_temperature") c.agent.answer_temperature = to_double(v, at);
    else if (key == "agent.alpha") c.agent.alpha = to_double(v, at);
    else if (key == "agent.beta") c.agent.beta = to_double(v, at);
    else if (key == "agent.embedding_seed") c.agent.embedding_seed = static_cast<uint64_t>(to_int(v, at));
    else if (key == "explain.top_k") c.explain.top_k = static_cast<int>(to_int(v, at));
    else if (key == "explain.text_phrases") c.explain.text_phrases = static_cast<int>(to_int(v, at));
    else if (key == "explain.heatmap_max_side") c.explain.heatmap_max_side = static_cast<int>(to_int(v, at));
    else if (key == "session.practice_trials") c.session.practice_trials = static_cast<int>(to_int(v, at));
    else if (key == "session.block_size") c.session.block_size = static_cast<int>(to_int(v, at));
    else if (key == "session.time_limit_s") c.session.time_limit_s = to_int(v, at);
    else if (key == "session.likert_points") c.session.likert_points = static_cast<int>(to_int(v, at));
    else if (key == "session.max_trials") c.session.max_trials = static_cast<int>(to_int(v, at));
    else if (key == "session.explanation_first") c.session.explanation_first = to_bool(v, at);
    else fail(ErrorCode::ConfigError, where + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

void ServiceConfig::apply_env() {
  if (const char* v = std::getenv("XVQA_LISTEN"); v && *v) listen = v;
  if (const char* v = std::getenv("XVQA_DATA_DIR"); v && *v) data_dir = v;
  validate();
}

void ServiceConfig::validate() const {
  agent.validate();
  explain.validate();
  session.validate();
  if (synthetic_scenes < 1) fail(ErrorCode::ConfigError, "synthetic.scenes must be >= 1");
  if (data_dir.empty()) fail(ErrorCode::ConfigError, "data_dir must not be empty");
  (void)port();
}

std::string ServiceConfig::host() const {
  const auto colon = listen.rfind(':');
  return colon == std::string::npos ? std::string("127.0.0.1") : listen.substr(0, colon);
}

int ServiceConfig::port() const {
  const auto colon = listen.rfind(':');
  const std::string p = colon == std::string::npos ? listen : listen.substr(colon + 1);
  const int64_t v = to_int(p, "listen");
  if (v < 0 || v > 65535) fail(ErrorCode::ConfigError, "listen: port out of range");
  return static_cast<int>(v);
}

std::shared_ptr<const StudyContext> make_context(const ServiceConfig& config) {
  Dataset d;
  if (config.dataset.empty()) {
    auto sc = SynthConfig::defaults();
    sc.scenes = config.synthetic_scenes;
    d = generate_synthetic(sc, config.synthetic_seed);
  } else {
    d = load_dataset(config.dataset);
  }
  return std::make_shared<const StudyContext>(d, config.agent, config.explain);
}

}  // namespace xvqa
