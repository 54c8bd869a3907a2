#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "xvqa/error.hpp"
#include "xvqa/metrics.hpp"
#include "xvqa/protocol.hpp"
#include "xvqa/service.hpp"
#include "xvqa/sim.hpp"

using namespace xvqa;

namespace {

std::atomic<HttpServer*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

Dataset dataset_or_synthetic(const std::string& path, uint64_t corpus_seed, int scenes) {
  if (!path.empty()) return load_dataset(path);
  auto sc = SynthConfig::defaults();
  sc.scenes = scenes;
  return generate_synthetic(sc, corpus_seed);
}

struct GenerateOpts {
  int scenes = 50;
  uint64_t seed = 7;
  int min_objects = 2;
  int max_objects = 4;
  int questions = 3;
  bool no_masks = false;
  std::string output;
};

int run_generate(const GenerateOpts& o) {
  auto sc = SynthConfig::defaults();
  sc.scenes = o.scenes;
  sc.min_objects = o.min_objects;
  sc.max_objects = o.max_objects;
  sc.questions_per_scene = o.questions;
  sc.masks = !o.no_masks;
  const auto d = generate_synthetic(sc, o.seed);
  save_dataset(d, o.output);
  std::cout << "wrote " << o.output << ": " << d.scenes.size() << " scenes, " << d.questions.size()
            << " questions, dataset " << dataset_id(d) << "\n";
  return 0;
}

struct IngestOpts {
  std::string input;
  std::string output;
  bool filter = false;
};

int run_ingest(const IngestOpts& o) {
  std::vector<std::string> warnings;
  auto d = load_dataset(o.input, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (o.filter) d = filter_questions(std::move(d));
  if (!o.output.empty()) save_dataset(d, o.output);
  std::cout << "ok: " << d.scenes.size() << " scenes, " << d.questions.size() << " questions, "
            << d.answer_vocab.size() << " answers, " << warnings.size() << " warnings, dataset " << dataset_id(d)
            << "\n";
  return 0;
}

struct ServeOpts {
  std::string config;
  std::string listen;
  std::string data_dir;
  std::string dataset;
  std::string static_dir;
};

int run_serve(const ServeOpts& o) {
  ServiceConfig cfg = o.config.empty() ? ServiceConfig{} : ServiceConfig::load(o.config);
  if (!o.dataset.empty()) cfg.dataset = o.dataset;
  if (!o.static_dir.empty()) cfg.static_dir = o.static_dir;
  if (!o.listen.empty()) cfg.listen = o.listen;
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  cfg.apply_env();
  auto ctx = make_context(cfg);
  StudyService service(cfg, ctx);
  const auto rec = service.recover();
  for (const auto& [id, why] : rec.quarantined) std::cerr << "warning: quarantined " << id << ": " << why << "\n";
  HttpServer server(service, cfg.static_dir);
  const int port = server.bind(cfg.host(), cfg.port());
  std::cout << "listening on " << cfg.host() << ":" << port << " (dataset " << ctx->dataset_id << ", "
            << rec.recovered.size() << " sessions recovered)" << std::endl;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
  return 0;
}

struct SimulateOpts {
  std::string dataset;
  uint64_t corpus_seed = 7;
  int corpus_scenes = 50;
  std::vector<std::string> groups;
  std::vector<std::string> policies;
  int subjects = 15;
  int trials = 0;
  uint64_t seed = 1;
  std::string output;
  std::string config;
};

int run_simulate(const SimulateOpts& o) {
  ServiceConfig cfg = o.config.empty() ? ServiceConfig{} : ServiceConfig::load(o.config);
  if (o.subjects < 1) fail(ErrorCode::ConfigError, "--subjects must be >= 1");
  if (o.trials < 0) fail(ErrorCode::ConfigError, "--trials must be >= 0");
  if (!o.policies.empty() && o.policies.size() != 1 && o.policies.size() != o.groups.size())
    fail(ErrorCode::ConfigError, "give one --policy, or one per --group");
  const auto d = dataset_or_synthetic(o.dataset, o.corpus_seed, o.corpus_scenes);
  auto ctx = std::make_shared<const StudyContext>(d, cfg.agent, cfg.explain);

  StudyConfig sc;
  sc.seed = o.seed;
  sc.trials_per_subject = o.trials;
  sc.session = cfg.session;
  for (size_t i = 0; i < o.groups.size(); ++i) {
    CohortSpec c;
    c.group = parse_group(o.groups[i]);
    c.subjects = o.subjects;
    if (o.policies.empty())
      c.policy = SubjectPolicy::parse(c.group == GroupTag::NE ? "prior" : "explanation");
    else
      c.policy = SubjectPolicy::parse(o.policies.size() == 1 ? o.policies[0] : o.policies[i]);
    sc.cohorts.push_back(c);
  }
  const auto logs = run_study(ctx, sc);
  const auto paths = write_logs(o.output, logs);
  size_t events = 0;
  for (const auto& l : logs) events += l.events.size();
  std::cout << "wrote " << paths.size() << " session logs (" << events << " events) to " << o.output << "\n";
  return 0;
}

struct AnalyzeOpts {
  std::string dir;
  bool json = false;
  std::string csv;
  int bins = 5;
};

int run_analyze(const AnalyzeOpts& o) {
  std::vector<TrialOutcome> outcomes;
  const auto report = analyze_directory(o.dir, &outcomes, o.bins);
  if (!o.csv.empty()) write_text(o.csv, outcomes_csv(outcomes));
  if (o.json)
    std::cout << to_json(report).dump(2) << "\n";
  else
    std::cout << summary_text(report);
  return 0;
}

struct DemoOpts {
  std::string dataset;
  uint64_t corpus_seed = 7;
  std::string group = "SP";
  std::string question;
  uint64_t seed = 1;
};

int run_demo(const DemoOpts& o) {
  const auto d = dataset_or_synthetic(o.dataset, o.corpus_seed, 50);
  auto ctx = std::make_shared<const StudyContext>(d, study_agent_config(), ExplainConfig{});
  const auto group = parse_group(o.group);
  const auto& qs = ctx->dataset->questions;
  if (qs.empty()) fail(ErrorCode::InvariantError, "dataset has no eligible questions");
  const Question* q = &qs.front();
  if (!o.question.empty()) {
    auto it = std::find_if(qs.begin(), qs.end(), [&](const Question& x) { return x.id == o.question; });
    if (it == qs.end()) fail(ErrorCode::ReferenceError, "unknown question '" + o.question + "'");
    q = &*it;
  }
  const auto& scene = ctx->dataset->scene_for(*q);
  const auto out = ctx->agent.answer(*q, scene);
  const auto spec = group_spec(group);
  const auto bundle = build_bundle(out, scene, *q, spec.modes, ctx->explain);
  SubjectPolicy pol;
  pol.kind = PolicyKind::ExplanationAware;
  pol.seed = o.seed;
  const double align = spec.modes.empty() ? 0.5 : alignment_score(bundle, scene, *q, out.top_answer());
  nlohmann::json j = {{"group", group_name(group)},
                      {"question", {{"id", q->id}, {"text", join(q->text)}, {"scene", scene.id}}},
                      {"bundle", to_json(bundle, scene)},
                      {"alignment", align},
                      {"prediction", align >= pol.theta},
                      {"reveal",
                       {{"ground_truth", q->answer},
                        {"top5", to_json(out, ctx->agent.vocab())["top5"]},
                        {"system_confidence", out.confidence},
                        {"system_correct", out.top_answer() == q->answer}}}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explainable VQA study workbench", "xvqa"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "xvqa 1.0.0");

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic scene/question dataset");
  g->add_option("--scenes", gen.scenes, "Number of scenes")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--min-objects", gen.min_objects, "Fewest objects per scene")->capture_default_str();
  g->add_option("--max-objects", gen.max_objects, "Most objects per scene")->capture_default_str();
  g->add_option("--questions-per-scene", gen.questions, "Questions per scene")->capture_default_str();
  g->add_flag("--no-masks", gen.no_masks, "Omit segmentation masks");
  g->add_option("-o,--output", gen.output, "Output dataset file")->required();

  IngestOpts ing;
  auto* i = app.add_subcommand("ingest", "Validate a scene-graph dataset and optionally rewrite it canonically");
  i->add_option("input", ing.input, "Dataset JSON file")->required();
  i->add_option("-o,--output", ing.output, "Write the canonical dataset here");
  i->add_flag("--filter", ing.filter, "Drop yes-no and counting questions");

  ServeOpts srv;
  auto* s = app.add_subcommand("serve", "Run the HTTP study service");
  s->add_option("-c,--config", srv.config, "Key-value config file");
  s->add_option("--listen", srv.listen, "host:port (overrides config)");
  s->add_option("--data-dir", srv.data_dir, "Directory for session logs (overrides config)");
  s->add_option("--dataset", srv.dataset, "Dataset file (default: synthetic corpus)");
  s->add_option("--static-dir", srv.static_dir, "Serve a built UI from this directory");

  SimulateOpts sim;
  auto* m = app.add_subcommand("simulate", "Run simulated subjects through full sessions");
  m->add_option("--dataset", sim.dataset, "Dataset file (default: synthetic corpus)");
  m->add_option("--corpus-seed", sim.corpus_seed, "Seed of the default synthetic corpus")->capture_default_str();
  m->add_option("--corpus-scenes", sim.corpus_scenes, "Scenes in the default synthetic corpus")->capture_default_str();
  m->add_option("--group", sim.groups, "Study group: NE, SP, SA, SE, OA, AL (repeatable)")->required();
  m->add_option("--policy", sim.policies,
                "random[:p], prior or explanation[:theta]; one for all groups or one per group "
                "(default: prior for NE, explanation otherwise)");
  m->add_option("--subjects", sim.subjects, "Subjects per group")->capture_default_str();
  m->add_option("--trials", sim.trials, "Trials per subject including practice (0 = all questions)")
      ->capture_default_str();
  m->add_option("--seed", sim.seed, "Study seed")->capture_default_str();
  m->add_option("-c,--config", sim.config, "Key-value config file for agent and session settings");
  m->add_option("-o,--output", sim.output, "Directory for session logs")->required();

  AnalyzeOpts ana;
  auto* a = app.add_subcommand("analyze", "Compute the metrics report from session logs");
  a->add_option("dir", ana.dir, "Directory of .jsonl session logs")->required();
  a->add_flag("--json", ana.json, "Print the JSON report instead of the text summary");
  a->add_option("--csv", ana.csv, "Also write per-trial outcomes as CSV");
  a->add_option("--bins", ana.bins, "Progression bins")->capture_default_str()->check(CLI::PositiveNumber);

  DemoOpts demo;
  auto* dm = app.add_subcommand("demo", "Run one scripted trial and print its explanation bundle");
  dm->add_option("--dataset", demo.dataset, "Dataset file (default: synthetic corpus)");
  dm->add_option("--corpus-seed", demo.corpus_seed, "Seed of the default synthetic corpus")->capture_default_str();
  dm->add_option("--group", demo.group, "Study group whose explanation modes are shown")->capture_default_str();
  dm->add_option("--question", demo.question, "Question id (default: first eligible)");
  dm->add_option("--seed", demo.seed, "Subject seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage_error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*g) return run_generate(gen);
    if (*i) return run_ingest(ing);
    if (*s) return run_serve(srv);
    if (*m) return run_simulate(sim);
    if (*a) return run_analyze(ana);
    if (*dm) return run_demo(demo);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << error_code_name(e.code()) << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal_error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
