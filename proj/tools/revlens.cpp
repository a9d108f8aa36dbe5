#include <csignal>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "revlens/service.hpp"

namespace {

using revlens::pipeline::Stage;

struct Common {
  std::string config;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output root; runs land in <out>/run-<config hash>")->capture_default_str();
}

int run_stages(const Common& c, const std::set<Stage>& stages) {
  auto cfg = revlens::load_config(c.config);
  revlens::pipeline::RunOptions ro;
  ro.out_root = c.out;
  ro.progress = [](Stage s, double f) {
    std::cerr << "[" << static_cast<int>(f * 100 + 0.5) << "%] " << revlens::pipeline::to_string(s) << " done\n";
  };
  auto res = revlens::pipeline::run_pipeline(cfg, stages, ro);
  nlohmann::json summary{{"run_dir", res.dir.string()}, {"stages", res.bundle.stages}, {"artifacts", res.bundle.artifacts}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int serve(const Common& c, std::string host, int port, bool prepare) {
  auto cfg = revlens::load_config(c.config);
  if (host.empty()) host = cfg.service.host;
  if (port < 0) port = cfg.service.port;
  if (prepare) run_stages(c, revlens::pipeline::all_stages());

  sigset_t mask;
  sigemptyset(&mask);
  sigaddset(&mask, SIGINT);
  sigaddset(&mask, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &mask, nullptr);  // inherited by server threads

  revlens::service::ServiceOptions so;
  so.out_root = c.out;
  revlens::service::Service svc(cfg, so);
  int bound = svc.start(host, port);
  std::cerr << "serving " << svc.run_dir().string() << " on http://" << host << ":" << bound << "\n";
  int sig = 0;
  sigwait(&mask, &sig);
  std::cerr << "shutting down\n";
  svc.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"revlens: app review analytics"};
  app.require_subcommand(1);

  Common common;
  struct StageCmd {
    const char* name;
    const char* help;
    Stage stage;
  };
  const std::vector<StageCmd> stage_cmds{
      {"ingest", "load, deduplicate and filter the corpus", Stage::ingest},
      {"discrepancy", "lexicon sentiment vs star rating", Stage::discrepancy},
      {"aspects", "aspect, sentiment and recommendation extraction", Stage::aspects},
      {"index", "chunk and embed the corpus into a vector index", Stage::index},
      {"topics", "cluster the index into labeled topics", Stage::topics},
      {"qa", "answer the configured queries with citations", Stage::qa},
      {"eval", "score aspect predictions against the gold file", Stage::eval},
  };
  std::vector<std::pair<CLI::App*, Stage>> cmds;
  for (const auto& s : stage_cmds) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, common);
    cmds.emplace_back(cmd, s.stage);
  }

  auto* run = app.add_subcommand("run", "run several stages in dependency order");
  add_common(run, common);
  std::vector<std::string> stage_names;
  run->add_option("--stages", stage_names, "stages to run (default: all)")->delimiter(',');

  auto* srv = app.add_subcommand("serve", "serve the HTTP API over the run directory");
  add_common(srv, common);
  std::string host;
  int port = -1;
  bool prepare = false;
  srv->add_option("--host", host, "bind address (default from config)");
  srv->add_option("--port", port, "port (default from config)");
  srv->add_flag("--prepare", prepare, "run every stage before serving");

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [cmd, stage] : cmds)
      if (cmd->parsed()) return run_stages(common, {stage});
    if (run->parsed()) {
      std::set<Stage> stages;
      for (const auto& n : stage_names) stages.insert(revlens::pipeline::stage_from_string(n));
      return run_stages(common, stages.empty() ? revlens::pipeline::all_stages() : stages);
    }
    if (srv->parsed()) return serve(common, host, port, prepare);
  } catch (const revlens::ConfigError& e) {
    std::cerr << "error [" << e.code() << "] " << e.what() << '\n';
    return 2;
  } catch (const revlens::Error& e) {
    std::cerr << "error [" << e.code() << "] " << e.what() << '\n';
    return 1;
  }
  return 0;
}
