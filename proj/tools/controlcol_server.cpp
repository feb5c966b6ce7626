#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "controlcol/service.hpp"

namespace {
httplib::Server* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"controlcol-server: HTTP control plane for interactive colorization", "controlcol-server"};
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::string data_root = "controlcol-data";
  std::vector<std::string> generator, propagator, scorer;
  std::string polarity = "higher-is-better";
  app.add_option("--bind", bind, "Bind address")->capture_default_str();
  app.add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();
  app.add_option("--data-root", data_root, "Session storage directory")->capture_default_str();
  app.add_option("--generator-command", generator, "External candidate generator argv");
  app.add_option("--propagator-command", propagator, "External propagator argv");
  app.add_option("--scorer-command", scorer, "External quality scorer argv");
  app.add_option("--scorer-polarity", polarity, "External scorer polarity")
      ->check(CLI::IsMember({"higher-is-better", "lower-is-better"}));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    controlcol::ServiceOptions opts;
    if (!generator.empty()) opts.candidate_backend = {"external", generator, 600.0};
    if (!propagator.empty()) opts.propagator_backend = {"external", propagator, 600.0};
    if (!scorer.empty()) opts.scorer = {"external", scorer, controlcol::polarity_from_string(polarity)};
    controlcol::ControlService service(data_root, opts);
    httplib::Server svr;
    service.bind(svr);
    g_server = &svr;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const int bound = port == 0 ? svr.bind_to_any_port(bind) : (svr.bind_to_port(bind, port) ? port : -1);
    if (bound < 0) {
      std::cerr << "controlcol-server: cannot bind " << bind << ':' << port << '\n';
      return 2;
    }
    std::cout << "listening on " << bind << ':' << bound << std::endl;
    svr.listen_after_bind();
    service.join_workers();
  } catch (const std::exception& e) {
    std::cerr << "controlcol-server: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
