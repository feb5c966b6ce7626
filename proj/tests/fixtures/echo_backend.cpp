// Protocol test double. Copies inputs to outputs; generator jobs get a
// per-candidate red offset so candidates differ.
//   echo_backend [--drop-last] [--fail] [--sleep-ms N] <job.json>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <string>
#include <thread>

#include "controlcol/backends.hpp"

using namespace controlcol;

int main(int argc, char** argv) {
  bool drop_last = false, fail = false;
  int sleep_ms = 0;
  std::string job_path;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--drop-last")) drop_last = true;
    else if (!std::strcmp(argv[i], "--fail")) fail = true;
    else if (!std::strcmp(argv[i], "--sleep-ms") && i + 1 < argc) sleep_ms = std::atoi(argv[++i]);
    else job_path = argv[i];
  }
  if (sleep_ms) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
  if (fail) {
    std::cerr << "echo_backend: asked to fail\n";
    return 3;
  }
  try {
    const BackendJob job = backend_job_from_json(read_json_file(job_path));
    // Relative paths must work: the engine runs us inside work_dir.
    const fs::path wd = fs::current_path();
    write_text_file(wd / "cwd.txt", wd.string());
    fs::create_directories(wd / "output");
    if (job.role == BackendRole::candidate_generator) {
      const Frame in = read_png(job.input_frames.front());
      std::size_t n = job.candidate_count - (drop_last ? 1 : 0);
      for (std::size_t k = 0; k < n; ++k) {
        Frame f = in;
        for (auto& p : f.pixels()) p.r = quantize(p.r + 10.0 * static_cast<double>(k));
        write_png(fs::path("output") / candidate_filename(k), f);
      }
    } else {
      std::size_t n = job.input_frames.size() - (drop_last ? 1 : 0);
      for (std::size_t t = 0; t < n; ++t) {
        write_png(fs::path("output") / frame_filename(t), read_png(job.input_frames[t]));
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "echo_backend: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
