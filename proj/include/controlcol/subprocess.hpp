#pragma once

// Minimal POSIX child-process runner with a wall-clock timeout.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "controlcol/error.hpp"

namespace controlcol {

struct ProcessResult {
  int exit_code = -1;  // -1 when killed by a signal or on timeout
  bool timed_out = false;
  std::string stdout_text;
};

struct ProcessOptions {
  std::filesystem::path working_dir;  // empty: inherit
  std::chrono::milliseconds timeout{std::chrono::seconds(600)};
  bool capture_stdout = false;
};

inline ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& opts = {}) {
  if (argv.empty()) throw InvalidArgument("empty command");

  int pipe_fds[2] = {-1, -1};
  if (opts.capture_stdout && ::pipe2(pipe_fds, O_CLOEXEC) != 0) {
    throw ProcessError(std::string("pipe failed: ") + std::strerror(errno));
  }

  std::vector<char*> cargv;
  cargv.reserve(argv.size() + 1);
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  const std::string cwd = opts.working_dir.string();

  const pid_t pid = ::fork();
  if (pid < 0) throw ProcessError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    if (opts.capture_stdout) ::dup2(pipe_fds[1], STDOUT_FILENO);
    if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) ::_exit(127);
    ::execvp(cargv[0], cargv.data());
    ::_exit(127);
  }

  ProcessResult result;
  if (opts.capture_stdout) ::close(pipe_fds[1]);
  const auto deadline = std::chrono::steady_clock::now() + opts.timeout;
  int status = 0;
  bool reaped = false;
  bool pipe_open = opts.capture_stdout;
  while (true) {
    if (pipe_open) {
      pollfd pfd{pipe_fds[0], POLLIN, 0};
      if (::poll(&pfd, 1, 10) > 0) {
        char buf[4096];
        const ssize_t n = ::read(pipe_fds[0], buf, sizeof buf);
        if (n > 0) {
          result.stdout_text.append(buf, static_cast<std::size_t>(n));
        } else if (n == 0 || errno != EINTR) {
          pipe_open = false;
        }
      }
    }
    if (!reaped) {
      const pid_t r = ::waitpid(pid, &status, WNOHANG);
      if (r == pid) reaped = true;
    }
    if (reaped && !pipe_open) break;
    if (std::chrono::steady_clock::now() > deadline) {
      ::kill(pid, SIGKILL);
      if (!reaped) ::waitpid(pid, &status, 0);
      result.timed_out = true;
      if (opts.capture_stdout) ::close(pipe_fds[0]);
      return result;
    }
    if (!pipe_open) ::usleep(5000);
  }
  if (opts.capture_stdout) ::close(pipe_fds[0]);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

}  // namespace controlcol
