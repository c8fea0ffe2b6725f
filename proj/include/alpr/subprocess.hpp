#pragma once

// Minimal POSIX child-process helpers: one-shot commands with a wall-clock
// deadline, and long-running producers whose stdout is read as a stream.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "alpr/error.hpp"

extern char** environ;

namespace alpr::proc {

inline constexpr std::chrono::milliseconds kPollInterval{10};

inline bool is_executable(const std::filesystem::path& p) {
  struct stat st {};
  return ::stat(p.c_str(), &st) == 0 && S_ISREG(st.st_mode) && ::access(p.c_str(), X_OK) == 0;
}

// Resolves a program name the way execvp would; empty when not found.
inline std::string find_executable(const std::string& program) {
  if (program.empty()) return {};
  if (program.find('/') != std::string::npos) return is_executable(program) ? program : "";
  const char* path = std::getenv("PATH");
  std::stringstream dirs(path ? path : "/usr/local/bin:/usr/bin:/bin");
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    const auto candidate = std::filesystem::path(dir.empty() ? "." : dir) / program;
    if (is_executable(candidate)) return candidate.string();
  }
  return {};
}

// Splits on whitespace; double quotes group words.
inline std::vector<std::string> split_command(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false, have = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
      have = true;
    } else if (!quoted && (c == ' ' || c == '\t')) {
      if (have) out.push_back(cur);
      cur.clear();
      have = false;
    } else {
      cur.push_back(c);
      have = true;
    }
  }
  if (have) out.push_back(cur);
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "alpr") {
    auto tmpl = (std::filesystem::temp_directory_path() / (prefix + "-XXXXXX")).string();
    if (::mkdtemp(tmpl.data()) == nullptr) {
      throw Error(ErrorKind::IoFailure, "mkdtemp failed for " + tmpl);
    }
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct RunResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string stderr_text;
  double duration_ms = 0;
};

namespace detail {

class SpawnActions {
 public:
  SpawnActions() { posix_spawn_file_actions_init(&actions_); }
  ~SpawnActions() { posix_spawn_file_actions_destroy(&actions_); }
  SpawnActions(const SpawnActions&) = delete;
  SpawnActions& operator=(const SpawnActions&) = delete;
  posix_spawn_file_actions_t* get() { return &actions_; }

 private:
  posix_spawn_file_actions_t actions_;
};

inline std::vector<char*> argv_of(std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  return argv;
}

}  // namespace detail

// Runs argv[0] with a deadline. stdout is discarded, stderr captured.
inline RunResult run_with_timeout(std::vector<std::string> args, std::chrono::milliseconds timeout,
                                  const std::filesystem::path& scratch) {
  if (args.empty()) throw Error(ErrorKind::InvalidArgument, "empty command");
  const auto resolved = find_executable(args[0]);
  if (resolved.empty()) throw Error(ErrorKind::EngineNotFound, "'" + args[0] + "' not found");
  args[0] = resolved;

  const auto err_path = (scratch / "stderr.txt").string();
  detail::SpawnActions actions;
  posix_spawn_file_actions_addopen(actions.get(), STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(actions.get(), STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(actions.get(), STDERR_FILENO, err_path.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0600);
  auto argv = detail::argv_of(args);

  const auto t0 = std::chrono::steady_clock::now();
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, args[0].c_str(), actions.get(), nullptr, argv.data(), environ);
  if (rc != 0) {
    throw Error(ErrorKind::EngineNotFound, "cannot spawn '" + args[0] + "': " + std::strerror(rc));
  }

  RunResult result;
  const auto deadline = t0 + timeout;
  int status = 0;
  for (;;) {
    const pid_t done = ::waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0 && errno != EINTR) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      result.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(kPollInterval);
  }
  result.duration_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (!result.timed_out) {
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  }
  std::ifstream err(err_path);
  std::ostringstream ss;
  ss << err.rdbuf();
  result.stderr_text = ss.str();
  return result;
}

// A child whose stdout is exposed as a readable file descriptor. The child is
// killed and reaped on destruction.
class ChildReader {
 public:
  explicit ChildReader(std::vector<std::string> args) {
    if (args.empty()) throw Error(ErrorKind::InvalidArgument, "empty command");
    const auto resolved = find_executable(args[0]);
    if (resolved.empty()) {
      throw Error(ErrorKind::SourceUnavailable, "decoder '" + args[0] + "' not found");
    }
    args[0] = resolved;
    int fds[2];
    if (::pipe(fds) != 0) throw Error(ErrorKind::IoFailure, "pipe failed");
    detail::SpawnActions actions;
    posix_spawn_file_actions_addopen(actions.get(), STDIN_FILENO, "/dev/null", O_RDONLY, 0);
    posix_spawn_file_actions_adddup2(actions.get(), fds[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(actions.get(), fds[0]);
    posix_spawn_file_actions_addclose(actions.get(), fds[1]);
    auto argv = detail::argv_of(args);
    const int rc =
        ::posix_spawn(&pid_, args[0].c_str(), actions.get(), nullptr, argv.data(), environ);
    ::close(fds[1]);
    if (rc != 0) {
      ::close(fds[0]);
      throw Error(ErrorKind::SourceUnavailable, "cannot spawn decoder: " + std::string(std::strerror(rc)));
    }
    fd_ = fds[0];
  }
  ~ChildReader() {
    if (fd_ >= 0) ::close(fd_);
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }
  ChildReader(const ChildReader&) = delete;
  ChildReader& operator=(const ChildReader&) = delete;

  int fd() const { return fd_; }

 private:
  pid_t pid_ = -1;
  int fd_ = -1;
};

}  // namespace alpr::proc
