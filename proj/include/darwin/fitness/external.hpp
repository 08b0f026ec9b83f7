// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// External evaluator protocol: the command receives the merged checkpoint
// path in place of `{checkpoint}` and prints one JSON object {"score": x}.

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "darwin/checkpoint.hpp"
#include "darwin/core/error.hpp"
#include "darwin/evolution.hpp"
#include "darwin/fitness/tasks.hpp"
#include "darwin/fitness/toy_model.hpp"

namespace darwin::toy {

inline constexpr std::string_view kPathPlaceholder = "{checkpoint}";

struct ExternalCommand {
  std::vector<std::string> argv;  // argv[0] is resolved through PATH
  double timeout_seconds = 600;
};

enum class EvaluatorKind { kToy, kExternal };

struct EvaluatorSpec {
  EvaluatorKind kind = EvaluatorKind::kToy;
  // toy
  std::filesystem::path tasks_path;
  ToyModelSpec model;
  // external
  ExternalCommand command;
};

inline void from_json(const nlohmann::json& j, EvaluatorSpec& s) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "toy") {
      if (j.contains("command")) fail(ErrorCode::kInvalidArgument, "toy evaluator must not set 'command'");
      s.kind = EvaluatorKind::kToy;
      s.tasks_path = j.at("tasks").get<std::string>();
      s.model = j.contains("model") ? j["model"].get<ToyModelSpec>() : ToyModelSpec{};
    } else if (kind == "external") {
      if (j.contains("tasks")) fail(ErrorCode::kInvalidArgument, "external evaluator must not set 'tasks'");
      s.kind = EvaluatorKind::kExternal;
      s.command.argv = j.at("command").get<std::vector<std::string>>();
      s.command.timeout_seconds = j.value("timeout_seconds", 600.0);
    } else {
      fail(ErrorCode::kInvalidArgument, "evaluator kind must be 'toy' or 'external'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed evaluator spec: ") + e.what());
  }
}

/// Runs `cmd` with the placeholder replaced by `merged_path` and returns the
/// reported score.
inline double external_eval(const ExternalCommand& cmd, const std::filesystem::path& merged_path) {
  if (cmd.argv.empty()) fail(ErrorCode::kInvalidArgument, "external evaluator command is empty");
  if (!(cmd.timeout_seconds > 0)) fail(ErrorCode::kInvalidArgument, "evaluator timeout must be > 0");
  std::vector<std::string> args;
  bool substituted = false;
  for (std::string a : cmd.argv) {
    for (auto pos = a.find(kPathPlaceholder); pos != std::string::npos; pos = a.find(kPathPlaceholder, pos)) {
      a.replace(pos, kPathPlaceholder.size(), merged_path.string());
      pos += merged_path.string().size();
      substituted = true;
    }
    args.push_back(std::move(a));
  }
  if (!substituted) fail(ErrorCode::kInvalidArgument, "evaluator command lacks the {checkpoint} placeholder");
  std::vector<char*> cargv;
  for (auto& a : args) cargv.push_back(a.data());
  cargv.push_back(nullptr);

  int fds[2];
  if (pipe(fds) != 0) fail(ErrorCode::kIo, "pipe() failed");
  const pid_t pid = fork();
  if (pid < 0) {
    close(fds[0]);
    close(fds[1]);
    fail(ErrorCode::kIo, "fork() failed");
  }
  if (pid == 0) {
    setpgid(0, 0);
    dup2(fds[1], STDOUT_FILENO);
    close(fds[0]);
    close(fds[1]);
    execvp(cargv[0], cargv.data());
    _exit(127);
  }
  close(fds[1]);

  using clock = std::chrono::steady_clock;
  const auto deadline = clock::now() + std::chrono::duration_cast<clock::duration>(
                                           std::chrono::duration<double>(cmd.timeout_seconds));
  std::string output;
  bool timed_out = false;
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
    if (left <= 0) {
      timed_out = true;
      break;
    }
    pollfd p{fds[0], POLLIN, 0};
    const int rc = poll(&p, 1, static_cast<int>(std::min<long long>(left, 1000)));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) break;
    if (rc == 0) continue;
    const ssize_t n = read(fds[0], buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    output.append(buf, static_cast<std::size_t>(n));
  }
  close(fds[0]);

  int status = 0;
  if (!timed_out) {
    // Output closed; the process may still be running.
    for (;;) {
      const pid_t r = waitpid(pid, &status, WNOHANG);
      if (r == pid) break;
      if (r < 0 && errno != EINTR) break;
      if (clock::now() >= deadline) {
        timed_out = true;
        break;
      }
      usleep(2000);
    }
  }
  if (timed_out) {
    kill(-pid, SIGKILL);
    kill(pid, SIGKILL);
    waitpid(pid, &status, 0);
    fail(ErrorCode::kEvaluatorTimeout,
         "evaluator '" + cmd.argv[0] + "' exceeded " + std::to_string(cmd.timeout_seconds) + " s");
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    fail(ErrorCode::kEvaluatorExit, "evaluator '" + cmd.argv[0] + "' exited with status " + std::to_string(code));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(output);
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kEvaluatorOutput, "evaluator stdout is not one JSON value");
  }
  if (!j.is_object() || !j.contains("score") || !j["score"].is_number()) {
    fail(ErrorCode::kEvaluatorOutput, "evaluator stdout lacks a numeric \"score\"");
  }
  const double score = j["score"].get<double>();
  if (!std::isfinite(score)) fail(ErrorCode::kEvaluatorOutput, "evaluator score is not finite");
  return score;
}

/// Phase-2 evaluator that writes each merged checkpoint to a scratch file
/// and runs the external command once per run.
class ExternalEvaluator final : public ModelEvaluator {
 public:
  ExternalEvaluator(ExternalCommand cmd, std::filesystem::path scratch_dir)
      : cmd_(std::move(cmd)), dir_(std::move(scratch_dir)) {
    std::filesystem::create_directories(dir_);
  }

  double score(const Checkpoint& merged, int run) override {
    const auto path = dir_ / ("candidate_" + std::to_string(counter_.fetch_add(1)) + "_" + std::to_string(run) +
                              ".safetensors");
    write_checkpoint(merged, path);
    try {
      const double s = external_eval(cmd_, path);
      std::filesystem::remove(path);
      return s;
    } catch (...) {
      std::filesystem::remove(path);
      throw;
    }
  }

 private:
  ExternalCommand cmd_;
  std::filesystem::path dir_;
  std::atomic<std::uint64_t> counter_{0};
};

}  // namespace darwin::toy
