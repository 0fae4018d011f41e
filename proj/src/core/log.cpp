// Copyright 2026 The reglat Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "reglat/core/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace reglat::log {
namespace {

std::mutex g_mutex;
std::atomic<bool> g_verbose{false};

const char* tag(Level level) {
  switch (level) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarning: return "warning";
    case Level::kError: return "error";
  }
  return "?";
}

void default_sink(Level level, const std::string& message) {
  if (level < Level::kWarning && !g_verbose.load()) return;
  std::cerr << "[reglat " << tag(level) << "] " << message << '\n';
}

Sink& current() {
  static Sink sink = default_sink;
  return sink;
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  Sink previous = std::move(current());
  current() = sink ? std::move(sink) : Sink(default_sink);
  return previous;
}

void set_verbose(bool verbose) { g_verbose.store(verbose); }

void write(Level level, const std::string& message) {
  std::lock_guard lock(g_mutex);
  current()(level, message);
}

}  // namespace reglat::log
