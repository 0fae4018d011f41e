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

#pragma once

#include <functional>
#include <string>

namespace reglat::log {

enum class Level { kDebug, kInfo, kWarning, kError };

using Sink = std::function<void(Level, const std::string&)>;

/// Replaces the process-wide sink and returns the previous one. The default
/// sink writes warnings and errors to stderr and info when verbose.
Sink set_sink(Sink sink);
void set_verbose(bool verbose);

void write(Level level, const std::string& message);

inline void info(const std::string& m) { write(Level::kInfo, m); }
inline void warn(const std::string& m) { write(Level::kWarning, m); }
inline void error(const std::string& m) { write(Level::kError, m); }

}  // namespace reglat::log
