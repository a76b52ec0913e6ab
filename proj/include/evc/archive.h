// Copyright (c) 2026 The evc Authors
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

// Versioned archive shared by model and vocoder checkpoints: a kind tag, a
// JSON metadata block and named groups of named arrays. Arrays are stored as
// raw doubles, so a load reproduces them bit-exactly.

#ifndef EVC_ARCHIVE_H_
#define EVC_ARCHIVE_H_

#include <map>
#include <string>

#include "evc/autodiff.h"
#include "json.hpp"

namespace evc::io {

struct Archive {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, ad::ParameterSet> groups;
};

void SaveArchive(const std::string& path, const Archive& archive);
// Throws ValidationError on a bad magic, unknown version or kind mismatch.
Archive LoadArchive(const std::string& path, const std::string& expected_kind);

}  // namespace evc::io

#endif  // EVC_ARCHIVE_H_
