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

#include "evc/archive.h"

#include <cstdio>
#include <cstring>

#include "evc/binary_io.h"

namespace evc::io {

namespace {
constexpr char kMagic[8] = {'E', 'V', 'C', 'A', 'R', 'C', 'H', '\0'};
constexpr uint32_t kVersion = 1;
}  // namespace

void SaveArchive(const std::string& path, const Archive& archive) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os = OpenForWrite(tmp);
    os.write(kMagic, sizeof(kMagic));
    WriteU32(os, kVersion);
    WriteString(os, archive.kind);
    WriteString(os, archive.meta.dump());
    WriteU32(os, static_cast<uint32_t>(archive.groups.size()));
    for (const auto& [group, arrays] : archive.groups) {
      WriteString(os, group);
      WriteU32(os, static_cast<uint32_t>(arrays.size()));
      for (const auto& [name, m] : arrays) {
        WriteString(os, name);
        WriteMatrix(os, m);
      }
    }
    os.flush();
    if (!os) throw IoError("failed writing archive " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot rename " + tmp + " to " + path);
  }
}

Archive LoadArchive(const std::string& path, const std::string& expected_kind) {
  std::ifstream is = OpenForRead(path);
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError(path + ": not an evc archive");
  }
  const uint32_t version = ReadU32(is, path);
  if (version != kVersion) {
    throw ValidationError(path + ": unsupported archive version " +
                          std::to_string(version));
  }
  Archive a;
  a.kind = ReadString(is, path);
  if (a.kind != expected_kind) {
    throw ValidationError(path + ": archive holds a " + a.kind + ", expected a " +
                          expected_kind);
  }
  try {
    a.meta = nlohmann::json::parse(ReadString(is, path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": bad archive metadata: " + e.what());
  }
  const uint32_t groups = ReadU32(is, path);
  for (uint32_t gi = 0; gi < groups; ++gi) {
    const std::string group = ReadString(is, path);
    const uint32_t count = ReadU32(is, path);
    ad::ParameterSet& arrays = a.groups[group];
    for (uint32_t i = 0; i < count; ++i) {
      const std::string name = ReadString(is, path);
      arrays[name] = ReadMatrix(is, path);
    }
  }
  return a;
}

}  // namespace evc::io
