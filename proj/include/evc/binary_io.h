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

// Little helpers for the host-endian binary formats (mel files, checkpoints).

#ifndef EVC_BINARY_IO_H_
#define EVC_BINARY_IO_H_

#include <fstream>
#include <string>

#include "evc/common.h"

namespace evc::io {

std::ofstream OpenForWrite(const std::string& path);
std::ifstream OpenForRead(const std::string& path);

void WriteU32(std::ostream& os, uint32_t v);
void WriteI64(std::ostream& os, int64_t v);
void WriteString(std::ostream& os, const std::string& s);
void WriteMatrix(std::ostream& os, const Matrix& m);

uint32_t ReadU32(std::istream& is, const std::string& what);
int64_t ReadI64(std::istream& is, const std::string& what);
std::string ReadString(std::istream& is, const std::string& what);
Matrix ReadMatrix(std::istream& is, const std::string& what);

// Writes to path + ".tmp" then renames, so readers never see a torn file.
void AtomicWriteText(const std::string& path, const std::string& text);
std::string ReadText(const std::string& path);
void EnsureDirectory(const std::string& path);

}  // namespace evc::io

#endif  // EVC_BINARY_IO_H_
