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

#include "evc/binary_io.h"

#include <filesystem>
#include <sstream>

namespace evc::io {

namespace fs = std::filesystem;

std::ofstream OpenForWrite(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

std::ifstream OpenForRead(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return is;
}

void WriteU32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void WriteI64(std::ostream& os, int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void WriteString(std::ostream& os, const std::string& s) {
  WriteU32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void WriteMatrix(std::ostream& os, const Matrix& m) {
  WriteI64(os, m.rows());
  WriteI64(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

namespace {

void ReadExact(std::istream& is, char* dst, size_t n, const std::string& what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw ValidationError("truncated data while reading " + what);
  }
}

}  // namespace

uint32_t ReadU32(std::istream& is, const std::string& what) {
  uint32_t v;
  ReadExact(is, reinterpret_cast<char*>(&v), sizeof(v), what);
  return v;
}

int64_t ReadI64(std::istream& is, const std::string& what) {
  int64_t v;
  ReadExact(is, reinterpret_cast<char*>(&v), sizeof(v), what);
  return v;
}

std::string ReadString(std::istream& is, const std::string& what) {
  const uint32_t n = ReadU32(is, what);
  if (n > (1u << 30)) throw ValidationError("implausible string length in " + what);
  std::string s(n, '\0');
  ReadExact(is, s.data(), n, what);
  return s;
}

Matrix ReadMatrix(std::istream& is, const std::string& what) {
  const int64_t rows = ReadI64(is, what);
  const int64_t cols = ReadI64(is, what);
  if (rows < 0 || cols < 0 || rows * cols > (int64_t{1} << 32)) {
    throw ValidationError("implausible matrix shape in " + what);
  }
  Matrix m(rows, cols);
  ReadExact(is, reinterpret_cast<char*>(m.data()), sizeof(double) * m.size(),
            what);
  return m;
}

void AtomicWriteText(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os = OpenForWrite(tmp);
    os << text;
    if (!os) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp + "': " + ec.message());
}

std::string ReadText(const std::string& path) {
  std::ifstream is = OpenForRead(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void EnsureDirectory(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec || !fs::is_directory(path)) {
    throw IoError("cannot create directory '" + path + "'" +
                  (ec ? ": " + ec.message() : std::string()));
  }
}

}  // namespace evc::io
