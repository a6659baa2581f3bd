// Copyright 2026 The mvmem Authors
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

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mvmem/common.hpp"

namespace mvmem {

// Dense array file: magic "MVA1", u8 dtype (1 = float32), u8 ndim, u16 zero,
// u32 dims (little endian), then C-order little-endian float32 payload.
struct DenseArray {
  std::vector<int> shape;
  std::vector<float> data;

  long size() const {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

inline void write_array(const std::string& path, const DenseArray& a) {
  std::ofstream f(path, std::ios::binary);
  MVMEM_CHECK(f.good(), IoError, "cannot open for write: " + path);
  f.write("MVA1", 4);
  uint8_t dtype = 1, ndim = uint8_t(a.shape.size());
  uint16_t pad = 0;
  f.write(reinterpret_cast<const char*>(&dtype), 1);
  f.write(reinterpret_cast<const char*>(&ndim), 1);
  f.write(reinterpret_cast<const char*>(&pad), 2);
  for (int d : a.shape) {
    uint32_t v = uint32_t(d);
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  f.write(reinterpret_cast<const char*>(a.data.data()), std::streamsize(a.data.size() * 4));
  MVMEM_CHECK(f.good(), IoError, "write failed: " + path);
}

inline DenseArray read_array(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MVMEM_CHECK(f.good(), IoError, "cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  MVMEM_CHECK(std::memcmp(magic, "MVA1", 4) == 0, IoError, "bad magic in " + path);
  uint8_t dtype, ndim;
  uint16_t pad;
  f.read(reinterpret_cast<char*>(&dtype), 1);
  f.read(reinterpret_cast<char*>(&ndim), 1);
  f.read(reinterpret_cast<char*>(&pad), 2);
  MVMEM_CHECK(dtype == 1, IoError, "unsupported dtype in " + path);
  DenseArray a;
  a.shape.resize(ndim);
  for (int i = 0; i < ndim; ++i) {
    uint32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    a.shape[i] = int(v);
  }
  a.data.resize(a.size());
  f.read(reinterpret_cast<char*>(a.data.data()), std::streamsize(a.data.size() * 4));
  MVMEM_CHECK(f.good(), IoError, "truncated array file: " + path);
  return a;
}

inline std::string array_hash(const DenseArray& a) {
  uint64_t h = fnv1a64(a.shape.data(), a.shape.size() * sizeof(int));
  h = fnv1a64(a.data.data(), a.data.size() * sizeof(float), h);
  return hex64(h);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  MVMEM_CHECK(f.good(), IoError, "cannot open: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  MVMEM_CHECK(f.good(), IoError, "cannot open for write: " + path);
  f << text;
  MVMEM_CHECK(f.good(), IoError, "write failed: " + path);
}

}  // namespace mvmem
