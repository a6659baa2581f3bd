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

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "mvmem/optim.hpp"

namespace mvmem::nn {

// Checkpoint layout: <dir>/manifest.json + <dir>/params.bin. The blob holds
// all parameters as little-endian float32 in manifest order; the manifest
// records name, shape and offset per parameter plus free-form metadata.
inline constexpr int kCheckpointVersion = 1;

template <class R>
void save_checkpoint(const std::string& dir, const ParamStore<R>& ps,
                     const nlohmann::json& meta = {}) {
  std::filesystem::create_directories(dir);
  nlohmann::json man;
  man["format_version"] = kCheckpointVersion;
  man["dtype"] = "f32";
  man["meta"] = meta;
  std::vector<float> blob;
  long off = 0;
  for (int i = 0; i < ps.count(); ++i) {
    const auto& p = ps.at(i);
    nlohmann::json e;
    e["name"] = p.name;
    e["shape"] = p.shape;
    e["offset"] = off;
    e["size"] = p.value.size();
    man["params"].push_back(e);
    for (R v : p.value) blob.push_back(float(v));
    off += long(p.value.size());
  }
  man["blob_hash"] = hex64(fnv1a64(blob.data(), blob.size() * 4));
  std::ofstream b(dir + "/params.bin", std::ios::binary);
  MVMEM_CHECK(b.good(), IoError, "cannot write " + dir + "/params.bin");
  b.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size() * 4));
  std::ofstream m(dir + "/manifest.json");
  m << man.dump(1) << "\n";
  MVMEM_CHECK(m.good(), IoError, "cannot write " + dir + "/manifest.json");
}

// Loads a checkpoint into an existing store. Every parameter must match by
// name and shape; mismatches are reported together in the error message.
template <class R>
nlohmann::json load_checkpoint(const std::string& dir, ParamStore<R>& ps) {
  std::ifstream m(dir + "/manifest.json");
  MVMEM_CHECK(m.good(), IoError, "cannot open " + dir + "/manifest.json");
  nlohmann::json man = nlohmann::json::parse(m);
  std::ifstream b(dir + "/params.bin", std::ios::binary);
  MVMEM_CHECK(b.good(), IoError, "cannot open " + dir + "/params.bin");
  b.seekg(0, std::ios::end);
  long bytes = long(b.tellg());
  b.seekg(0);
  std::vector<float> vals(bytes / 4);
  b.read(reinterpret_cast<char*>(vals.data()), bytes);
  MVMEM_CHECK(b.good(), IoError, "truncated params.bin in " + dir);

  std::string diff;
  int loaded = 0;
  for (const auto& e : man["params"]) {
    std::string name = e["name"];
    Shape shape = e["shape"].get<Shape>();
    long off = e["offset"];
    long size = e["size"];
    if (!ps.has(name)) {
      diff += "  missing in model: " + name + "\n";
      continue;
    }
    auto& p = ps.at(ps.find(name));
    if (p.shape != shape) {
      diff += "  shape mismatch for " + name + "\n";
      continue;
    }
    for (long i = 0; i < size; ++i) p.value[i] = R(vals[off + i]);
    ++loaded;
  }
  if (loaded != ps.count() || !diff.empty()) {
    for (int i = 0; i < ps.count(); ++i) {
      bool found = false;
      for (const auto& e : man["params"])
        if (e["name"] == ps.at(i).name) found = true;
      if (!found) diff += "  missing in checkpoint: " + ps.at(i).name + "\n";
    }
    MVMEM_CHECK(diff.empty(), IoError, "checkpoint/architecture mismatch:\n" + diff);
  }
  return man["meta"];
}

// Bit-exact fingerprint of the float32 image of all parameters.
template <class R>
std::string params_fingerprint(const ParamStore<R>& ps) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (int i = 0; i < ps.count(); ++i) {
    const auto& p = ps.at(i);
    h = fnv1a64(p.name, h);
    for (R v : p.value) {
      float f = float(v);
      h = fnv1a64(&f, 4, h);
    }
  }
  return hex64(h);
}

}  // namespace mvmem::nn
