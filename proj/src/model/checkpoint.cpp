// Copyright 2026 The arflow Authors
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
#include <cstring>
#include <fstream>

#include "arflow/model.hpp"
#include "json.hpp"

namespace arflow {

namespace {

constexpr char kMagic[8] = {'A', 'R', 'F', 'L', 'O', 'W', 'C', 'K'};

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& path) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw FormatError(path + ": truncated checkpoint header");
  return v;
}

std::string read_header(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": not a checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto n = get<std::uint64_t>(in, path);
  if (n > (1u << 26)) throw FormatError(path + ": implausible header length");
  std::string header(n, '\0');
  in.read(header.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError(path + ": truncated checkpoint header");
  return header;
}

CheckpointInfo parse_info(const std::string& header, const std::string& path) {
  try {
    const auto j = nlohmann::json::parse(header);
    CheckpointInfo info;
    info.config = ModelConfig::from_json(j.at("config").dump());
    info.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    info.metadata_json = j.value("metadata", nlohmann::json::object()).dump();
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint header: " + e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const FlowModel<T>& model, const std::string& metadata_json) {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(model.config().to_json());
  j["vocabulary"] = Vocabulary().symbols();
  j["metadata"] = nlohmann::json::parse(metadata_json);
  j["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  j["reverse_flags"] = nlohmann::json::array();
  for (const auto& st : model.steps) j["reverse_flags"].push_back(st.reverse);
  const std::string header = j.dump(2);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(kMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_named_tensors(out, model.state());
    if (!out) throw FormatError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError("cannot move checkpoint into " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  return parse_info(read_header(in, path), path);
}

template <typename T>
FlowModel<T> load_checkpoint(const std::string& path, std::string* metadata_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  const auto info = parse_info(read_header(in, path), path);
  if (info.vocabulary != Vocabulary().symbols()) throw FormatError(path + ": vocabulary differs from this build");
  FlowModel<T> model(info.config, 0);
  model.load_state(read_named_tensors<T>(in));
  if (metadata_json) *metadata_json = info.metadata_json;
  return model;
}

template void save_checkpoint<float>(const std::string&, const FlowModel<float>&, const std::string&);
template void save_checkpoint<double>(const std::string&, const FlowModel<double>&, const std::string&);
template FlowModel<float> load_checkpoint<float>(const std::string&, std::string*);
template FlowModel<double> load_checkpoint<double>(const std::string&, std::string*);

}  // namespace arflow
