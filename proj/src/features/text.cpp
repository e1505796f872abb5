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
#include "arflow/text.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace arflow {

namespace {

constexpr const char* kPunctuation = ".,!?;:'\"-()";

const char* const kPhones[] = {"AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH", "EH", "ER", "EY",
                               "F",  "G",  "HH", "IH", "IY", "JH", "K",  "L",  "M",  "N",  "NG", "OW", "OY",
                               "P",  "R",  "S",  "SH", "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"};

bool is_vowel_phone(const std::string& p) {
  return p.size() == 2 && std::string("AEIOU").find(p[0]) != std::string::npos;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TextError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Vocabulary::Vocabulary() {
  symbols_.push_back(" ");
  for (const char* p = kPunctuation; *p; ++p) symbols_.emplace_back(1, *p);
  for (char c = 'a'; c <= 'z'; ++c) symbols_.emplace_back(1, c);
  for (const char* phone : kPhones) {
    const std::string p(phone);
    if (is_vowel_phone(p)) {
      for (char stress : {'0', '1', '2'}) symbols_.push_back(p + stress);
    } else {
      symbols_.push_back(p);
    }
  }
  for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i], static_cast<std::int64_t>(i));
}

const std::string& Vocabulary::symbol(std::int64_t id) const {
  if (id < 0 || id >= size()) throw TextError("token id " + std::to_string(id) + " outside vocabulary");
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<std::int64_t> Vocabulary::find(const std::string& symbol) const {
  auto it = index_.find(symbol);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::int64_t Vocabulary::id(const std::string& symbol) const {
  auto found = find(symbol);
  if (!found) throw TextError("unknown symbol '" + symbol + "'");
  return *found;
}

bool Vocabulary::is_punctuation(char c) { return std::string(kPunctuation).find(c) != std::string::npos; }

Lexicon Lexicon::load(const std::string& path) { return parse(read_file(path)); }

Lexicon Lexicon::parse(const std::string& contents) {
  Lexicon lex;
  std::istringstream in(contents);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line.rfind(";;;", 0) == 0) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    if (word.find('(') != std::string::npos) continue;
    std::vector<std::string> phones;
    for (std::string p; fields >> p;) phones.push_back(p);
    if (phones.empty()) continue;
    lex.add(word, std::move(phones));
  }
  return lex;
}

void Lexicon::add(const std::string& word, std::vector<std::string> phones) {
  std::string key = word;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  entries_.emplace(std::move(key), std::move(phones));
}

const std::vector<std::string>* Lexicon::lookup(const std::string& word) const {
  auto it = entries_.find(word);
  return it == entries_.end() ? nullptr : &it->second;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, const TokenizeOptions& options,
                       std::int64_t speaker) {
  if (options.p_arpabet < 0.0 || options.p_arpabet > 1.0) throw TextError("p_arpabet must be in [0, 1]");
  if (options.lexicon && options.p_arpabet > 0.0 && options.p_arpabet < 1.0 && !options.rng) {
    throw TextError("tokenize: fractional p_arpabet needs an rng");
  }
  TokenSequence out;
  out.text = text;
  out.speaker = speaker;

  const auto space = vocab.id(" ");
  bool pending_space = false;
  std::string word;

  auto emit = [&](std::int64_t id) {
    if (pending_space && !out.ids.empty()) out.ids.push_back(space);
    pending_space = false;
    out.ids.push_back(id);
  };
  auto flush_word = [&] {
    if (word.empty()) return;
    const std::vector<std::string>* phones = options.lexicon ? options.lexicon->lookup(word) : nullptr;
    bool use_phones = false;
    if (phones) {
      if (options.p_arpabet >= 1.0) {
        use_phones = true;
      } else if (options.p_arpabet > 0.0) {
        use_phones = options.rng->uniform() < options.p_arpabet;
      }
    }
    if (use_phones) {
      for (const auto& p : *phones) {
        auto id = vocab.find(p);
        if (!id) throw TextError("lexicon phone '" + p + "' for '" + word + "' is not in the vocabulary");
        emit(*id);
      }
    } else {
      for (char c : word) emit(vocab.id(std::string(1, c)));
    }
    word.clear();
  };

  for (unsigned char raw : text) {
    const char c = static_cast<char>(std::tolower(raw));
    if (std::isspace(raw)) {
      flush_word();
      pending_space = true;
    } else if (c >= 'a' && c <= 'z') {
      word.push_back(c);
    } else if (c == '\'' && !word.empty()) {
      word.push_back(c);  // contractions stay inside the word
    } else if (Vocabulary::is_punctuation(c)) {
      flush_word();
      emit(vocab.id(std::string(1, c)));
    }
  }
  flush_word();
  if (out.ids.empty()) throw TextError("text is empty after normalization: \"" + text + "\"");
  return out;
}

std::string describe(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::string s;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (i) s += ' ';
    const auto& sym = vocab.symbol(tokens.ids[i]);
    s += sym == " " ? "_" : sym;
  }
  return s;
}

std::vector<ManifestEntry> parse_manifest(const std::string& contents, const std::string& base_dir) {
  std::vector<ManifestEntry> entries;
  std::istringstream in(contents);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    const auto p1 = line.find('|');
    const auto p2 = p1 == std::string::npos ? p1 : line.find('|', p1 + 1);
    if (p2 == std::string::npos || line.find('|', p2 + 1) != std::string::npos) {
      throw TextError("manifest line " + std::to_string(number) + ": expected path|text|speaker_id");
    }
    ManifestEntry e;
    e.line = number;
    e.path = trim(line.substr(0, p1));
    e.text = line.substr(p1 + 1, p2 - p1 - 1);
    const std::string spk = trim(line.substr(p2 + 1));
    try {
      std::size_t used = 0;
      e.speaker = std::stoll(spk, &used);
      if (used != spk.size() || e.speaker < 0) throw std::invalid_argument(spk);
    } catch (const std::exception&) {
      throw TextError("manifest line " + std::to_string(number) + ": bad speaker id '" + spk + "'");
    }
    if (e.path.empty()) throw TextError("manifest line " + std::to_string(number) + ": empty path");
    if (!base_dir.empty() && std::filesystem::path(e.path).is_relative()) {
      e.path = (std::filesystem::path(base_dir) / e.path).lexically_normal().string();
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  const auto dir = std::filesystem::absolute(path).parent_path().string();
  return parse_manifest(read_file(path), dir);
}

}  // namespace arflow
