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
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "arflow/random.hpp"

namespace arflow {

class TextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed symbol inventory: space, punctuation, lowercase letters, then the
/// 84 stressed/unstressed ARPAbet phones (upper case, e.g. "AY1").
class Vocabulary {
 public:
  Vocabulary();

  std::int64_t size() const { return static_cast<std::int64_t>(symbols_.size()); }
  const std::string& symbol(std::int64_t id) const;
  std::optional<std::int64_t> find(const std::string& symbol) const;
  std::int64_t id(const std::string& symbol) const;
  const std::vector<std::string>& symbols() const { return symbols_; }

  static bool is_punctuation(char c);

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int64_t> index_;
};

/// Word to phone-sequence map in CMUdict layout ("WORD  PH ON EMES").
/// Words are stored lower case; alternate pronunciations ("WORD(1)") and
/// ";;;" comment lines are skipped.
class Lexicon {
 public:
  static Lexicon load(const std::string& path);
  static Lexicon parse(const std::string& contents);

  void add(const std::string& word, std::vector<std::string> phones);
  const std::vector<std::string>* lookup(const std::string& word) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<std::string, std::vector<std::string>> entries_;
};

struct TokenSequence {
  std::vector<std::int64_t> ids;
  std::int64_t speaker = 0;
  std::string text;

  std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
};

struct TokenizeOptions {
  const Lexicon* lexicon = nullptr;
  /// Probability that an in-lexicon word is emitted as phones.
  double p_arpabet = 1.0;
  /// Needed only when 0 < p_arpabet < 1.
  Rng* rng = nullptr;
};

/// Lowercases, collapses whitespace into single space tokens, and isolates
/// punctuation. Characters outside the vocabulary (digits, non-ASCII) are
/// dropped. Throws TextError when nothing remains.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, const TokenizeOptions& options = {},
                       std::int64_t speaker = 0);

/// Space-joined symbols, for logs and tests.
std::string describe(const TokenSequence& tokens, const Vocabulary& vocab);

/// One filelist line: `path|text|speaker_id`.
struct ManifestEntry {
  std::string path;
  std::string text;
  std::int64_t speaker = 0;
  std::size_t line = 0;
};

/// Relative audio paths are resolved against the manifest's directory.
/// Blank lines and lines starting with '#' are ignored.
std::vector<ManifestEntry> load_manifest(const std::string& path);
std::vector<ManifestEntry> parse_manifest(const std::string& contents, const std::string& base_dir = "");

}  // namespace arflow
