// Copyright 2026 The melgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace melgen {

/// Character inventory. Symbols are UTF-8 code points; ids follow file order
/// starting at 0.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (symbols_[i].empty()) throw std::invalid_argument("vocabulary: empty symbol at line " + std::to_string(i + 1));
      if (!ids_.emplace(symbols_[i], static_cast<int>(i)).second) {
        throw std::invalid_argument("vocabulary: duplicate symbol '" + symbols_[i] + "'");
      }
    }
  }

  /// One character per line.
  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path.string());
    std::vector<std::string> symbols;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      symbols.push_back(line);
    }
    return Vocabulary(std::move(symbols));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path.string());
    for (const auto& s : symbols_) out << s << '\n';
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }

  /// Lowercases ASCII letters and maps each code point to its id; unknown
  /// characters are rejected.
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (std::size_t i = 0; i < text.size();) {
      const auto lead = static_cast<unsigned char>(text[i]);
      std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xe ? 3 : (lead >> 3) == 0x1e ? 4 : 0;
      if (len == 0 || i + len > text.size()) throw std::invalid_argument("text: invalid UTF-8");
      std::string cp = text.substr(i, len);
      if (len == 1) cp[0] = static_cast<char>(std::tolower(lead));
      auto it = ids_.find(cp);
      if (it == ids_.end()) throw std::invalid_argument("text: character '" + cp + "' is not in the vocabulary");
      ids.push_back(it->second);
      i += len;
    }
    if (ids.empty()) throw std::invalid_argument("text: empty character sequence");
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string s;
    for (int id : ids) s += symbol(id);
    return s;
  }

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, int> ids_;
};

}  // namespace melgen
