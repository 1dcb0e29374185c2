#include "xprompt/vocab.hpp"

#include <algorithm>
#include <fstream>

#include "xprompt/error.hpp"

namespace xprompt {

SubwordVocab::SubwordVocab() {
  add("[UNK]");
  add("[MASK]");
}

SubwordVocab SubwordVocab::characters() {
  SubwordVocab vocab;
  for (char c = 33; c < 127; ++c) vocab.add(std::string(1, c));
  return vocab;
}

int SubwordVocab::add(const std::string& piece) {
  if (auto it = index_.find(piece); it != index_.end()) return it->second;
  if (piece.empty() || piece.find('\n') != std::string::npos) {
    throw ValidationError("invalid vocabulary piece");
  }
  const int id = size();
  pieces_.push_back(piece);
  index_.emplace(piece, id);
  if (id > kMask) longest_ = std::max(longest_, piece.size());
  return id;
}

std::vector<int> SubwordVocab::encode_word(const std::string& word) const {
  std::vector<int> ids;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t len = std::min(longest_, word.size() - pos);
    int found = kUnk;
    for (; len > 0; --len) {
      auto it = index_.find(word.substr(pos, len));
      if (it != index_.end() && it->second > kMask) {
        found = it->second;
        break;
      }
    }
    ids.push_back(found);
    pos += len == 0 ? 1 : len;
  }
  if (ids.empty()) ids.push_back(kUnk);
  return ids;
}

void SubwordVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& p : pieces_) out << p << '\n';
}

SubwordVocab SubwordVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < 2 || lines[0] != "[UNK]" || lines[1] != "[MASK]") {
    throw ParseError(path.string(), 1, "vocabulary must start with [UNK] and [MASK]");
  }
  SubwordVocab vocab;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (vocab.add(lines[i]) != static_cast<int>(i)) {
      throw ParseError(path.string(), i + 1, "duplicate piece " + lines[i]);
    }
  }
  return vocab;
}

}  // namespace xprompt
