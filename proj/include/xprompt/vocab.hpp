#ifndef XPROMPT_VOCAB_HPP
#define XPROMPT_VOCAB_HPP

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace xprompt {

/// Backbone input vocabulary: greedy longest-match segmentation of a word
/// into pieces. Ids 0 and 1 are the unknown and mask sentinels.
class SubwordVocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kMask = 1;

  SubwordVocab();

  /// Every printable ASCII character as a single piece.
  static SubwordVocab characters();

  int add(const std::string& piece);
  int size() const { return static_cast<int>(pieces_.size()); }
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& pieces() const { return pieces_; }

  /// Piece ids of one word; never empty for a nonempty word.
  std::vector<int> encode_word(const std::string& word) const;

  void save(const std::filesystem::path& path) const;
  static SubwordVocab load(const std::filesystem::path& path);

  friend bool operator==(const SubwordVocab& a, const SubwordVocab& b) {
    return a.pieces_ == b.pieces_;
  }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
  std::size_t longest_ = 1;
};

}  // namespace xprompt

#endif  // XPROMPT_VOCAB_HPP
