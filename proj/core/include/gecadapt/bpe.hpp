#pragma once

// Byte-pair-encoding subword model shared by encoder and decoder.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gecadapt/corpus.hpp"

namespace gecadapt {

using SymbolPair = std::pair<std::string, std::string>;

inline constexpr const char* kEndOfWord = "</w>";

class BpeModel {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;
  static constexpr std::size_t kNoLimit = std::numeric_limits<std::size_t>::max();

  // Vocabulary: specials, then every printable ASCII character in plain and
  // word-final form, then merge products in merge order (duplicates skipped).
  explicit BpeModel(std::vector<SymbolPair> merges = {});
  BpeModel(const BpeModel& other);
  BpeModel& operator=(const BpeModel& other);

  const std::vector<SymbolPair>& merges() const { return merges_; }
  std::size_t vocab_size() const { return symbols_.size(); }
  const std::string& symbol(int id) const;
  // kUnk when absent.
  int id(const std::string& symbol) const;

  // Subword symbols of one word, by replaying the merges in order.
  std::vector<std::string> segment(const std::string& word) const;

  // Never empty for non-empty input when max_units ≥ 1. Keeps the prefix.
  std::vector<int> encode(std::span<const std::string> tokens,
                          std::size_t max_units = 60) const;
  // Joins subwords at word-final markers. PAD/BOS/EOS are dropped; UNK renders
  // as "<unk>" inside the current word. ValidationError on out-of-range ids.
  Tokens decode(std::span<const int> ids) const;

  void save(std::ostream& out) const;
  static BpeModel load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

 private:
  void build_vocab();

  std::vector<SymbolPair> merges_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
  struct PairHash {
    std::size_t operator()(const SymbolPair& p) const noexcept;
  };
  std::unordered_map<SymbolPair, std::vector<std::size_t>, PairHash> rank_;

  mutable std::mutex cache_mu_;
  mutable std::unordered_map<std::string, std::vector<int>> cache_;
};

// Greedy BPE over word frequencies. Equal counts break on the smaller (left,
// right) pair; stops early once no pair occurs twice. Error on an empty stream.
BpeModel learn_bpe(std::span<const Tokens> sentences, std::size_t num_merges);

// Source and target sides of a corpus, as one stream.
std::vector<Tokens> bpe_stream(const Corpus& corpus);

// Initial symbol sequence of a word: characters, the last one marked word-final.
std::vector<std::string> split_word(const std::string& word);

}  // namespace gecadapt
