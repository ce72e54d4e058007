#include "gecadapt/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "gecadapt/error.hpp"

namespace gecadapt {

namespace {

constexpr const char* kHeader = "#version gec-adapt-bpe 1";
constexpr const char* kSpecialNames[] = {"<pad>", "<s>", "</s>", "<unk>"};

bool ends_with_marker(const std::string& s) {
  const std::string_view m = kEndOfWord;
  return s.size() >= m.size() && std::string_view(s).substr(s.size() - m.size()) == m;
}

void merge_in_place(std::vector<std::string>& syms, const std::string& a, const std::string& b) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < syms.size(); ++w) {
    if (r + 1 < syms.size() && syms[r] == a && syms[r + 1] == b) {
      syms[w] = a + b;
      r += 2;
    } else {
      if (w != r) syms[w] = std::move(syms[r]);
      ++r;
    }
  }
  syms.resize(w);
}

}  // namespace

std::vector<std::string> split_word(const std::string& word) {
  std::vector<std::string> out;
  out.reserve(word.size());
  for (char c : word) out.emplace_back(1, c);
  if (!out.empty()) out.back() += kEndOfWord;
  return out;
}

std::size_t BpeModel::PairHash::operator()(const SymbolPair& p) const noexcept {
  const std::size_t h = std::hash<std::string>{}(p.first);
  return h ^ (std::hash<std::string>{}(p.second) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

BpeModel::BpeModel(std::vector<SymbolPair> merges) : merges_(std::move(merges)) { build_vocab(); }

BpeModel::BpeModel(const BpeModel& other) : merges_(other.merges_) { build_vocab(); }

BpeModel& BpeModel::operator=(const BpeModel& other) {
  if (this != &other) {
    merges_ = other.merges_;
    build_vocab();
  }
  return *this;
}

void BpeModel::build_vocab() {
  symbols_.clear();
  ids_.clear();
  rank_.clear();
  {
    std::lock_guard lock(cache_mu_);
    cache_.clear();
  }
  const auto add = [&](const std::string& s) {
    if (ids_.emplace(s, static_cast<int>(symbols_.size())).second) symbols_.push_back(s);
  };
  for (const char* s : kSpecialNames) add(s);
  for (int c = 33; c <= 126; ++c) {
    add(std::string(1, static_cast<char>(c)));
    add(std::string(1, static_cast<char>(c)) + kEndOfWord);
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [a, b] = merges_[r];
    if (a.empty() || b.empty()) throw ValidationError("empty symbol in merge " + std::to_string(r));
    if (ends_with_marker(a))
      throw ValidationError("merge " + std::to_string(r) + " continues past a word end");
    add(a + b);
    rank_[merges_[r]].push_back(r);
  }
}

const std::string& BpeModel::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
    throw ValidationError("subword id " + std::to_string(id) + " out of range");
  return symbols_[static_cast<std::size_t>(id)];
}

int BpeModel::id(const std::string& symbol) const {
  const auto it = ids_.find(symbol);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::string> BpeModel::segment(const std::string& word) const {
  auto syms = split_word(word);
  // Apply the lowest-ranked present pair whose rank exceeds the last applied
  // one; merging never recreates the same pair, so this equals a full replay.
  std::size_t floor = 0;
  while (syms.size() > 1) {
    std::size_t best = merges_.size();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto it = rank_.find({syms[i], syms[i + 1]});
      if (it == rank_.end()) continue;
      // A pair can recur in the merge list when its symbols are rebuilt later.
      const auto r = std::lower_bound(it->second.begin(), it->second.end(), floor);
      if (r != it->second.end() && *r < best) best = *r;
    }
    if (best == merges_.size()) break;
    merge_in_place(syms, merges_[best].first, merges_[best].second);
    floor = best + 1;
  }
  return syms;
}

std::vector<int> BpeModel::encode(std::span<const std::string> tokens,
                                  std::size_t max_units) const {
  std::vector<int> out;
  for (const auto& tok : tokens) {
    if (out.size() >= max_units) break;
    std::vector<int> ids;
    {
      std::lock_guard lock(cache_mu_);
      const auto it = cache_.find(tok);
      if (it != cache_.end()) ids = it->second;
    }
    if (ids.empty() && !tok.empty()) {
      for (const auto& s : segment(tok)) ids.push_back(id(s));
      std::lock_guard lock(cache_mu_);
      cache_.emplace(tok, ids);
    }
    for (int i : ids) {
      if (out.size() >= max_units) break;
      out.push_back(i);
    }
  }
  return out;
}

Tokens BpeModel::decode(std::span<const int> ids) const {
  Tokens out;
  std::string word;
  for (int i : ids) {
    const std::string& s = symbol(i);
    if (i == kPad || i == kBos || i == kEos) continue;
    if (i == kUnk) {
      word += s;
      continue;
    }
    if (ends_with_marker(s)) {
      word.append(s, 0, s.size() - std::string_view(kEndOfWord).size());
      out.push_back(std::move(word));
      word.clear();
    } else {
      word += s;
    }
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

void BpeModel::save(std::ostream& out) const {
  out << kHeader << '\n';
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
}

BpeModel BpeModel::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw ParseError("missing header '" + std::string(kHeader) + "'", 1);
  std::vector<SymbolPair> merges;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    SymbolPair p;
    std::string extra;
    if (!(ss >> p.first >> p.second) || (ss >> extra))
      throw ParseError("expected 'left right'", n);
    merges.push_back(std::move(p));
  }
  return BpeModel(std::move(merges));
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  save(f);
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  return load(f);
}

BpeModel learn_bpe(std::span<const Tokens> sentences, std::size_t num_merges) {
  std::map<std::string, long long> freq;
  for (const auto& s : sentences)
    for (const auto& t : s)
      if (!t.empty()) ++freq[t];
  if (freq.empty()) throw ValidationError("cannot learn BPE from an empty token stream");

  std::vector<std::vector<std::string>> words;
  std::vector<long long> counts;
  for (const auto& [w, c] : freq) {
    words.push_back(split_word(w));
    counts.push_back(c);
  }

  // Ordered map: the first maximal entry is the lexicographically smallest pair.
  std::map<SymbolPair, long long> pair_count;
  std::map<SymbolPair, std::set<std::size_t>> where;
  const auto tally = [&](std::size_t w, long long sign) {
    const auto& syms = words[w];
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      SymbolPair p{syms[i], syms[i + 1]};
      auto& c = pair_count[p];
      c += sign * counts[w];
      if (c == 0) pair_count.erase(p);
      if (sign > 0) where[p].insert(w);
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) tally(w, 1);

  std::vector<SymbolPair> merges;
  while (merges.size() < num_merges) {
    auto best = pair_count.end();
    for (auto it = pair_count.begin(); it != pair_count.end(); ++it)
      if (best == pair_count.end() || it->second > best->second) best = it;
    if (best == pair_count.end() || best->second < 2) break;
    const SymbolPair p = best->first;
    merges.push_back(p);
    const auto affected = where[p];
    for (std::size_t w : affected) {
      tally(w, -1);
      merge_in_place(words[w], p.first, p.second);
      tally(w, 1);
    }
    where.erase(p);
  }
  return BpeModel(std::move(merges));
}

std::vector<Tokens> bpe_stream(const Corpus& corpus) {
  std::vector<Tokens> out;
  out.reserve(corpus.size() * 2);
  for (const auto& s : corpus) {
    out.push_back(s.source);
    out.push_back(s.target);
  }
  return out;
}

}  // namespace gecadapt
