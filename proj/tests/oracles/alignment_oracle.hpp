#pragma once

// Reference alignments for the character accuracy metric.

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

struct Score {
  int cost;
  int matches;
};

inline bool preferred(const Score& a, const Score& b) {
  return a.cost < b.cost || (a.cost == b.cost && a.matches > b.matches);
}

// Exhaustive enumeration of every alignment path. Exponential: keep inputs short.
inline Score enumerate_alignments(const std::vector<std::string>& a,
                                  const std::vector<std::string>& b, std::size_t i = 0,
                                  std::size_t j = 0) {
  if (i == a.size()) return {static_cast<int>(b.size() - j), 0};
  if (j == b.size()) return {static_cast<int>(a.size() - i), 0};
  Score diag = enumerate_alignments(a, b, i + 1, j + 1);
  const bool same = a[i] == b[j];
  diag.cost += same ? 0 : 1;
  diag.matches += same ? 1 : 0;
  Score del = enumerate_alignments(a, b, i + 1, j);
  del.cost += 1;
  Score ins = enumerate_alignments(a, b, i, j + 1);
  ins.cost += 1;
  Score best = diag;
  if (preferred(del, best)) best = del;
  if (preferred(ins, best)) best = ins;
  return best;
}

// Same search with memoization of suffix problems; usable up to length ~12+.
inline Score memo_alignment(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::pair<std::size_t, std::size_t>, Score> memo;
  std::function<Score(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> Score {
    if (i == a.size()) return {static_cast<int>(b.size() - j), 0};
    if (j == b.size()) return {static_cast<int>(a.size() - i), 0};
    if (auto it = memo.find({i, j}); it != memo.end()) return it->second;
    Score diag = go(i + 1, j + 1);
    const bool same = a[i] == b[j];
    diag.cost += same ? 0 : 1;
    diag.matches += same ? 1 : 0;
    Score del = go(i + 1, j);
    del.cost += 1;
    Score ins = go(i, j + 1);
    ins.cost += 1;
    Score best = diag;
    if (preferred(del, best)) best = del;
    if (preferred(ins, best)) best = ins;
    memo[{i, j}] = best;
    return best;
  };
  return go(0, 0);
}

inline int accuracy_percent(int matches, std::size_t truth_len) {
  // round-half-up of 100 * matches / len using exact integers
  return static_cast<int>((200 * static_cast<long>(matches) + static_cast<long>(truth_len)) /
                          (2 * static_cast<long>(truth_len)));
}

}  // namespace oracle
