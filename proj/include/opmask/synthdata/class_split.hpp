#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/rng.hpp"

namespace opmask::synth {

// Strong classes carry mask labels, weak classes only boxes.
struct ClassSplit {
  std::set<int> strong_ids;
  std::set<int> weak_ids;

  bool is_strong(int id) const { return strong_ids.count(id) != 0; }
  bool is_weak(int id) const { return weak_ids.count(id) != 0; }
  std::set<int> all_ids() const {
    std::set<int> all = strong_ids;
    all.insert(weak_ids.begin(), weak_ids.end());
    return all;
  }

  friend bool operator==(const ClassSplit&, const ClassSplit&) = default;
};

inline ClassSplit make_class_split(const std::set<int>& all_ids, const std::set<int>& strong_ids) {
  for (int id : strong_ids)
    if (!all_ids.count(id))
      throw ConfigError("class split: strong id " + std::to_string(id) + " is not a known class");
  ClassSplit s;
  s.strong_ids = strong_ids;
  std::set_difference(all_ids.begin(), all_ids.end(), strong_ids.begin(), strong_ids.end(),
                      std::inserter(s.weak_ids, s.weak_ids.end()));
  return s;
}

// k strong classes drawn without replacement.
inline ClassSplit make_random_split(const std::set<int>& all_ids, int k, std::uint64_t seed) {
  if (k < 0 || k > static_cast<int>(all_ids.size()))
    throw ConfigError("class split: cannot pick " + std::to_string(k) + " strong classes out of " +
                      std::to_string(all_ids.size()));
  std::vector<int> ids(all_ids.begin(), all_ids.end());
  Rng rng(seed);
  rng.shuffle(ids.begin(), ids.end());
  return make_class_split(all_ids, std::set<int>(ids.begin(), ids.begin() + k));
}

inline std::set<int> id_range(int n) {
  std::set<int> s;
  for (int i = 0; i < n; ++i) s.insert(i);
  return s;
}

// Parses "0,1,2,3" or "0-3" (mixed forms allowed).
inline std::set<int> parse_id_list(const std::string& text) {
  std::set<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string tok = text.substr(pos, comma - pos);
    pos = comma + 1;
    if (tok.empty()) continue;
    try {
      const auto dash = tok.find('-', 1);
      if (dash != std::string::npos) {
        const int a = std::stoi(tok.substr(0, dash)), b = std::stoi(tok.substr(dash + 1));
        for (int i = a; i <= b; ++i) out.insert(i);
      } else {
        out.insert(std::stoi(tok));
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad class id list: '" + text + "'");
    }
  }
  return out;
}

}  // namespace opmask::synth
