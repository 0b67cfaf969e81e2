#pragma once

// Irreducible permutations, the Rauzy operations a and b, their unimodular
// matrices, and Rauzy classes.
//
// Permutations are 1-indexed: image()[j-1] holds pi(j).

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "zipflow/core.hpp"
#include "zipflow/int_matrix.hpp"

namespace zipflow {

enum class RauzyLabel : char { a = 'a', b = 'b' };

inline char to_char(RauzyLabel l) { return static_cast<char>(l); }

class Permutation {
 public:
  Permutation() = default;

  /// Validates that `image` is a bijection of {1..m}. Irreducibility is not checked.
  explicit Permutation(std::vector<int> image) : image_(std::move(image)) {
    const int m = size();
    require(m >= 1, "permutation must have at least one symbol");
    std::vector<bool> seen(static_cast<std::size_t>(m) + 1, false);
    for (int v : image_) {
      require(v >= 1 && v <= m && !seen[static_cast<std::size_t>(v)],
              "permutation image is not a bijection of {1.." + std::to_string(m) + "}");
      seen[static_cast<std::size_t>(v)] = true;
    }
    inverse_.assign(static_cast<std::size_t>(m), 0);
    for (int j = 1; j <= m; ++j) inverse_[static_cast<std::size_t>(image_[static_cast<std::size_t>(j - 1)] - 1)] = j;
  }

  /// Parses "3,2,1" or "3 2 1".
  static Permutation parse(const std::string& text) {
    std::vector<int> img;
    std::string tok;
    for (char c : text) {
      if (c == ',' || c == ' ' || c == '(' || c == ')') {
        if (!tok.empty()) img.push_back(parse_int(tok));
        tok.clear();
      } else {
        tok.push_back(c);
      }
    }
    if (!tok.empty()) img.push_back(parse_int(tok));
    return Permutation(std::move(img));
  }

  int size() const noexcept { return static_cast<int>(image_.size()); }
  /// pi(j), 1 <= j <= m.
  int operator()(int j) const { return image_[static_cast<std::size_t>(j - 1)]; }
  /// pi^{-1}(v), 1 <= v <= m.
  int inv(int v) const { return inverse_[static_cast<std::size_t>(v - 1)]; }
  const std::vector<int>& image() const noexcept { return image_; }

  auto operator<=>(const Permutation& o) const { return image_ <=> o.image_; }
  bool operator==(const Permutation& o) const { return image_ == o.image_; }

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < image_.size(); ++i) s += (i ? " " : "") + std::to_string(image_[i]);
    return s + ")";
  }

 private:
  static int parse_int(const std::string& tok) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      require(used == tok.size(), "bad permutation entry '" + tok + "'");
      return v;
    } catch (const std::logic_error&) {
      throw ValidationError("bad permutation entry '" + tok + "'");
    }
  }

  std::vector<int> image_;
  std::vector<int> inverse_;
};

/// True iff no proper prefix {1..k}, k < m, is mapped onto itself.
inline bool is_irreducible(const Permutation& pi) {
  const int m = pi.size();
  int running_max = 0;
  for (int k = 1; k < m; ++k) {
    running_max = std::max(running_max, pi(k));
    if (running_max == k) return false;
  }
  return true;
}

inline void require_irreducible(const Permutation& pi) {
  require(is_irreducible(pi), "permutation " + pi.str() + " is reducible");
  require(pi.size() >= 2, "Rauzy operations need at least two symbols");
}

inline Permutation rauzy_a(const Permutation& pi) {
  require_irreducible(pi);
  const int m = pi.size();
  const int k = pi.inv(m);
  std::vector<int> img(static_cast<std::size_t>(m));
  for (int j = 1; j <= m; ++j) {
    int v;
    if (j <= k) v = pi(j);
    else if (j == k + 1) v = pi(m);
    else v = pi(j - 1);
    img[static_cast<std::size_t>(j - 1)] = v;
  }
  return Permutation(std::move(img));
}

inline Permutation rauzy_b(const Permutation& pi) {
  require_irreducible(pi);
  const int m = pi.size();
  const int pm = pi(m);
  std::vector<int> img(static_cast<std::size_t>(m));
  for (int j = 1; j <= m; ++j) {
    const int pj = pi(j);
    int v;
    if (pj <= pm) v = pj;
    else if (pj < m) v = pj + 1;
    else v = pm + 1;
    img[static_cast<std::size_t>(j - 1)] = v;
  }
  return Permutation(std::move(img));
}

inline Permutation rauzy_move(const Permutation& pi, RauzyLabel l) {
  return l == RauzyLabel::a ? rauzy_a(pi) : rauzy_b(pi);
}

/// A(pi,a) = sum_{i<=k} E_ii + E_{m,k+1} + sum_{i=k}^{m-1} E_{i,i+1}, k = pi^{-1}(m).
inline IntMatrix matrix_a(const Permutation& pi) {
  require_irreducible(pi);
  const int m = pi.size();
  const int k = pi.inv(m);
  IntMatrix A(m);
  for (int i = 1; i <= k; ++i) A(i - 1, i - 1) += 1;
  A(m - 1, k) += 1;
  for (int i = k; i <= m - 1; ++i) A(i - 1, i) += 1;
  return A;
}

/// A(pi,b) = E + E_{m,k}, k = pi^{-1}(m).
inline IntMatrix matrix_b(const Permutation& pi) {
  require_irreducible(pi);
  const int m = pi.size();
  IntMatrix A = IntMatrix::identity(m);
  A(m - 1, pi.inv(m) - 1) += 1;
  return A;
}

inline IntMatrix rauzy_matrix(const Permutation& pi, RauzyLabel l) {
  return l == RauzyLabel::a ? matrix_a(pi) : matrix_b(pi);
}

struct RauzyEdge {
  std::size_t source;
  RauzyLabel label;
  std::size_t target;
  IntMatrix matrix;
};

struct RauzyClass {
  std::vector<Permutation> members;  // BFS discovery order, start first
  std::vector<RauzyEdge> edges;      // two per member: a then b

  std::size_t index_of(const Permutation& p) const {
    for (std::size_t i = 0; i < members.size(); ++i)
      if (members[i] == p) return i;
    throw ValidationError("permutation " + p.str() + " is not in the class");
  }
  bool contains(const Permutation& p) const {
    return std::find(members.begin(), members.end(), p) != members.end();
  }
};

inline constexpr std::size_t kDefaultClassCap = 1'000'000;

/// Breadth-first closure of {pi} under a and b.
inline RauzyClass rauzy_class(const Permutation& pi, std::size_t cap = kDefaultClassCap) {
  require_irreducible(pi);
  RauzyClass cls;
  std::map<Permutation, std::size_t> index;
  std::deque<std::size_t> queue;
  index.emplace(pi, 0);
  cls.members.push_back(pi);
  queue.push_back(0);
  while (!queue.empty()) {
    const std::size_t src = queue.front();
    queue.pop_front();
    for (RauzyLabel l : {RauzyLabel::a, RauzyLabel::b}) {
      const Permutation& from = cls.members[src];
      Permutation to = rauzy_move(from, l);
      IntMatrix mat = rauzy_matrix(from, l);
      auto [it, inserted] = index.emplace(to, cls.members.size());
      if (inserted) {
        if (cls.members.size() >= cap)
          throw ResourceError("Rauzy class exceeds the size cap of " + std::to_string(cap));
        cls.members.push_back(std::move(to));
        queue.push_back(it->second);
      }
      cls.edges.push_back({src, l, it->second, std::move(mat)});
    }
  }
  return cls;
}

}  // namespace zipflow
