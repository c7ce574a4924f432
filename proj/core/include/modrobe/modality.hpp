#pragma once

#include <algorithm>
#include <bit>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace modrobe {

/// Subset of the modality universe, stored as a bitmask over universe
/// indices. Cheap to copy, totally ordered (by mask value) so it can key
/// maps deterministically.
class ModalitySet {
 public:
  ModalitySet() = default;

  static ModalitySet from_bits(std::uint32_t bits) {
    ModalitySet s;
    s.bits_ = bits;
    return s;
  }

  static ModalitySet single(std::size_t index) {
    return from_bits(std::uint32_t{1} << index);
  }

  /// The full universe of n modalities.
  static ModalitySet all(std::size_t n) {
    if (n >= 32) throw std::invalid_argument("modality universe too large");
    return from_bits((std::uint32_t{1} << n) - 1);
  }

  std::uint32_t bits() const { return bits_; }
  bool empty() const { return bits_ == 0; }
  std::size_t count() const { return std::popcount(bits_); }

  bool contains(std::size_t index) const {
    return (bits_ >> index) & 1u;
  }

  ModalitySet with(std::size_t index) const {
    return from_bits(bits_ | (std::uint32_t{1} << index));
  }

  bool subset_of(ModalitySet o) const { return (bits_ & ~o.bits_) == 0; }
  bool strict_subset_of(ModalitySet o) const {
    return subset_of(o) && bits_ != o.bits_;
  }
  bool disjoint_with(ModalitySet o) const { return (bits_ & o.bits_) == 0; }

  ModalitySet intersect(ModalitySet o) const {
    return from_bits(bits_ & o.bits_);
  }
  ModalitySet unite(ModalitySet o) const { return from_bits(bits_ | o.bits_); }
  ModalitySet minus(ModalitySet o) const { return from_bits(bits_ & ~o.bits_); }

  /// Member indices in ascending order.
  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < 32; ++i)
      if (contains(i)) out.push_back(i);
    return out;
  }

  auto operator<=>(const ModalitySet&) const = default;

 private:
  std::uint32_t bits_ = 0;
};

/// Fixed, ordered list of modality names; gives sets their textual form.
/// Serialized set names are '+'-joined and sorted lexicographically, e.g.
/// {video, audio} -> "audio+video", so files are stable regardless of the
/// universe's declaration order.
class ModalityUniverse {
 public:
  ModalityUniverse() = default;
  explicit ModalityUniverse(std::vector<std::string> names)
      : names_(std::move(names)) {
    if (names_.empty())
      throw std::invalid_argument("modality universe must not be empty");
    if (names_.size() >= 32)
      throw std::invalid_argument("modality universe too large");
    for (const auto& n : names_) {
      if (n.empty() || n.find('+') != std::string::npos ||
          n.find(',') != std::string::npos)
        throw std::invalid_argument("bad modality name: '" + n + "'");
    }
    for (std::size_t i = 0; i < names_.size(); ++i)
      for (std::size_t j = i + 1; j < names_.size(); ++j)
        if (names_[i] == names_[j])
          throw std::invalid_argument("duplicate modality name: " + names_[i]);
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t index) const { return names_.at(index); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw std::invalid_argument("unknown modality: '" + name + "'");
  }

  ModalitySet full() const { return ModalitySet::all(size()); }

  std::string to_string(ModalitySet s) const {
    std::vector<std::string> parts;
    for (std::size_t i : s.indices()) parts.push_back(name(i));
    std::sort(parts.begin(), parts.end());
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) out += '+';
      out += parts[i];
    }
    return out;
  }

  ModalitySet parse(const std::string& text) const {
    ModalitySet s;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t next = text.find('+', pos);
      if (next == std::string::npos) next = text.size();
      std::string part = text.substr(pos, next - pos);
      if (part.empty())
        throw std::invalid_argument("bad modality set: '" + text + "'");
      s = s.with(index_of(part));
      pos = next + 1;
    }
    return s;
  }

  /// All nonempty subsets, ascending by bitmask value.
  std::vector<ModalitySet> nonempty_subsets() const {
    std::vector<ModalitySet> out;
    std::uint32_t full_bits = full().bits();
    for (std::uint32_t b = 1; b <= full_bits; ++b)
      out.push_back(ModalitySet::from_bits(b));
    return out;
  }

  bool operator==(const ModalityUniverse&) const = default;

 private:
  std::vector<std::string> names_;
};

}  // namespace modrobe
