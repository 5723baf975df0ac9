#include "a3/corpus.hpp"

#include <algorithm>
#include <array>

#include "a3/rng.hpp"

namespace a3::corpus {

namespace {

template <typename C>
const auto& pick(const C& items, Rng& rng) {
  return items[rng.below(items.size())];
}

const std::array<const char*, 24> kNames = {
    "anna", "ben",  "clara", "david", "ella", "finn",  "grace", "henry",
    "iris", "jack", "kate",  "leo",   "mia",  "noah",  "olive", "paul",
    "rosa", "sam",  "tom",   "uma",   "vera", "will",  "zoe",   "max"};

const std::array<const char*, 12> kAnimals = {"cat", "dog", "fox", "owl", "rabbit", "horse",
                                              "duck", "bear", "mouse", "frog", "goat", "bird"};

const std::array<const char*, 12> kAdjectives = {"small", "old",   "happy", "quiet", "red",  "big",
                                                 "brave", "tired", "kind",  "green", "warm", "shy"};

struct Setting {
  const char* place;
  std::array<const char*, 3> things;
};

const std::array<Setting, 8> kSettings = {{
    {"forest", {"tree", "path", "river"}},
    {"village", {"well", "church", "square"}},
    {"garden", {"flower", "bench", "pond"}},
    {"beach", {"shell", "wave", "boat"}},
    {"farm", {"barn", "field", "fence"}},
    {"school", {"desk", "book", "clock"}},
    {"castle", {"tower", "gate", "hall"}},
    {"mountain", {"rock", "cave", "snow"}},
}};

const std::array<const char*, 8> kFeelings = {"happy", "sad", "afraid", "proud",
                                              "sleepy", "hungry", "calm", "excited"};

std::string story(Rng& rng) {
  const std::string hero = pick(kNames, rng);
  std::string friend_name = pick(kNames, rng);
  while (friend_name == hero) friend_name = pick(kNames, rng);
  const std::string animal = pick(kAnimals, rng);
  const std::string adj = pick(kAdjectives, rng);
  const Setting& set = pick(kSettings, rng);
  const std::string thing = pick(set.things, rng);
  const std::string feeling = pick(kFeelings, rng);

  std::string s = "once upon a time, " + hero + " lived near the " + set.place + ". ";
  switch (rng.below(3)) {
    case 0: s += "one day " + hero + " found a " + adj + " " + animal + " by the " + thing + ". "; break;
    case 1: s += "every morning " + hero + " walked to the " + thing + " with a " + adj + " " + animal + ". "; break;
    default: s += hero + " had a " + adj + " " + animal + " that liked the " + thing + ". ";
  }
  s += "the " + animal + " was " + feeling + ". ";
  const int beats = 1 + static_cast<int>(rng.below(3));
  for (int b = 0; b < beats; ++b) {
    const std::string other = pick(set.things, rng);
    switch (rng.below(4)) {
      case 0: s += hero + " and " + friend_name + " went to the " + other + " together. "; break;
      case 1: s += friend_name + " asked " + hero + " about the " + animal + ". "; break;
      case 2: s += "they sat by the " + other + " and talked until it was dark. "; break;
      default: s += "the " + animal + " ran to the " + other + " and " + hero + " followed it. ";
    }
  }
  switch (rng.below(3)) {
    case 0: s += "in the end, " + hero + " and the " + animal + " were friends.\n"; break;
    case 1: s += "after that day, " + hero + " never left the " + set.place + " again.\n"; break;
    default: s += friend_name + " smiled, and the " + animal + " went home.\n";
  }
  return s;
}

struct Shop {
  const char* place;
  std::array<const char*, 3> items;
};

const std::array<Shop, 8> kShops = {{
    {"bakery", {"bread", "cake", "rolls"}},
    {"market", {"apples", "grapes", "plums"}},
    {"pharmacy", {"medicine", "bandages", "vitamins"}},
    {"library", {"novels", "maps", "comics"}},
    {"butcher", {"sausages", "steak", "ham"}},
    {"florist", {"roses", "tulips", "lilies"}},
    {"bookshop", {"poems", "atlases", "diaries"}},
    {"hardware store", {"nails", "hammers", "paint"}},
}};

}  // namespace

std::string stories(std::size_t bytes, std::uint64_t seed) {
  Rng rng(seed);
  std::string out;
  out.reserve(bytes + 512);
  while (out.size() < bytes) out += story(rng);
  return out;
}

std::string ShopSentence::text() const { return left() + place + right(); }
std::string ShopSentence::left() const { return name + " went to the "; }
std::string ShopSentence::right() const { return " and bought " + item + "."; }

const std::vector<std::string>& shop_places() {
  static const std::vector<std::string> places = [] {
    std::vector<std::string> p;
    for (const auto& s : kShops) p.emplace_back(s.place);
    return p;
  }();
  return places;
}

std::vector<ShopSentence> shop_sentences(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ShopSentence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Shop& shop = pick(kShops, rng);
    out.push_back({pick(kNames, rng), shop.place, pick(shop.items, rng)});
  }
  return out;
}

std::string shop_text(const std::vector<ShopSentence>& sentences, std::size_t width) {
  std::string out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    std::string t = sentences[i].text();
    if (width > 0) {
      t.resize(std::max(width, t.size()), ' ');
      t.resize(width);
    } else if (i) {
      out += ' ';
    }
    out += t;
  }
  return out;
}

std::size_t shop_max_length() {
  std::size_t name = 0, rest = 0;
  for (const char* n : kNames) name = std::max(name, std::string(n).size());
  for (const auto& shop : kShops) {
    for (const char* item : shop.items) {
      rest = std::max(rest, ShopSentence{"", shop.place, item}.text().size());
    }
  }
  return name + rest;
}

}  // namespace a3::corpus
