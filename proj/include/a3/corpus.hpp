#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace a3::corpus {

// Short generated stories (characters, places, objects, simple plots) in
// plain lowercase-ish English. Deterministic in seed; at least `bytes` long.
std::string stories(std::size_t bytes, std::uint64_t seed);

// "<name> went to the <place> and bought <item>." sentences. Every item is
// sold at exactly one place, so the item pins down the place.
struct ShopSentence {
  std::string name, place, item;
  std::string text() const;
  std::string left() const;   // text before the place
  std::string right() const;  // text after the place
};

const std::vector<std::string>& shop_places();
std::vector<ShopSentence> shop_sentences(std::size_t count, std::uint64_t seed);
// Sentences joined by single spaces, or, with width > 0, each sentence
// right-padded with spaces to exactly `width` bytes so that packing with
// seq_len == width yields one sentence per sequence.
std::string shop_text(const std::vector<ShopSentence>& sentences, std::size_t width = 0);
// Longest possible sentence, in bytes.
std::size_t shop_max_length();

}  // namespace a3::corpus
