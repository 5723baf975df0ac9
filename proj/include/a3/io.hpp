#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "a3/net.hpp"

namespace a3 {

// Byte or character-set tokenizer. Id 0 is reserved for BOS; content ids
// start at offset().
class Tokenizer {
 public:
  enum class Mode { bytes, chars };

  static Tokenizer bytes();
  // Every distinct byte of charset becomes one token, in sorted order.
  static Tokenizer chars(std::string_view charset);

  Mode mode() const { return mode_; }
  const std::string& charset() const { return charset_; }
  int bos_id() const { return 0; }
  int offset() const { return 1; }
  int vocab_size() const;

  // Throws ValidationError naming the character when it is outside the charset.
  std::vector<int> encode(std::string_view text) const;
  // Throws ValidationError on reserved or out-of-range ids.
  std::string decode(std::span<const int> ids) const;
  // Decode that renders reserved/out-of-range ids as '?'; used for display.
  std::string decode_lossy(std::span<const int> ids) const;

  bool operator==(const Tokenizer&) const = default;

 private:
  Mode mode_ = Mode::bytes;
  std::string charset_;
  std::vector<int> lookup_;  // byte -> id, -1 when unknown
};

// Concatenate-and-chunk packing into seq_len windows; the partial tail is
// dropped. Throws ValidationError on empty input or seq_len == 0.
std::vector<std::vector<int>> pack_corpus(std::span<const int> tokens, std::size_t seq_len);
std::vector<std::vector<int>> pack_corpus(const Tokenizer& tok, std::string_view text,
                                          std::size_t seq_len);

std::string read_file(const std::filesystem::path& path);

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  Tokenizer tokenizer = Tokenizer::bytes();
  Params<float> params;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string rng_state;
};

// Layout: "A3CK", u32 version, u32 header length, header text
// (key=value lines), u32 tensor count, then per tensor u32 name length,
// name, u32 rows, u32 cols, rows*cols little-endian float32. Integers are
// little-endian.
std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, version mismatch, truncation, or
// tensors that do not match the header config.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace a3
