#include "a3/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "a3/error.hpp"

namespace a3 {

Tokenizer Tokenizer::bytes() {
  Tokenizer t;
  t.mode_ = Mode::bytes;
  return t;
}

Tokenizer Tokenizer::chars(std::string_view charset) {
  Tokenizer t;
  t.mode_ = Mode::chars;
  std::string sorted(charset);
  std::sort(sorted.begin(), sorted.end(),
            [](char a, char b) { return static_cast<unsigned char>(a) < static_cast<unsigned char>(b); });
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.empty()) throw ValidationError("tokenizer: empty charset");
  t.charset_ = sorted;
  t.lookup_.assign(256, -1);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    t.lookup_[static_cast<unsigned char>(sorted[i])] = static_cast<int>(i) + t.offset();
  }
  return t;
}

int Tokenizer::vocab_size() const {
  return offset() + (mode_ == Mode::bytes ? 256 : static_cast<int>(charset_.size()));
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char ch : text) {
    const auto b = static_cast<unsigned char>(ch);
    if (mode_ == Mode::bytes) {
      ids.push_back(static_cast<int>(b) + offset());
    } else if (lookup_[b] >= 0) {
      ids.push_back(lookup_[b]);
    } else {
      std::ostringstream os;
      os << "tokenizer: character ";
      if (b >= 0x20 && b < 0x7f) os << "'" << ch << "' ";
      os << "(0x" << std::hex << static_cast<int>(b) << ") is not in the charset";
      throw ValidationError(os.str());
    }
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < offset() || id >= vocab_size()) {
      throw ValidationError("tokenizer: cannot decode id " + std::to_string(id));
    }
    const int c = id - offset();
    out += mode_ == Mode::bytes ? static_cast<char>(c) : charset_[static_cast<std::size_t>(c)];
  }
  return out;
}

std::string Tokenizer::decode_lossy(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < offset() || id >= vocab_size()) {
      out += '?';
    } else {
      out += decode(std::span<const int>(&id, 1));
    }
  }
  return out;
}

std::vector<std::vector<int>> pack_corpus(std::span<const int> tokens, std::size_t seq_len) {
  if (tokens.empty()) throw ValidationError("pack_corpus: empty corpus");
  if (seq_len == 0) throw ValidationError("pack_corpus: seq_len must be positive");
  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start + seq_len <= tokens.size(); start += seq_len) {
    out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                     tokens.begin() + static_cast<std::ptrdiff_t>(start + seq_len));
  }
  return out;
}

std::vector<std::vector<int>> pack_corpus(const Tokenizer& tok, std::string_view text,
                                          std::size_t seq_len) {
  const auto ids = tok.encode(text);
  return pack_corpus(ids, seq_len);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

namespace {

constexpr char kMagic[4] = {'A', '3', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::string hex(std::string_view s) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (char c : s) {
    const auto b = static_cast<unsigned char>(c);
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

std::string unhex(std::string_view s) {
  if (s.size() % 2) throw FormatError("checkpoint: bad hex field");
  std::string out;
  for (std::size_t i = 0; i < s.size(); i += 2) {
    unsigned v = 0;
    auto [p, ec] = std::from_chars(s.data() + i, s.data() + i + 2, v, 16);
    if (ec != std::errc{} || p != s.data() + i + 2) throw FormatError("checkpoint: bad hex field");
    out += static_cast<char>(v);
  }
  return out;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename Int>
Int parse_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint header missing key " + key);
  Int v{};
  const auto& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw FormatError("checkpoint header: bad value for " + key);
  }
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& c = ckpt.config;
  std::ostringstream hdr;
  hdr << "model.vocab_size=" << c.vocab_size << '\n'
      << "model.d_model=" << c.d_model << '\n'
      << "model.n_layers=" << c.n_layers << '\n'
      << "model.n_heads=" << c.n_heads << '\n'
      << "model.max_len=" << c.max_len << '\n'
      << "model.bos_id=" << c.bos_id << '\n'
      << "model.pad_id=" << c.pad_id << '\n'
      << "tokenizer.mode=" << (ckpt.tokenizer.mode() == Tokenizer::Mode::bytes ? "bytes" : "chars")
      << '\n'
      << "tokenizer.charset=" << hex(ckpt.tokenizer.charset()) << '\n'
      << "seed=" << ckpt.seed << '\n'
      << "step=" << ckpt.step << '\n'
      << "rng=" << hex(ckpt.rng_state) << '\n';
  const std::string header = hdr.str();

  std::string out(kMagic, 4);
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  const auto& tensors = ckpt.params.layout().tensors;
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.rows));
    put_u32(out, static_cast<std::uint32_t>(t.cols));
    const float* data = ckpt.params.at(t.offset);
    for (std::size_t i = 0; i < t.size(); ++i) put_f32(out, data[i]);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader rd(bytes);
  if (rd.take(4, "magic") != std::string_view(kMagic, 4)) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto version = rd.u32("version");
  if (version != Checkpoint::kVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) +
                      " is incompatible with supported version " +
                      std::to_string(Checkpoint::kVersion));
  }
  const auto header_len = rd.u32("header length");
  const std::string header(rd.take(header_len, "header"));

  std::map<std::string, std::string> kv;
  std::istringstream hs(header);
  for (std::string line; std::getline(hs, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint header: malformed line");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  Checkpoint ck;
  ck.config.vocab_size = parse_int<int>(kv, "model.vocab_size");
  ck.config.d_model = parse_int<int>(kv, "model.d_model");
  ck.config.n_layers = parse_int<int>(kv, "model.n_layers");
  ck.config.n_heads = parse_int<int>(kv, "model.n_heads");
  ck.config.max_len = parse_int<int>(kv, "model.max_len");
  ck.config.bos_id = parse_int<int>(kv, "model.bos_id");
  ck.config.pad_id = parse_int<int>(kv, "model.pad_id");
  try {
    ck.config.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const auto mode = kv.count("tokenizer.mode") ? kv.at("tokenizer.mode") : "";
  if (mode == "bytes") {
    ck.tokenizer = Tokenizer::bytes();
  } else if (mode == "chars") {
    ck.tokenizer = Tokenizer::chars(unhex(kv.count("tokenizer.charset") ? kv.at("tokenizer.charset") : ""));
  } else {
    throw FormatError("checkpoint header: unknown tokenizer mode '" + mode + "'");
  }
  ck.seed = parse_int<std::uint64_t>(kv, "seed");
  ck.step = parse_int<std::uint64_t>(kv, "step");
  ck.rng_state = unhex(kv.count("rng") ? kv.at("rng") : "");

  Params<float> params(ck.config);
  const auto& tensors = params.layout().tensors;
  const auto count = rd.u32("tensor count");
  if (count != tensors.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(tensors.size()));
  }
  for (const auto& t : tensors) {
    const auto name_len = rd.u32("tensor name length");
    const auto name = rd.take(name_len, "tensor name");
    const auto rows = rd.u32("tensor rows");
    const auto cols = rd.u32("tensor cols");
    if (name != t.name || rows != t.rows || cols != t.cols) {
      throw FormatError("checkpoint tensor '" + std::string(name) + "' does not match expected '" +
                        t.name + "'");
    }
    const auto raw = rd.take(t.size() * 4, "tensor data");
    float* dst = params.at(t.offset);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + b])) << (8 * b);
      }
      dst[i] = std::bit_cast<float>(v);
    }
  }
  if (!rd.done()) throw FormatError("checkpoint has trailing bytes");
  ck.params = std::move(params);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  // Write to a sibling file first so a failed write never clobbers a good checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace a3
