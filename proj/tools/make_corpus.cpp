// Writes the synthetic corpora used by the tests and the README examples.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "a3/corpus.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic text corpus"};
  std::string kind = "stories", out;
  std::size_t size = 1 << 20;
  std::uint64_t seed = 1;
  std::size_t width = 0;
  app.add_option("--kind", kind, "stories or shop")
      ->check(CLI::IsMember({"stories", "shop"}))
      ->capture_default_str();
  app.add_option("--size", size, "bytes (stories) or sentences (shop)")->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--width", width, "shop: pad every sentence to this many bytes (0: no padding)")
      ->capture_default_str();
  app.add_option("--out", out, "output file")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string text = kind == "stories"
                               ? a3::corpus::stories(size, seed)
                               : a3::corpus::shop_text(a3::corpus::shop_sentences(size, seed), width);
  std::ofstream os(out, std::ios::binary);
  if (!os.write(text.data(), static_cast<std::streamsize>(text.size()))) {
    std::cerr << "error: cannot write " << out << '\n';
    return 1;
  }
  std::cout << "wrote " << text.size() << " bytes to " << out << '\n';
  return 0;
}
