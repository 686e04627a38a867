#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mobillm/backbone.hpp"
#include "mobillm/rng.hpp"

namespace mobillm::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mobillm_" + tag + "_" + std::to_string(Rng(std::random_device{}()).next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline BackboneConfig tiny_backbone(std::uint32_t hidden = 8, std::uint32_t layers = 2) {
  BackboneConfig c;
  c.vocab_size = 16;
  c.hidden = hidden;
  c.layers = layers;
  c.heads = 2;
  c.ffn_dim = 4 * hidden;
  c.max_seq = 8;
  c.block_cuts = uniform_cuts(layers, layers);
  c.tap_embedding = true;
  return c;
}

inline TokenBatch random_tokens(std::size_t batch, std::size_t seq, std::uint32_t vocab,
                                std::uint64_t seed) {
  Rng rng(seed);
  TokenBatch t{batch, seq, std::vector<std::uint32_t>(batch * seq)};
  for (auto& id : t.ids) id = static_cast<std::uint32_t>(rng.below(vocab));
  return t;
}

}  // namespace mobillm::test
