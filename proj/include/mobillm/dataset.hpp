#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mobillm/backbone.hpp"

namespace mobillm {

struct Batch {
  TokenBatch tokens;
  std::vector<std::uint32_t> labels;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  // Deterministic in the index.
  virtual Batch batch(std::uint64_t index) const = 0;
  virtual std::size_t samples() const = 0;
  virtual std::size_t batch_size() const = 0;
  virtual std::size_t seq_len() const = 0;
};

// Majority-parity task over uniform tokens: label 1 when even ids outnumber
// odd ids. With an even vocabulary and odd sequence length the classes are
// balanced and never tied.
class SyntheticTask : public Dataset {
 public:
  SyntheticTask(std::uint32_t vocab_size, std::size_t seq_len, std::size_t batch_size,
                std::uint64_t seed, std::size_t samples);

  static std::uint32_t label_for(std::span<const std::uint32_t> tokens);

  Batch batch(std::uint64_t index) const override;
  std::size_t samples() const override { return samples_; }
  std::size_t batch_size() const override { return batch_; }
  std::size_t seq_len() const override { return seq_; }

 private:
  std::uint32_t vocab_;
  std::size_t seq_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::size_t samples_;
};

// Pre-tokenized rows "id,id,...,id,label". All rows share one length;
// batches wrap around the file.
class CsvDataset : public Dataset {
 public:
  CsvDataset(const std::string& path, std::size_t batch_size);

  Batch batch(std::uint64_t index) const override;
  std::size_t samples() const override { return rows_.size(); }
  std::size_t batch_size() const override { return batch_; }
  std::size_t seq_len() const override { return seq_; }
  std::uint32_t max_token() const noexcept { return max_token_; }

 private:
  std::vector<std::vector<std::uint32_t>> rows_;
  std::vector<std::uint32_t> labels_;
  std::size_t batch_;
  std::size_t seq_ = 0;
  std::uint32_t max_token_ = 0;
};

// "synth" or "csv:PATH".
std::unique_ptr<Dataset> make_dataset(const std::string& spec, std::uint32_t vocab_size,
                                      std::size_t seq_len, std::size_t batch_size,
                                      std::uint64_t seed, std::size_t samples);

}  // namespace mobillm
