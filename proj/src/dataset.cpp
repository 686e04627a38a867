#include "mobillm/dataset.hpp"

#include <fstream>
#include <sstream>

#include "mobillm/rng.hpp"

namespace mobillm {

SyntheticTask::SyntheticTask(std::uint32_t vocab_size, std::size_t seq_len, std::size_t batch_size,
                             std::uint64_t seed, std::size_t samples)
    : vocab_(vocab_size), seq_(seq_len), batch_(batch_size), seed_(seed), samples_(samples) {
  if (vocab_size == 0 || seq_len == 0 || batch_size == 0) {
    throw ConfigError("synthetic task: vocab, seq and batch must be positive");
  }
}

std::uint32_t SyntheticTask::label_for(std::span<const std::uint32_t> tokens) {
  std::size_t even = 0;
  for (std::uint32_t t : tokens) even += (t % 2 == 0) ? 1 : 0;
  return even > tokens.size() - even ? 1u : 0u;
}

Batch SyntheticTask::batch(std::uint64_t index) const {
  Rng rng(mix_seed(seed_, index));
  Batch b;
  b.tokens.batch = batch_;
  b.tokens.seq = seq_;
  b.tokens.ids.resize(batch_ * seq_);
  for (auto& id : b.tokens.ids) id = static_cast<std::uint32_t>(rng.below(vocab_));
  b.labels.resize(batch_);
  for (std::size_t i = 0; i < batch_; ++i) {
    b.labels[i] = label_for(std::span<const std::uint32_t>(b.tokens.ids).subspan(i * seq_, seq_));
  }
  return b;
}

CsvDataset::CsvDataset(const std::string& path, std::size_t batch_size) : batch_(batch_size) {
  if (batch_size == 0) throw ConfigError("csv dataset: batch must be positive");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::uint32_t> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(cell, &used);
        if (v > 0xFFFFFFFFul) throw std::out_of_range("id");
        fields.push_back(static_cast<std::uint32_t>(v));
      } catch (const std::logic_error&) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": not an unsigned integer: '" + cell + "'");
      }
    }
    if (fields.size() < 2) throw FormatError(path + ":" + std::to_string(line_no) + ": need tokens and a label");
    labels_.push_back(fields.back());
    fields.pop_back();
    if (seq_ == 0) seq_ = fields.size();
    if (fields.size() != seq_) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": row length differs from the first row");
    }
    for (std::uint32_t t : fields) max_token_ = std::max(max_token_, t);
    rows_.push_back(std::move(fields));
  }
  if (rows_.empty()) throw FormatError(path + ": no rows");
}

Batch CsvDataset::batch(std::uint64_t index) const {
  Batch b;
  b.tokens.batch = batch_;
  b.tokens.seq = seq_;
  b.tokens.ids.reserve(batch_ * seq_);
  for (std::size_t i = 0; i < batch_; ++i) {
    const std::size_t row = static_cast<std::size_t>((index * batch_ + i) % rows_.size());
    b.tokens.ids.insert(b.tokens.ids.end(), rows_[row].begin(), rows_[row].end());
    b.labels.push_back(labels_[row]);
  }
  return b;
}

std::unique_ptr<Dataset> make_dataset(const std::string& spec, std::uint32_t vocab_size,
                                      std::size_t seq_len, std::size_t batch_size,
                                      std::uint64_t seed, std::size_t samples) {
  if (spec == "synth") {
    return std::make_unique<SyntheticTask>(vocab_size, seq_len, batch_size, seed, samples);
  }
  if (spec.rfind("csv:", 0) == 0) {
    auto csv = std::make_unique<CsvDataset>(spec.substr(4), batch_size);
    if (csv->max_token() >= vocab_size) {
      throw ConfigError("csv dataset: token id " + std::to_string(csv->max_token()) +
                        " outside vocabulary of " + std::to_string(vocab_size));
    }
    return csv;
  }
  throw ConfigError("unknown task '" + spec + "' (expected synth or csv:PATH)");
}

}  // namespace mobillm
