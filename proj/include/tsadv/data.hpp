#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tsadv/tensor.hpp"

namespace tsadv {

struct LabeledSequence {
  Tensor channels;  // [C x T]
  std::size_t label = 0;
  std::string id;
};

// Per-channel statistics fitted on the training split.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

enum class Split { train, val, test };

const char* split_name(Split s);

struct DatasetBundle {
  std::vector<LabeledSequence> train;
  std::vector<LabeledSequence> val;
  std::vector<LabeledSequence> test;
  std::size_t num_classes = 0;
  std::optional<NormalizationStats> stats;  // set once normalize() has run

  bool normalized() const noexcept { return stats.has_value(); }
  std::size_t channels() const;
  const std::vector<LabeledSequence>& split(Split s) const;

  // Throws LoadError if the split invariants (non-empty train/test, disjoint ids,
  // labels in range, consistent channel counts, finite values) do not hold.
  void validate() const;
};

// One JSON object per line: {"id", "split", "label", "channels": [[...] x C]}.
// Objects with "kind": "header" carry provenance and are skipped.
DatasetBundle load_jsonl(const std::filesystem::path& path);
void save_jsonl(const DatasetBundle& bundle, const std::filesystem::path& path);
// The exact text save_jsonl would write.
std::string to_jsonl(const DatasetBundle& bundle);

// FNV-1a over the canonical JSONL text of the bundle's raw records, hex encoded.
std::string dataset_checksum(const DatasetBundle& bundle);

// Fits per-channel mean/std on train and applies (x - mean) / std to every split.
// Throws UsageError on a second application, LoadError on a constant channel.
DatasetBundle normalize(DatasetBundle bundle);
LabeledSequence apply_normalization(const LabeledSequence& seq, const NormalizationStats& stats);

struct SynthSpec {
  std::size_t num_classes = 2;
  std::size_t per_class = 50;
  std::size_t channels = 3;
  std::size_t length = 64;
  double noise = 0.3;
  std::uint64_t seed = 7;
};

// Noisy sinusoids with class-dependent frequency and phase, split 60/20/20 over
// the shuffled pool (train first; test receives at least one sequence).
DatasetBundle synth_generate(const SynthSpec& spec);

// Character-trajectories conversion.
inline constexpr std::size_t kCharTrajLength = 206;
inline constexpr std::size_t kCharTrajRecords = 2858;
inline constexpr std::size_t kCharTrajTrain = 1383;
inline constexpr std::size_t kCharTrajVal = 606;
inline constexpr std::size_t kCharTrajTest = 869;

struct ConversionSummary {
  std::size_t records = 0;
  std::size_t train = 0, val = 0, test = 0;
  std::size_t num_classes = 0;
  std::size_t padded = 0, truncated = 0;
};

// Reads mixoutALL_shifted.mat (directly, from a directory, or from the UCI zip),
// pads/truncates every trajectory to 206 steps and writes JSONL with a seeded
// 1383/606/869 split. Throws ConversionError on missing or corrupt input.
ConversionSummary convert_uci_charset(const std::filesystem::path& source, const std::filesystem::path& out,
                                      std::uint64_t seed = 42);

}  // namespace tsadv
