#include "tsadv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "matfile.hpp"
#include "tsadv/error.hpp"
#include "tsadv/rng.hpp"

namespace tsadv {
namespace {

using nlohmann::json;

json record_json(const LabeledSequence& seq, Split split) {
  json channels = json::array();
  const std::size_t c_count = seq.channels.dim(0), steps = seq.channels.dim(1);
  for (std::size_t c = 0; c < c_count; ++c) {
    json row = json::array();
    for (std::size_t t = 0; t < steps; ++t) row.push_back(seq.channels.at(c, t));
    channels.push_back(std::move(row));
  }
  // Keys in a fixed order so the text is canonical.
  json rec = json::object();
  rec["id"] = seq.id;
  rec["split"] = split_name(split);
  rec["label"] = seq.label;
  rec["channels"] = std::move(channels);
  return rec;
}

Split parse_split(const std::string& s, std::size_t line) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw LoadError("line " + std::to_string(line) + ": unknown split '" + s + "'");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConversionError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::size_t DatasetBundle::channels() const {
  if (train.empty()) throw LoadError("dataset has an empty train split");
  return train.front().channels.dim(0);
}

const std::vector<LabeledSequence>& DatasetBundle::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

void DatasetBundle::validate() const {
  if (train.empty()) throw LoadError("dataset has an empty train split");
  if (test.empty()) throw LoadError("dataset has an empty test split");
  const std::size_t c_count = channels();
  std::set<std::string> ids;
  for (Split s : {Split::train, Split::val, Split::test})
    for (const auto& seq : split(s)) {
      if (!ids.insert(seq.id).second) throw LoadError("duplicate sequence id '" + seq.id + "'");
      if (seq.label >= num_classes)
        throw LoadError("sequence '" + seq.id + "' label " + std::to_string(seq.label) + " out of range");
      if (seq.channels.rank() != 2 || seq.channels.dim(0) != c_count)
        throw LoadError("sequence '" + seq.id + "' has inconsistent channel count");
      if (!all_finite(seq.channels)) throw LoadError("sequence '" + seq.id + "' contains non-finite values");
    }
}

DatasetBundle load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open dataset " + path.string());
  DatasetBundle bundle;
  std::size_t max_label = 0;
  bool any = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw LoadError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (rec.is_object() && rec.value("kind", std::string{}) == "header") continue;
    try {
      LabeledSequence seq;
      seq.id = rec.at("id").get<std::string>();
      const auto label = rec.at("label").get<long long>();
      if (label < 0) throw LoadError("line " + std::to_string(line_no) + ": negative label");
      seq.label = static_cast<std::size_t>(label);
      const auto& channels = rec.at("channels");
      if (!channels.is_array() || channels.empty() || !channels[0].is_array() || channels[0].empty())
        throw LoadError("line " + std::to_string(line_no) + ": channels must be a non-empty array of arrays");
      const std::size_t c_count = channels.size(), steps = channels[0].size();
      Tensor t({c_count, steps});
      for (std::size_t c = 0; c < c_count; ++c) {
        if (channels[c].size() != steps)
          throw LoadError("line " + std::to_string(line_no) + ": ragged channel lengths in record '" + seq.id + "'");
        for (std::size_t s = 0; s < steps; ++s) t.at(c, s) = channels[c][s].get<double>();
      }
      seq.channels = std::move(t);
      max_label = std::max(max_label, seq.label);
      any = true;
      switch (parse_split(rec.at("split").get<std::string>(), line_no)) {
        case Split::train: bundle.train.push_back(std::move(seq)); break;
        case Split::val: bundle.val.push_back(std::move(seq)); break;
        case Split::test: bundle.test.push_back(std::move(seq)); break;
      }
    } catch (const json::exception& e) {
      throw LoadError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
  bundle.num_classes = any ? max_label + 1 : 0;
  bundle.validate();
  return bundle;
}

std::string to_jsonl(const DatasetBundle& bundle) {
  std::string out;
  for (Split s : {Split::train, Split::val, Split::test})
    for (const auto& seq : bundle.split(s)) {
      out += record_json(seq, s).dump();
      out += '\n';
    }
  return out;
}

void save_jsonl(const DatasetBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_jsonl(bundle);
  if (!out) throw IoError("write failed for " + path.string());
}

std::string dataset_checksum(const DatasetBundle& bundle) {
  std::ostringstream os;
  os << "fnv1a64:" << std::hex << fnv1a64(to_jsonl(bundle));
  return os.str();
}

LabeledSequence apply_normalization(const LabeledSequence& seq, const NormalizationStats& stats) {
  LabeledSequence out = seq;
  const std::size_t c_count = out.channels.dim(0), steps = out.channels.dim(1);
  if (stats.mean.size() != c_count) throw UsageError("normalization stats do not match channel count");
  for (std::size_t c = 0; c < c_count; ++c)
    for (std::size_t t = 0; t < steps; ++t)
      out.channels.at(c, t) = (out.channels.at(c, t) - stats.mean[c]) / stats.stddev[c];
  return out;
}

DatasetBundle normalize(DatasetBundle bundle) {
  if (bundle.normalized()) throw UsageError("dataset is already normalized");
  const std::size_t c_count = bundle.channels();
  NormalizationStats stats{std::vector<double>(c_count, 0.0), std::vector<double>(c_count, 0.0)};
  std::vector<double> counts(c_count, 0.0);
  for (const auto& seq : bundle.train)
    for (std::size_t c = 0; c < c_count; ++c)
      for (std::size_t t = 0; t < seq.channels.dim(1); ++t) {
        stats.mean[c] += seq.channels.at(c, t);
        counts[c] += 1.0;
      }
  for (std::size_t c = 0; c < c_count; ++c) stats.mean[c] /= counts[c];
  for (const auto& seq : bundle.train)
    for (std::size_t c = 0; c < c_count; ++c)
      for (std::size_t t = 0; t < seq.channels.dim(1); ++t) {
        const double d = seq.channels.at(c, t) - stats.mean[c];
        stats.stddev[c] += d * d;
      }
  for (std::size_t c = 0; c < c_count; ++c) {
    stats.stddev[c] = std::sqrt(stats.stddev[c] / counts[c]);
    if (!(stats.stddev[c] > 1e-12))
      throw LoadError("channel " + std::to_string(c) + " has zero variance on the train split");
  }
  for (auto* split : {&bundle.train, &bundle.val, &bundle.test})
    for (auto& seq : *split) seq = apply_normalization(seq, stats);
  bundle.stats = std::move(stats);
  return bundle;
}

DatasetBundle synth_generate(const SynthSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
  if (spec.per_class < 1 || spec.channels < 1 || spec.length < 1)
    throw ConfigError("synth: per_class, channels and length must be >= 1");
  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise);
  std::uniform_real_distribution<double> jitter(-0.15, 0.15);

  std::vector<LabeledSequence> pool;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    // Frequency and level both move with the class, so short kernels followed by
    // global average pooling can separate them.
    const double freq = 1.0 + 2.0 * static_cast<double>(k);
    const double phase = 0.7 * static_cast<double>(k);
    const double level = static_cast<double>(k) - 0.5 * static_cast<double>(spec.num_classes - 1);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      Tensor x({spec.channels, spec.length});
      const double shift = jitter(rng);
      for (std::size_t c = 0; c < spec.channels; ++c)
        for (std::size_t t = 0; t < spec.length; ++t) {
          const double u = static_cast<double>(t) / static_cast<double>(spec.length);
          x.at(c, t) = std::sin(2.0 * std::numbers::pi * freq * u + phase + shift + 0.5 * static_cast<double>(c)) +
                       level + noise(rng);
        }
      pool.push_back({std::move(x), k, "synth-" + std::to_string(k) + "-" + std::to_string(i)});
    }
  }
  std::shuffle(pool.begin(), pool.end(), rng);

  const std::size_t n = pool.size();
  std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.6 * static_cast<double>(n))));
  std::size_t n_val = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n)));
  if (n_train + n_val >= n) {
    // Guarantee a non-empty test split: shrink val first, then train.
    const std::size_t over = n_train + n_val - (n - 1);
    const std::size_t from_val = std::min(over, n_val);
    n_val -= from_val;
    n_train -= over - from_val;
  }
  DatasetBundle bundle;
  bundle.num_classes = spec.num_classes;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? bundle.train : (i < n_train + n_val ? bundle.val : bundle.test);
    dst.push_back(std::move(pool[i]));
  }
  bundle.validate();
  return bundle;
}

ConversionSummary convert_uci_charset(const std::filesystem::path& source, const std::filesystem::path& out,
                                      std::uint64_t seed) {
  static const std::string kMatName = "mixoutALL_shifted.mat";
  std::filesystem::path src = source;
  if (std::filesystem::is_directory(src)) {
    if (std::filesystem::exists(src / kMatName)) {
      src /= kMatName;
    } else {
      for (const auto& entry : std::filesystem::directory_iterator(src))
        if (entry.path().extension() == ".zip") src = entry.path();
    }
  }
  if (!std::filesystem::is_regular_file(src))
    throw ConversionError("character trajectories source not found: " + source.string());

  auto bytes = read_file_bytes(src);
  if (bytes.size() >= 4 && bytes[0] == 'P' && bytes[1] == 'K') bytes = detail::read_zip_entry(bytes, kMatName);
  const auto vars = detail::read_mat_v5(bytes);

  auto mixout_it = vars.find("mixout");
  auto consts_it = vars.find("consts");
  if (mixout_it == vars.end() || consts_it == vars.end())
    throw ConversionError("MAT file lacks the 'mixout' and 'consts' variables");
  const auto& mixout = mixout_it->second;
  if (mixout.kind != detail::MatArray::Kind::cell) throw ConversionError("'mixout' is not a cell array");
  const auto& labels = consts_it->second.field("charlabels");
  if (labels.numeric.size() != mixout.cells.size())
    throw ConversionError("charlabels count " + std::to_string(labels.numeric.size()) + " != trajectory count " +
                          std::to_string(mixout.cells.size()));

  ConversionSummary summary;
  std::vector<LabeledSequence> records;
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < mixout.cells.size(); ++i) {
    const auto& cell = mixout.cells[i];
    if (cell.kind != detail::MatArray::Kind::numeric || cell.dims.size() != 2 || cell.dims[0] != 3)
      throw ConversionError("trajectory " + std::to_string(i) + " is not a 3 x L numeric matrix");
    const std::size_t len = cell.dims[1];
    const double raw_label = labels.numeric[i];
    if (raw_label < 1 || raw_label != std::floor(raw_label))
      throw ConversionError("trajectory " + std::to_string(i) + " has invalid label");
    Tensor x({3, kCharTrajLength}, 0.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < std::min(len, kCharTrajLength); ++t) x.at(c, t) = cell.numeric[c + 3 * t];
    if (len < kCharTrajLength) ++summary.padded;
    if (len > kCharTrajLength) ++summary.truncated;
    const auto label = static_cast<std::size_t>(raw_label) - 1;
    max_label = std::max(max_label, label);
    char id[32];
    std::snprintf(id, sizeof id, "ct-%04zu", i);
    records.push_back({std::move(x), label, id});
  }
  const std::size_t n = records.size();
  if (n < 3) throw ConversionError("too few trajectories to split");

  std::size_t n_train = kCharTrajTrain, n_val = kCharTrajVal;
  if (n != kCharTrajRecords) {
    n_train = static_cast<std::size_t>(std::lround(static_cast<double>(n * kCharTrajTrain) / kCharTrajRecords));
    n_val = static_cast<std::size_t>(std::lround(static_cast<double>(n * kCharTrajVal) / kCharTrajRecords));
    n_train = std::max<std::size_t>(n_train, 1);
    if (n_train + n_val >= n) n_val = n - n_train - 1;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> split_of(n);
  for (std::size_t k = 0; k < n; ++k)
    split_of[order[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);

  std::ofstream os(out, std::ios::binary);
  if (!os) throw IoError("cannot write " + out.string());
  json header = json::object();
  header["kind"] = "header";
  header["format_version"] = 1;
  header["source"] = "UCI character trajectories (mixoutALL_shifted.mat)";
  header["length_policy"] = "end-padded with zeros or truncated to 206 steps before normalization";
  header["split_seed"] = seed;
  header["split_sizes"] = {n_train, n_val, n - n_train - n_val};
  os << header.dump() << '\n';
  for (std::size_t i = 0; i < n; ++i) os << record_json(records[i], split_of[i]).dump() << '\n';
  if (!os) throw IoError("write failed for " + out.string());

  summary.records = n;
  summary.train = n_train;
  summary.val = n_val;
  summary.test = n - n_train - n_val;
  summary.num_classes = max_label + 1;
  return summary;
}

}  // namespace tsadv
