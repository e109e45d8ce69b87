#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dml {

struct Example {
  int label = 0;
  std::string text;
};

/// Labeled text corpus. Labels are dense indices into `class_names`.
struct Dataset {
  std::string name;
  std::vector<Example> examples;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t size() const { return examples.size(); }
  std::vector<int> labels() const;
  /// Copy restricted to `indices`, keeping the full class list.
  Dataset subset(std::span<const std::size_t> indices) const;
  void validate() const;
};

/// Reads one example per line, `<label>\t<text>`, UTF-8, LF line endings.
/// Labels are mapped to indices in order of first appearance.
Dataset parse_dataset(std::istream& in, std::string name);
Dataset load_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const Dataset& data);
void save_dataset(const std::filesystem::path& path, const Dataset& data);

struct SynthSpec {
  int classes = 2;
  int examples = 2000;
  int signal_tokens = 40;   // class-specific vocabulary size per class
  double noise = 0.35;      // probability that a token comes from the shared pool
  std::uint64_t seed = 1;
  int noise_tokens = 200;   // shared vocabulary size
  int min_length = 4;
  int max_length = 10;
};

/// Balanced synthetic corpus: example i belongs to class i mod C; each token is
/// drawn from the class vocabulary with probability 1 - noise and from the
/// shared pool otherwise.
Dataset synth_dataset(const SynthSpec& spec);

}  // namespace dml
