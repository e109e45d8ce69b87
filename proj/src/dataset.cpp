#include "dml/dataset.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "dml/error.hpp"
#include "dml/rng.hpp"

namespace dml {

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.class_names = class_names;
  out.examples.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= examples.size()) throw DimensionError("Dataset::subset: index out of range");
    out.examples.push_back(examples[i]);
  }
  return out;
}

void Dataset::validate() const {
  if (num_classes() < 2) throw ConfigError("dataset '" + name + "' has fewer than two classes");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].label < 0 || examples[i].label >= num_classes()) {
      throw LabelError("dataset '" + name + "': label out of range at example " + std::to_string(i));
    }
    if (examples[i].text.empty()) {
      throw ParseError("dataset '" + name + "': empty text at example " + std::to_string(i));
    }
  }
}

namespace {

bool is_blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n\v\f") == std::string::npos;
}

}  // namespace

Dataset parse_dataset(std::istream& in, std::string name) {
  Dataset out;
  out.name = std::move(name);
  std::map<std::string, int> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto where = [&] { return out.name + ":" + std::to_string(line_no) + ": "; };
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(where() + "expected <label>\\t<text>");
    std::string label = line.substr(0, tab);
    std::string text = line.substr(tab + 1);
    if (label.empty()) throw ParseError(where() + "empty label");
    if (is_blank(text)) throw ParseError(where() + "blank text");
    auto [it, inserted] = index.emplace(label, static_cast<int>(out.class_names.size()));
    if (inserted) out.class_names.push_back(label);
    out.examples.push_back({it->second, std::move(text)});
  }
  if (out.class_names.size() < 2) {
    throw ConfigError(out.name + ": need at least two classes, found " +
                      std::to_string(out.class_names.size()));
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return parse_dataset(in, path.stem().string());
}

void write_dataset(std::ostream& out, const Dataset& data) {
  for (const auto& e : data.examples) {
    out << data.class_names.at(static_cast<std::size_t>(e.label)) << '\t' << e.text << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset(out, data);
  if (!out) throw IoError("write failed: " + path.string());
}

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synth: need at least two classes");
  if (spec.examples < spec.classes) throw ConfigError("synth: need at least one example per class");
  if (spec.signal_tokens < 1 || spec.noise_tokens < 1) throw ConfigError("synth: empty vocabulary");
  if (!(spec.noise >= 0 && spec.noise <= 1)) throw ConfigError("synth: noise must lie in [0, 1]");
  if (spec.min_length < 1 || spec.max_length < spec.min_length) throw ConfigError("synth: bad length range");

  Rng rng(spec.seed);
  Dataset out;
  out.name = "synth";
  for (int c = 0; c < spec.classes; ++c) out.class_names.push_back("class" + std::to_string(c));
  const auto span = static_cast<std::size_t>(spec.max_length - spec.min_length + 1);
  for (int i = 0; i < spec.examples; ++i) {
    const int label = i % spec.classes;
    const int length = spec.min_length + static_cast<int>(rng.uniform_index(span));
    std::string text;
    for (int t = 0; t < length; ++t) {
      if (t > 0) text += ' ';
      if (rng.uniform() < spec.noise) {
        text += "n" + std::to_string(rng.uniform_index(static_cast<std::size_t>(spec.noise_tokens)));
      } else {
        text += "c" + std::to_string(label) + "w" +
                std::to_string(rng.uniform_index(static_cast<std::size_t>(spec.signal_tokens)));
      }
    }
    out.examples.push_back({label, std::move(text)});
  }
  return out;
}

}  // namespace dml
