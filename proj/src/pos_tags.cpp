#include "ansync/pos_tags.hpp"

#include <fstream>

#include "ansync/errors.hpp"

namespace ansync {

PosTagSet PosTagSet::universal() {
  return PosTagSet{{"ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART",
                    "PRON", "PROPN", "PUNCT", "SCONJ", "VERB", "[CLS]", "[SEP]"}};
}

PosTagSet PosTagSet::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labels file: " + path);
  PosTagSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    set.labels.push_back(line);
  }
  if (set.labels.size() != 17)
    throw SchemaError("labels file must hold 17 labels, got " + std::to_string(set.labels.size()));
  for (std::size_t i = 0; i < set.labels.size(); ++i)
    for (std::size_t j = i + 1; j < set.labels.size(); ++j)
      if (set.labels[i] == set.labels[j]) throw SchemaError("duplicate label: " + set.labels[i]);
  if (set.cls_index() < 0 || set.sep_index() < 0)
    throw SchemaError("labels file must include [CLS] and [SEP]");
  return set;
}

int PosTagSet::index_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<int>(i);
  return -1;
}

int PosTagSet::cls_index() const { return index_of("[CLS]"); }
int PosTagSet::sep_index() const { return index_of("[SEP]"); }

bool PosTagSet::is_word_label(int index) const {
  return index >= 0 && index < size() && index != cls_index() && index != sep_index();
}

}  // namespace ansync
