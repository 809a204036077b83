#pragma once

#include <string>
#include <vector>

namespace ansync {

// The 17-label category set: 15 coarse part-of-speech labels followed by the
// two structural labels [CLS] and [SEP]. Label order fixes the row/column
// order of every category grid.
struct PosTagSet {
  std::vector<std::string> labels;

  static PosTagSet universal();
  static PosTagSet from_file(const std::string& path);

  int size() const { return static_cast<int>(labels.size()); }
  // -1 when the label is not in the set.
  int index_of(const std::string& label) const;
  int cls_index() const;
  int sep_index() const;
  // Word-level labels are everything except [CLS]/[SEP].
  bool is_word_label(int index) const;
};

}  // namespace ansync
