#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ansync/errors.hpp"
#include "ansync/matrix.hpp"
#include "ansync/pos_tags.hpp"

namespace ansync {

// ---------------------------------------------------------------------------
// Tensor archive (.nta): named f32 tensors in one self-describing file.
//
//   magic "NTAR1\n" | u64 LE header length | UTF-8 header | payload
//   header line:  name \t f32 \t d0,d1,... \t byte_offset
//
// All integers and floats little-endian; payload floats row-major.
// ---------------------------------------------------------------------------

struct TensorEntry {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;  // row-major, length == product(shape)
};

struct TensorArchive {
  std::map<std::string, TensorEntry> entries;  // name-sorted, fixes write order

  // Validates name uniqueness (map makes duplicates structural), non-empty
  // name, positive dims and shape/data agreement.
  void add(const std::string& name, std::vector<std::uint64_t> shape, std::vector<float> data);
  bool has(const std::string& name) const { return entries.count(name) != 0; }
  const TensorEntry& get(const std::string& name) const;

  // Shape-checked conversion helpers for the double-precision compute path.
  Matrix as_matrix(const std::string& name) const;          // rank-2 tensors
  std::vector<double> as_vector(const std::string& name) const;  // rank-1 tensors
  void add_matrix(const std::string& name, const Matrix& m);
  void add_vector(const std::string& name, const std::vector<double>& v);
};

TensorArchive read_tensor_archive(const std::string& path);
void write_tensor_archive(const TensorArchive& archive, const std::string& path);

// ---------------------------------------------------------------------------
// Voxel matrix (.vmx): one session of masked BOLD data.
//
//   magic "VMX1" | u32 N | u32 T | f32 TR | N x u32 voxel ids |
//   T frames, each N f32 values (frame-major on disk, voxel-major in memory)
// ---------------------------------------------------------------------------

struct VoxelMatrix {
  double tr_seconds = 0.0;
  std::vector<std::uint32_t> voxel_ids;  // strictly increasing mask indices
  Matrix data;                           // N x T

  std::size_t n_voxels() const { return data.rows; }
  std::size_t n_frames() const { return data.cols; }
  void validate() const;
};

VoxelMatrix read_voxel_matrix(const std::string& path);
void write_voxel_matrix(const VoxelMatrix& vm, const std::string& path);

// ---------------------------------------------------------------------------
// Time-stamped transcript (.tsv)
// ---------------------------------------------------------------------------

struct TranscriptRecord {
  std::string word;
  double onset_sec = 0.0;
  std::string pos_tag;  // one of the 15 word-level labels
  long sentence_id = 0;
};

struct TokenTimeline {
  std::vector<TranscriptRecord> records;
};

// Parses the TSV transcript (header row, '#' comments and blank lines
// skipped). Tags are validated against the word-level labels of `tags`.
TokenTimeline read_transcript(const std::string& path, const PosTagSet& tags = PosTagSet::universal());

// ---------------------------------------------------------------------------
// Row-wise z-normalization
// ---------------------------------------------------------------------------

// Every row to zero mean and unit population (1/N) standard deviation;
// constant rows map to all-zeros.
Matrix znormalize_rows(const Matrix& m);

// Atomically writes bytes (temp file + rename); a crashed run never leaves a
// half-written file at `path`.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace ansync
