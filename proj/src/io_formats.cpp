#include "ansync/io_formats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace ansync {

namespace {

constexpr char kTensorMagic[] = {'N', 'T', 'A', 'R', '1', '\n'};
constexpr char kVoxelMagic[] = {'V', 'M', 'X', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const std::string& s, std::size_t& off, const char* what) {
  if (off + 4 > s.size()) throw TruncationError(std::string("truncated while reading ") + what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  off += 4;
  return v;
}

std::uint64_t get_u64(const std::string& s, std::size_t& off, const char* what) {
  std::uint64_t lo = get_u32(s, off, what);
  std::uint64_t hi = get_u32(s, off, what);
  return lo | (hi << 32);
}

float get_f32(const std::string& s, std::size_t& off, const char* what) {
  return std::bit_cast<float>(get_u32(s, off, what));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::uint64_t shape_count(const std::vector<std::uint64_t>& shape, const std::string& name) {
  if (shape.empty()) throw SchemaError("tensor '" + name + "' has empty shape");
  std::uint64_t count = 1;
  for (std::uint64_t d : shape) {
    if (d == 0) throw SchemaError("tensor '" + name + "' has a zero-sized dimension");
    count *= d;
  }
  return count;
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed: " + tmp);
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename " + tmp + " to " + path);
  }
}

// ---------------------------------------------------------------------------
// TensorArchive
// ---------------------------------------------------------------------------

void TensorArchive::add(const std::string& name, std::vector<std::uint64_t> shape,
                        std::vector<float> data) {
  if (name.empty()) throw SchemaError("tensor name must be non-empty");
  if (entries.count(name)) throw SchemaError("duplicate tensor name: " + name);
  const std::uint64_t count = shape_count(shape, name);
  if (count != data.size())
    throw SchemaError("tensor '" + name + "': shape count " + std::to_string(count) +
                      " != data length " + std::to_string(data.size()));
  entries.emplace(name, TensorEntry{std::move(shape), std::move(data)});
}

const TensorEntry& TensorArchive::get(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw SchemaError("missing tensor: " + name);
  return it->second;
}

Matrix TensorArchive::as_matrix(const std::string& name) const {
  const TensorEntry& e = get(name);
  if (e.shape.size() != 2) throw DimensionError("tensor '" + name + "' is not rank-2");
  Matrix m(static_cast<std::size_t>(e.shape[0]), static_cast<std::size_t>(e.shape[1]));
  for (std::size_t i = 0; i < e.data.size(); ++i) m.a[i] = e.data[i];
  return m;
}

std::vector<double> TensorArchive::as_vector(const std::string& name) const {
  const TensorEntry& e = get(name);
  if (e.shape.size() != 1) throw DimensionError("tensor '" + name + "' is not rank-1");
  return std::vector<double>(e.data.begin(), e.data.end());
}

void TensorArchive::add_matrix(const std::string& name, const Matrix& m) {
  std::vector<float> data(m.a.size());
  for (std::size_t i = 0; i < m.a.size(); ++i) data[i] = static_cast<float>(m.a[i]);
  add(name, {m.rows, m.cols}, std::move(data));
}

void TensorArchive::add_vector(const std::string& name, const std::vector<double>& v) {
  std::vector<float> data(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) data[i] = static_cast<float>(v[i]);
  add(name, {v.size()}, std::move(data));
}

TensorArchive read_tensor_archive(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kTensorMagic) ||
      !std::equal(std::begin(kTensorMagic), std::end(kTensorMagic), bytes.begin()))
    throw FormatError("not a tensor archive (bad magic): " + path);
  std::size_t off = sizeof(kTensorMagic);
  const std::uint64_t header_len = get_u64(bytes, off, "header length");
  if (off + header_len > bytes.size()) throw TruncationError("truncated tensor archive header");
  const std::string header = bytes.substr(off, header_len);
  const std::size_t payload_off = off + header_len;
  const std::size_t payload_size = bytes.size() - payload_off;

  TensorArchive archive;
  for (const std::string& line : split(header, '\n')) {
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 4) throw SchemaError("malformed header line: " + line);
    const std::string& name = fields[0];
    if (name.empty()) throw SchemaError("empty tensor name in header");
    if (fields[1] != "f32") throw SchemaError("unsupported dtype '" + fields[1] + "'");
    std::vector<std::uint64_t> shape;
    for (const std::string& d : split(fields[2], ',')) {
      if (d.empty()) throw SchemaError("malformed shape in header line: " + line);
      shape.push_back(std::stoull(d));
    }
    const std::uint64_t offset = std::stoull(fields[3]);
    const std::uint64_t count = shape_count(shape, name);
    if (offset + count * 4 > payload_size)
      throw TruncationError("tensor '" + name + "' extends past end of payload");
    if (archive.entries.count(name)) throw SchemaError("duplicate tensor name: " + name);

    std::vector<float> data(count);
    std::size_t pos = payload_off + offset;
    for (std::uint64_t i = 0; i < count; ++i) data[i] = get_f32(bytes, pos, "payload");
    archive.entries.emplace(name, TensorEntry{std::move(shape), std::move(data)});
  }
  return archive;
}

void write_tensor_archive(const TensorArchive& archive, const std::string& path) {
  std::string header;
  std::string payload;
  std::uint64_t offset = 0;
  for (const auto& [name, entry] : archive.entries) {
    if (name.empty()) throw SchemaError("tensor name must be non-empty");
    const std::uint64_t count = shape_count(entry.shape, name);
    if (count != entry.data.size())
      throw SchemaError("tensor '" + name + "': shape/data mismatch");
    header += name;
    header += "\tf32\t";
    for (std::size_t i = 0; i < entry.shape.size(); ++i) {
      if (i) header += ',';
      header += std::to_string(entry.shape[i]);
    }
    header += '\t';
    header += std::to_string(offset);
    header += '\n';
    for (float v : entry.data) put_f32(payload, v);
    offset += count * 4;
  }

  std::string bytes(std::begin(kTensorMagic), std::end(kTensorMagic));
  put_u64(bytes, header.size());
  bytes += header;
  bytes += payload;
  write_file_atomic(path, bytes);
}

// ---------------------------------------------------------------------------
// VoxelMatrix
// ---------------------------------------------------------------------------

void VoxelMatrix::validate() const {
  if (!(tr_seconds > 0)) throw SchemaError("voxel matrix: tr_seconds must be > 0");
  if (data.rows == 0 || data.cols == 0) throw SchemaError("voxel matrix: empty dimensions");
  if (voxel_ids.size() != data.rows)
    throw SchemaError("voxel matrix: id count != voxel count");
  for (std::size_t i = 1; i < voxel_ids.size(); ++i)
    if (voxel_ids[i] <= voxel_ids[i - 1])
      throw SchemaError("voxel matrix: voxel ids not strictly increasing");
}

VoxelMatrix read_voxel_matrix(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kVoxelMagic) ||
      !std::equal(std::begin(kVoxelMagic), std::end(kVoxelMagic), bytes.begin()))
    throw FormatError("not a voxel matrix (bad magic): " + path);
  std::size_t off = sizeof(kVoxelMagic);
  const std::uint32_t n = get_u32(bytes, off, "voxel count");
  const std::uint32_t t = get_u32(bytes, off, "frame count");
  const float tr = get_f32(bytes, off, "TR");

  VoxelMatrix vm;
  vm.tr_seconds = tr;
  vm.voxel_ids.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) vm.voxel_ids[i] = get_u32(bytes, off, "voxel ids");
  vm.data = Matrix(n, t);
  for (std::uint32_t frame = 0; frame < t; ++frame)
    for (std::uint32_t v = 0; v < n; ++v) vm.data(v, frame) = get_f32(bytes, off, "frames");
  vm.validate();
  return vm;
}

void write_voxel_matrix(const VoxelMatrix& vm, const std::string& path) {
  vm.validate();
  std::string bytes(std::begin(kVoxelMagic), std::end(kVoxelMagic));
  put_u32(bytes, static_cast<std::uint32_t>(vm.data.rows));
  put_u32(bytes, static_cast<std::uint32_t>(vm.data.cols));
  put_f32(bytes, static_cast<float>(vm.tr_seconds));
  for (std::uint32_t id : vm.voxel_ids) put_u32(bytes, id);
  for (std::size_t frame = 0; frame < vm.data.cols; ++frame)
    for (std::size_t v = 0; v < vm.data.rows; ++v)
      put_f32(bytes, static_cast<float>(vm.data(v, frame)));
  write_file_atomic(path, bytes);
}

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

TokenTimeline read_transcript(const std::string& path, const PosTagSet& tags) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript: " + path);

  TokenTimeline timeline;
  std::string line;
  bool saw_header = false;
  double prev_onset = 0.0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split(line, '\t');
    if (!saw_header) {
      if (fields.size() != 5 || fields[0] != "word_index" || fields[1] != "word" ||
          fields[2] != "onset_sec" || fields[3] != "pos_tag" || fields[4] != "sentence_id")
        throw SchemaError("transcript: bad header row at line " + std::to_string(line_no));
      saw_header = true;
      continue;
    }
    if (fields.size() != 5)
      throw SchemaError("transcript: expected 5 columns at line " + std::to_string(line_no));

    TranscriptRecord rec;
    rec.word = fields[1];
    try {
      rec.onset_sec = std::stod(fields[2]);
      rec.sentence_id = std::stol(fields[4]);
    } catch (const std::exception&) {
      throw SchemaError("transcript: unparsable number at line " + std::to_string(line_no));
    }
    rec.pos_tag = fields[3];
    if (rec.onset_sec < 0)
      throw SchemaError("transcript: negative onset at line " + std::to_string(line_no));
    if (!timeline.records.empty() && rec.onset_sec < prev_onset)
      throw SchemaError("transcript: decreasing onset at line " + std::to_string(line_no));
    const int tag_index = tags.index_of(rec.pos_tag);
    if (!tags.is_word_label(tag_index))
      throw SchemaError("transcript: unknown POS label '" + rec.pos_tag + "' at line " +
                        std::to_string(line_no));
    prev_onset = rec.onset_sec;
    timeline.records.push_back(std::move(rec));
  }
  if (!saw_header) throw SchemaError("transcript: missing header row");
  return timeline;
}

// ---------------------------------------------------------------------------
// znormalize_rows
// ---------------------------------------------------------------------------

Matrix znormalize_rows(const Matrix& m) {
  if (m.cols < 2) throw DimensionError("znormalize_rows: need at least 2 columns");
  Matrix out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* x = m.row(r);
    double lo = x[0], hi = x[0], sum = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      lo = std::min(lo, x[c]);
      hi = std::max(hi, x[c]);
      sum += x[c];
    }
    double* y = out.row(r);
    if (lo == hi) continue;  // constant row -> zeros
    const double mean = sum / static_cast<double>(m.cols);
    double var = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double d = x[c] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(m.cols));
    for (std::size_t c = 0; c < m.cols; ++c) y[c] = (x[c] - mean) / sd;
  }
  return out;
}

}  // namespace ansync
