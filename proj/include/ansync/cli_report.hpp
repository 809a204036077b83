#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "ansync/an_activation.hpp"
#include "ansync/coupling.hpp"
#include "ansync/synthgen.hpp"
#include "ansync/vsdbn.hpp"

namespace ansync {

// Flat pipeline configuration. Defaults reproduce the reference analysis
// with zero flags: TR 1.5 s, 5000 permutations, alpha 0.01, anchor
// threshold 0.25, DBN 512/256/128 at the published rates, mean readout.
struct PipelineConfig {
  // inputs
  std::string weights;
  std::string vocab;
  std::string transcript;
  std::vector<std::pair<std::string, std::string>> voxels;  // (session, path)
  std::string labels_file;

  // outputs
  std::string out = "out";

  // alignment
  double tr = 1.5;
  std::size_t frames = 0;  // 0: take T from the first voxel matrix

  // encoder profile (d_model and layer count are read from the weights)
  std::size_t n_heads = 12;
  std::size_t max_tokens = 512;

  // activation readout
  Readout readout = Readout::mean;
  bool exclude_specials = false;

  // coupling
  std::size_t n_perm = 5000;
  double alpha = 0.01;
  double anchor_threshold = 0.25;
  SyncStat sync_stat = SyncStat::signed_pcc;
  std::string session;  // which fbn.series.* to couple against
  std::string an_path;  // default {out}/an.nta
  std::string fbn_path; // default {out}/fbn.nta
  std::string an_meta_path;  // default {out}/an.meta

  // DBN
  DBNConfig dbn;

  // linguistics
  std::size_t top_k = 500;
  std::vector<std::size_t> heatmap_ans;
  std::string captures_path;   // default {out}/captures.nta
  std::string subtokens_path;  // default {out}/subtokens.tsv
  // pos-analyze sessions: (label, captures path, subtokens path)
  std::vector<std::tuple<std::string, std::string, std::string>> pos_sessions;

  // synth
  SynthSpec synth;

  std::uint64_t seed = 0;
  int threads = 0;  // 0: library default

  std::string resolve_an() const { return an_path.empty() ? out + "/an.nta" : an_path; }
  std::string resolve_fbn() const { return fbn_path.empty() ? out + "/fbn.nta" : fbn_path; }
  std::string resolve_an_meta() const {
    return an_meta_path.empty() ? out + "/an.meta" : an_meta_path;
  }
  std::string resolve_captures() const {
    return captures_path.empty() ? out + "/captures.nta" : captures_path;
  }
  std::string resolve_subtokens() const {
    return subtokens_path.empty() ? out + "/subtokens.tsv" : subtokens_path;
  }
  PosTagSet tag_set() const {
    return labels_file.empty() ? PosTagSet::universal() : PosTagSet::from_file(labels_file);
  }
};

// key=value assignment, shared by the config-file loader and tests.
void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value);
void load_config_file(PipelineConfig& cfg, const std::string& path);

// Pipeline commands. Errors surface as the library exception types; the
// CLI maps them onto exit codes (0 ok, 2 config, 3 data/schema, 4
// divergence).
void cmd_extract_an(const PipelineConfig& cfg);
void cmd_train_dbn(const PipelineConfig& cfg);
void cmd_couple(const PipelineConfig& cfg);
void cmd_pos_analyze(const PipelineConfig& cfg);
void cmd_synth(const PipelineConfig& cfg);
void cmd_heatmap(const PipelineConfig& cfg);

}  // namespace ansync
