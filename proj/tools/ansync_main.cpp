// ansync: couples per-dimension attention query/key components against
// functional brain networks decomposed from fMRI.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ansync/cli_report.hpp"
#include "ansync/parallel.hpp"

namespace {

using ansync::PipelineConfig;

// --config is applied before the regular flags so that the command line
// wins over the file, and the file over built-in defaults.
std::string preparse_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" || arg == "-c") {
      if (i + 1 < argc) return argv[i + 1];
    } else if (arg.rfind("--config=", 0) == 0) {
      return arg.substr(9);
    }
  }
  return "";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ansync::ParameterError*>(&e)) return 2;
  if (dynamic_cast<const ansync::DivergenceError*>(&e)) return 4;
  if (dynamic_cast<const ansync::Error*>(&e)) return 3;
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  PipelineConfig cfg;
  std::string config_path = preparse_config_path(argc, argv);
  try {
    if (!config_path.empty()) ansync::load_config_file(cfg, config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"couple transformer attention components with fMRI brain networks"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_dummy;
  app.add_option("--config,-c", config_dummy, "flat key=value config file");
  app.add_option("--seed", cfg.seed, "master RNG seed");
  app.add_option("--threads", cfg.threads, "worker thread budget (env CC_THREADS)");
  app.add_option("--out", cfg.out, "output directory");

  std::string readout_s, sync_s;
  std::vector<std::string> voxel_args, pos_session_args;

  CLI::App* extract = app.add_subcommand("extract-an", "token-align AN activations");
  extract->add_option("--weights", cfg.weights, "encoder weight archive (.nta)");
  extract->add_option("--vocab", cfg.vocab, "wordpiece vocab, one piece per line");
  extract->add_option("--transcript", cfg.transcript, "time-stamped transcript (.tsv)");
  extract->add_option("--labels", cfg.labels_file, "17-line POS label file");
  extract->add_option("--tr", cfg.tr, "fMRI repetition time in seconds");
  extract->add_option("--frames", cfg.frames, "fMRI frame count");
  extract->add_option("--voxels", voxel_args, "session:path voxel matrices (frame source)");
  extract->add_option("--heads", cfg.n_heads, "attention head count");
  extract->add_option("--max-tokens", cfg.max_tokens, "segment token limit");
  extract->add_option("--readout", readout_s, "activation readout: mean|max|min");
  extract->add_flag("--exclude-specials", cfg.exclude_specials,
                    "keep [CLS]/[SEP] out of the TR bins");

  CLI::App* train = app.add_subcommand("train-dbn", "decompose fMRI into brain networks");
  train->add_option("--voxels", voxel_args, "session:path voxel matrices (repeatable)");
  train->add_option("--hidden", [&cfg](const std::vector<std::string>& vals) {
    if (vals.size() != 3) return false;
    for (std::size_t i = 0; i < 3; ++i) cfg.dbn.hidden_sizes[i] = std::stoull(vals[i]);
    return true;
  }, "three RBM hidden sizes")->expected(3);
  train->add_option("--epochs", cfg.dbn.epochs, "training epochs");
  train->add_option("--batch-size", cfg.dbn.batch_size, "CD-1 batch size");

  CLI::App* couple_cmd = app.add_subcommand("couple", "synchronize ANs and BNs");
  couple_cmd->add_option("--an", cfg.an_path, "AN activation archive");
  couple_cmd->add_option("--fbn", cfg.fbn_path, "brain network archive");
  couple_cmd->add_option("--an-meta", cfg.an_meta_path, "an.meta sidecar path");
  couple_cmd->add_option("--session", cfg.session, "session label of the BN series");
  couple_cmd->add_option("--n-perm", cfg.n_perm, "permutation count");
  couple_cmd->add_option("--alpha", cfg.alpha, "FDR level");
  couple_cmd->add_option("--anchor-threshold", cfg.anchor_threshold, "anchoring PCC threshold");
  couple_cmd->add_option("--sync-stat", sync_s, "argmax statistic: signed|absolute");

  CLI::App* pos = app.add_subcommand("pos-analyze", "tag ANs by query/key POS pairs");
  pos->add_option("--captures", cfg.captures_path, "capture archive (single session)");
  pos->add_option("--subtokens", cfg.subtokens_path, "subtokens sidecar (single session)");
  pos->add_option("--session", pos_session_args,
                  "label:captures:subtokens (repeatable; two sessions get a difference grid)");
  pos->add_option("--labels", cfg.labels_file, "17-line POS label file");
  pos->add_option("--top-k", cfg.top_k, "pairs kept per segment");
  pos->add_option("--heatmap-an", cfg.heatmap_ans, "AN ids to render as HTML heatmaps");

  CLI::App* synth = app.add_subcommand("synth", "generate a seeded synthetic fixture");
  synth->add_option("--voxels-n", cfg.synth.n_voxels, "voxel count");
  synth->add_option("--networks", cfg.synth.n_networks, "planted network count");
  synth->add_option("--frames", cfg.synth.n_frames, "frame count");
  synth->add_option("--subjects", cfg.synth.n_subjects, "subject count");
  synth->add_option("--noise", cfg.synth.noise_std, "additive white-noise sigma");
  synth->add_option("--overlap", cfg.synth.overlap, "adjacent-network voxel overlap fraction");
  synth->add_option("--tr", cfg.tr, "TR stored in the voxel matrices");

  CLI::App* heatmap = app.add_subcommand("heatmap", "render query/key heatmaps");
  heatmap->add_option("--captures", cfg.captures_path, "capture archive");
  heatmap->add_option("--subtokens", cfg.subtokens_path, "subtokens sidecar");
  heatmap->add_option("--an", cfg.heatmap_ans, "AN ids to render")->required();
  heatmap->add_option("--top-k", cfg.top_k, "pairs kept per segment");
  heatmap->add_option("--labels", cfg.labels_file, "17-line POS label file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (!readout_s.empty()) cfg.readout = ansync::readout_from_string(readout_s);
    if (!sync_s.empty()) cfg.sync_stat = ansync::sync_stat_from_string(sync_s);
    for (const std::string& item : voxel_args) {
      const std::size_t colon = item.find(':');
      if (colon == std::string::npos)
        cfg.voxels.emplace_back("default", item);
      else
        cfg.voxels.emplace_back(item.substr(0, colon), item.substr(colon + 1));
    }
    for (const std::string& item : pos_session_args) {
      const std::size_t c1 = item.find(':');
      const std::size_t c2 = c1 == std::string::npos ? std::string::npos : item.find(':', c1 + 1);
      if (c2 == std::string::npos)
        throw ansync::ParameterError("--session wants label:captures:subtokens, got " + item);
      cfg.pos_sessions.emplace_back(item.substr(0, c1), item.substr(c1 + 1, c2 - c1 - 1),
                                    item.substr(c2 + 1));
    }
    if (cfg.threads > 0) ansync::set_thread_budget(cfg.threads);

    if (extract->parsed()) ansync::cmd_extract_an(cfg);
    else if (train->parsed()) ansync::cmd_train_dbn(cfg);
    else if (couple_cmd->parsed()) ansync::cmd_couple(cfg);
    else if (pos->parsed()) ansync::cmd_pos_analyze(cfg);
    else if (synth->parsed()) ansync::cmd_synth(cfg);
    else if (heatmap->parsed()) ansync::cmd_heatmap(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
