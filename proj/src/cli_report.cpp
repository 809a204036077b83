#include "ansync/cli_report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ansync/linguistics.hpp"
#include "ansync/parallel.hpp"
#include "ansync/synthgen.hpp"

namespace ansync {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) pos = s.size();
    const std::string item = trim(s.substr(start, pos - start));
    if (!item.empty()) out.push_back(item);
    start = pos + 1;
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ParameterError("config: bad number for '" + key + "': " + value);
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ParameterError("config: bad integer for '" + key + "': " + value);
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ParameterError("config: bad boolean for '" + key + "': " + value);
}

std::pair<std::string, std::string> parse_session_path(const std::string& item) {
  const std::size_t colon = item.find(':');
  if (colon == std::string::npos) return {"default", item};
  return {item.substr(0, colon), item.substr(colon + 1)};
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory: " + out);
}

// Encoder profile from the weight archive plus the configured head count.
EncoderConfig config_from_weights(const TensorArchive& weights, const PipelineConfig& cfg) {
  EncoderConfig config;
  const TensorEntry& tok = weights.get("embed.token");
  if (tok.shape.size() != 2) throw DimensionError("embed.token must be rank-2");
  config.vocab_size = static_cast<std::size_t>(tok.shape[0]);
  config.d_model = static_cast<std::size_t>(tok.shape[1]);
  config.n_heads = cfg.n_heads;
  if (config.n_heads == 0 || config.d_model % config.n_heads != 0)
    throw ParameterError("d_model " + std::to_string(config.d_model) +
                         " is not divisible by n_heads " + std::to_string(config.n_heads));
  config.d_head = config.d_model / config.n_heads;
  std::size_t layers = 0;
  while (weights.has("L" + std::to_string(layers) + ".q.w")) ++layers;
  if (layers == 0) throw SchemaError("weights hold no encoder layers (L0.q.w missing)");
  config.n_layers = layers;
  const TensorEntry& pos = weights.get("embed.position");
  if (pos.shape.size() != 2) throw DimensionError("embed.position must be rank-2");
  config.max_tokens = std::min<std::size_t>(cfg.max_tokens,
                                            static_cast<std::size_t>(pos.shape[0]));
  config.validate();
  return config;
}

// Encoder profile from a capture archive (layer/head/dim discovery).
EncoderConfig config_from_captures(const TensorArchive& archive) {
  std::size_t layers = 0, heads = 0;
  while (archive.has("seg0.L" + std::to_string(layers) + ".H0.q")) ++layers;
  while (archive.has("seg0.L0.H" + std::to_string(heads) + ".q")) ++heads;
  if (layers == 0 || heads == 0) throw SchemaError("archive holds no capture tensors");
  const TensorEntry& q = archive.get("seg0.L0.H0.q");
  if (q.shape.size() != 2) throw DimensionError("capture tensors must be rank-2");
  EncoderConfig config;
  config.n_layers = layers;
  config.n_heads = heads;
  config.d_head = static_cast<std::size_t>(q.shape[0]);
  config.d_model = config.n_heads * config.d_head;
  config.validate();
  return config;
}

std::size_t resolve_frames(const PipelineConfig& cfg) {
  if (cfg.frames > 0) return cfg.frames;
  if (!cfg.voxels.empty()) return read_voxel_matrix(cfg.voxels.front().second).n_frames();
  throw ParameterError("frame count unknown: set frames= or provide a voxel matrix");
}

struct SessionInputs {
  std::string label;
  std::vector<QKCapture> captures;
  std::vector<SubtokenSequence> segments;
  EncoderConfig config;
};

SessionInputs load_session(const std::string& label, const std::string& captures_path,
                           const std::string& subtokens_path, const PosTagSet& tags) {
  SessionInputs in;
  in.label = label;
  const TensorArchive archive = read_tensor_archive(captures_path);
  in.config = config_from_captures(archive);
  in.captures = captures_from_archive(archive, in.config);
  in.segments = read_subtokens_tsv(subtokens_path, tags);
  if (in.segments.size() != in.captures.size())
    throw DimensionError("session '" + label + "': " + std::to_string(in.captures.size()) +
                         " captures vs " + std::to_string(in.segments.size()) + " segments");
  for (std::size_t s = 0; s < in.segments.size(); ++s)
    if (in.segments[s].size() != in.captures[s].n_tokens)
      throw DimensionError("session '" + label + "': segment " + std::to_string(s) +
                           " token count mismatch between captures and subtokens");
  return in;
}

std::vector<PairRecord> pooled_top_pairs(const SessionInputs& in, std::size_t an_id,
                                         std::size_t k) {
  std::vector<PairRecord> pooled;
  for (const QKCapture& cap : in.captures) {
    auto pairs = top_pairs_per_segment(cap, an_id, k, in.config);
    pooled.insert(pooled.end(), pairs.begin(), pairs.end());
  }
  return pooled;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "weights") cfg.weights = value;
  else if (key == "vocab") cfg.vocab = value;
  else if (key == "transcript") cfg.transcript = value;
  else if (key == "labels") cfg.labels_file = value;
  else if (key == "out") cfg.out = value;
  else if (key == "voxels") {
    cfg.voxels.clear();
    for (const std::string& item : split_list(value, ','))
      cfg.voxels.push_back(parse_session_path(item));
  } else if (key == "tr") cfg.tr = to_double(key, value);
  else if (key == "frames") cfg.frames = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "heads") cfg.n_heads = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "max_tokens") cfg.max_tokens = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "readout") cfg.readout = readout_from_string(value);
  else if (key == "exclude_specials") cfg.exclude_specials = to_bool(key, value);
  else if (key == "n_perm") cfg.n_perm = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "alpha") cfg.alpha = to_double(key, value);
  else if (key == "anchor_threshold") cfg.anchor_threshold = to_double(key, value);
  else if (key == "sync_stat") cfg.sync_stat = sync_stat_from_string(value);
  else if (key == "session") cfg.session = value;
  else if (key == "an") cfg.an_path = value;
  else if (key == "fbn") cfg.fbn_path = value;
  else if (key == "an_meta") cfg.an_meta_path = value;
  else if (key == "captures") cfg.captures_path = value;
  else if (key == "subtokens") cfg.subtokens_path = value;
  else if (key == "top_k") cfg.top_k = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "heatmap_ans") {
    cfg.heatmap_ans.clear();
    for (const std::string& item : split_list(value, ','))
      cfg.heatmap_ans.push_back(static_cast<std::size_t>(to_u64(key, item)));
  } else if (key == "hidden_sizes" || key == "learning_rates" || key == "l1_decay") {
    const auto items = split_list(value, ',');
    if (items.size() != 3) throw ParameterError("config: '" + key + "' needs 3 values");
    for (std::size_t i = 0; i < 3; ++i) {
      if (key == "hidden_sizes")
        cfg.dbn.hidden_sizes[i] = static_cast<std::size_t>(to_u64(key, items[i]));
      else if (key == "learning_rates") cfg.dbn.learning_rates[i] = to_double(key, items[i]);
      else cfg.dbn.l1_decay[i] = to_double(key, items[i]);
    }
  } else if (key == "batch_size") cfg.dbn.batch_size = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "epochs") cfg.dbn.epochs = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "init_std") cfg.dbn.init_std = to_double(key, value);
  else if (key == "synth_voxels") cfg.synth.n_voxels = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "synth_networks")
    cfg.synth.n_networks = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "synth_frames") cfg.synth.n_frames = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "synth_subjects")
    cfg.synth.n_subjects = static_cast<std::size_t>(to_u64(key, value));
  else if (key == "synth_noise") cfg.synth.noise_std = to_double(key, value);
  else if (key == "synth_overlap") cfg.synth.overlap = to_double(key, value);
  else if (key == "seed") cfg.seed = to_u64(key, value);
  else if (key == "threads") cfg.threads = static_cast<int>(to_u64(key, value));
  else throw ParameterError("config: unknown key '" + key + "'");
}

void load_config_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ParameterError("config: expected key=value at line " + std::to_string(line_no));
    apply_config_entry(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_extract_an(const PipelineConfig& cfg) {
  if (cfg.weights.empty() || cfg.vocab.empty() || cfg.transcript.empty())
    throw ParameterError("extract-an needs weights, vocab and transcript");
  ensure_out_dir(cfg.out);

  const TensorArchive weights = read_tensor_archive(cfg.weights);
  const WordPieceVocab vocab = WordPieceVocab::from_file(cfg.vocab);
  const PosTagSet tags = cfg.tag_set();
  const TokenTimeline timeline = read_transcript(cfg.transcript, tags);
  const EncoderConfig config = config_from_weights(weights, cfg);
  const std::size_t frames = resolve_frames(cfg);

  const TokenizedStory story = tokenize_timeline(timeline, vocab, tags);
  const std::vector<SubtokenSequence> segments =
      segment_transcript(story, vocab, tags, config.max_tokens);
  if (segments.empty()) throw EmptyInputError("extract-an: transcript has no tokens");

  std::vector<QKCapture> captures(segments.size());
  parallel_for(segments.size(), [&](std::size_t s) {
    captures[s] = encoder_forward(config, weights, segments[s]);
  });

  const TRBinning binning = bin_tokens(segments, cfg.tr, frames, cfg.exclude_specials);
  if (binning.clamped > 0)
    std::cerr << "warning: " << binning.clamped
              << " subtokens start after the last frame; clamped to the final bin\n";

  const ANActivationMatrix raw = an_raw_activation(config, captures, binning, cfg.readout);
  const HRFKernel kernel = hrf_kernel(cfg.tr);
  const ANActivationMatrix hrf = convolve_hrf(raw, kernel);

  TensorArchive an_archive;
  an_archive.add_matrix("an.raw", raw.values);
  an_archive.add_matrix("an.hrf", hrf.values);
  write_tensor_archive(an_archive, cfg.resolve_an());
  write_an_meta(cfg.resolve_an_meta(), config);

  TensorArchive capture_archive;
  captures_to_archive(captures, capture_archive);
  write_tensor_archive(capture_archive, cfg.resolve_captures());
  write_subtokens_tsv(segments, tags, cfg.resolve_subtokens());

  std::cout << "extract-an: " << config.an_count() << " ANs x " << frames << " frames over "
            << segments.size() << " segments -> " << cfg.resolve_an() << "\n";
}

void cmd_train_dbn(const PipelineConfig& cfg) {
  if (cfg.voxels.empty()) throw ParameterError("train-dbn needs at least one voxel matrix");
  ensure_out_dir(cfg.out);

  // Per-subject voxel normalization happens before aggregation; sessions
  // keep their own frame axis for the time-series pass.
  std::vector<std::string> session_order;
  std::vector<std::pair<std::string, Matrix>> normalized;  // (session, frames x N)
  std::vector<std::uint32_t> ids;
  for (const auto& [session, path] : cfg.voxels) {
    VoxelMatrix vm = read_voxel_matrix(path);
    if (ids.empty()) {
      ids = vm.voxel_ids;
    } else if (ids != vm.voxel_ids) {
      throw SchemaError("voxel masks differ between inputs (" + path + ")");
    }
    if (std::find(session_order.begin(), session_order.end(), session) == session_order.end())
      session_order.push_back(session);
    normalized.emplace_back(session, transpose(znormalize_rows(vm.data)));
  }

  std::size_t total_frames = 0;
  for (const auto& [session, m] : normalized) total_frames += m.rows;
  Matrix aggregate(total_frames, normalized.front().second.cols);
  std::size_t row = 0;
  for (const auto& [session, m] : normalized) {
    std::copy(m.a.begin(), m.a.end(), aggregate.row(row));
    row += m.rows;
  }

  DBNConfig dbn_cfg = cfg.dbn;
  dbn_cfg.seed = cfg.seed;
  const DBNStack stack = dbn_train(aggregate, dbn_cfg);

  TensorArchive archive;
  dbn_stack_to_archive(stack, archive);
  archive.add_matrix("fbn.maps", global_spatial_maps(stack));
  for (const std::string& session : session_order) {
    std::vector<Matrix> subject_series;
    for (const auto& [label, m] : normalized)
      if (label == session) subject_series.push_back(fbn_time_series(stack, m));
    archive.add_matrix("fbn.series." + session, average_over_subjects(subject_series));
  }
  write_tensor_archive(archive, cfg.resolve_fbn());

  std::cout << "train-dbn: " << aggregate.rows << " frames x " << aggregate.cols
            << " voxels -> " << cfg.dbn.hidden_sizes[2] << " networks in " << cfg.resolve_fbn()
            << "\n";
}

void cmd_couple(const PipelineConfig& cfg) {
  ensure_out_dir(cfg.out);
  const std::string an_path = cfg.resolve_an();
  const std::string fbn_path = cfg.resolve_fbn();
  const TensorArchive an_archive = read_tensor_archive(an_path);
  const TensorArchive fbn_archive = read_tensor_archive(fbn_path);
  const Matrix an_mat = an_archive.as_matrix("an.hrf");

  std::string series_name;
  if (!cfg.session.empty()) {
    series_name = "fbn.series." + cfg.session;
    if (!fbn_archive.has(series_name))
      throw SchemaError("no tensor '" + series_name + "' in " + fbn_path);
  } else {
    for (const auto& [name, entry] : fbn_archive.entries)
      if (name.rfind("fbn.series.", 0) == 0) {
        if (!series_name.empty())
          throw ParameterError("multiple sessions in " + fbn_path + "; pick one with session=");
        series_name = name;
      }
    if (series_name.empty()) throw SchemaError("no fbn.series.* tensor in " + fbn_path);
  }
  const Matrix bn_mat = fbn_archive.as_matrix(series_name);
  if (an_mat.cols != bn_mat.cols)
    throw DimensionError("frame counts differ: " + an_path + " has " +
                         std::to_string(an_mat.cols) + ", " + fbn_path + " (" + series_name +
                         ") has " + std::to_string(bn_mat.cols));

  const std::vector<AnCoords> coords = read_an_meta(cfg.resolve_an_meta());
  if (coords.size() != an_mat.rows)
    throw DimensionError("an.meta rows != AN count in " + an_path);
  std::size_t n_layers = 0;
  std::vector<std::size_t> layers(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    layers[i] = coords[i].layer;
    n_layers = std::max(n_layers, coords[i].layer + 1);
  }

  CouplingParams params;
  params.n_permutations = cfg.n_perm;
  params.alpha = cfg.alpha;
  params.anchor_threshold = cfg.anchor_threshold;
  params.seed = cfg.seed;
  params.sync_stat = cfg.sync_stat;
  const CouplingResult result = couple(an_mat, bn_mat, params);

  write_an_coupling_tsv(cfg.out + "/an_coupling.tsv", result, coords);
  write_bn_coupling_tsv(cfg.out + "/bn_coupling.tsv", result);
  write_layer_summary_tsv(cfg.out + "/layer_summary.tsv",
                          layer_summary(result, layers, n_layers, cfg.anchor_threshold));
  write_anchor_counts_tsv(cfg.out + "/anchor_counts.tsv",
                          anchor_counts(result, cfg.anchor_threshold, layers, n_layers));

  std::size_t significant = 0;
  for (const auto& row : result.per_an) significant += row.q_significant ? 1 : 0;
  std::cout << "couple: " << an_mat.rows << " ANs x " << bn_mat.rows << " BNs ("
            << series_name << "), " << significant << " ANs significant at alpha="
            << cfg.alpha << "\n";
}

void cmd_pos_analyze(const PipelineConfig& cfg) {
  ensure_out_dir(cfg.out);
  const PosTagSet tags = cfg.tag_set();

  std::vector<std::tuple<std::string, std::string, std::string>> sessions = cfg.pos_sessions;
  if (sessions.empty())
    sessions.emplace_back("", cfg.resolve_captures(), cfg.resolve_subtokens());

  std::vector<PairCategoryCounts> distributions;
  for (const auto& [label, captures_path, subtokens_path] : sessions) {
    const SessionInputs in = load_session(label, captures_path, subtokens_path, tags);
    const std::size_t n_ans = in.config.an_count();

    std::vector<AnTag> an_tags(n_ans);
    std::vector<PairCategoryCounts> grids(n_ans);
    parallel_for(n_ans, [&](std::size_t an) {
      auto [tag, grid] = tag_an(pooled_top_pairs(in, an, cfg.top_k), in.segments, tags.size());
      an_tags[an] = tag;
      grids[an] = std::move(grid);
    });

    const std::string suffix = sessions.size() > 1 ? "_" + label : "";
    write_an_tags_tsv(cfg.out + "/an_tags" + suffix + ".tsv", an_tags, grids, tags);
    const PairCategoryCounts dist = tag_distribution(an_tags, tags.size());
    write_grid_tsv(cfg.out + "/tag_distribution" + suffix + ".tsv", dist, tags);
    distributions.push_back(dist);

    for (std::size_t an : cfg.heatmap_ans) {
      if (an >= n_ans) throw IndexError("heatmap AN id " + std::to_string(an) + " out of range");
      heatmap_export(in.segments, pooled_top_pairs(in, an, cfg.top_k),
                     cfg.out + "/heatmap_" + std::to_string(an) + suffix + ".html");
    }
    std::cout << "pos-analyze" << (label.empty() ? "" : " [" + label + "]") << ": " << n_ans
              << " ANs tagged over " << in.segments.size() << " segments\n";
  }

  if (distributions.size() >= 2) {
    write_grid_tsv(cfg.out + "/tag_difference.tsv",
                   tag_difference(distributions[0], distributions[1]), tags);
  }
}

void cmd_synth(const PipelineConfig& cfg) {
  ensure_out_dir(cfg.out);
  SynthSpec spec = cfg.synth;
  spec.seed = cfg.seed;
  spec.tr_seconds = cfg.tr;
  auto [subjects, truth] = synth_fbn_volumes(spec);

  for (std::size_t s = 0; s < subjects.size(); ++s) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth_sub%02zu.vmx", s + 1);
    write_voxel_matrix(subjects[s], cfg.out + "/" + name);
  }
  TensorArchive archive;
  ground_truth_to_archive(truth, archive);
  write_tensor_archive(archive, cfg.out + "/ground_truth.nta");

  std::cout << "synth: " << subjects.size() << " subjects, " << spec.n_voxels << " voxels x "
            << spec.n_frames << " frames, " << spec.n_networks << " planted networks -> "
            << cfg.out << "\n";
}

void cmd_heatmap(const PipelineConfig& cfg) {
  if (cfg.heatmap_ans.empty()) throw ParameterError("heatmap needs at least one AN id");
  ensure_out_dir(cfg.out);
  const PosTagSet tags = cfg.tag_set();
  const SessionInputs in =
      load_session("", cfg.resolve_captures(), cfg.resolve_subtokens(), tags);
  for (std::size_t an : cfg.heatmap_ans) {
    if (an >= in.config.an_count())
      throw IndexError("heatmap AN id " + std::to_string(an) + " out of range");
    const std::string path = cfg.out + "/heatmap_" + std::to_string(an) + ".html";
    heatmap_export(in.segments, pooled_top_pairs(in, an, cfg.top_k), path);
    std::cout << "heatmap: AN " << an << " -> " << path << "\n";
  }
}

}  // namespace ansync
