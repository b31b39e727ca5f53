// Command-line front end: gradient checks, toy training on synthetic tracks,
// feature extraction, retrieval evaluation, and tensor inspection.
//
// Exit codes: 0 success, 1 runtime/I-O failure, 2 usage or validation failure.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stnl/stnl.hpp"

namespace fs = std::filesystem;
using namespace stnl;

namespace {

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TensorIoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == TensorIoError::Kind::Io ? 1 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

std::vector<std::size_t> parse_ranks(const std::string& text) {
  std::vector<std::size_t> ranks;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string tok = text.substr(pos, comma - pos);
    if (tok.empty()) throw std::invalid_argument("--ranks: empty entry in \"" + text + "\"");
    std::size_t value = 0;
    for (char ch : tok) {
      if (ch < '0' || ch > '9') throw std::invalid_argument("--ranks: bad entry \"" + tok + "\"");
      value = value * 10 + static_cast<std::size_t>(ch - '0');
    }
    if (value < 1) throw std::invalid_argument("--ranks: ranks start at 1");
    ranks.push_back(value);
    pos = comma + 1;
    if (comma == text.size()) break;
  }
  if (ranks.empty()) throw std::invalid_argument("--ranks: no ranks given");
  return ranks;
}

Tensor<double> read_distances(const std::string& path) {
  const TensorFileInfo info = probe_tensor(path);
  if (info.dtype == Dtype::Float64) return read_tensor<double>(path);
  return cast_tensor<double>(read_tensor<float>(path));
}

void print_tensor_summary(const std::string& path) {
  const TensorFileInfo info = probe_tensor(path);
  std::cout << "file: " << path << "\n";
  std::cout << "dtype: " << dtype_name(info.dtype) << "\n";
  std::cout << "shape: " << shape_string(info.shape) << "\n";
  std::cout << "numel: " << numel_of(info.shape) << "\n";
  double mn = 0, mx = 0, mean = 0;
  std::size_t n = 0;
  auto fold = [&](auto tensor) {
    n = tensor.numel();
    if (n == 0) return;
    mn = mx = static_cast<double>(tensor[0]);
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = static_cast<double>(tensor[i]);
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      acc += v;
    }
    mean = acc / static_cast<double>(n);
  };
  if (info.dtype == Dtype::Float64) fold(read_tensor<double>(path));
  else fold(read_tensor<float>(path));
  if (n > 0) {
    std::cout << "min: " << format_g9(mn) << "\n";
    std::cout << "max: " << format_g9(mx) << "\n";
    std::cout << "mean: " << format_g9(mean) << "\n";
  }
}

int cmd_gradcheck(std::uint64_t seed, double tol, const std::string& op, int cases) {
  std::vector<std::string> ops = gradcheck_op_names();
  if (!op.empty()) {
    const auto known = gradcheck_op_names();
    if (std::find(known.begin(), known.end(), op) == known.end()) {
      std::cerr << "error: unknown --op \"" << op << "\"; known ops:";
      for (const auto& name : known) std::cerr << " " << name;
      std::cerr << "\n";
      return 2;
    }
    ops = {op};
  }
  const GradCheckReport report = gradcheck_suite(tol, seed, ops, cases);
  std::cout << format_gradcheck_report(report);
  return report.all_pass() ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, long steps_override) {
  std::string text;
  try {
    text = read_text_file(config_path);
  } catch (const std::exception& e) {
    throw ConfigError("(file)", e.what());
  }
  RunConfig cfg = parse_run_config_text(text);
  if (steps_override >= 0) cfg.steps = steps_override;

  fs::create_directories(out_dir);

  Rng master(cfg.seed);
  Rng data_rng = master.fork();
  Rng train_rng = master.fork();
  const TrackDataset<float> ds = make_synthetic<float>(cfg.data, data_rng);

  AdamConfig adam = cfg.optimizer;
  TrainResult<float> result =
      train<float>(ds, cfg.model, cfg.sampler, cfg.schedule, cfg.loss, adam, cfg.steps, train_rng);

  write_text_file((fs::path(out_dir) / "resolved_config.json").string(),
                  run_config_to_json(cfg).dump(2) + "\n");
  write_text_file((fs::path(out_dir) / "history.csv").string(), history_to_csv(result.history));
  save_checkpoint(result.encoder, (fs::path(out_dir) / "model.ckpt").string());

  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::cout << "trained " << cfg.steps << " steps, final loss " << format_g9(last.loss_total)
              << "\n";
  } else {
    std::cout << "trained 0 steps\n";
  }
  std::cout << "outputs in " << out_dir << "\n";
  return 0;
}

int cmd_extract(const std::string& ckpt_path, const std::string& input_path,
                const std::string& output_path) {
  TrackEncoder<float> enc = load_checkpoint_auto<float>(ckpt_path);
  const Tensor<float> tracks = read_tensor<float>(input_path);
  const Tensor<float> features = extract_features(enc, tracks);
  write_tensor(features, output_path);
  std::cout << "wrote " << output_path << " " << shape_string(features.shape()) << "\n";
  return 0;
}

int cmd_evaluate(const std::string& dist_path, const std::string& qid_path,
                 const std::string& gid_path, const std::string& qcam_path,
                 const std::string& gcam_path, const std::string& ranks_text,
                 const std::string& out_path) {
  const std::vector<std::size_t> ranks = parse_ranks(ranks_text);
  EvalProtocol<double> protocol;
  protocol.distances = read_distances(dist_path);
  protocol.query_ids = read_label_file(qid_path);
  protocol.gallery_ids = read_label_file(gid_path);
  if (qcam_path.empty() != gcam_path.empty()) {
    throw std::invalid_argument("evaluate: --query-cams and --gallery-cams go together");
  }
  if (!qcam_path.empty()) {
    protocol.query_cams = read_label_file(qcam_path);
    protocol.gallery_cams = read_label_file(gcam_path);
  }
  const std::size_t max_rank = *std::max_element(ranks.begin(), ranks.end());
  const EvalResult res = evaluate_protocol(protocol, max_rank);
  const std::string csv = eval_result_csv(res, ranks);
  std::cout << csv;
  if (!out_path.empty()) write_text_file(out_path, csv);
  return 0;
}

int cmd_inspect(const std::string& file_path, bool attention, const std::string& ckpt_path,
                const std::string& input_path, const std::string& out_dir) {
  if (!attention) {
    if (file_path.empty()) throw std::invalid_argument("inspect: --file required without --attention");
    print_tensor_summary(file_path);
    return 0;
  }
  if (ckpt_path.empty() || input_path.empty()) {
    throw std::invalid_argument("inspect: --attention needs --checkpoint and --input");
  }
  TrackEncoder<float> enc = load_checkpoint_auto<float>(ckpt_path);
  const Tensor<float> tracks = read_tensor<float>(input_path);
  fs::create_directories(out_dir);
  const auto maps = enc.attention_maps(tracks);
  for (const auto& [name, map] : maps) {
    const std::string out = (fs::path(out_dir) / ("attention_" + name + ".tnsr")).string();
    write_tensor(map, out);
    std::cout << "wrote " << out << " " << shape_string(map.shape()) << "\n";
  }
  std::cout << "attention maps: " << maps.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial-temporal track encoder toolkit"};
  app.require_subcommand(1);

  std::uint64_t gc_seed = 7;
  double gc_tol = 1e-4;
  std::string gc_op;
  int gc_cases = 20;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks for every backward pass");
  gradcheck->add_option("--seed", gc_seed, "rng seed");
  gradcheck->add_option("--tol", gc_tol, "max relative error");
  gradcheck->add_option("--op", gc_op, "check a single op");
  gradcheck->add_option("--cases", gc_cases, "random cases per op");

  std::string tr_config, tr_out;
  long tr_steps = -1;
  CLI::App* train_cmd = app.add_subcommand("train", "train on the synthetic dataset from a config");
  train_cmd->add_option("--config", tr_config, "run config JSON")->required();
  train_cmd->add_option("--out", tr_out, "output directory")->required();
  train_cmd->add_option("--steps", tr_steps, "override the config step count");

  std::string ex_ckpt, ex_input, ex_output;
  CLI::App* extract = app.add_subcommand("extract", "embed tracks with a trained checkpoint");
  extract->add_option("--checkpoint", ex_ckpt, "checkpoint file")->required();
  extract->add_option("--input", ex_input, "TNSR of tracks [n,C,T,H,W]")->required();
  extract->add_option("--output", ex_output, "TNSR of features [n,d]")->required();

  std::string ev_dist, ev_qid, ev_gid, ev_qcam, ev_gcam, ev_ranks = "1,5,10", ev_out;
  CLI::App* evaluate = app.add_subcommand("evaluate", "CMC and mAP from distances and labels");
  evaluate->add_option("--distances", ev_dist, "TNSR distance matrix [nQ,nG]")->required();
  evaluate->add_option("--query-ids", ev_qid, "query identity file")->required();
  evaluate->add_option("--gallery-ids", ev_gid, "gallery identity file")->required();
  evaluate->add_option("--query-cams", ev_qcam, "query camera file");
  evaluate->add_option("--gallery-cams", ev_gcam, "gallery camera file");
  evaluate->add_option("--ranks", ev_ranks, "comma-separated CMC ranks");
  evaluate->add_option("--out", ev_out, "also write the CSV here");

  std::string in_file, in_ckpt, in_input, in_outdir = ".";
  bool in_attention = false;
  CLI::App* inspect = app.add_subcommand("inspect", "describe a TNSR file or export attention maps");
  inspect->add_option("--file", in_file, "TNSR file to describe");
  inspect->add_flag("--attention", in_attention, "export every non-local attention map");
  inspect->add_option("--checkpoint", in_ckpt, "checkpoint (with --attention)");
  inspect->add_option("--input", in_input, "TNSR of tracks (with --attention)");
  inspect->add_option("--out-dir", in_outdir, "directory for attention maps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gradcheck->parsed())
    return guarded([&] { return cmd_gradcheck(gc_seed, gc_tol, gc_op, gc_cases); });
  if (train_cmd->parsed()) return guarded([&] { return cmd_train(tr_config, tr_out, tr_steps); });
  if (extract->parsed()) return guarded([&] { return cmd_extract(ex_ckpt, ex_input, ex_output); });
  if (evaluate->parsed()) {
    return guarded(
        [&] { return cmd_evaluate(ev_dist, ev_qid, ev_gid, ev_qcam, ev_gcam, ev_ranks, ev_out); });
  }
  if (inspect->parsed()) {
    return guarded([&] { return cmd_inspect(in_file, in_attention, in_ckpt, in_input, in_outdir); });
  }
  return 2;
}
