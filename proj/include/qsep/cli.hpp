#pragma once

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qsep/config.hpp"
#include "qsep/embedding.hpp"
#include "qsep/eval.hpp"
#include "qsep/queryspec.hpp"
#include "qsep/sepnet.hpp"
#include "qsep/synthdata.hpp"
#include "qsep/training.hpp"
#include "qsep/wav.hpp"

namespace qsep {

namespace cli_detail {

namespace fs = std::filesystem;

inline ExperimentConfig resolve_config(const std::string& config_path,
                                       const std::vector<std::string>& sets) {
  ExperimentConfig cfg =
      config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  for (const auto& kv : sets) apply_override_pair(cfg, kv);
  return cfg;
}

inline std::vector<std::pair<std::uint32_t, std::string>> class_list(
    const DatasetSpec& ds) {
  std::vector<std::pair<std::uint32_t, std::string>> out;
  for (const auto& c : ds.classes) out.emplace_back(c.class_id, c.label);
  return out;
}

struct RunContext {
  ExperimentConfig cfg;
  DatasetSpec ds;
  SpectralParams sp;
  SeparationModel model;
  SyntheticEmbeddingSpace space;
};

inline RunContext load_run(const std::string& dir,
                           const std::vector<std::string>& sets) {
  ExperimentConfig cfg = load_config(dir + "/config.txt");
  for (const auto& kv : sets) apply_override_pair(cfg, kv);
  DatasetSpec ds = load_manifest(dir + "/manifest.txt");
  SpectralParams sp;
  SeparationModel model = SeparationModel::load(dir + "/model.bin", &sp);
  SyntheticEmbeddingSpace space(space_config(cfg, ds.classes.size()));
  return {std::move(cfg), std::move(ds), sp, std::move(model),
          std::move(space)};
}

inline EvalOptions eval_options(const ExperimentConfig& cfg) {
  EvalOptions o;
  o.n_mixtures = cfg.eval_mixtures;
  o.seed = cfg.eval_seed;
  o.query_sigma = cfg.query_sigma;
  o.audio_samples = cfg.audio_samples;
  return o;
}

inline std::vector<double> parse_double_list(const std::string& csv,
                                             const char* what) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument("");
      out.push_back(v);
    } catch (...) {
      throw std::invalid_argument(std::string(what) + ": bad number '" +
                                  item + "'");
    }
  }
  if (out.empty())
    throw std::invalid_argument(std::string(what) + ": empty list");
  return out;
}

inline void write_run_dir(const std::string& out, const ExperimentConfig& cfg,
                          const DatasetSpec& ds,
                          const SyntheticEmbeddingSpace& space) {
  fs::create_directories(out);
  save_config(cfg, out + "/config.txt");
  save_manifest(ds, out + "/manifest.txt");
  save_query_set(build_query_set(space, class_list(ds), Modality::text),
                 out + "/queryset.bin");
}

inline int cmd_dataset_build(const std::string& out,
                             const std::string& config_path,
                             const std::vector<std::string>& sets,
                             int examples) {
  const ExperimentConfig cfg = resolve_config(config_path, sets);
  const DatasetSpec ds =
      make_dataset(cfg.dataset_seed, cfg.sample_rate, cfg.duration);
  const SyntheticEmbeddingSpace space(space_config(cfg, ds.classes.size()));
  write_run_dir(out, cfg, ds, space);
  const SpectralParams sp = spectral_params(cfg);
  for (const auto& c : ds.classes) {
    const Waveform w = generate_source(
        c, instance_seed(ds.seed, c.class_id, Split::train, 0), cfg.duration,
        cfg.sample_rate);
    write_wav(out + "/class_" + c.label + ".wav", w);
  }
  const auto plans = plan_eval_mixtures(ds, examples, cfg.eval_seed);
  for (int i = 0; i < examples; ++i) {
    const MixtureExample ex = make_mixture(ds, plans[i].cls_a, plans[i].cls_b,
                                           plans[i].seed_a, plans[i].seed_b);
    const std::string stem = out + "/mix_" + std::to_string(i);
    write_wav(stem + ".wav", ex.mixture);
    const Spectrogram spec =
        stft(ex.mixture, sp.fft_size, sp.hop, sp.window_size);
    render_spectrogram_pgm(spec.magnitude, stem + ".pgm");
  }
  const double audit = catalog_max_pairwise_cosine(
      ds.classes, cfg.sample_rate, mix_seed({ds.seed, 0xF00Dull}));
  std::cout << "dataset: " << ds.classes.size() << " classes, "
            << examples << " sample mixtures at " << out << "\n";
  std::cout << "max pairwise spectral cosine: " << audit << "\n";
  return 0;
}

inline int cmd_dataset_inspect(const std::string& manifest) {
  const DatasetSpec ds = load_manifest(manifest);
  std::cout << "seed " << ds.seed << ", sample_rate " << ds.sample_rate
            << ", duration " << ds.duration << "\n";
  for (const auto& c : ds.classes) {
    std::cout << "  [" << c.class_id << "] " << c.label << " ("
              << generator_name(c.kind) << ") f0=[" << c.params.f0_lo << ", "
              << c.params.f0_hi << "]";
    if (c.params.f1_hi != 0.0)
      std::cout << " f1=[" << c.params.f1_lo << ", " << c.params.f1_hi << "]";
    if (c.params.rate_hi != 0.0)
      std::cout << " rate=[" << c.params.rate_lo << ", " << c.params.rate_hi
                << "]";
    std::cout << "\n";
  }
  const double audit = catalog_max_pairwise_cosine(
      ds.classes, ds.sample_rate, mix_seed({ds.seed, 0xF00Dull}));
  std::cout << "max pairwise spectral cosine: " << audit << "\n";
  return 0;
}

inline int cmd_train(const std::string& out, const std::string& config_path,
                     const std::vector<std::string>& sets) {
  const ExperimentConfig cfg = resolve_config(config_path, sets);
  const DatasetSpec ds =
      make_dataset(cfg.dataset_seed, cfg.sample_rate, cfg.duration);
  const SyntheticEmbeddingSpace space(space_config(cfg, ds.classes.size()));
  const SpectralParams sp = spectral_params(cfg);
  SeparationModel model(model_hyper(cfg));
  std::cout << "training: " << model.param_count() << " parameters, "
            << cfg.steps << " steps, batch " << cfg.batch << "\n";
  const TrainResult res =
      train_model(model, ds, space, sp, train_config(cfg), &std::cout);
  write_run_dir(out, cfg, ds, space);
  model.save(out + "/model.bin", sp);
  save_loss_history(res.history, out + "/loss.txt");
  std::cout << "final loss " << res.last_loss << ", model at " << out
            << "/model.bin\n";
  return 0;
}

inline int cmd_separate(const std::string& run, const std::string& in_path,
                        const std::string& query, const std::string& out_path,
                        const std::string& negative, double alpha,
                        const std::string& mask_path,
                        const std::vector<std::string>& sets) {
  RunContext rc = load_run(run, sets);
  const Waveform mix = read_wav(in_path);
  if (mix.sample_rate != rc.sp.sample_rate)
    throw std::runtime_error(
        "input sample rate " + std::to_string(mix.sample_rate) +
        " does not match the model's " + std::to_string(rc.sp.sample_rate));
  QueryEmbedding q =
      resolve_query(parse_query_spec(query), rc.space, rc.ds.classes);
  if (!negative.empty()) {
    const QueryEmbedding qn =
        resolve_query(parse_query_spec(negative), rc.space, rc.ds.classes);
    q = negative_query(q, qn, alpha);
  }
  const MixtureContext<float> ctx = prepare_mixture(rc.model, rc.sp, mix);
  const Waveform est = estimate_source(rc.model, ctx, q.vector);
  write_wav(out_path, est);
  if (!mask_path.empty()) {
    const Mask m = predict_mask(rc.model, ctx, q.vector);
    render_mask_pgm(m.values, mask_path);
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

inline int cmd_eval(const std::string& run, const std::string& out,
                    const std::string& tasks_csv,
                    const std::vector<std::string>& sets) {
  RunContext rc = load_run(run, sets);
  fs::create_directories(out);
  const EvalOptions opts = eval_options(rc.cfg);
  ordered_json summary;
  std::istringstream is(tasks_csv);
  std::string name;
  bool any = false;
  while (std::getline(is, name, ',')) {
    TaskKind task;
    if (name == "tqss") task = TaskKind::tqss;
    else if (name == "iqss") task = TaskKind::iqss;
    else if (name == "aqss") task = TaskKind::aqss;
    else if (name == "composed") task = TaskKind::composed;
    else throw std::invalid_argument("unknown task '" + name + "'");
    any = true;
    const TaskResult res =
        run_task(rc.model, rc.ds, rc.space, rc.sp, task, opts);
    save_task_records(res, out + "/" + name + ".jsonl");
    summary[name] = task_summary_json(res);
    std::cout << name << ": mean SDR "
              << res.sdr_stats.mean << " dB, median SDRi "
              << res.sdri_stats.median << " dB over " << res.records.size()
              << " records\n";
  }
  if (!any) throw std::invalid_argument("no tasks requested");
  save_json(summary, out + "/eval_summary.json");
  return 0;
}

inline int cmd_sweep_nq(const std::string& run, const std::string& out,
                        const std::string& alphas_csv,
                        const std::vector<std::string>& sets) {
  RunContext rc = load_run(run, sets);
  fs::create_directories(out);
  const std::vector<double> alphas =
      parse_double_list(alphas_csv, "alphas");
  const NqSweepResult res = nq_sweep(rc.model, rc.ds, rc.space, rc.sp, alphas,
                                     eval_options(rc.cfg));
  ordered_json j;
  j["alphas"] = res.alphas;
  j["points"] = ordered_json::array();
  std::vector<double> pmeans, nmeans;
  for (const auto& pt : res.points) {
    ordered_json pj;
    pj["alpha"] = pt.alpha;
    pj["proportional"] = stats_to_json(pt.proportional);
    pj["naive"] = stats_to_json(pt.naive);
    j["points"].push_back(pj);
    pmeans.push_back(pt.proportional.mean);
    nmeans.push_back(pt.naive.mean);
  }
  j["proportional_range"] = res.proportional_range;
  j["naive_range"] = res.naive_range;
  save_json(j, out + "/nq_summary.json");
  plot_series_pgm(out + "/nq_plot.pgm", res.alphas, {pmeans, nmeans});
  std::cout << "negative-query sweep: proportional range "
            << res.proportional_range << " dB, naive range "
            << res.naive_range << " dB (dark curve = proportional)\n";
  return 0;
}

inline int cmd_sweep_ood(const std::string& run, const std::string& out,
                         double magnitude, const std::string& queryset_path,
                         const std::vector<std::string>& sets) {
  RunContext rc = load_run(run, sets);
  fs::create_directories(out);
  const QuerySet qs =
      queryset_path.empty()
          ? build_query_set(rc.space, class_list(rc.ds), Modality::text)
          : load_query_set(queryset_path);
  const double mag = magnitude >= 0.0 ? magnitude : rc.cfg.ood_magnitude;
  const QueryAugResultStats res = query_aug_comparison(
      rc.model, rc.ds, rc.space, rc.sp, qs, mag, eval_options(rc.cfg));
  ordered_json j;
  j["magnitude"] = res.magnitude;
  j["retrieval_accuracy"] = res.retrieval_accuracy;
  j["raw"] = stats_to_json(res.raw);
  j["augmented"] = stats_to_json(res.augmented);
  j["in_domain"] = stats_to_json(res.in_domain);
  save_json(j, out + "/ood_summary.json");
  std::cout << "ood magnitude " << mag << ": retrieval "
            << 100.0 * res.retrieval_accuracy << "%, raw mean "
            << res.raw.mean << " dB, augmented mean " << res.augmented.mean
            << " dB, in-domain mean " << res.in_domain.mean << " dB\n";
  return 0;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"query-conditioned sound separation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, manifest_path, run_dir;
  std::string in_path, out_path, query, negative, mask_path, queryset_path;
  std::string tasks_csv = "tqss,iqss,aqss,composed";
  std::string alphas_csv = "0,0.25,0.5,1,2";
  std::vector<std::string> sets;
  int examples = 4;
  double alpha = 0.5;
  double magnitude = -1.0;

  CLI::App* dataset = app.add_subcommand("dataset", "build or inspect data");
  dataset->require_subcommand(1);
  CLI::App* dbuild =
      dataset->add_subcommand("build", "write manifest, query set, samples");
  dbuild->add_option("--out", out_dir, "output directory")->required();
  dbuild->add_option("--config", config_path, "config file");
  dbuild->add_option("--set", sets, "override, e.g. dataset.seed=7");
  dbuild->add_option("--examples", examples, "sample mixtures to render");
  CLI::App* dinspect =
      dataset->add_subcommand("inspect", "describe an existing manifest");
  dinspect->add_option("--manifest", manifest_path, "manifest file")
      ->required();

  CLI::App* train =
      app.add_subcommand("train", "train a separator and save a run dir");
  train->add_option("--out", out_dir, "run directory to create")->required();
  train->add_option("--config", config_path, "config file");
  train->add_option("--set", sets, "override, e.g. train.steps=500");

  CLI::App* sep = app.add_subcommand(
      "separate", "extract the queried source from a mixture wav");
  sep->add_option("--run", run_dir, "run directory from train")->required();
  sep->add_option("--in", in_path, "input mixture wav")->required();
  sep->add_option("--query", query, "query, e.g. text:click_train")
      ->required();
  sep->add_option("--out", out_path, "output wav")->required();
  sep->add_option("--negative", negative,
                  "query for a source to suppress");
  sep->add_option("--alpha", alpha, "suppression strength (default 0.5)");
  sep->add_option("--mask", mask_path, "also write the mask as a pgm image");
  sep->add_option("--set", sets, "config override");

  CLI::App* ev = app.add_subcommand("eval", "run the evaluation protocols");
  ev->add_option("--run", run_dir, "run directory from train")->required();
  ev->add_option("--out", out_dir, "report directory")->required();
  ev->add_option("--tasks", tasks_csv, "comma list of tasks");
  ev->add_option("--set", sets, "override, e.g. eval.mixtures=50");

  CLI::App* sweep = app.add_subcommand("sweep", "parameter sweeps");
  sweep->require_subcommand(1);
  CLI::App* nq = sweep->add_subcommand(
      "nq", "negative-query strength sweep, both removal rules");
  nq->add_option("--run", run_dir, "run directory")->required();
  nq->add_option("--out", out_dir, "report directory")->required();
  nq->add_option("--alphas", alphas_csv, "comma list of strengths");
  nq->add_option("--set", sets, "config override");
  CLI::App* ood = sweep->add_subcommand(
      "ood", "out-of-domain query comparison with retrieval");
  ood->add_option("--run", run_dir, "run directory")->required();
  ood->add_option("--out", out_dir, "report directory")->required();
  ood->add_option("--magnitude", magnitude,
                  "perturbation magnitude (default from config)");
  ood->add_option("--queryset", queryset_path,
                  "retrieval set file (default: rebuilt from the run)");
  ood->add_option("--set", sets, "config override");

  // Exit codes: 0 success, 1 usage error, 2 runtime failure.
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    using namespace cli_detail;
    if (dbuild->parsed())
      return cmd_dataset_build(out_dir, config_path, sets, examples);
    if (dinspect->parsed()) return cmd_dataset_inspect(manifest_path);
    if (train->parsed()) return cmd_train(out_dir, config_path, sets);
    if (sep->parsed())
      return cmd_separate(run_dir, in_path, query, out_path, negative, alpha,
                          mask_path, sets);
    if (ev->parsed()) return cmd_eval(run_dir, out_dir, tasks_csv, sets);
    if (nq->parsed()) return cmd_sweep_nq(run_dir, out_dir, alphas_csv, sets);
    if (ood->parsed())
      return cmd_sweep_ood(run_dir, out_dir, magnitude, queryset_path, sets);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cerr << "error: no command\n";
  return 1;
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.push_back("qsep");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : full) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace qsep
