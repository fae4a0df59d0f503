#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "qsep/embedding.hpp"
#include "qsep/eval.hpp"
#include "qsep/sepnet.hpp"
#include "qsep/spectral.hpp"
#include "qsep/synthdata.hpp"

using namespace qsep;

namespace {

struct TinyRig {
  DatasetSpec ds = make_dataset(42, 8000, 0.12);
  SyntheticEmbeddingSpace space;
  SpectralParams sp;
  SeparationModel model;

  TinyRig()
      : space([] {
          SyntheticSpaceConfig c;
          c.dim = 16;
          c.n_classes = 8;
          c.seed = 5;
          return c;
        }()),
        model([] {
          ModelHyper hy;
          hy.depth = 2;
          hy.base_width = 2;
          hy.k = 2;
          hy.embed_dim = 16;
          return hy;
        }()) {
    sp.fft_size = 256;
    sp.hop = 64;
    sp.window_size = 256;
    sp.sample_rate = 8000;
    model.init_params(17);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("sdr matches hand-computed values and caps") {
  const std::vector<double> ref = {3.0, 4.0};
  CHECK(sdr_db(ref, {3.0, 0.0}) ==
        Catch::Approx(10.0 * std::log10(25.0 / 16.0)).epsilon(1e-12));
  CHECK(sdr_db(ref, ref) == 60.0);  // exact estimate
  // Tiny error: raw ratio far above the cap.
  std::vector<double> close = ref;
  close[0] += 1e-9;
  CHECK(sdr_db(ref, close) == 60.0);
  // Huge error: capped below.
  CHECK(sdr_db(ref, {1e6, -1e6}) == -60.0);
  CHECK_THROWS(sdr_db(ref, {1.0}));
  CHECK_THROWS(sdr_db({}, {}));
  CHECK_THROWS(sdr_db({0.0, 0.0}, ref));
}

TEST_CASE("bootstrap statistics: mean, median, determinism") {
  const std::vector<double> odd = {5.0, 1.0, 3.0};
  const Stats so = bootstrap_stats(odd, 1);
  CHECK(so.mean == Catch::Approx(3.0));
  CHECK(so.median == 3.0);
  CHECK(so.count == 3);
  CHECK(so.std_of_mean > 0.0);

  const std::vector<double> even = {10.0, 1.0, 2.0, 3.0};
  const Stats se = bootstrap_stats(even, 1);
  CHECK(se.mean == Catch::Approx(4.0));
  CHECK(se.median == Catch::Approx(2.5));

  const Stats again = bootstrap_stats(odd, 1);
  CHECK(again.std_of_mean == so.std_of_mean);
  const Stats other_seed = bootstrap_stats(odd, 2);
  CHECK(other_seed.std_of_mean != so.std_of_mean);
  CHECK(other_seed.mean == so.mean);

  const Stats single = bootstrap_stats({7.5}, 1);
  CHECK(single.mean == 7.5);
  CHECK(single.median == 7.5);
  CHECK(single.std_of_mean == 0.0);

  CHECK_THROWS(bootstrap_stats({}, 1));

  // Bootstrap std of the mean tracks sigma/sqrt(n) for a big sample.
  Rng rng(601);
  std::vector<double> big(400);
  for (auto& v : big) v = rng.normal();
  const Stats sb = bootstrap_stats(big, 3);
  CHECK(sb.std_of_mean == Catch::Approx(1.0 / 20.0).margin(0.015));
}

TEST_CASE("separation plumbing produces well-formed estimates") {
  TinyRig rig;
  const MixtureExample ex = make_mixture(rig.ds, 0, 4, 11, 22);
  const MixtureContext<float> ctx =
      prepare_mixture(rig.model, rig.sp, ex.mixture);
  CHECK(ctx.spec.frames == 16);
  CHECK(ctx.spec.bins == 129);
  CHECK(ctx.mtilde.ch == 2);
  CHECK(ctx.mtilde.h == 16);
  CHECK(ctx.mtilde.w == 129);
  CHECK(ctx.n_samples == ex.mixture.samples.size());

  const QueryEmbedding q = rig.space.anchor(0, Modality::text);
  const Mask m = predict_mask(rig.model, ctx, q.vector);
  CHECK(m.kind == MaskKind::soft);
  CHECK(m.values.frames == 16);
  CHECK(m.values.bins == 129);
  for (float v : m.values.v) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }

  const Waveform est = estimate_source(rig.model, ctx, q.vector);
  REQUIRE(est.samples.size() == ex.mixture.samples.size());
  CHECK(est.sample_rate == 8000);

  const Waveform direct = separate(rig.model, rig.sp, ex.mixture, q.vector);
  REQUIRE(direct.samples == est.samples);
}

TEST_CASE("an all-pass mask reconstructs the mixture through the pipeline") {
  TinyRig rig;
  // Saturate the head so every mask cell is sigmoid(+30) ~ 1.
  for (const auto& spec : rig.model.layout())
    if (spec.name == "head.b") rig.model.params()[spec.offset] = 100.0f;
  for (const auto& spec : rig.model.layout())
    if (spec.name == "head.cw")
      for (std::size_t i = 0; i < spec.count; ++i)
        rig.model.params()[spec.offset + i] = 0.0f;
  const MixtureExample ex = make_mixture(rig.ds, 1, 6, 33, 44);
  const QueryEmbedding q = rig.space.anchor(1, Modality::text);
  const Waveform est = separate(rig.model, rig.sp, ex.mixture, q.vector);
  CHECK(sdr_db(ex.mixture.samples, est.samples) >= 59.0);
}

TEST_CASE("evaluation mixture plans are deterministic and well-formed") {
  const DatasetSpec ds = make_dataset(42, 8000, 0.12);
  const auto plans = plan_eval_mixtures(ds, 40, 99);
  REQUIRE(plans.size() == 40);
  for (int i = 0; i < 40; ++i) {
    const auto& p = plans[i];
    CHECK(p.cls_a != p.cls_b);
    CHECK(p.cls_a < 8);
    CHECK(p.cls_b < 8);
    CHECK(p.seed_a == instance_seed(ds.seed, p.cls_a, Split::eval,
                                    static_cast<std::uint64_t>(2 * i)));
    CHECK(p.seed_b == instance_seed(ds.seed, p.cls_b, Split::eval,
                                    static_cast<std::uint64_t>(2 * i + 1)));
  }
  const auto again = plan_eval_mixtures(ds, 40, 99);
  for (int i = 0; i < 40; ++i) {
    CHECK(again[i].cls_a == plans[i].cls_a);
    CHECK(again[i].seed_b == plans[i].seed_b);
  }
  bool differs = false;
  const auto shifted = plan_eval_mixtures(ds, 40, 100);
  for (int i = 0; i < 40; ++i)
    if (shifted[i].cls_a != plans[i].cls_a) differs = true;
  CHECK(differs);
}

TEST_CASE("task runs produce consistent records and aggregates") {
  TinyRig rig;
  EvalOptions opts;
  opts.n_mixtures = 3;
  opts.seed = 99;
  opts.audio_samples = 2;

  const TaskResult res =
      run_task(rig.model, rig.ds, rig.space, rig.sp, TaskKind::tqss, opts);
  REQUIRE(res.records.size() == 6);  // both sources of every mixture
  const auto plans = plan_eval_mixtures(rig.ds, 3, 99);
  std::vector<double> sdrs, sdris;
  for (const auto& r : res.records) {
    CHECK(r.class_id != r.interferer_id);
    CHECK(r.sdri == Catch::Approx(r.sdr - r.sdr_mix).margin(1e-12));
    CHECK(std::isfinite(r.sdr));
    const auto& p = plans[r.mixture];
    CHECK(r.class_id == (r.source == 0 ? p.cls_a : p.cls_b));
    sdrs.push_back(r.sdr);
    sdris.push_back(r.sdri);
  }
  const Stats want_sdr = bootstrap_stats(sdrs, opts.seed, 1000);
  CHECK(res.sdr_stats.mean == want_sdr.mean);
  CHECK(res.sdr_stats.median == want_sdr.median);
  CHECK(res.sdr_stats.std_of_mean == want_sdr.std_of_mean);
  const Stats want_sdri = bootstrap_stats(sdris, opts.seed, 1000);
  CHECK(res.sdri_stats.mean == want_sdri.mean);

  const TaskResult rerun =
      run_task(rig.model, rig.ds, rig.space, rig.sp, TaskKind::tqss, opts);
  REQUIRE(rerun.records.size() == res.records.size());
  for (std::size_t i = 0; i < res.records.size(); ++i)
    CHECK(rerun.records[i].sdr == res.records[i].sdr);
}

TEST_CASE("task records serialize to parseable JSON lines") {
  TinyRig rig;
  EvalOptions opts;
  opts.n_mixtures = 2;
  const TaskResult res =
      run_task(rig.model, rig.ds, rig.space, rig.sp, TaskKind::iqss, opts);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "qsep_eval_json";
  fs::create_directories(dir);
  const std::string path = (dir / "records.jsonl").string();
  save_task_records(res, path);

  std::ifstream is(path);
  std::size_t rows = 0;
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    REQUIRE(rows < res.records.size());
    const SdrRecord& r = res.records[rows];
    CHECK(j["mixture"].get<int>() == r.mixture);
    CHECK(j["source"].get<int>() == r.source);
    CHECK(j["class"].get<std::uint32_t>() == r.class_id);
    CHECK(j["interferer"].get<std::uint32_t>() == r.interferer_id);
    CHECK(j["sdr"].get<double>() == r.sdr);
    CHECK(j["sdri"].get<double>() == r.sdri);
    ++rows;
  }
  CHECK(rows == res.records.size());

  const ordered_json summary = task_summary_json(res);
  CHECK(summary["task"] == "iqss");
  CHECK(summary["sdr"]["mean"].get<double>() == res.sdr_stats.mean);
  CHECK(summary["sdri"]["count"].get<std::size_t>() == res.records.size());

  const std::string spath = (dir / "summary.json").string();
  save_json(summary, spath);
  const auto back = nlohmann::json::parse(slurp(spath));
  CHECK(back["sdr"]["median"].get<double>() == res.sdr_stats.median);

  // Byte-identical on re-save.
  const std::string path2 = (dir / "records2.jsonl").string();
  save_task_records(res, path2);
  CHECK(slurp(path) == slurp(path2));
  fs::remove_all(dir);
}

TEST_CASE("negative-query sweep degenerates to the plain query at zero") {
  TinyRig rig;
  EvalOptions opts;
  opts.n_mixtures = 2;
  const NqSweepResult res = nq_sweep(rig.model, rig.ds, rig.space, rig.sp,
                                     {0.0, 0.5, 1.0}, opts);
  REQUIRE(res.alphas == std::vector<double>{0.0, 0.5, 1.0});
  REQUIRE(res.points.size() == 3);
  for (const auto& pt : res.points) {
    CHECK(pt.proportional.count == 4);
    CHECK(pt.naive.count == 4);
  }
  // Both rescaling rules agree exactly at alpha = 0.
  CHECK(res.points[0].proportional.mean == res.points[0].naive.mean);
  CHECK(res.points[0].proportional.median == res.points[0].naive.median);
  CHECK(res.proportional_range >= 0.0);
  CHECK(res.naive_range >= 0.0);
}

TEST_CASE("query retrieval comparison is exact at zero drift") {
  TinyRig rig;
  std::vector<std::pair<std::uint32_t, std::string>> classes;
  for (const auto& c : rig.ds.classes) classes.emplace_back(c.class_id, c.label);
  const QuerySet qs = build_query_set(rig.space, classes, Modality::text);
  EvalOptions opts;
  opts.n_mixtures = 2;
  const QueryAugResultStats res = query_aug_comparison(
      rig.model, rig.ds, rig.space, rig.sp, qs, 0.0, opts);
  CHECK(res.magnitude == 0.0);
  CHECK(res.retrieval_accuracy == 1.0);
  // Zero drift: the perturbed, retrieved and clean queries coincide.
  CHECK(res.raw.mean == res.in_domain.mean);
  CHECK(res.augmented.mean == res.in_domain.mean);
  CHECK(res.raw.count == 4);
}

TEST_CASE("image renderers emit deterministic binary PGM") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "qsep_pgm";
  fs::create_directories(dir);

  Grid mag(3, 4);
  for (std::size_t i = 0; i < mag.v.size(); ++i)
    mag.v[i] = static_cast<float>(i) * 0.5f;
  const std::string p1 = (dir / "spec.pgm").string();
  render_spectrogram_pgm(mag, p1);
  const std::string bytes = slurp(p1);
  CHECK(bytes.rfind("P5\n3 4\n255\n", 0) == 0);
  CHECK(bytes.size() == std::string("P5\n3 4\n255\n").size() + 12);
  // Loudest cell maps to white; it lives at the top-right once low
  // frequencies are drawn at the bottom.
  CHECK(static_cast<unsigned char>(bytes[11 + 2]) == 255);

  const std::string p2 = (dir / "spec2.pgm").string();
  render_spectrogram_pgm(mag, p2);
  CHECK(slurp(p2) == bytes);

  Grid mask(2, 2);
  mask.v = {0.0f, 1.0f, 0.25f, 2.0f};  // 2.0 clamps to white
  const std::string p3 = (dir / "mask.pgm").string();
  render_mask_pgm(mask, p3);
  const std::string mb = slurp(p3);
  CHECK(mb.rfind("P5\n2 2\n255\n", 0) == 0);
  const std::size_t off = std::string("P5\n2 2\n255\n").size();
  // Row 0 = bin 1 (top), row 1 = bin 0 (bottom); columns are frames.
  CHECK(static_cast<unsigned char>(mb[off + 0]) == 255);   // frame0 bin1
  CHECK(static_cast<unsigned char>(mb[off + 1]) == 255);   // frame1 bin1 (2.0)
  CHECK(static_cast<unsigned char>(mb[off + 2]) == 0);     // frame0 bin0
  CHECK(static_cast<unsigned char>(mb[off + 3]) == 64);    // frame1 bin0

  const std::vector<double> xs = {0.0, 0.5, 1.0, 2.0};
  const std::vector<std::vector<double>> series = {
      {1.0, 2.0, 1.5, 3.0}, {0.0, -1.0, 0.5, 2.0}};
  const std::string p4 = (dir / "plot.pgm").string();
  plot_series_pgm(p4, xs, series);
  const std::string pb = slurp(p4);
  CHECK(pb.rfind("P5\n640 400\n255\n", 0) == 0);
  CHECK(pb.size() == std::string("P5\n640 400\n255\n").size() + 640 * 400);
  const std::string p5 = (dir / "plot2.pgm").string();
  plot_series_pgm(p5, xs, series);
  CHECK(slurp(p5) == pb);

  CHECK_THROWS(plot_series_pgm((dir / "bad.pgm").string(), {0.0}, {{1.0}}));
  CHECK_THROWS(
      plot_series_pgm((dir / "bad2.pgm").string(), xs, {{1.0, 2.0}}));
  fs::remove_all(dir);
}
