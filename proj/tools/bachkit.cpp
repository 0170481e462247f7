// bachkit: layout-conditioned background retrieval, fusion and generation.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "bachkit/bank.hpp"
#include "bachkit/fusion.hpp"
#include "bachkit/generator.hpp"
#include "bachkit/image_io.hpp"
#include "bachkit/json_io.hpp"
#include "bachkit/params.hpp"
#include "bachkit/parallel.hpp"
#include "bachkit/retrieval.hpp"
#include "bachkit/service.hpp"
#include "bachkit/synthetic.hpp"
#include "bachkit/verify.hpp"

namespace fs = std::filesystem;
using namespace bachkit;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

Taxonomy load_taxonomy(const std::string& ref) {
  return Taxonomy::load(ref);
}

/// Options shared by commands that read a bank; a --config file fills in
/// whatever was not given on the command line.
struct BankOptions {
  std::string config;
  std::string bank;
  std::size_t m = 0;
  std::size_t workers = 0;
  std::string params;
  bool no_cache = false;

  void add_to(CLI::App* cmd, bool with_params) {
    cmd->add_option("--config", config, "Service configuration (JSON)");
    cmd->add_option("--bank", bank, "Bank manifest");
    cmd->add_option("--m", m, "Number of retrieved entries")->check(CLI::PositiveNumber);
    cmd->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_flag("--no-cache", no_cache, "Ignore and do not write sidecar caches");
    if (with_params) cmd->add_option("--params", params, "Parameter fixture directory");
  }

  void resolve() {
    std::optional<ServiceConfig> c;
    if (!config.empty()) c = ServiceConfig::load(config);
    if (bank.empty() && c) bank = c->bank_manifest.string();
    if (bank.empty()) fail(ErrorKind::Configuration, "no bank manifest (--bank or --config)");
    if (m == 0) m = c ? c->m : kDefaultTopM;
    if (workers == 0) workers = c ? c->workers : default_workers();
    if (params.empty() && c && c->params_dir) params = c->params_dir->string();
  }

  MemoryBank ingest() const { return MemoryBank::ingest(bank, workers, !no_cache); }
};

void print_ranking(const RetrievalResult& r) {
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    const RankedEntry& e = r.ranked[i];
    std::printf("%zu\t%s\t%s\t(%s)\n", i + 1, e.id.c_str(), e.score.decimal().c_str(),
                e.score.fraction().c_str());
  }
}

int run_synth_bank(const fs::path& out, const std::string& taxonomy, std::size_t count,
                   std::uint64_t seed, std::vector<int> canvas) {
  const fs::path manifest =
      write_synthetic_bank(out, load_taxonomy(taxonomy), Canvas{canvas[0], canvas[1]}, count, seed);
  std::printf("wrote %zu entries to %s\n", count, manifest.string().c_str());
  return 0;
}

int run_synth_layouts(const fs::path& out, const std::string& taxonomy, std::size_t count,
                      std::uint64_t seed, std::vector<int> canvas) {
  const Taxonomy tax = load_taxonomy(taxonomy);
  std::mt19937_64 rng(seed);
  fs::create_directories(out);
  for (std::size_t i = 0; i < count; ++i) {
    const SalientLayout l = random_layout(tax, Canvas{canvas[0], canvas[1]}, rng);
    write_text(out / ("layout" + std::to_string(i) + ".json"), layout_to_json_text(l, tax) + "\n");
  }
  std::printf("wrote %zu layouts to %s\n", count, out.string().c_str());
  return 0;
}

int run_init_params(BankOptions& bo, const std::string& taxonomy, std::uint64_t seed,
                    std::size_t fusion_steps, const fs::path& out) {
  std::size_t channels = 0;
  if (!taxonomy.empty()) {
    channels = load_taxonomy(taxonomy).total_count();
  } else {
    bo.resolve();
    channels = bo.ingest().taxonomy().total_count();
  }
  save_params(out, init_params(channels, seed, fusion_steps));
  std::printf("wrote parameters for %zu channels to %s\n", channels, out.string().c_str());
  return 0;
}

int run_rasterize(const std::string& layout_path, const std::string& taxonomy,
                  const fs::path& out, const std::string& preview) {
  const Taxonomy tax = load_taxonomy(taxonomy);
  const SalientLayout layout = load_layout(layout_path, tax);
  const LabelMap m = rasterize_layout(layout, tax);
  const ComposedLabelMap padded = pad_query(m, tax.background_count());
  save_tensor(out, ComposedLabelMap(m, 0).to_tensor());
  if (!preview.empty()) write_image(preview, render_preview(padded, tax, Palette::defaults(tax)));
  std::printf("rasterized %zu boxes to %zux%zux%zu\n", layout.boxes.size(), m.height(), m.width(),
              m.channels());
  return 0;
}

int run_retrieve(BankOptions& bo, const std::string& layout_path, const std::string& out,
                 bool no_timing) {
  bo.resolve();
  const MemoryBank bank = bo.ingest();
  const SalientLayout layout = load_layout(layout_path, bank.taxonomy());
  const RetrievalResult r = retrieve_top_m(bank, layout, bo.m, bo.workers);
  print_ranking(r);
  if (!out.empty()) {
    json j = to_json(r, !no_timing);
    j["m"] = bo.m;
    j["layout"] = layout_to_json(layout, bank.taxonomy());
    write_json(out, j);
  }
  return 0;
}

int run_bench(BankOptions& bo, std::size_t synthetic, std::vector<int> canvas,
              std::vector<std::string> query_files, std::size_t queries, std::size_t repeats,
              std::uint64_t seed, const std::string& out) {
  if (bo.workers == 0) bo.workers = default_workers();
  MemoryBank bank;
  if (synthetic > 0) {
    const auto t0 = std::chrono::steady_clock::now();
    bank = synthetic_bank(Taxonomy::cityscapes(), Canvas{canvas[0], canvas[1]}, synthetic, seed);
    std::printf("built synthetic bank of %zu entries in %.2f s\n", synthetic,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  } else {
    bo.resolve();
    bank = bo.ingest();
  }
  std::vector<SalientLayout> layouts;
  for (const auto& f : query_files) layouts.push_back(load_layout(f, bank.taxonomy()));
  std::mt19937_64 rng(seed + 1);
  while (layouts.size() < std::max<std::size_t>(queries, 1)) {
    layouts.push_back(random_layout(bank.taxonomy(), bank.canvas(), rng));
  }
  BenchOptions opt;
  opt.m = bo.m == 0 ? kDefaultTopM : bo.m;
  opt.repeats = repeats;
  const BenchReport rep = bench_retrieval(bank, layouts, bo.workers, opt);
  std::printf("per-entry iou_r: mean %.4f ms, p95 %.4f ms\n", rep.per_entry.mean_ms,
              rep.per_entry.p95_ms);
  std::printf("full scan: %.3f s/query at 1 worker, speedup %.2fx at %zu workers (%zu hardware threads)\n",
              rep.mean_scan_seconds_1, rep.speedup, rep.workers, rep.hardware_threads);
  if (!out.empty()) write_json(out, to_json(rep));
  return 0;
}

int run_fuse(BankOptions& bo, const std::string& layout_path, const std::string& out,
             const std::string& previews) {
  bo.resolve();
  if (bo.params.empty()) fail(ErrorKind::Configuration, "fuse needs --params");
  const MemoryBank bank = bo.ingest();
  const Taxonomy& tax = bank.taxonomy();
  const ParamBundle params = load_params(bo.params);
  if (!params.fusion) fail(ErrorKind::Parameter, "parameter fixture has no fusion weights");
  const SalientLayout layout = load_layout(layout_path, tax);
  const RetrievalResult r = retrieve_top_m(bank, layout, bo.m, bo.workers);
  print_ranking(r);
  const LabelMap fg = rasterize_layout(layout, tax);
  std::vector<ComposedLabelMap> composed;
  for (const RankedEntry& e : r.ranked) {
    composed.push_back(compose_label_map(split_background(bank.entries()[e.index], tax), fg));
  }
  const Tensor fused = fuse_background(pad_query(fg, tax.background_count()), composed, *params.fusion);
  save_tensor(out, fused);
  if (!previews.empty()) {
    const Palette palette = Palette::defaults(tax);
    fs::create_directories(previews);
    for (std::size_t i = 0; i < composed.size(); ++i) {
      write_image(fs::path(previews) / ("rank" + std::to_string(i + 1) + "_" + r.ranked[i].id + ".png"),
                  render_preview(composed[i], tax, palette));
    }
  }
  std::printf("fused %zu maps into %s\n", composed.size(), to_string(fused.extents()).c_str());
  return 0;
}

int run_generate(const std::string& params_dir, const std::string& feature, const std::string& out) {
  const ParamBundle params = load_params(params_dir);
  if (!params.generator) fail(ErrorKind::Parameter, "parameter fixture has no generator weights");
  const Tensor image = generate(load_tensor(feature), *params.generator);
  write_image(out, image_from_tensor(image));
  std::printf("generated %s\n", to_string(image.extents()).c_str());
  return 0;
}

int run_gradcheck(std::uint64_t seed, const std::string& out) {
  const auto cases = verify_gradients(seed);
  bool ok = true;
  for (const GradientCase& c : cases) {
    const bool pass = c.result.max_relative_error < 1e-4;
    ok = ok && pass;
    std::printf("%-18s max_rel_err %.3e  relu_margin %.3e  coords %zu  %s\n", c.name.c_str(),
                c.result.max_relative_error, c.result.min_relu_margin, c.result.coordinates,
                pass ? "ok" : "FAIL");
  }
  if (!out.empty()) write_json(out, {{"seed", seed}, {"cases", to_json(cases)}, {"passed", ok}});
  return ok ? 0 : 1;
}

int run_train_toy(const std::string& mode, std::size_t steps, std::uint64_t seed,
                  double learning_rate, const fs::path& out) {
  ToyTrainConfig cfg;
  cfg.mode = mode == "adv" ? TrainMode::Adversarial : TrainMode::Reconstruction;
  cfg.steps = steps;
  cfg.seed = seed;
  cfg.learning_rate = learning_rate;
  ToyTrainReport rep = toy_train(cfg);
  fs::create_directories(out);
  write_json(out / "report.json", to_json(rep));
  write_image(out / "target.png", image_from_tensor(rep.target));
  write_image(out / "output.png", image_from_tensor(rep.output));
  save_params(out / "params", ParamBundle{rep.fusion, rep.generator, rep.discriminator});
  std::printf("%s: loss %.6f -> %.6f over %zu steps\n", mode.c_str(), rep.initial_loss,
              rep.final_loss, steps);
  return 0;
}

int run_serve(const std::string& config) {
  const ServiceConfig cfg = ServiceConfig::load(config);
  const Api api = Api::from_config(cfg);
  HttpServer server(api);
  const int port = server.bind(cfg.host, cfg.port);
  std::printf("serving %zu entries on %s:%d\n", api.bank().size(), cfg.host.c_str(), port);
  std::fflush(stdout);
  server.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bachkit: salient-layout background retrieval and synthesis"};
  app.require_subcommand(1);
  int status = 0;

  std::string taxonomy = "preset:cityscapes";
  std::vector<int> canvas{256, 512};
  std::uint64_t seed = 1;
  std::size_t count = 20;
  std::string out;

  auto* synth = app.add_subcommand("synth-bank", "Write a synthetic bank");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--taxonomy", taxonomy, "Taxonomy file or preset:cityscapes|preset:ade20k");
  synth->add_option("--count", count, "Entries");
  synth->add_option("--seed", seed, "Seed");
  synth->add_option("--canvas", canvas, "H W")->expected(2);
  synth->callback([&] { status = run_synth_bank(out, taxonomy, count, seed, canvas); });

  auto* layouts = app.add_subcommand("synth-layouts", "Write random query layouts");
  layouts->add_option("--out", out, "Output directory")->required();
  layouts->add_option("--taxonomy", taxonomy, "Taxonomy file or preset");
  layouts->add_option("--count", count, "Layouts");
  layouts->add_option("--seed", seed, "Seed");
  layouts->add_option("--canvas", canvas, "H W")->expected(2);
  layouts->callback([&] { status = run_synth_layouts(out, taxonomy, count, seed, canvas); });

  BankOptions bo;
  std::string init_taxonomy;
  std::size_t fusion_steps = kDefaultFusionSteps;
  auto* init = app.add_subcommand("init-params", "Write seeded fusion/generator/discriminator weights");
  bo.add_to(init, false);
  init->add_option("--taxonomy", init_taxonomy, "Size for a taxonomy instead of a bank");
  init->add_option("--seed", seed, "Seed");
  init->add_option("--fusion-steps", fusion_steps, "Refinement steps T");
  init->add_option("--out", out, "Output directory")->required();
  init->callback([&] { status = run_init_params(bo, init_taxonomy, seed, fusion_steps, out); });

  std::string layout, preview;
  auto* raster = app.add_subcommand("rasterize", "Rasterize a layout to a foreground label map");
  raster->add_option("--layout", layout, "Layout file")->required();
  raster->add_option("--taxonomy", taxonomy, "Taxonomy file or preset");
  raster->add_option("--out", out, "Tensor dump")->required();
  raster->add_option("--preview", preview, "Preview image");
  raster->callback([&] { status = run_rasterize(layout, taxonomy, out, preview); });

  bool no_timing = false;
  auto* retrieve = app.add_subcommand("retrieve", "Rank bank entries against a layout");
  bo.add_to(retrieve, false);
  retrieve->add_option("--layout", layout, "Layout file")->required();
  retrieve->add_option("--out", out, "Report (JSON)");
  retrieve->add_flag("--no-timing", no_timing, "Leave timings out of the report");
  retrieve->callback([&] { status = run_retrieve(bo, layout, out, no_timing); });

  std::size_t synthetic = 0, queries = 4, repeats = 1;
  std::vector<std::string> query_files;
  auto* bench = app.add_subcommand("bench", "Time retrieval scoring");
  bo.add_to(bench, false);
  bench->add_option("--synthetic", synthetic, "Use an in-memory synthetic bank of this size");
  bench->add_option("--canvas", canvas, "H W of the synthetic bank")->expected(2);
  bench->add_option("--queries", query_files, "Layout files");
  bench->add_option("--random-queries", queries, "Random layouts when no files are given");
  bench->add_option("--repeats", repeats, "Scans per query (best kept)");
  bench->add_option("--seed", seed, "Seed");
  bench->add_option("--out", out, "Report (JSON)");
  bench->callback([&] { status = run_bench(bo, synthetic, canvas, query_files, queries, repeats, seed, out); });

  std::string previews;
  auto* fuse = app.add_subcommand("fuse", "Retrieve, compose and fuse background maps");
  bo.add_to(fuse, true);
  fuse->add_option("--layout", layout, "Layout file")->required();
  fuse->add_option("--out", out, "Feature dump")->required();
  fuse->add_option("--previews", previews, "Directory for composed-map previews");
  fuse->callback([&] { status = run_fuse(bo, layout, out, previews); });

  std::string params, feature;
  auto* gen = app.add_subcommand("generate", "Render an image from a fused feature map");
  gen->add_option("--params", params, "Parameter fixture directory")->required();
  gen->add_option("--feature", feature, "Feature dump")->required();
  gen->add_option("--out", out, "Image (.png/.ppm)")->required();
  gen->callback([&] { status = run_generate(params, feature, out); });

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gc->add_option("--seed", seed, "Seed");
  gc->add_option("--out", out, "Report (JSON)");
  gc->callback([&] { status = run_gradcheck(seed, out); });

  std::string mode = "recon";
  std::size_t steps = 500;
  double lr = 0.01;
  auto* train = app.add_subcommand("train-toy", "Train fusion + generator on a 16x16 toy pair");
  train->add_option("--mode", mode, "recon or adv")->check(CLI::IsMember({"recon", "adv"}));
  train->add_option("--steps", steps, "Optimizer steps");
  train->add_option("--seed", seed, "Seed");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--out", out, "Output directory")->required();
  train->callback([&] { status = run_train_toy(mode, steps, seed, lr, out); });

  std::string config;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  serve_cmd->add_option("--config", config, "Service configuration (JSON)")->required();
  serve_cmd->callback([&] { status = run_serve(config); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::fprintf(stderr, "bachkit: %s: %s\n", to_string(e.kind()), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bachkit: %s\n", e.what());
    return 2;
  }
  return status;
}
