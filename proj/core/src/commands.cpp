#include "featxlate/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <memory>

#include "featxlate/archive.hpp"
#include "featxlate/data.hpp"
#include "featxlate/error.hpp"
#include "featxlate/eval.hpp"
#include "featxlate/feature_cache.hpp"
#include "featxlate/pipeline.hpp"
#include "featxlate/training.hpp"

namespace featxlate {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

NormalizedDomain open_domain(const FeatureCache& cache, const std::string& domain, int level,
                             CacheKind kind = CacheKind::normalized) {
  try {
    return NormalizedDomain::open(cache, domain, level, kind);
  } catch (const NotFoundError& e) {
    throw StageOrderError(std::string(e.what()) + " (run `featxlate stats` with this configuration first)");
  }
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_path(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string last_terms(const StageTrainer& t) {
  for (auto it = t.trace().rbegin(); it != t.trace().rend(); ++it) {
    if (!it->generator) continue;
    std::string s;
    for (const auto& [k, v] : it->terms) s += " " + k + "=" + std::to_string(v);
    return s;
  }
  return "";
}

}  // namespace

fs::path cache_root(const RunConfig& config) { return config.cache_dir / config.lineage_hash(); }

DomainDataset build_dataset(const DomainSource& source) {
  if (source.is_coco()) {
    return build_coco_domain({source.coco_annotations, source.coco_category, source.coco_min_area_fraction},
                             source.coco_images_root, source.id);
  }
  if (source.folder.empty()) throw ConfigError("domain '" + source.id + "' needs either folder or coco.category");
  return build_folder_domain(source.folder, source.id);
}

void cmd_stats(const RunConfig& config, bool force, std::ostream& log) {
  const auto encoder = make_encoder(config);
  const auto lineage = config.lineage_hash();
  FeatureCache cache(cache_root(config));
  for (const auto* source : {&config.domain_a, &config.domain_b}) {
    for (int level : config.levels) {
      const auto path = stats_path(config.stats_dir, source->id, level);
      if (force || !fs::exists(path)) continue;
      const auto existing = load_stats(path);
      if (existing.config_hash != lineage) {
        throw ConfigError("statistics file " + path.string() + " was produced by configuration " +
                          existing.config_hash + "; pass --force to overwrite");
      }
    }
  }
  for (const auto* source : {&config.domain_a, &config.domain_b}) {
    const auto dataset = build_dataset(*source);
    log << "domain " << dataset.domain_id << ": " << dataset.size() << " images";
    if (dataset.ignored_files) log << " (" << dataset.ignored_files << " non-image files ignored)";
    log << "\n";
    const auto stats = build_domain_cache(dataset, encoder, config.levels, cache, lineage);
    for (const auto& [level, s] : stats) {
      const auto path = stats_path(config.stats_dir, source->id, level);
      save_stats(s, path);
      log << "  L" << level << ": " << s.channels() << " channels -> " << path.string() << "\n";
    }
  }
}

void cmd_train(const RunConfig& config, const TrainArgs& args, std::ostream& log) {
  const auto encoder = make_encoder(config);
  const NetworkFactory factory(encoder.profile());
  const FeatureCache cache(cache_root(config));
  const auto& stage = config.stage;
  const auto lineage = config.lineage_hash();

  if (stage.kind != StageKind::deepest && !contains(config.levels, stage.level)) {
    throw ConfigError("stage level " + std::to_string(stage.level) + " is not among the configured levels");
  }

  TrainerOptions opts;
  opts.schedule = stage.kind == StageKind::inverter ? config.inverter_schedule : config.schedule;
  opts.weights = config.weights;
  opts.inverter_weights = config.inverter_weights;
  opts.config_hash = config.config_hash();
  opts.lineage_hash = lineage;
  opts.checkpoint_root = config.checkpoint_dir;
  fs::create_directories(config.log_dir);
  CsvMetricsLog metrics(config.log_dir / (stage.name() + ".csv"));
  opts.metrics = metrics.sink();

  const auto ckpt = checkpoint_file(config.checkpoint_dir, stage);
  if (args.resume && !fs::exists(ckpt)) throw NotFoundError("no checkpoint to resume: " + ckpt.string());
  if (!args.resume && !args.force && fs::exists(ckpt)) {
    const auto meta = json::parse(TensorArchive::load(ckpt).meta);
    throw ConfigError("checkpoint " + ckpt.string() + " already exists (config " +
                      meta.value("config_hash", std::string("?")) + "); use --resume or --force");
  }

  std::unique_ptr<StageTrainer> trainer;
  switch (stage.kind) {
    case StageKind::deepest:
      trainer = std::make_unique<DeepestTrainer>(factory, open_domain(cache, config.domain_a.id, kNumLevels),
                                                 open_domain(cache, config.domain_b.id, kNumLevels), opts);
      break;
    case StageKind::conditional: {
      auto frozen_a = load_translator_stack(config.checkpoint_dir, factory, "G_A", stage.level + 1, lineage);
      auto frozen_b = load_translator_stack(config.checkpoint_dir, factory, "G_B", stage.level + 1, lineage);
      std::map<int, NormalizedDomain> a, b;
      for (int level = stage.level; level <= kNumLevels; ++level) {
        a.emplace(level, open_domain(cache, config.domain_a.id, level));
        b.emplace(level, open_domain(cache, config.domain_b.id, level));
      }
      trainer = std::make_unique<ConditionalTrainer>(factory, stage.level, std::move(a), std::move(b),
                                                     std::move(frozen_a), std::move(frozen_b), opts);
      break;
    }
    case StageKind::inverter: {
      auto features = open_domain(cache, stage.domain, stage.level);
      auto images = open_domain(cache, stage.domain, 0, CacheKind::image);
      trainer = std::make_unique<InverterTrainer>(factory, stage.domain, stage.level, features.all(), images.all(),
                                                  opts);
      break;
    }
  }

  if (args.resume) {
    trainer->resume(ckpt);
    log << "resumed " << stage.name() << " at epoch " << trainer->epoch() << ", step " << trainer->step() << "\n";
  }
  log << "training " << stage.name() << ": " << opts.schedule.epochs << " epochs x " << trainer->cycles_per_epoch()
      << " cycles\n";
  trainer->train();
  log << "finished " << stage.name() << " at epoch " << trainer->epoch() << " (" << trainer->generator_updates()
      << " generator updates)" << last_terms(*trainer) << "\n";
  log << "checkpoint: " << ckpt.string() << "\n";
}

void cmd_translate(const RunConfig& config, const fs::path& input, const fs::path& output, std::ostream& log) {
  const auto encoder = make_encoder(config);
  CascadeSpec spec;
  spec.direction = parse_direction(config.direction);
  spec.levels = config.levels;
  spec.inverter_level = config.levels.back();
  spec.domain_a = config.domain_a.id;
  spec.domain_b = config.domain_b.id;
  spec.stats_dir = config.stats_dir;
  spec.checkpoint_root = config.checkpoint_dir;
  spec.lineage_hash = config.lineage_hash();
  spec.config_hash = config.config_hash();
  const auto cascade = Cascade::load(encoder, spec);

  if (fs::is_directory(input)) {
    const auto entries = batch_translate(cascade, input, output);
    const auto ok = std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.status == "ok"; });
    log << "translated " << ok << " of " << entries.size() << " images (" << config.direction << ") into "
        << output.string() << "\n";
    for (const auto& e : entries) {
      if (e.status != "ok") log << "  skipped " << e.input << ": " << e.reason << "\n";
    }
    return;
  }
  if (!fs::exists(input)) throw NotFoundError("input not found: " + input.string());
  auto target = output;
  if (fs::is_directory(output)) target = output / (input.stem().string() + ".png");
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  write_image(target, translate_file(cascade, input));
  log << "translated " << input.string() << " -> " << target.string() << " (" << config.direction << ")\n";
}

double cmd_evaluate(const RunConfig& config, const EvaluateArgs& args, std::ostream& log) {
  const auto encoder = make_encoder(config);
  if (!encoder.has_head()) throw UnsupportedError("the configured encoder has no embedding head");
  const auto source = collect_embeddings(list_images(args.source), encoder, "source");
  const auto target = collect_embeddings(list_images(args.target), encoder, "target");
  const auto translated = collect_embeddings(list_images(args.translated), encoder, "translated");

  const double fid = frechet_distance(translated, target);
  const double baseline = frechet_distance(source, target);
  const auto ledger = config.results_dir / "results.tsv";
  append_results_ledger(ledger, {config.eval_dataset, config.direction, fid, translated.size(), target.size(),
                                 translated.extractor_tag, config.config_hash()});
  append_results_ledger(ledger, {config.eval_dataset, config.direction + ":untranslated", baseline, source.size(),
                                 target.size(), source.extractor_tag, config.config_hash()});
  log << "FID(translated, target) = " << fid << "\n";
  log << "FID(source, target)     = " << baseline << "\n";

  const auto out = args.out.empty() ? config.results_dir / (config.eval_dataset + "_" + config.direction) : args.out;
  fs::create_directories(out);
  TsneOptions tsne;
  tsne.perplexity = config.eval_perplexity;
  tsne.iterations = config.eval_iterations;
  tsne.seed = config.eval_seed;
  const auto method = config.eval_method == "pca" ? ProjectionMethod::pca : ProjectionMethod::tsne;
  const auto points = project_2d({source, target, translated}, method, tsne);
  write_point_table(out / "points.tsv", points);
  write_scatter_png(out / "projection.png", points);
  log << "projection: " << (out / "projection.png").string() << "\n";
  return fid;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Unpaired image translation in deep feature space"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON run configuration")->required();
    sub->add_option("--set", overrides, "override a config key: key.path=value")->take_all();
  };

  bool force = false;
  auto* stats = app.add_subcommand("stats", "extract features, write the cache and per-channel statistics");
  add_common(stats);
  stats->add_flag("--force", force, "overwrite statistics from a different configuration");

  TrainArgs train_args;
  std::string stage_kind, stage_domain;
  int stage_level = 0;
  auto* train = app.add_subcommand("train", "train one stage");
  add_common(train);
  train->add_option("--stage", stage_kind, "deepest | conditional | inverter");
  train->add_option("--level", stage_level, "stage level");
  train->add_option("--domain", stage_domain, "inverter domain: A | B");
  train->add_flag("--resume", train_args.resume, "continue from the stage checkpoint");
  train->add_flag("--force", train_args.force, "discard an existing stage checkpoint");

  std::string input, output, direction;
  auto* translate = app.add_subcommand("translate", "translate an image or a folder of images");
  add_common(translate);
  translate->add_option("-i,--in,--input", input, "image file or folder")->required();
  translate->add_option("-o,--out,--output", output, "output file or folder")->required();
  translate->add_option("--direction", direction, "AtoB | BtoA");

  EvaluateArgs eval_args;
  std::string source_dir, target_dir, translated_dir, out_dir;
  auto* evaluate = app.add_subcommand("evaluate", "FID and 2-D projection of translated images");
  add_common(evaluate);
  evaluate->add_option("--source", source_dir, "untranslated source images")->required();
  evaluate->add_option("--target", target_dir, "real target-domain images")->required();
  evaluate->add_option("--translated", translated_dir, "translated images")->required();
  evaluate->add_option("--out", out_dir, "projection output folder");
  evaluate->add_option("--direction", direction, "AtoB | BtoA");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (!stage_kind.empty()) overrides.push_back("stage.kind=\"" + stage_kind + "\"");
    if (stage_level != 0) overrides.push_back("stage.level=" + std::to_string(stage_level));
    if (!stage_domain.empty()) overrides.push_back("stage.domain=\"" + stage_domain + "\"");
    if (!direction.empty()) overrides.push_back("translate.direction=\"" + direction + "\"");
    const auto config = load_config(config_path, overrides);
    std::cerr << "effective config (" << config.config_hash() << "): " << config.effective.dump() << "\n";

    if (stats->parsed()) {
      cmd_stats(config, force, std::cout);
    } else if (train->parsed()) {
      cmd_train(config, train_args, std::cout);
    } else if (translate->parsed()) {
      cmd_translate(config, input, output, std::cout);
    } else if (evaluate->parsed()) {
      eval_args.source = source_dir;
      eval_args.target = target_dir;
      eval_args.translated = translated_dir;
      eval_args.out = out_dir;
      cmd_evaluate(config, eval_args, std::cout);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StageOrderError& e) {
    std::cerr << "stage order error: " << e.what() << "\n";
    return kExitStageOrder;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace featxlate
