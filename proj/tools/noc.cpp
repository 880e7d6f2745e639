// Command-line entry point: generate | train | eval | diagnose | ablate.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "noc/ablation.hpp"

namespace {

using noc::Config;
using noc::ConfigError;

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (INI-style sections, see docs/config.md)");
  cmd->add_option("--set", c.sets, "Override a config key: section.key=value (repeatable)");
}

Config load_config(const Common& c, const std::string& extra = "") {
  Config cfg;
  if (!c.config.empty()) cfg = Config::load(c.config);
  if (!extra.empty()) cfg.merge(Config::load(extra));
  for (const auto& s : c.sets) cfg.apply_override(s);
  return cfg;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  if (text.find(',') == std::string::npos) {
    std::size_t used = 0;
    unsigned long long n = 0;
    try {
      n = std::stoull(text, &used);
    } catch (const std::exception&) {
      throw ConfigError("--seeds must be a count or a comma-separated list, got '" + text + "'");
    }
    if (used != text.size() || n == 0) throw ConfigError("--seeds must be a positive count, got '" + text + "'");
    for (unsigned long long s = 1; s <= n; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "' in --seeds");
    }
  }
  return seeds;
}

noc::DatasetManifest manifest_with_split(const std::string& path, const std::string& split,
                                         std::vector<noc::GroundTruth>& gt) {
  auto m = noc::load_manifest(path);
  if (split == "all") {
    for (const auto& e : m.images) gt.insert(gt.end(), e.objects.begin(), e.objects.end());
  } else {
    gt = m.ground_truth(split);
  }
  return m;
}

std::vector<noc::Detection> read_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections file " + path);
  return noc::read_detections_jsonl(in);
}

void print_breakdown(const noc::ErrorBreakdown& b) {
  std::printf("n_gt %zu counted %zu\n", b.n_gt, b.counted);
  for (std::size_t k = 0; k < 5; ++k)
    std::printf("%-4s %6zu  %.6f\n", noc::kErrorTypeNames[k], b.counts[k], b.fractions[k]);
}

std::string json_escape(const std::string& s) { return nlohmann::json(s).dump(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NoC region classifiers on shared convolutional feature maps"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.footer(
      "Config grammar and every key: docs/config.md.\n"
      "NOC_THREADS=N runs N ablation seeds in parallel (default 1; run.threads overrides).\n"
      "Exit status: 0 ok, 2 usage error (bad flag or config), 1 runtime failure with JSON on stderr.");

  Common c_gen, c_train, c_eval, c_diag, c_abl;

  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Render the synthetic dataset ([synth] section)");
  add_common(gen, c_gen);
  gen->add_option("--out", gen_out, "Output directory (manifest.json and blobs/)")->required();

  std::string tr_data, tr_out, tr_spec, tr_label = "model", tr_head = "svm", tr_split = "large", tr_donor,
                                                  tr_backbone;
  std::uint64_t tr_seed = 1;
  bool tr_bbox = false;
  auto* train = app.add_subcommand("train", "Train one NoC plus its head and write test-split detections");
  add_common(train, c_train);
  train->add_option("--data", tr_data, "Dataset manifest.json")->required();
  train->add_option("--spec", tr_spec, "Architecture string, e.g. c32-c32-f128-f128-f7")->required();
  train->add_option("--out", tr_out, "Output directory for checkpoints and detections.jsonl")->required();
  train->add_option("--label", tr_label, "Run label")->capture_default_str();
  train->add_option("--seed", tr_seed, "Seed for proposals, init and SGD")->capture_default_str();
  train->add_option("--head", tr_head, "svm or softmax")->check(CLI::IsMember({"svm", "softmax"}))->capture_default_str();
  train->add_option("--split", tr_split, "Training split: small or large")
      ->check(CLI::IsMember({"small", "large"}))
      ->capture_default_str();
  train->add_option("--donor", tr_donor, "NoC checkpoint directory for identity-extension init");
  train->add_option("--backbone", tr_backbone, "Backbone checkpoint directory (default: build from config)");
  train->add_flag("--bbox", tr_bbox, "Also train and apply box regression");

  std::string ev_det, ev_gt, ev_split = "test", ev_out, ev_name = "eval";
  double ev_iou = 0.5;
  bool ev_eleven = false;
  auto* eval = app.add_subcommand("eval", "Per-category AP of a detections file");
  add_common(eval, c_eval);
  eval->add_option("--detections", ev_det, "Detections (JSON lines)")->required();
  eval->add_option("--gt", ev_gt, "Dataset manifest.json with the ground truth")->required();
  eval->add_option("--iou", ev_iou, "IoU threshold for a true positive")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  eval->add_option("--split", ev_split, "Ground-truth split: train, test or all")
      ->check(CLI::IsMember({"train", "test", "all"}))
      ->capture_default_str();
  eval->add_flag("--eleven-point", ev_eleven, "Use 11-point interpolated AP");
  eval->add_option("--out", ev_out, "Also write results.csv and breakdown.json here");
  eval->add_option("--name", ev_name, "Experiment name used in the report")->capture_default_str();

  std::string dg_det, dg_gt, dg_split = "test", dg_out, dg_name = "diagnose";
  auto* diag = app.add_subcommand("diagnose", "Cor/Loc/Sim/Oth/BG breakdown of the top-ranked detections");
  add_common(diag, c_diag);
  diag->add_option("--detections", dg_det, "Detections (JSON lines)")->required();
  diag->add_option("--gt", dg_gt, "Dataset manifest.json with the ground truth and similarity map")->required();
  diag->add_option("--split", dg_split, "Ground-truth split: train, test or all")
      ->check(CLI::IsMember({"train", "test", "all"}))
      ->capture_default_str();
  diag->add_option("--out", dg_out, "Also write results.csv and breakdown.json here");
  diag->add_option("--name", dg_name, "Experiment name used in the report")->capture_default_str();

  std::string ab_matrix, ab_seeds = "5", ab_out, ab_data;
  auto* ablate = app.add_subcommand("ablate", "Run an experiment matrix over several seeds");
  add_common(ablate, c_abl);
  ablate->add_option("--matrix", ab_matrix, "Matrix config with [entry:<label>] sections")->required();
  ablate->add_option("--seeds", ab_seeds, "Seed count N (seeds 1..N) or a comma-separated list")->capture_default_str();
  ablate->add_option("--out", ab_out, "Output directory for results.csv, breakdown.json, per_seed.csv")->required();
  ablate->add_option("--data", ab_data, "Existing manifest.json (default: generate from [synth])");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::string command = app.get_subcommands().front()->get_name();
  try {
    if (*gen) {
      const auto cfg = load_config(c_gen);
      const auto synth = noc::synth_config_from(cfg);
      const auto ds = noc::generate_dataset(synth);
      noc::write_dataset(ds, gen_out);
      std::printf("wrote %zu images to %s\n", ds.images.size(), gen_out.c_str());
    } else if (*train) {
      const auto cfg = load_config(c_train);
      const auto settings = noc::AblationSettings::from_config(cfg);
      const auto ds = noc::load_dataset(tr_data);
      noc::ExperimentEntry entry;
      entry.label = tr_label;
      entry.spec = tr_spec;
      entry.head = tr_head;
      entry.split = tr_split;
      entry.bbox = tr_bbox;
      std::map<std::string, const noc::NocNet*> donors;
      noc::NocNet donor;
      if (!tr_donor.empty()) {
        donor = noc::load_noc(tr_donor);
        donors["donor"] = &donor;
        entry.init = "identity:donor";
      }
      noc::ExperimentMatrix one;
      one.entries = {entry};
      try {
        if (tr_donor.empty()) one.validate(ds.manifest.category_names.size());
        else noc::parse_spec(tr_spec, ds.manifest.category_names.size());
      } catch (const noc::SpecParseError& e) {
        throw ConfigError(e.what());
      }
      auto backbone = tr_backbone.empty() ? noc::prepare_backbone(ds, settings, settings.backbone_seed)
                                          : std::make_shared<const noc::Backbone>(noc::load_backbone(tr_backbone));
      auto pyramids = noc::prepare_pyramids(ds, *backbone, settings.scales, settings.center_images);
      const auto ctx = noc::prepare_seed(ds, settings, tr_seed, backbone, pyramids, settings.scales);
      noc::EntryModel model;
      const auto run = noc::run_entry(entry, ctx, settings, donors, &model);

      std::filesystem::create_directories(tr_out);
      const std::filesystem::path out(tr_out);
      noc::save_backbone(out / "backbone", *backbone);
      noc::save_noc(out / "noc", model.net);
      std::ofstream(out / "svm.json") << noc::svm_to_json(model.svm).dump(2) << '\n';
      std::ofstream det(out / "detections.jsonl");
      noc::write_detections_jsonl(det, model.detections);
      nlohmann::json log;
      log["label"] = run.label;
      log["spec"] = tr_spec;
      log["seed"] = tr_seed;
      log["loss_curve"] = run.training.loss_curve;
      log["epoch_train_loss"] = run.training.epoch_train_loss;
      log["map"] = run.map;
      log["ap75"] = run.ap75;
      log["coco"] = run.coco;
      log["warnings"] = run.warnings;
      std::ofstream(out / "train_log.json") << log.dump(2) << '\n';
      std::printf("%s: mAP@0.5 %.4f  AP@0.75 %.4f  COCO AP %.4f  (%zu detections)\n", tr_label.c_str(), run.map,
                  run.ap75, run.coco, model.detections.size());
    } else if (*eval) {
      load_config(c_eval);
      std::vector<noc::GroundTruth> gt;
      const auto m = manifest_with_split(ev_gt, ev_split, gt);
      const auto dets = read_detections(ev_det);
      const auto interp = ev_eleven ? noc::ApInterpolation::ElevenPoint : noc::ApInterpolation::AllPoints;
      const auto ap = noc::ap_at(dets, gt, ev_iou, interp);
      std::vector<noc::MetricRow> rows;
      std::printf("%-20s %s\n", "category", "AP");
      for (const auto& [c, v] : ap.per_category) {
        const std::string name = c < m.category_names.size() ? m.category_names[c] : std::to_string(c);
        std::printf("%-20s %.6f\n", name.c_str(), v);
        rows.push_back({ev_name, name, "ap", v, 0.0, 1});
      }
      std::printf("%-20s %.6f\n", "mean", ap.mean);
      rows.push_back({ev_name, "all", "map", ap.mean, 0.0, 1});
      if (!ev_out.empty()) {
        const auto b = noc::diagnose(dets, gt, m.similarity, m.category_names.size());
        noc::emit_report(ev_out, rows, {{ev_name, b}});
      }
    } else if (*diag) {
      load_config(c_diag);
      std::vector<noc::GroundTruth> gt;
      const auto m = manifest_with_split(dg_gt, dg_split, gt);
      const auto dets = read_detections(dg_det);
      const auto b = noc::diagnose(dets, gt, m.similarity, m.category_names.size());
      print_breakdown(b);
      if (!dg_out.empty()) {
        std::vector<noc::MetricRow> rows;
        for (std::size_t k = 0; k < 5; ++k) {
          std::string name = noc::kErrorTypeNames[k];
          for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
          rows.push_back({dg_name, "all", name + "_frac", b.fractions[k], 0.0, 1});
        }
        noc::emit_report(dg_out, rows, {{dg_name, b}});
      }
    } else if (*ablate) {
      const auto cfg = load_config(c_abl, ab_matrix);
      const auto seeds = parse_seeds(ab_seeds);
      const auto settings = noc::AblationSettings::from_config(cfg);
      const auto ds = ab_data.empty() ? noc::generate_dataset(noc::synth_config_from(cfg)) : noc::load_dataset(ab_data);
      const auto matrix = noc::ExperimentMatrix::from_config(cfg, ds.manifest.category_names.size());
      const auto t0 = std::chrono::steady_clock::now();
      const auto result = noc::run_ablation(matrix, ds, settings, seeds);
      noc::write_ablation(ab_out, result);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (const auto& r : result.rows)
        std::printf("%-24s %-10s %-9s %.4f +- %.4f (n=%zu)\n", r.experiment.c_str(), r.category.c_str(),
                    r.metric.c_str(), r.mean, r.sd, r.n);
      std::size_t failed = 0;
      for (const auto& r : result.runs)
        if (!r.ok) {
          ++failed;
          std::fprintf(stderr, "failed: %s seed %llu: %s\n", r.label.c_str(), static_cast<unsigned long long>(r.seed),
                       r.error.c_str());
        }
      std::fprintf(stderr, "ablate: %zu runs, %zu failed, %.1f s\n", result.runs.size(), failed, secs);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "{\"command\":%s,\"kind\":\"usage\",\"message\":%s}\n", json_escape(command).c_str(),
                 json_escape(e.what()).c_str());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "{\"command\":%s,\"kind\":\"runtime\",\"message\":%s}\n", json_escape(command).c_str(),
                 json_escape(e.what()).c_str());
    return 1;
  }
  return 0;
}
