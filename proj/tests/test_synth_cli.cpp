#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "suites.hpp"
#include "noc/ablation.hpp"
#include "noc/synth.hpp"

using namespace noc;
using namespace noc::testing;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny() {
  SynthConfig c;
  c.n_train_small = 4;
  c.n_train_large = 8;
  c.n_test = 4;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(const std::string& args, const fs::path& work) {
  const fs::path o = work / "stdout.txt", e = work / "stderr.txt";
  const std::string cmd = std::string(NOC_CLI_PATH) + " " + args + " >" + o.string() + " 2>" + e.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("noc_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kTinyCfg = R"([synth]
n_train_small = 4
n_train_large = 8
n_test = 4
seed = 3

[backbone]
widths = 4, 8
epochs = 1

[proposals]
per_gt = 4
background = 4

[test_proposals]
per_gt = 4
background = 6

[pyramid]
scales = 1, 2
m = 3
target_extent = 40

[train]
epochs = 1
rois_per_image = 8
probe_rois = 16

[svm]
max_epochs = 50
)";

}  // namespace

TEST_CASE("dataset generation is deterministic and well formed") {
  const Dataset a = generate_dataset(tiny()), b = generate_dataset(tiny());
  REQUIRE(a.images.size() == 12);
  for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i] == b.images[i]);
  CHECK(manifest_to_json(a.manifest) == manifest_to_json(b.manifest));
  SynthConfig other = tiny();
  other.seed = 2;
  CHECK_FALSE(generate_dataset(other).images[0] == a.images[0]);
  std::size_t small = 0, train = 0;
  for (const auto& e : a.manifest.images) {
    small += e.small;
    train += e.split == "train";
    CHECK(e.objects.size() >= 1);
    CHECK(e.objects.size() <= 3);
    for (const auto& o : e.objects) {
      CHECK(o.image_id == e.id);
      CHECK(o.category < 6);
      CHECK(o.region.x1 >= 0);
      CHECK(o.region.x2 <= 64);
    }
  }
  CHECK(small == 4);
  CHECK(train == 8);
}

TEST_CASE("single category, single object") {
  SynthConfig c = tiny();
  c.n_categories = 1;
  c.max_objects = 1;
  const Dataset d = generate_dataset(c);
  for (const auto& e : d.manifest.images) CHECK(e.objects.size() == 1);
  CHECK(d.manifest.similarity.at(0).empty());
}

TEST_CASE("similar pairs are disjoint and symmetric") {
  const SimilarityMap s = similar_pairs(6);
  for (const auto& [c, set] : s) {
    CHECK(set.size() == 1);
    for (std::size_t o : set) {
      CHECK(o != c);
      CHECK(s.at(o).contains(c));
    }
  }
  CHECK(category_names(6)[1] == "rounded_square");
}

TEST_CASE("object mass sits inside its box") {
  const SynthConfig c = tiny();
  for (std::size_t id = 0; id < 40; ++id) {
    Rng rng(derive_seed(99, id));
    const RenderedImage r = render_image(c, id, rng);
    REQUIRE(r.coverage.size() == r.objects.size());
    for (std::size_t k = 0; k < r.objects.size(); ++k) {
      const Region& b = r.objects[k].region;
      double in = 0, out = 0;
      for (std::size_t y = 0; y < c.image_size; ++y)
        for (std::size_t x = 0; x < c.image_size; ++x) {
          const double v = r.coverage[k][y * c.image_size + x];
          const bool inside = x + 0.5 > b.x1 && x + 0.5 < b.x2 && y + 0.5 > b.y1 && y + 0.5 < b.y2;
          (inside ? in : out) += v;
        }
      CHECK(in > 0);
      CHECK(in >= 10 * out);
    }
  }
}

TEST_CASE("unplaceable objects fail after bounded retries") {
  SynthConfig c = tiny();
  c.min_objects = c.max_objects = 3;
  c.image_size = 32;
  c.min_object_size = c.max_object_size = 29;
  c.max_retries = 20;
  Rng rng(1);
  CHECK_THROWS_AS(render_image(c, 0, rng), std::runtime_error);
  SynthConfig bad = tiny();
  bad.max_object_size = 80;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("jittered proposals") {
  const std::vector<Region> gts{{10, 10, 30, 34}, {40, 5, 60, 25}};
  JitterConfig zero;
  zero.translate_sigma = zero.scale_sigma = 0;
  zero.per_gt = 3;
  zero.background = 0;
  Rng rng(1);
  const auto same = jitter_proposals(gts, zero, 64, 64, 14, 30, rng);
  REQUIRE(same.size() == 6);
  CHECK(same[0] == gts[0]);
  CHECK(same[5] == gts[1]);

  JitterConfig cfg;
  cfg.per_gt = 1000;
  cfg.background = 200;
  const auto props = jitter_proposals({gts[0]}, cfg, 64, 64, 14, 30, rng);
  std::size_t above = 0, below = 0, bg = 0;
  for (std::size_t i = 0; i < props.size(); ++i) {
    CHECK(props[i].valid());
    CHECK(props[i].x2 <= 64);
    const double v = iou(props[i], gts[0]);
    if (i < props.size() - 200) (v >= 0.5 ? above : below)++;
    else bg += v < 0.3;
  }
  CHECK(above > 100);
  CHECK(below > 100);
  CHECK(bg == 200);
}

TEST_CASE("manifest round trip and validation") {
  const fs::path dir = scratch("manifest");
  const Dataset d = generate_dataset(tiny());
  write_dataset(d, dir);
  const Dataset back = load_dataset(dir / "manifest.json");
  CHECK(back.images == d.images);
  CHECK(manifest_to_json(back.manifest) == manifest_to_json(d.manifest));
  CHECK(back.manifest.ground_truth("test").size() > 0);

  // wrong shape in a blob
  save_tensor(dir / d.manifest.images[2].blob, Tensor({3, 10, 10}));
  CHECK_THROWS_AS(load_manifest(dir / "manifest.json"), FormatError);
  fs::remove(dir / d.manifest.images[2].blob);
  CHECK_THROWS_AS(load_manifest(dir / "manifest.json"), FormatError);
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS_AS(load_manifest(dir / "bad.json"), FormatError);
  CHECK_THROWS(load_manifest(dir / "missing.json"));
  fs::remove_all(dir);
}

TEST_CASE("config parsing") {
  const Config c = Config::parse("# c\n[a]\nx = 1.5\nlist = 1, 2,3\nflag = true\n\n[b]\nname = hello\n");
  CHECK(c.get_double("a.x", 0) == 1.5);
  CHECK(c.get_sizes("a.list", {}) == std::vector<std::size_t>{1, 2, 3});
  CHECK(c.get_bool("a.flag", false));
  CHECK(c.get_string("b.name", "") == "hello");
  CHECK(c.get_int("b.missing", 7) == 7);
  CHECK(c.sections() == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(c.get_double("b.name", 0), ConfigError);
  CHECK_THROWS_AS(c.require_string("z.z"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[a\nx=1\n"), ConfigError);
  Config d = c;
  d.apply_override("a.x=4");
  CHECK(d.get_double("a.x", 0) == 4);
  CHECK_THROWS_AS(d.apply_override("nodot=1"), ConfigError);
  CHECK_THROWS_AS(d.apply_override("a.x"), ConfigError);
}

TEST_CASE("experiment matrix parsing") {
  const Config c = Config::parse(R"([matrix]
metrics = map, loc_frac
[entry:3fc]
spec = f128-f128-f7
[entry:2conv3fc]
spec = c32-c32-f128-f128-f7
init = identity:3fc
split = small
[entry:mo]
spec = c32-mo-c32-f128-f128-f7
scales = 1, 2
)");
  const ExperimentMatrix m = ExperimentMatrix::from_config(c, 6);
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[1].donor() == std::optional<std::string>("3fc"));
  CHECK(m.entries[1].split == "small");
  CHECK(m.entries[2].maxout(6));
  CHECK_FALSE(m.entries[0].maxout(6));
  CHECK(m.metrics == std::vector<std::string>{"map", "loc_frac"});

  CHECK_THROWS_AS(ExperimentMatrix::from_config(Config::parse("[entry:x]\nspec = f9\n"), 6), ConfigError);
  CHECK_THROWS_AS(ExperimentMatrix::from_config(Config::parse("[entry:x]\nspec = c4-f7\ninit = identity:y\n"), 6),
                  ConfigError);
  CHECK_THROWS_AS(
      ExperimentMatrix::from_config(Config::parse("[matrix]\nmetrics = nope\n[entry:x]\nspec = f7\n"), 6),
      ConfigError);
  CHECK_THROWS_AS(ExperimentMatrix::from_config(Config::parse("[matrix]\nmetrics = map\n"), 6), ConfigError);
  CHECK_THROWS_AS(ExperimentMatrix::from_config(Config::parse("[entry:x]\nspec = mo-f7\nscales = 1\n"), 6),
                  ConfigError);
}

TEST_CASE("shipped configs parse") {
  const fs::path root = NOC_SOURCE_DIR;
  Config base = Config::load(root / "configs/default.cfg");
  CHECK_NOTHROW(AblationSettings::from_config(base));
  CHECK_NOTHROW(synth_config_from(base));
  for (const char* f : {"table1.cfg", "table2.cfg", "table3.cfg", "table4.cfg", "trends.cfg"}) {
    Config c = base;
    c.merge(Config::load(root / "configs" / f));
    CHECK_NOTHROW(ExperimentMatrix::from_config(c, 6));
  }
  Config t1 = Config::load(root / "configs/table1.cfg");
  CHECK(ExperimentMatrix::from_config(t1, 6).entries.size() == 4);
}

TEST_CASE("cli usage errors exit 2, runtime errors exit 1") {
  const fs::path w = scratch("codes");
  CHECK(cli("--help", w).code == 0);
  const Run h = cli("ablate --help", w);
  CHECK(h.code == 0);
  for (const char* flag : {"--matrix", "--seeds", "--out", "--data", "--config", "--set"})
    CHECK_MESSAGE(h.out.find(flag) != std::string::npos, flag);
  const Run t = cli("train --help", w);
  for (const char* flag : {"--data", "--spec", "--out", "--label", "--seed", "--head", "--split", "--donor",
                           "--backbone", "--bbox"})
    CHECK_MESSAGE(t.out.find(flag) != std::string::npos, flag);
  CHECK(cli("", w).code == 2);
  CHECK(cli("generate --out x --bogus", w).code == 2);
  CHECK(cli("frobnicate", w).code == 2);

  std::ofstream(w / "bad.cfg") << "[synth\nseed = 1\n";
  const Run bad = cli("generate --config " + (w / "bad.cfg").string() + " --out " + (w / "d").string(), w);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("\"kind\":\"usage\"") != std::string::npos);
  CHECK(cli("generate --set synth.n_test=abc --out " + (w / "d").string(), w).code == 2);
  CHECK(cli("ablate --matrix " + (w / "bad.cfg").string() + " --out " + (w / "o").string(), w).code == 2);

  const Run rt = cli("eval --detections " + (w / "none.jsonl").string() + " --gt " + (w / "none.json").string(), w);
  CHECK(rt.code == 1);
  CHECK(rt.err.find("\"kind\":\"runtime\"") != std::string::npos);
  fs::remove_all(w);
}

TEST_CASE("cli generate, eval and diagnose") {
  const fs::path w = scratch("gen");
  std::ofstream(w / "tiny.cfg") << kTinyCfg;
  const std::string cfg = " --config " + (w / "tiny.cfg").string();
  REQUIRE(cli("generate" + cfg + " --out " + (w / "a").string(), w).code == 0);
  REQUIRE(cli("generate" + cfg + " --out " + (w / "b").string(), w).code == 0);
  CHECK(slurp(w / "a/manifest.json") == slurp(w / "b/manifest.json"));
  CHECK(slurp(w / "a/blobs/000003.noct") == slurp(w / "b/blobs/000003.noct"));

  // Detections equal to the test gts: AP 1 for every category present.
  const DatasetManifest m = load_manifest(w / "a/manifest.json");
  std::vector<Detection> dets;
  for (const auto& g : m.ground_truth("test")) dets.push_back({g.image_id, g.category, g.region, 1.0});
  {
    std::ofstream out(w / "d.jsonl");
    write_detections_jsonl(out, dets);
  }
  const Run e = cli("eval --detections " + (w / "d.jsonl").string() + " --gt " + (w / "a/manifest.json").string() +
                        " --iou 0.5 --out " + (w / "ev").string(),
                    w);
  REQUIRE(e.code == 0);
  CHECK(e.out.find("mean                 1.000000") != std::string::npos);
  CHECK(fs::exists(w / "ev/results.csv"));
  const Run dg = cli("diagnose --detections " + (w / "d.jsonl").string() + " --gt " +
                         (w / "a/manifest.json").string(),
                     w);
  REQUIRE(dg.code == 0);
  CHECK(dg.out.find("Cor ") != std::string::npos);
  CHECK(cli("eval --detections " + (w / "d.jsonl").string() + " --gt " + (w / "a/manifest.json").string() +
                " --iou 1.5",
            w)
            .code == 2);
  fs::remove_all(w);
}

TEST_CASE("cli ablate writes one row per entry and metric") {
  const fs::path w = scratch("ablate");
  std::ofstream(w / "tiny.cfg") << kTinyCfg;
  const std::string root = NOC_SOURCE_DIR;
  const Run r = cli("ablate --config " + (w / "tiny.cfg").string() + " --matrix " + root +
                        "/configs/table1.cfg --seeds 2 --out " + (w / "o").string(),
                    w);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::string csv = slurp(w / "o/results.csv");
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  CHECK(lines == 1 + 4);
  CHECK(csv.find("experiment,category,metric,mean,sd,n") == 0);
  CHECK(fs::exists(w / "o/breakdown.json"));
  CHECK(fs::exists(w / "o/per_seed.csv"));
  fs::remove_all(w);
}
