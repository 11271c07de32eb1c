#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "tsscale/harness/commands.hpp"
#include "tsscale/harness/svg.hpp"
#include "tsscale/util/hash.hpp"

using namespace tsscale;
using namespace tsscale::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tsscale-test-" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

model::ModelConfig tiny_model(std::size_t d_m) {
  auto c = model::standard_config(1, d_m, 2);
  c.patch_len = 8;
  c.components = 2;
  return c;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.seed = 11;
  c.output_dir = out.string();
  c.corpus.series_length = 160;
  for (int k = 0; k < 2; ++k) {
    GeneratorGroup g;
    g.count = 8;
    g.spec.family = k == 0 ? corpus::Family::sinusoid_mix : corpus::Family::trend_seasonal;
    g.spec.domain = k == 0 ? "alpha" : "beta";
    g.spec.period = {12.0, 30.0};
    g.spec.noise = 0.02;
    c.corpus.generators.push_back(g);
  }
  HeldOutSet h;
  h.name = "walk";
  h.count = 3;
  h.spec.family = corpus::Family::random_walk;
  h.spec.domain = "gamma";
  c.corpus.held_out.push_back(h);
  c.corpus.curation.snr_threshold_db = -50.0;
  c.corpus.validation_fraction = 0.25;
  c.models = {{"small", tiny_model(8)}, {"large", tiny_model(16)}};
  c.train.batch_size = 6;
  c.train.total_steps = 12;
  c.train.warmup_steps = 2;
  c.train.eval_every = 6;
  c.train.eval_subsample = 0.5;
  c.train.sampling_cap = 0.2;
  c.train.windows.patch_len = 8;
  c.train.windows.min_patches = 2;
  c.train.windows.max_patches = 6;
  c.protocol.context = 32;
  c.protocol.horizon = 16;
  return c;
}

// Minimal well-formedness check: balanced tags, closed comments, quoted attributes.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  bool root_seen = false;
  while ((i = s.find('<', i)) != std::string::npos) {
    if (s.compare(i, 4, "<!--") == 0) {
      const auto end = s.find("-->", i + 4);
      if (end == std::string::npos) return false;
      if (s.substr(i + 4, end - i - 4).find("--") != std::string::npos) return false;
      i = end + 3;
      continue;
    }
    if (s.compare(i, 2, "<?") == 0) {
      const auto end = s.find("?>", i);
      if (end == std::string::npos) return false;
      i = end + 2;
      continue;
    }
    const auto end = s.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = s.substr(i + 1, end - i - 1);
    if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) return false;
    if (!tag.empty() && tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
    } else {
      const bool self_closing = !tag.empty() && tag.back() == '/';
      const std::string name = tag.substr(0, tag.find_first_of(" /"));
      if (name.empty()) return false;
      if (stack.empty()) {
        if (root_seen) return false;
        root_seen = true;
      }
      if (!self_closing) stack.push_back(name);
    }
    i = end + 1;
  }
  return root_seen && stack.empty();
}

// Data comments of an SVG, keyed by series label.
std::map<std::string, io::Json> svg_data(const std::string& svg) {
  std::map<std::string, io::Json> out;
  std::size_t i = 0;
  const std::string open = "<!-- data ";
  while ((i = svg.find(open, i)) != std::string::npos) {
    const auto end = svg.find(" -->", i);
    auto j = io::Json::parse(svg.substr(i + open.size(), end - i - open.size()));
    out[j["label"].get<std::string>()] = j;
    i = end;
  }
  return out;
}

// Store with runs whose losses follow L = (1000 / N)^0.3 exactly.
void inject_power_law_store(const ExperimentConfig& cfg) {
  RunStore store(cfg.output_dir);
  const std::vector<std::size_t> ns{100, 300, 1000, 3000, 10000};
  for (std::size_t k = 0; k < ns.size(); ++k) {
    const std::string id = "m" + std::to_string(k);
    store.begin_run(id);
    for (const std::string split : {"id_validation", "ood:walk"}) {
      for (std::size_t step : {10, 20}) {
        scaling::RunRecord r;
        r.run_id = id;
        r.N = ns[k];
        r.D = 5000;
        r.tokens = step * 100;
        r.C = 6.0 * static_cast<double>(r.N) * static_cast<double>(r.tokens);
        r.step = step;
        r.split = split;
        const double base = std::pow(1000.0 / static_cast<double>(ns[k]), 0.3);
        // The earlier evaluation is worse, so the minimum reducer picks step 20.
        r.metrics["nll"] = (split == "id_validation" ? 1.0 : 1.5) * base * (step == 10 ? 1.2 : 1.0);
        r.metrics["mape"] = 0.2 * base;
        store.append_record(id, r);
      }
    }
    ManifestEntry e;
    e.run_id = id;
    e.N = ns[k];
    e.D = 5000;
    e.steps = 20;
    store.finish_run(e);
  }
}

}  // namespace

TEST_CASE("experiment config") {
  const auto cfg = tiny_config(scratch("cfg"));
  const auto j = to_json(cfg);

  SUBCASE("round trip") {
    const auto back = parse_experiment(j);
    CHECK(to_json(back) == j);
    CHECK(to_json(parse_experiment(to_json(back))).dump() == j.dump());
  }
  SUBCASE("unknown keys are rejected with their path") {
    auto bad = j;
    bad["train"]["learning_rate"] = 0.1;
    try {
      parse_experiment(bad);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("config.train.learning_rate") != std::string::npos);
    }
    auto bad2 = j;
    bad2["corpus"]["generators"][0]["generator"]["colour"] = "red";
    CHECK_THROWS_AS(parse_experiment(bad2), DataError);
  }
  SUBCASE("schema violations") {
    auto v = j;
    v["version"] = 7;
    CHECK_THROWS_AS(parse_experiment(v), DataError);
    auto dup = j;
    dup["models"][1]["name"] = "small";
    CHECK_THROWS_AS(parse_experiment(dup), DataError);
    auto leak = j;
    leak["corpus"]["held_out"][0]["generator"]["domain"] = "alpha";
    CHECK_THROWS_AS(parse_experiment(leak), DataError);
  }
  SUBCASE("environment overrides only output dir and parallelism") {
    auto c = cfg;
    setenv("TSSCALE_OUTPUT_DIR", "/tmp/elsewhere", 1);
    setenv("TSSCALE_PARALLELISM", "3", 1);
    apply_environment(c);
    CHECK(c.output_dir == "/tmp/elsewhere");
    CHECK(c.parallelism == 3);
    setenv("TSSCALE_PARALLELISM", "zero", 1);
    CHECK_THROWS_AS(apply_environment(c), UsageError);
    unsetenv("TSSCALE_OUTPUT_DIR");
    unsetenv("TSSCALE_PARALLELISM");
  }
  SUBCASE("per-run seeds are distinct and reproducible") {
    auto c = cfg;
    c.corpus.subsets = {400, 800, 1200};
    const auto plan = plan_runs(c);
    REQUIRE(plan.size() == 6);
    CHECK(plan[0].run_id == "small_D400");
    CHECK(plan[5].run_id == "large_D1200");
    std::set<std::uint64_t> seeds;
    for (const auto& r : plan) {
      seeds.insert(r.seed);
      CHECK(r.seed == util::fnv1a(r.run_id, c.seed));
    }
    CHECK(seeds.size() == plan.size());
    CHECK(plan_runs(c)[3].seed == plan[3].seed);
    CHECK(plan_runs(cfg)[0].run_id == "small");
  }
}

TEST_CASE("generate") {
  const auto a = scratch("gen-a"), b = scratch("gen-b");
  std::ostringstream log;
  cmd_generate(tiny_config(a), log);
  cmd_generate(tiny_config(b), log);

  for (const auto* f : {"corpus.jsonl", "subsets.json", "heldout-walk.jsonl"}) {
    CAPTURE(f);
    CHECK(slurp(a / "corpus" / f) == slurp(b / "corpus" / f));
    CHECK(!slurp(a / "corpus" / f).empty());
  }

  const auto meta = io::Json::parse(slurp(a / "corpus" / "subsets.json"));
  const auto& s = meta["curation"];
  CHECK(s["input_series"].get<std::size_t>() == 16);
  CHECK(s["dropped_missing"].get<std::size_t>() + s["dropped_short"].get<std::size_t>() +
            s["dropped_snr"].get<std::size_t>() + s["dropped_dedup"].get<std::size_t>() +
            s["dropped_balance"].get<std::size_t>() + s["kept"].get<std::size_t>() ==
        s["input_series"].get<std::size_t>());

  const auto lc = load_corpus(tiny_config(a));
  CHECK(lc.subsets.size() == 1);
  CHECK(lc.subsets[0].train.total_points() + lc.subsets[0].validation.total_points() == lc.curated.total_points());
  CHECK(lc.held_out.size() == 1);

  SUBCASE("a noise-free corpus loses nothing to curation") {
    auto c = tiny_config(scratch("gen-clean"));
    c.corpus.series_length = 512;
    c.corpus.curation = corpus::CurationRules{};
    for (auto& g : c.corpus.generators) {
      g.spec.family = corpus::Family::sinusoid_mix;
      g.spec.noise = 0.0;
      g.spec.harmonics = 1;
      g.spec.period = {100.0, 168.0};
    }
    cmd_generate(c, log);
    const auto m = io::Json::parse(slurp(fs::path(c.output_dir) / "corpus" / "subsets.json"));
    CHECK(m["curation"]["kept"].get<std::size_t>() == 16);
  }
  SUBCASE("changed config is detected") {
    auto c = tiny_config(a);
    c.seed = 12;
    CHECK_THROWS_AS(load_corpus(c), DataError);
  }
  SUBCASE("subset larger than the corpus") {
    auto c = tiny_config(scratch("gen-big"));
    c.corpus.subsets = {100000000};
    CHECK_THROWS_AS(cmd_generate(c, log), DataError);
  }
}

TEST_CASE("sweep, resume and evaluate") {
  std::ostringstream log;
  const auto full_dir = scratch("sweep-full");
  const auto cfg = tiny_config(full_dir);
  cmd_generate(cfg, log);
  cmd_sweep(cfg, {}, log);

  RunStore store(full_dir);
  const auto manifest = store.manifest();
  REQUIRE(manifest.size() == 2);
  for (const auto& e : manifest) {
    CHECK(e.status == RunStatus::complete);
    CHECK(e.steps == 12);
    CHECK(e.fingerprint == fingerprint(cfg.models[e.model == "small" ? 0 : 1].config));
  }

  SUBCASE("existing runs need --resume") { CHECK_THROWS_AS(cmd_sweep(cfg, {}, log), DataError); }

  SUBCASE("interrupted sweep resumed equals an uninterrupted one") {
    const auto part_dir = scratch("sweep-part");
    auto pcfg = tiny_config(part_dir);
    cmd_generate(pcfg, log);
    SweepOptions first;
    first.max_runs = 1;
    cmd_sweep(pcfg, first, log);
    CHECK(RunStore(part_dir).manifest().size() == 1);
    // Simulate a crash midway through the second run.
    const auto second = plan_runs(pcfg)[1].run_id;
    fs::create_directories(part_dir / "runs" / second);
    std::ofstream(part_dir / "runs" / second / "records.jsonl") << "{\"partial\":true}\n";
    CHECK(RunStore(part_dir).status(second) == RunStatus::incomplete);

    SweepOptions resume;
    resume.resume = true;
    cmd_sweep(pcfg, resume, log);
    CHECK(slurp(part_dir / "runs" / "manifest.json") == slurp(full_dir / "runs" / "manifest.json"));
    for (const auto& e : manifest) {
      for (const auto* f : {"records.jsonl", "events.jsonl", "checkpoint.json"}) {
        CAPTURE(f);
        CHECK(slurp(part_dir / "runs" / e.run_id / f) == slurp(full_dir / "runs" / e.run_id / f));
      }
    }
  }

  SUBCASE("every record's C equals 6 N tokens from the events") {
    for (const auto& e : manifest) {
      std::map<std::size_t, std::size_t> tokens_at;
      for (const auto& ev : store.events(e.run_id)) tokens_at[ev.step] = ev.tokens;
      const auto recs = store.records(e.run_id);
      CHECK(recs.size() == 4);  // steps 6 and 12, two splits
      for (const auto& r : recs) {
        REQUIRE(tokens_at.count(r.step));
        CHECK(r.tokens == tokens_at[r.step]);
        CHECK(r.C == 6.0 * static_cast<double>(e.N) * static_cast<double>(tokens_at[r.step]));
        CHECK(r.N == e.N);
      }
    }
  }

  SUBCASE("evaluate") {
    EvaluateCmdOptions opts;
    opts.run_id = "large";
    const auto file = cmd_evaluate(cfg, opts, log);
    const auto first = slurp(file);
    cmd_evaluate(cfg, opts, log);
    CHECK(slurp(file) == first);

    const auto j = io::Json::parse(first);
    for (const auto& [name, d] : j["datasets"].items()) {
      CAPTURE(name);
      CHECK(d["ets"]["values"].contains("mape"));
      CHECK(d["ets"]["values"].contains("nll"));
      CHECK(d["model"]["values"].contains("crps"));
    }
    // The final record is scored on the full set with the same weights.
    for (const std::string split : {"id_validation", "ood:walk"}) {
      CAPTURE(split);
      double last = std::nan("");
      for (const auto& r : store.records("large")) {
        if (r.split == split && r.step == 12) last = r.metrics.at("nll");
      }
      CHECK(std::abs(j["datasets"][split]["model"]["values"]["nll"].get<double>() - last) < 1e-9);
    }

    SUBCASE("dataset files") {
      const auto csv = full_dir / "extra.csv";
      std::ofstream f(csv);
      f << "value\n";
      for (int t = 0; t < 120; ++t) f << 10.0 + std::sin(t / 5.0) << "\n";
      f.close();
      opts.datasets = {csv.string()};
      const auto rj = io::Json::parse(slurp(cmd_evaluate(cfg, opts, log)));
      CHECK(rj["datasets"].contains("extra"));
      opts.datasets = {(full_dir / "nope.txt").string()};
      CHECK_THROWS_AS(cmd_evaluate(cfg, opts, log), DataError);
    }
    SUBCASE("fingerprint mismatch names both fingerprints") {
      auto other = cfg;
      other.models[1].config.components = 3;
      try {
        cmd_evaluate(other, opts, log);
        FAIL("expected DataError");
      } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(fingerprint(cfg.models[1].config)) != std::string::npos);
        CHECK(msg.find(fingerprint(other.models[1].config)) != std::string::npos);
      }
    }
  }

  SUBCASE("fit needs three sizes") {
    FitOptions fo;
    fo.axis = scaling::Axis::N;
    try {
      cmd_fit(cfg, fo, log);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("axis N") != std::string::npos);
    }
  }
}

TEST_CASE("fit and plot on an injected store") {
  auto cfg = tiny_config(scratch("inject"));
  inject_power_law_store(cfg);
  std::ostringstream log;
  cmd_fit(cfg, {}, log);

  const auto fits = io::Json::parse(slurp(fs::path(cfg.output_dir) / "analysis" / "fits.json"));
  std::map<std::string, io::Json> by_key;
  for (const auto& f : fits["fits"]) {
    by_key[f["axis"].get<std::string>() + "/" + f["metric"].get<std::string>() + "/" + f["split"].get<std::string>()] = f;
  }
  REQUIRE(by_key.count("N/nll/id_validation"));
  REQUIRE(by_key.count("N/nll/ood:walk"));
  const auto& fn = by_key["N/nll/id_validation"];
  CHECK(std::abs(fn["alpha"].get<double>() - 0.3) < 1e-9);
  CHECK(std::abs(fn["x_c"].get<double>() - 1000.0) < 1e-9 * 1000.0);
  CHECK(fn["r_squared"].get<double>() > 1.0 - 1e-12);
  CHECK(std::abs(by_key["N/mape/id_validation"]["alpha"].get<double>() - 0.3) < 1e-9);
  // Every run has the same D, so the D axis is skipped rather than fitted.
  CHECK(!by_key.count("D/nll/id_validation"));
  CHECK(!fits["skipped"].empty());
  CHECK(!fits["comparisons"].empty());

  SUBCASE("table matches serialized fits") {
    std::istringstream table(slurp(fs::path(cfg.output_dir) / "analysis" / "fits.txt"));
    std::string line;
    std::getline(table, line);
    std::size_t rows = 0;
    while (std::getline(table, line)) {
      if (line.rfind("skipped", 0) == 0) continue;
      std::istringstream ls(line);
      std::string axis, metric, split, xc, reliable;
      double alpha, r2;
      std::size_t n;
      ls >> axis >> metric >> split >> alpha >> xc >> r2 >> n >> reliable;
      const auto& f = by_key.at(axis + "/" + metric + "/" + split);
      CHECK(alpha == doctest::Approx(f["alpha"].get<double>()).epsilon(1e-5));
      if (!f["x_c"].is_null()) CHECK(std::stod(xc) == doctest::Approx(f["x_c"].get<double>()).epsilon(1e-5));
      CHECK(r2 == doctest::Approx(f["r_squared"].get<double>()).epsilon(1e-5));
      CHECK(n == f["n_points"].get<std::size_t>());
      CHECK(reliable == (f["reliable"].get<bool>() ? "yes" : "no"));
      ++rows;
    }
    CHECK(rows == fits["fits"].size());
  }

  SUBCASE("plots") {
    const auto files = cmd_plot(cfg, log);
    REQUIRE(!files.empty());
    std::map<fs::path, std::string> first;
    for (const auto& f : files) first[f] = slurp(f);
    const auto again = cmd_plot(cfg, log);
    CHECK(again == files);
    for (const auto& f : files) {
      CAPTURE(f.string());
      CHECK(slurp(f) == first[f]);
      CHECK(well_formed_xml(first[f]));
    }

    const auto svg = slurp(fs::path(cfg.output_dir) / "plots" / "N_nll_id_validation.svg");
    const auto data = svg_data(svg);
    REQUIRE(data.count("runs"));
    CHECK(data.at("runs")["points"].size() == 5);
    const io::Json* line = nullptr;
    for (const auto& [label, j] : data) {
      if (j["style"] == "line") line = &j;
    }
    REQUIRE(line != nullptr);
    scaling::PowerLawFit fit = io::power_law_fit_from_json(fn);
    const auto [lo, hi] = log_axis_bounds(100.0, 10000.0);
    const auto& pts = (*line)["points"];
    CHECK(pts.front()[0].get<double>() == lo);
    CHECK(pts.back()[0].get<double>() == hi);
    CHECK(pts.front()[1].get<double>() == scaling::extrapolate(fit, lo));
    CHECK(pts.back()[1].get<double>() == scaling::extrapolate(fit, hi));
  }

  SUBCASE("report") {
    const auto file = cmd_report(cfg, log);
    const auto md = slurp(file);
    CHECK(md.find("## Power-law fits") != std::string::npos);
    CHECK(md.find("| m4 |") != std::string::npos);
  }

  SUBCASE("missing fits") {
    auto other = tiny_config(scratch("nofits"));
    CHECK_THROWS_AS(cmd_plot(other, log), DataError);
    CHECK_THROWS_AS(cmd_fit(other, {}, log), DataError);
  }
}

TEST_CASE("svg rendering") {
  Plot p;
  p.title = "a < b & c";
  p.series.push_back({"pts", SeriesStyle::scatter, palette(0), {{1.0, 2.0}, {10.0, 1.0}}});
  p.series.push_back({"base", SeriesStyle::dashed, palette(1), {{1.0, -1.0}, {100.0, -1.0}}});
  const auto svg = p.render_svg();
  CHECK(well_formed_xml(svg));
  CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
  CHECK(svg.find("stroke-dasharray") != std::string::npos);
  CHECK(svg_data(svg).at("base")["points"][1][0].get<double>() == 100.0);
  CHECK(p.render_svg() == svg);

  Plot bad;
  bad.series.push_back({"neg", SeriesStyle::scatter, palette(0), {{-1.0, 2.0}}});
  CHECK_THROWS_AS(bad.render_svg(), std::invalid_argument);
  CHECK(log_axis_bounds(150.0, 2000.0) == std::pair<double, double>{100.0, 10000.0});
}
