#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "tsscale/harness/commands.hpp"
#include "tsscale/metrics/metrics.hpp"
#include "tsscale/model/transformer.hpp"
#include "tsscale/util/hash.hpp"

namespace tsscale::harness {

namespace fs = std::filesystem;

namespace {

// Identifies the corpus section and seed a corpus directory was built from.
std::string corpus_fingerprint(const ExperimentConfig& cfg) {
  const auto j = to_json(cfg);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(util::fnv1a(j.at("corpus").dump(), cfg.seed)));
  return buf;
}

io::Json ids_json(const corpus::CorpusManifest& m) {
  io::Json a = io::Json::array();
  for (const auto& s : m.series) a.push_back(s.id);
  return a;
}

corpus::CorpusManifest select_ids(const io::Json& ids, const std::map<std::string, const corpus::TimeSeries*>& by_id) {
  corpus::CorpusManifest out;
  for (const auto& id : ids) {
    const auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) throw DataError("subsets.json names unknown series '" + id.get<std::string>() + "'");
    out.series.push_back(*it->second);
  }
  return out;
}

std::string fmt(double v, const char* f = "%.4f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::string file_token(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == ':' || c == '/' || c == '\\' || c == ' ') c = '-';
  }
  return out;
}

fs::path corpus_dir(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir) / "corpus"; }

std::vector<std::size_t> subset_sizes(const ExperimentConfig& cfg) {
  auto sizes = cfg.corpus.subsets;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  return sizes;
}

std::vector<PlannedRun> plan_runs(const ExperimentConfig& cfg) {
  const auto sizes = subset_sizes(cfg);
  const std::size_t n_subsets = std::max<std::size_t>(1, sizes.size());
  std::vector<PlannedRun> plan;
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    for (std::size_t s = 0; s < n_subsets; ++s) {
      PlannedRun r;
      r.run_id = cfg.models[m].name;
      if (sizes.size() > 1) r.run_id += "_D" + std::to_string(sizes[s]);
      r.model_index = m;
      r.subset_index = s;
      r.seed = run_seed(cfg.seed, r.run_id);
      plan.push_back(std::move(r));
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------

void cmd_generate(const ExperimentConfig& cfg, std::ostream& out) {
  if (cfg.corpus.generators.empty()) throw DataError("config.corpus.generators is empty");
  corpus::CorpusManifest raw;
  for (const auto& g : cfg.corpus.generators) {
    auto spec = g.spec;
    spec.seed = generator_seed(cfg.seed, "train", g.spec);
    auto series = corpus::generate(spec, g.count, cfg.corpus.series_length);
    raw.series.insert(raw.series.end(), series.begin(), series.end());
  }

  auto rules = cfg.corpus.curation;
  rules.seed = util::fnv1a("curation:" + std::to_string(rules.seed), cfg.seed);
  corpus::CurationSummary summary;
  corpus::CorpusManifest curated;
  std::vector<corpus::Subset> subsets;
  auto sizes = subset_sizes(cfg);
  try {
    curated = corpus::curate(raw, rules, &summary);
    if (curated.series.empty()) throw DataError("curation dropped every series");
    if (sizes.empty()) sizes.push_back(curated.total_points());
    subsets = corpus::partition(curated, sizes, util::fnv1a("partition", cfg.seed), cfg.corpus.validation_fraction);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  } catch (const std::domain_error& e) {
    throw DataError(e.what());
  }

  const fs::path dir = corpus_dir(cfg);
  io::Json meta;
  meta["version"] = 1;
  meta["fingerprint"] = corpus_fingerprint(cfg);
  meta["curation"] = {{"input_series", summary.input_series},   {"dropped_missing", summary.dropped_missing},
                      {"dropped_short", summary.dropped_short},   {"dropped_snr", summary.dropped_snr},
                      {"dropped_dedup", summary.dropped_dedup},   {"dropped_balance", summary.dropped_balance},
                      {"kept", summary.kept}};
  meta["total_points"] = curated.total_points();
  meta["domain_points"] = curated.domain_points();
  meta["subsets"] = io::Json::array();
  for (const auto& s : subsets) {
    meta["subsets"].push_back({{"target_points", s.target_points},
                               {"train_points", s.train.total_points()},
                               {"validation_points", s.validation.total_points()},
                               {"train_ids", ids_json(s.train)},
                               {"validation_ids", ids_json(s.validation)}});
  }
  meta["held_out"] = io::Json::object();

  try {
    fs::create_directories(dir);
    corpus::write_corpus((dir / "corpus.jsonl").string(), curated);
    for (const auto& h : cfg.corpus.held_out) {
      auto spec = h.spec;
      spec.seed = generator_seed(cfg.seed, "heldout", h.spec);
      corpus::CorpusManifest m;
      m.series = corpus::generate(spec, h.count, cfg.corpus.series_length);
      corpus::write_corpus((dir / ("heldout-" + h.name + ".jsonl")).string(), m);
      meta["held_out"][h.name] = {{"series", m.series.size()}, {"points", m.total_points()}};
    }
    write_text(dir / "subsets.json", meta.dump(2) + "\n");
  } catch (const fs::filesystem_error& e) {
    throw DataError(std::string("cannot write corpus: ") + e.what());
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const DataError*>(&e)) throw;
    throw DataError(std::string("cannot write corpus: ") + e.what());
  }

  out << "curation: " << summary.input_series << " series in, " << summary.kept << " kept\n"
      << "  dropped missing " << summary.dropped_missing << ", short " << summary.dropped_short << ", snr "
      << summary.dropped_snr << ", dedup " << summary.dropped_dedup << ", balance " << summary.dropped_balance
      << "\n";
  out << "corpus: " << curated.total_points() << " points\n";
  for (const auto& [domain, p] : curated.domain_points()) out << "  " << domain << ": " << p << " points\n";
  for (const auto& s : subsets) {
    out << "subset " << s.target_points << ": train " << s.train.total_points() << " points ("
        << s.train.series.size() << " series), validation " << s.validation.total_points() << " points\n";
  }
  for (const auto& h : cfg.corpus.held_out) {
    out << "held out " << h.name << ": " << meta["held_out"][h.name]["points"].get<std::size_t>() << " points\n";
  }
  out << "wrote " << dir.string() << "\n";
}

LoadedCorpus load_corpus(const ExperimentConfig& cfg) {
  const fs::path dir = corpus_dir(cfg);
  if (!fs::exists(dir / "subsets.json") || !fs::exists(dir / "corpus.jsonl")) {
    throw DataError("no corpus under '" + dir.string() + "'; run generate first");
  }
  LoadedCorpus lc;
  try {
    const auto meta = io::Json::parse(read_text(dir / "subsets.json"));
    if (meta.at("fingerprint").get<std::string>() != corpus_fingerprint(cfg)) {
      throw DataError("corpus under '" + dir.string() + "' was generated from a different config; rerun generate");
    }
    lc.curated = corpus::read_corpus((dir / "corpus.jsonl").string());
    std::map<std::string, const corpus::TimeSeries*> by_id;
    for (const auto& s : lc.curated.series) by_id[s.id] = &s;
    for (const auto& sj : meta.at("subsets")) {
      corpus::Subset s;
      s.target_points = sj.at("target_points").get<std::size_t>();
      s.train = select_ids(sj.at("train_ids"), by_id);
      s.validation = select_ids(sj.at("validation_ids"), by_id);
      lc.subsets.push_back(std::move(s));
    }
    for (const auto& h : cfg.corpus.held_out) {
      lc.held_out.emplace_back(h.name, corpus::read_corpus((dir / ("heldout-" + h.name + ".jsonl")).string()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt corpus metadata: " + std::string(e.what()));
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  if (lc.subsets.empty()) throw DataError("corpus metadata lists no subsets");
  return lc;
}

std::vector<trainer::EvalSet> build_eval_sets(const ExperimentConfig& cfg, const LoadedCorpus& lc) {
  std::vector<trainer::EvalSet> sets;
  metrics::Dataset id{"id_validation", lc.subsets.back().validation.series};
  auto windows = metrics::make_windows(id, cfg.protocol);
  if (windows.empty()) throw DataError("validation series are too short for the evaluation protocol");
  sets.emplace_back("id_validation", std::move(windows));
  for (const auto& [name, m] : lc.held_out) {
    metrics::Dataset ds{"ood:" + name, m.series};
    auto w = metrics::make_windows(ds, cfg.protocol);
    if (w.empty()) throw DataError("held-out set '" + name + "' is too short for the evaluation protocol");
    sets.emplace_back(ds.name, std::move(w));
  }
  return sets;
}

// ---------------------------------------------------------------------------

void cmd_sweep(const ExperimentConfig& cfg, const SweepOptions& opts, std::ostream& out) {
  if (cfg.models.empty()) throw DataError("config.models is empty");
  const LoadedCorpus lc = load_corpus(cfg);
  const auto eval_sets = build_eval_sets(cfg, lc);
  RunStore store(cfg.output_dir);
  const auto plan = plan_runs(cfg);

  std::vector<const PlannedRun*> todo;
  for (const auto& r : plan) {
    const auto s = store.status(r.run_id);
    if (!opts.resume && s != RunStatus::missing) {
      throw DataError("run '" + r.run_id + "' already exists in '" + cfg.output_dir + "'; pass --resume to continue");
    }
    if (s == RunStatus::complete) continue;
    if (s == RunStatus::failed) {
      out << "run " << r.run_id << ": failed earlier, not retried\n";
      continue;
    }
    todo.push_back(&r);
  }
  if (opts.max_runs && todo.size() > opts.max_runs) todo.resize(opts.max_runs);

  std::size_t threads = opts.parallelism ? opts.parallelism : cfg.parallelism;
  threads = std::max<std::size_t>(1, std::min(threads, todo.size()));

  std::mutex out_mutex;
  std::atomic<std::size_t> next{0};
  std::vector<std::string> failures;
  std::exception_ptr error;

  auto run_one = [&](const PlannedRun& r) {
    const auto& named = cfg.models[r.model_index];
    const auto& subset = lc.subsets[r.subset_index];
    model::Transformer model(named.config, r.seed);
    auto tc = cfg.train;
    tc.seed = r.seed;
    trainer::RunInfo info{r.run_id, model::param_count(named.config).core, subset.train.total_points()};
    // Each run owns its eval sets so the read audit is per run.
    auto sets = eval_sets;

    store.begin_run(r.run_id);
    trainer::RunHooks hooks;
    hooks.on_event = [&](const trainer::TrainEvent& e) { store.append_event(r.run_id, e); };
    hooks.on_record = [&](const scaling::RunRecord& rec) { store.append_record(r.run_id, rec); };
    hooks.checkpoint_path = store.checkpoint_path(r.run_id).string();
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = trainer::train_run(model, tc, subset.train, sets, info, hooks);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ManifestEntry entry;
    entry.run_id = r.run_id;
    entry.model = named.name;
    entry.fingerprint = fingerprint(named.config);
    entry.N = info.N;
    entry.D = info.D;
    entry.seed = r.seed;
    entry.status = result.failed ? RunStatus::failed : RunStatus::complete;
    entry.steps = result.steps_completed;
    entry.tokens = result.tokens;
    entry.failure = result.failure;
    if (!result.failed && result.held_out_training_reads != 0) {
      entry.status = RunStatus::failed;
      entry.failure = "held-out data read during training";
    }
    store.finish_run(entry);

    std::lock_guard lock(out_mutex);
    out << "run " << r.run_id << ": N=" << info.N << " D=" << info.D << " steps=" << result.steps_completed
        << " tokens=" << result.tokens;
    for (auto it = result.records.rbegin(); it != result.records.rend(); ++it) {
      if (it->split == "id_validation") {
        out << " id nll=" << fmt(it->metrics.at("nll"));
        break;
      }
    }
    out << " (" << fmt(secs, "%.1f") << " s)";
    if (entry.status == RunStatus::failed) {
      out << " FAILED: " << entry.failure;
      failures.push_back(r.run_id);
    }
    out << std::endl;
  };

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= todo.size()) return;
      try {
        run_one(*todo[i]);
      } catch (...) {
        std::lock_guard lock(out_mutex);
        if (!error) error = std::current_exception();
        next = todo.size();
        return;
      }
    }
  };

  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  std::size_t complete = 0;
  for (const auto& r : plan) complete += store.status(r.run_id) == RunStatus::complete;
  out << "sweep: " << complete << " of " << plan.size() << " runs complete\n";
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    std::string msg = "runs failed:";
    for (const auto& f : failures) msg += " " + f;
    throw RunFailure(msg);
  }
}

// ---------------------------------------------------------------------------

namespace {

io::Json summary_json(const metrics::MetricSummary& s) {
  io::Json j;
  j["windows"] = s.windows;
  j["values"] = s.values;
  j["skipped"] = s.skipped;
  return j;
}

}  // namespace

fs::path cmd_evaluate(const ExperimentConfig& cfg, const EvaluateCmdOptions& opts, std::ostream& out) {
  if (opts.run_id.empty()) throw UsageError("evaluate needs a run id");
  const auto plan = plan_runs(cfg);
  const auto it = std::find_if(plan.begin(), plan.end(), [&](const PlannedRun& r) { return r.run_id == opts.run_id; });
  if (it == plan.end()) throw DataError("run '" + opts.run_id + "' is not part of this config");
  RunStore store(cfg.output_dir);
  const std::string ckpt = opts.checkpoint.empty() ? store.checkpoint_path(opts.run_id).string() : opts.checkpoint;
  if (!fs::exists(ckpt)) throw DataError("no checkpoint at '" + ckpt + "'");

  std::size_t step = 0;
  std::optional<model::Transformer> model;
  try {
    model.emplace(trainer::load_checkpoint(ckpt, &step));
  } catch (const std::exception& e) {
    throw DataError("cannot load checkpoint '" + ckpt + "': " + e.what());
  }
  const auto expected = fingerprint(cfg.models[it->model_index].config);
  const auto actual = fingerprint(model->config());
  if (expected != actual) {
    throw DataError("checkpoint fingerprint " + actual + " does not match config fingerprint " + expected +
                    " for run '" + opts.run_id + "'");
  }

  std::vector<metrics::Dataset> datasets;
  if (opts.datasets.empty()) {
    const auto lc = load_corpus(cfg);
    datasets.push_back({"id_validation", lc.subsets.back().validation.series});
    for (const auto& [name, m] : lc.held_out) datasets.push_back({"ood:" + name, m.series});
  } else {
    for (const auto& file : opts.datasets) {
      const fs::path p(file);
      const std::string ext = p.extension().string();
      try {
        if (ext == ".csv") {
          datasets.push_back({p.stem().string(), {corpus::read_csv_series(file, p.stem().string())}});
        } else if (ext == ".jsonl") {
          datasets.push_back({p.stem().string(), corpus::read_corpus(file).series});
        } else {
          throw DataError("unsupported dataset file '" + file + "' (expected .csv or .jsonl)");
        }
      } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
      } catch (const DataError&) {
        throw;
      } catch (const std::runtime_error& e) {
        throw DataError(e.what());
      }
    }
  }

  metrics::EvaluateOptions eopts;
  eopts.seed = it->seed;
  const auto report = metrics::evaluate(*model, datasets, cfg.protocol, eopts);

  io::Json j;
  j["run_id"] = opts.run_id;
  j["step"] = step;
  j["fingerprint"] = actual;
  j["protocol"] = io::to_json(cfg.protocol);
  j["datasets"] = io::Json::object();
  for (const auto& [name, m] : report.model) {
    j["datasets"][name] = {{"model", summary_json(m)}, {"ets", summary_json(report.ets.at(name))}};
  }
  j["overall"] = {{"model", summary_json(report.overall)}, {"ets", summary_json(report.overall_ets)}};
  j["crps_pooled"] = {{"model", report.crps_pooled}, {"ets", report.crps_pooled_ets}};
  j["skipped_datasets"] = report.skipped_datasets;

  const fs::path file = fs::path(cfg.output_dir) / "reports" / (opts.run_id + "-eval.json");
  write_text(file, j.dump(2) + "\n");

  out << "evaluated " << opts.run_id << " at step " << step << "\n";
  for (const auto& [name, m] : report.model) {
    out << "  " << name << ":";
    for (const auto& [k, v] : m.values) out << " " << k << "=" << fmt(v);
    out << " | ets:";
    for (const auto& [k, v] : report.ets.at(name).values) out << " " << k << "=" << fmt(v);
    out << "\n";
  }
  for (const auto& s : report.skipped_datasets) out << "  " << s << ": skipped (too short)\n";
  out << "wrote " << file.string() << "\n";
  return file;
}

}  // namespace tsscale::harness
