#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "tsscale/harness/commands.hpp"
#include "tsscale/harness/svg.hpp"
#include "tsscale/metrics/metrics.hpp"

namespace tsscale::harness {

namespace fs = std::filesystem;
using scaling::Axis;

namespace {

std::string fmt(double v, const char* f = "%.6g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string axis_description(Axis a) {
  switch (a) {
    case Axis::N:
      return "runs with distinct N at the largest D";
    case Axis::D:
      return "runs with distinct D at the largest N";
    case Axis::C:
      return "compute-frontier buckets";
  }
  return "";
}

std::string axis_label(Axis a) {
  switch (a) {
    case Axis::N:
      return "parameters N (core)";
    case Axis::D:
      return "training points D";
    case Axis::C:
      return "compute C = 6 N tokens";
  }
  return "";
}

std::size_t distinct_x(const std::vector<scaling::Point>& pts) {
  std::set<double> xs;
  for (const auto& p : pts) xs.insert(p.first);
  return xs.size();
}

fs::path analysis_dir(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir) / "analysis"; }

io::Json read_json(const fs::path& file, const std::string& hint) {
  if (!fs::exists(file)) throw DataError("missing '" + file.string() + "'; " + hint);
  try {
    return io::Json::parse(read_text(file));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt '" + file.string() + "': " + e.what());
  }
}

// ETS summaries per split; empty when no corpus has been generated.
std::map<std::string, std::map<std::string, double>> ets_baselines(const ExperimentConfig& cfg) {
  std::map<std::string, std::map<std::string, double>> out;
  if (!fs::exists(corpus_dir(cfg) / "subsets.json")) return out;
  const auto lc = load_corpus(cfg);
  for (const auto& set : build_eval_sets(cfg, lc)) {
    const auto windows = set.read(trainer::EvalSet::Phase::evaluation);
    out[set.split()] = metrics::ets_summary(windows).values;
  }
  return out;
}

}  // namespace

std::vector<scaling::RunRecord> complete_records(const RunStore& store) {
  std::vector<scaling::RunRecord> out;
  for (const auto& e : store.manifest()) {
    if (e.status != RunStatus::complete) continue;
    auto r = store.records(e.run_id);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

std::vector<scaling::Point> axis_points(std::span<const scaling::RunRecord> records, Axis axis,
                                        const std::string& metric, const std::string& split,
                                        std::size_t buckets_per_decade) {
  if (axis == Axis::C) {
    std::vector<scaling::Point> pts;
    for (const auto& f : scaling::compute_frontier(records, metric, split, buckets_per_decade)) {
      pts.emplace_back(f.C, f.loss);
    }
    return pts;
  }
  std::size_t max_other = 0;
  for (const auto& r : records) {
    if (r.split == split) max_other = std::max(max_other, axis == Axis::N ? r.D : r.N);
  }
  std::vector<scaling::RunRecord> kept;
  for (const auto& r : records) {
    if (r.split == split && (axis == Axis::N ? r.D : r.N) == max_other) kept.push_back(r);
  }
  return scaling::collect_points(kept, axis, metric, split, scaling::default_reducer(axis));
}

// ---------------------------------------------------------------------------

void cmd_fit(const ExperimentConfig& cfg, const FitOptions& opts, std::ostream& out) {
  RunStore store(cfg.output_dir);
  const auto records = complete_records(store);
  if (records.empty()) throw DataError("no completed runs under '" + cfg.output_dir + "'; run sweep first");

  std::set<std::string> split_set;
  for (const auto& r : records) split_set.insert(r.split);
  std::vector<std::string> splits(split_set.begin(), split_set.end());
  if (opts.split) {
    if (!split_set.count(*opts.split)) throw DataError("no records for split '" + *opts.split + "'");
    splits = {*opts.split};
  }
  const std::vector<std::string> metric_names = opts.metric ? std::vector<std::string>{*opts.metric}
                                                            : cfg.analysis.metrics;
  const std::vector<Axis> axes = opts.axis ? std::vector<Axis>{*opts.axis}
                                           : std::vector<Axis>{Axis::N, Axis::D, Axis::C};
  const std::size_t bpd = cfg.analysis.buckets_per_decade;

  io::Json j;
  j["version"] = 1;
  j["min_r_squared"] = cfg.analysis.min_r_squared;
  j["fits"] = io::Json::array();
  j["skipped"] = io::Json::array();
  std::vector<scaling::PowerLawFit> fits;

  for (Axis axis : axes) {
    for (const auto& metric : metric_names) {
      for (const auto& split : splits) {
        const auto pts = axis_points(records, axis, metric, split, bpd);
        const std::size_t n = distinct_x(pts);
        if (n < 3) {
          const std::string why = "axis " + scaling::to_string(axis) + " needs at least 3 " +
                                  axis_description(axis) + "; found " + std::to_string(n);
          if (opts.axis) throw DataError(why + " (metric " + metric + ", split " + split + ")");
          j["skipped"].push_back({{"axis", scaling::to_string(axis)}, {"metric", metric}, {"split", split},
                                  {"reason", why}});
          continue;
        }
        scaling::PowerLawFit f;
        try {
          f = scaling::fit_power_law(pts);
        } catch (const std::invalid_argument& e) {
          j["skipped"].push_back({{"axis", scaling::to_string(axis)}, {"metric", metric}, {"split", split},
                                  {"reason", e.what()}});
          continue;
        }
        f.axis = axis;
        f.metric = metric;
        f.split = split;
        auto fj = io::to_json(f);
        fj["reliable"] = f.reliable(cfg.analysis.min_r_squared);
        j["fits"].push_back(fj);
        fits.push_back(f);
      }
    }
  }

  j["frontiers"] = io::Json::array();
  for (const auto& metric : metric_names) {
    for (const auto& split : splits) {
      const auto frontier = scaling::compute_frontier(records, metric, split, bpd);
      if (frontier.empty()) continue;
      io::Json fj{{"metric", metric}, {"split", split}, {"nonincreasing", scaling::is_nonincreasing(frontier)}};
      fj["points"] = io::Json::array();
      for (const auto& p : frontier) {
        fj["points"].push_back({{"bucket_lo", p.bucket_lo}, {"bucket_hi", p.bucket_hi}, {"C", p.C},
                                {"loss", p.loss}, {"run_id", p.run_id}, {"N", p.N}});
      }
      j["frontiers"].push_back(fj);
    }
  }

  const auto baselines = ets_baselines(cfg);
  j["ets_baselines"] = baselines;

  auto find_fit = [&](Axis a, const std::string& metric, const std::string& split) -> const scaling::PowerLawFit* {
    for (const auto& f : fits) {
      if (f.axis == a && f.metric == metric && f.split == split) return &f;
    }
    return nullptr;
  };

  // In-distribution vs held-out fits on the same axis and metric.
  j["comparisons"] = io::Json::array();
  for (Axis axis : axes) {
    for (const auto& metric : metric_names) {
      const auto* id = find_fit(axis, metric, "id_validation");
      if (!id || id->degenerate) continue;
      for (const auto& split : splits) {
        if (split.rfind("ood:", 0) != 0) continue;
        const auto* ood = find_fit(axis, metric, split);
        if (!ood || ood->degenerate) continue;
        const auto c = scaling::compare_fits(*id, *ood);
        j["comparisons"].push_back({{"axis", scaling::to_string(axis)}, {"metric", metric}, {"split", split},
                                    {"slope_ratio", c.slope_ratio}, {"log_offset", c.log_offset},
                                    {"x_ref", c.x_ref}, {"reliable", c.reliable}});
      }
    }
  }

  // Data growth needed when the model doubles.
  j["data_requirement"] = io::Json::array();
  for (const auto& metric : metric_names) {
    for (const auto& split : splits) {
      const auto* fn = find_fit(Axis::N, metric, split);
      const auto* fd = find_fit(Axis::D, metric, split);
      if (!fn || !fd || fn->degenerate || fd->degenerate || !(fd->alpha > 0.0) || !(fn->alpha > 0.0)) continue;
      j["data_requirement"].push_back({{"metric", metric}, {"split", split}, {"n_ratio", 2.0},
                                       {"d_ratio", scaling::data_requirement(2.0, fn->alpha, fd->alpha)}});
    }
  }

  std::ostringstream table;
  char line[256];
  std::snprintf(line, sizeof line, "%-4s %-8s %-24s %12s %14s %10s %4s %s\n", "axis", "metric", "split", "alpha",
                "X_c", "r2", "n", "reliable");
  table << line;
  for (const auto& f : fits) {
    std::snprintf(line, sizeof line, "%-4s %-8s %-24s %12.6g %14.6g %10.6g %4zu %s\n",
                  scaling::to_string(f.axis).c_str(), f.metric.c_str(), f.split.c_str(), f.alpha,
                  f.degenerate ? std::nan("") : f.x_c, f.r_squared, f.n_points,
                  f.reliable(cfg.analysis.min_r_squared) ? "yes" : "no");
    table << line;
  }
  for (const auto& s : j["skipped"]) {
    table << "skipped " << s["axis"].get<std::string>() << " " << s["metric"].get<std::string>() << " "
          << s["split"].get<std::string>() << ": " << s["reason"].get<std::string>() << "\n";
  }

  write_text(analysis_dir(cfg) / "fits.json", j.dump(2) + "\n");
  write_text(analysis_dir(cfg) / "fits.txt", table.str());
  out << table.str();
  for (const auto& fr : j["frontiers"]) {
    out << "frontier " << fr["metric"].get<std::string>() << " " << fr["split"].get<std::string>() << ": "
        << fr["points"].size() << " buckets, " << (fr["nonincreasing"].get<bool>() ? "nonincreasing" : "NOT monotone")
        << "\n";
  }
  for (const auto& d : j["data_requirement"]) {
    out << "data requirement " << d["metric"].get<std::string>() << " " << d["split"].get<std::string>()
        << ": doubling N needs " << fmt(d["d_ratio"].get<double>(), "%.3f") << "x data\n";
  }
  out << "wrote " << (analysis_dir(cfg) / "fits.json").string() << "\n";
}

// ---------------------------------------------------------------------------

std::vector<fs::path> cmd_plot(const ExperimentConfig& cfg, std::ostream& out) {
  const auto j = read_json(analysis_dir(cfg) / "fits.json", "run fit first");
  RunStore store(cfg.output_dir);
  const auto records = complete_records(store);
  const std::size_t bpd = cfg.analysis.buckets_per_decade;
  std::map<std::string, std::map<std::string, double>> baselines;
  if (j.contains("ets_baselines")) baselines = j.at("ets_baselines").get<decltype(baselines)>();

  std::vector<scaling::PowerLawFit> fits;
  try {
    for (const auto& fj : j.at("fits")) {
      auto copy = fj;
      fits.push_back(io::power_law_fit_from_json(copy));
    }
  } catch (const std::exception& e) {
    throw DataError(std::string("corrupt fits.json: ") + e.what());
  }
  if (fits.empty()) throw DataError("fits.json holds no fits; nothing to plot");

  std::vector<fs::path> files;
  for (const auto& f : fits) {
    Plot plot;
    plot.title = f.metric + " vs " + scaling::to_string(f.axis) + " (" + f.split + ")";
    plot.x_label = axis_label(f.axis);
    plot.y_label = f.metric;
    std::size_t color = 0;
    double xlo = f.x_min, xhi = f.x_max;

    if (f.axis == Axis::C) {
      // Thin per-run curves, then the frontier as a heavy line.
      std::map<std::string, std::vector<scaling::Point>> curves;
      for (const auto& r : records) {
        if (r.split != f.split || !r.metrics.count(f.metric) || !(r.C > 0.0)) continue;
        curves[r.run_id].emplace_back(r.C, r.metrics.at(f.metric));
      }
      for (auto& [id, pts] : curves) {
        std::sort(pts.begin(), pts.end());
        xlo = std::min(xlo, pts.front().first);
        xhi = std::max(xhi, pts.back().first);
        plot.series.push_back({id, SeriesStyle::line, palette(color++), pts});
      }
      plot.series.push_back({"frontier", SeriesStyle::heavy_line, "#000000",
                             axis_points(records, Axis::C, f.metric, f.split, bpd)});
    } else {
      auto pts = axis_points(records, f.axis, f.metric, f.split, bpd);
      std::sort(pts.begin(), pts.end());
      if (!pts.empty()) {
        xlo = std::min(xlo, pts.front().first);
        xhi = std::max(xhi, pts.back().first);
      }
      plot.series.push_back({"runs", SeriesStyle::scatter, palette(color++), pts});
    }

    // The fitted law spans the whole (decade-aligned) x axis.
    const auto [ax_lo, ax_hi] = log_axis_bounds(xlo, xhi);
    if (!f.degenerate) {
      PlotSeries line{"fit alpha=" + fmt(f.alpha, "%.3g"), SeriesStyle::line, "#d62728", {}};
      const int n = 48;
      for (int i = 0; i <= n; ++i) {
        const double x = i == 0   ? ax_lo
                         : i == n ? ax_hi
                                  : std::pow(10.0, std::log10(ax_lo) + (std::log10(ax_hi) - std::log10(ax_lo)) * i / n);
        const double y = scaling::extrapolate(f, x);
        if (std::isfinite(y)) line.points.emplace_back(x, y);
      }
      if (line.points.size() >= 2) plot.series.push_back(std::move(line));
    }
    const auto bs = baselines.find(f.split);
    if (bs != baselines.end() && bs->second.count(f.metric) && std::isfinite(bs->second.at(f.metric))) {
      const double y = bs->second.at(f.metric);
      plot.series.push_back({"ETS", SeriesStyle::dashed, "#7f7f7f", {{ax_lo, y}, {ax_hi, y}}});
    }

    const fs::path file = fs::path(cfg.output_dir) / "plots" /
                          (scaling::to_string(f.axis) + "_" + file_token(f.metric) + "_" + file_token(f.split) + ".svg");
    std::string svg;
    try {
      svg = plot.render_svg();
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    }
    write_text(file, svg);
    files.push_back(file);
    out << "wrote " << file.string() << "\n";
  }
  return files;
}

// ---------------------------------------------------------------------------

fs::path cmd_report(const ExperimentConfig& cfg, std::ostream& out) {
  RunStore store(cfg.output_dir);
  const auto manifest = store.manifest();
  if (manifest.empty()) throw DataError("no finished runs under '" + cfg.output_dir + "'; run sweep first");

  std::ostringstream md;
  md << "# Scaling report\n\n";
  md << "Seed " << cfg.seed << ", " << manifest.size() << " finished runs.\n\n";
  md << "## Runs\n\n";
  md << "| run | N | D | steps | tokens | C | split | nll | mape | status |\n";
  md << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& e : manifest) {
    const auto recs = store.records(e.run_id);
    // Final record per split.
    std::map<std::string, scaling::RunRecord> last;
    for (const auto& r : recs) {
      auto it = last.find(r.split);
      if (it == last.end() || r.step >= it->second.step) last[r.split] = r;
    }
    if (last.empty()) {
      md << "| " << e.run_id << " | " << e.N << " | " << e.D << " | " << e.steps << " | " << e.tokens
         << " | | | | | " << to_string(e.status) << " |\n";
    }
    for (const auto& [split, r] : last) {
      auto metric = [&](const char* k) { return r.metrics.count(k) ? fmt(r.metrics.at(k), "%.4f") : "-"; };
      md << "| " << e.run_id << " | " << e.N << " | " << e.D << " | " << e.steps << " | " << e.tokens << " | "
         << fmt(r.C, "%.3e") << " | " << split << " | " << metric("nll") << " | " << metric("mape") << " | "
         << to_string(e.status) << (e.failure.empty() ? "" : ": " + e.failure) << " |\n";
    }
  }

  const fs::path fits_file = analysis_dir(cfg) / "fits.json";
  if (fs::exists(fits_file)) {
    const auto j = read_json(fits_file, "run fit first");
    md << "\n## Power-law fits\n\n";
    md << "| axis | metric | split | alpha | X_c | r2 | points | reliable |\n|---|---|---|---|---|---|---|---|\n";
    for (const auto& f : j.at("fits")) {
      md << "| " << f["axis"].get<std::string>() << " | " << f["metric"].get<std::string>() << " | "
         << f["split"].get<std::string>() << " | " << fmt(f["alpha"].get<double>()) << " | "
         << (f["x_c"].is_null() ? "-" : fmt(f["x_c"].get<double>())) << " | "
         << fmt(f["r_squared"].get<double>(), "%.4f") << " | " << f["n_points"].get<std::size_t>() << " | "
         << (f["reliable"].get<bool>() ? "yes" : "no") << " |\n";
    }
    if (!j.at("frontiers").empty()) {
      md << "\n## Compute frontiers\n\n";
      for (const auto& fr : j.at("frontiers")) {
        md << "- " << fr["metric"].get<std::string>() << " on " << fr["split"].get<std::string>() << ": "
           << fr["points"].size() << " buckets, "
           << (fr["nonincreasing"].get<bool>() ? "nonincreasing" : "not monotone") << "\n";
      }
    }
    if (j.contains("ets_baselines") && !j.at("ets_baselines").empty()) {
      md << "\n## ETS baselines\n\n";
      for (const auto& [split, vals] : j.at("ets_baselines").items()) {
        md << "- " << split << ":";
        for (const auto& [k, v] : vals.items()) md << " " << k << " " << (v.is_null() ? "-" : fmt(v.get<double>(), "%.4f"));
        md << "\n";
      }
    }
    if (!j.at("comparisons").empty()) {
      md << "\n## In-distribution vs held-out\n\n";
      for (const auto& c : j.at("comparisons")) {
        md << "- " << c["axis"].get<std::string>() << " " << c["metric"].get<std::string>() << " vs "
           << c["split"].get<std::string>() << ": slope ratio " << fmt(c["slope_ratio"].get<double>(), "%.3f")
           << ", log offset " << fmt(c["log_offset"].get<double>(), "%.3f")
           << (c["reliable"].get<bool>() ? "" : " (ranges do not overlap)") << "\n";
      }
    }
    if (!j.at("data_requirement").empty()) {
      md << "\n## Data requirement\n\n";
      for (const auto& d : j.at("data_requirement")) {
        md << "- " << d["metric"].get<std::string>() << " on " << d["split"].get<std::string>()
           << ": doubling N calls for " << fmt(d["d_ratio"].get<double>(), "%.3f") << "x the data\n";
      }
    }
  } else {
    md << "\nNo fits yet (run `fit`).\n";
  }

  const fs::path file = fs::path(cfg.output_dir) / "report.md";
  write_text(file, md.str());
  out << md.str() << "wrote " << file.string() << "\n";
  return file;
}

}  // namespace tsscale::harness
