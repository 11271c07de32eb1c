#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "tsscale/corpus/corpus.hpp"
#include "tsscale/util/hash.hpp"

namespace tsscale::corpus {

namespace {

bool has_missing(const TimeSeries& s) {
  return std::any_of(s.values.begin(), s.values.end(), [](double v) { return !std::isfinite(v); });
}

std::map<std::string, double> resolve_targets(const CorpusManifest& corpus, const CurationRules& rules) {
  std::map<std::string, double> targets = rules.target_proportions;
  const auto present = corpus.domain_points();
  if (targets.empty()) {
    for (const auto& [domain, n] : present) targets[domain] = 1.0 / static_cast<double>(present.size());
    return targets;
  }
  double total = 0.0;
  for (const auto& [domain, p] : targets) {
    if (!(p > 0.0)) throw std::invalid_argument("target proportion for domain '" + domain + "' must be positive");
    if (!present.count(domain)) {
      throw std::invalid_argument("target proportions infeasible: domain '" + domain + "' has no series");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("target proportions must sum to 1");
  for (const auto& [domain, n] : present) {
    if (!targets.count(domain)) {
      throw std::invalid_argument("domain '" + domain + "' has no target proportion");
    }
  }
  return targets;
}

bool within_tolerance(const CorpusManifest& corpus, const std::map<std::string, double>& targets, double tol) {
  const auto actual = corpus.domain_proportions();
  for (const auto& [domain, p] : targets) {
    const auto it = actual.find(domain);
    const double a = it == actual.end() ? 0.0 : it->second;
    if (std::abs(a - p) > tol) return false;
  }
  return true;
}

// Indices of a domain's series in a seeded, id-determined order.
std::map<std::string, std::vector<std::size_t>> hash_order(const CorpusManifest& corpus, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < corpus.series.size(); ++i) by_domain[corpus.series[i].domain].push_back(i);
  for (auto& [domain, idx] : by_domain) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto ha = util::fnv1a(corpus.series[a].id, seed), hb = util::fnv1a(corpus.series[b].id, seed);
      return ha != hb ? ha < hb : corpus.series[a].id < corpus.series[b].id;
    });
  }
  return by_domain;
}

// Longest prefix whose point count stays closest to `budget`: stops at the
// first series whose inclusion would overshoot by more than it undershoots.
std::size_t prefix_for_budget(const CorpusManifest& corpus, const std::vector<std::size_t>& order, double budget) {
  double cum = 0.0;
  std::size_t k = 0;
  for (; k < order.size(); ++k) {
    const double len = static_cast<double>(corpus.series[order[k]].values.size());
    if (cum + 0.5 * len >= budget) break;
    cum += len;
  }
  return k;
}

}  // namespace

CorpusManifest curate(const CorpusManifest& raw, const CurationRules& rules, CurationSummary* summary) {
  if (rules.balance_tolerance < 0.0) throw std::invalid_argument("balance tolerance must be >= 0");
  CurationSummary local;
  local.input_series = raw.series.size();
  std::set<std::string> ids;
  CorpusManifest kept;
  for (const auto& s : raw.series) {
    if (!ids.insert(s.id).second) throw std::invalid_argument("duplicate series id '" + s.id + "'");
    if (has_missing(s)) {
      ++local.dropped_missing;
      continue;
    }
    if (s.values.size() < std::max<std::size_t>(rules.min_length, 16)) {
      ++local.dropped_short;
      continue;
    }
    if (estimate_snr(s.values, rules.filter) < rules.snr_threshold_db) {
      ++local.dropped_snr;
      continue;
    }
    const auto factor = rules.dedup_factor.find(s.domain);
    if (factor != rules.dedup_factor.end()) {
      if (factor->second == 0) throw std::invalid_argument("dedup factor for '" + s.domain + "' must be >= 1");
      if (util::fnv1a(s.id, rules.seed) % factor->second != 0) {
        ++local.dropped_dedup;
        continue;
      }
    }
    kept.series.push_back(s);
  }

  if (!kept.series.empty()) {
    const auto targets = resolve_targets(kept, rules);
    if (!within_tolerance(kept, targets, rules.balance_tolerance)) {
      const auto points = kept.domain_points();
      double reference = std::numeric_limits<double>::infinity();
      for (const auto& [domain, p] : targets) reference = std::min(reference, points.at(domain) / p);
      std::vector<char> keep(kept.series.size(), 0);
      for (const auto& [domain, order] : hash_order(kept, rules.seed)) {
        const std::size_t k = prefix_for_budget(kept, order, targets.at(domain) * reference);
        for (std::size_t i = 0; i < k; ++i) keep[order[i]] = 1;
      }
      CorpusManifest balanced;
      for (std::size_t i = 0; i < kept.series.size(); ++i) {
        if (keep[i]) {
          balanced.series.push_back(std::move(kept.series[i]));
        } else {
          ++local.dropped_balance;
        }
      }
      kept = std::move(balanced);
      if (!within_tolerance(kept, targets, rules.balance_tolerance)) {
        throw std::domain_error("domain balancing cannot reach the target proportions; series are too coarse");
      }
    }
  }
  local.kept = kept.series.size();
  if (summary) *summary = local;
  return kept;
}

std::vector<Subset> partition(const CorpusManifest& corpus, std::span<const std::size_t> sizes, std::uint64_t seed,
                              double validation_fraction) {
  if (sizes.empty()) throw std::invalid_argument("partition needs at least one subset size");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must lie in [0, 1)");
  }
  const std::size_t total = corpus.total_points();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw std::invalid_argument("subset sizes must be positive");
    if (sizes[i] > total) {
      throw std::invalid_argument("subset size " + std::to_string(sizes[i]) + " exceeds corpus total " +
                                  std::to_string(total));
    }
    if (i > 0 && sizes[i] < sizes[i - 1]) throw std::invalid_argument("subset sizes must be ascending");
  }

  const auto order = hash_order(corpus, seed);
  // A series' train/validation side depends only on its rank, so it is the
  // same in every subset that contains it.
  std::vector<char> is_validation(corpus.series.size(), 0);
  for (const auto& [domain, idx] : order) {
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto before = std::floor(static_cast<double>(r) * validation_fraction);
      const auto after = std::floor(static_cast<double>(r + 1) * validation_fraction);
      is_validation[idx[r]] = after > before;
    }
  }

  const auto points = corpus.domain_points();
  std::vector<Subset> out;
  for (std::size_t size : sizes) {
    Subset subset;
    subset.target_points = size;
    std::vector<char> member(corpus.series.size(), 0);
    for (const auto& [domain, idx] : order) {
      const double budget = static_cast<double>(points.at(domain)) * static_cast<double>(size) /
                            static_cast<double>(total);
      const std::size_t k = prefix_for_budget(corpus, idx, budget);
      for (std::size_t i = 0; i < k; ++i) member[idx[i]] = 1;
    }
    for (std::size_t i = 0; i < corpus.series.size(); ++i) {
      if (!member[i]) continue;
      (is_validation[i] ? subset.validation : subset.train).series.push_back(corpus.series[i]);
    }
    out.push_back(std::move(subset));
  }
  return out;
}

}  // namespace tsscale::corpus
