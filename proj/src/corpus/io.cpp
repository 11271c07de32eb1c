#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tsscale/corpus/corpus.hpp"

namespace tsscale::corpus {

using nlohmann::json;

void write_corpus(const std::string& path, const CorpusManifest& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& s : corpus.series) {
    json values = json::array();
    for (double v : s.values) values.push_back(std::isfinite(v) ? json(v) : json(nullptr));
    const json row = {{"id", s.id}, {"domain", s.domain}, {"frequency", s.frequency}, {"values", values}};
    out << row.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

CorpusManifest read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file '" + path + "'");
  CorpusManifest corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument(where + ": malformed JSON");
    }
    if (!row.is_object() || !row.contains("id") || !row.contains("values") || !row["values"].is_array()) {
      throw std::invalid_argument(where + ": expected an object with 'id' and 'values'");
    }
    TimeSeries s;
    s.id = row.at("id").get<std::string>();
    s.domain = row.value("domain", std::string("unknown"));
    s.frequency = row.value("frequency", std::string("unknown"));
    for (const auto& v : row["values"]) {
      // Missing observations are carried as NaN so curation can count them.
      if (v.is_null()) {
        s.values.push_back(std::numeric_limits<double>::quiet_NaN());
      } else if (v.is_number()) {
        s.values.push_back(v.get<double>());
      } else {
        throw std::invalid_argument(where + ": non-numeric value in series '" + s.id + "'");
      }
    }
    corpus.series.push_back(std::move(s));
  }
  return corpus;
}

TimeSeries read_csv_series(const std::string& path, const std::string& domain) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV file '" + path + "'");
  TimeSeries s;
  s.id = std::filesystem::path(path).stem().string();
  s.domain = domain;
  s.frequency = "unknown";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string field = line.substr(0, line.find(','));
    const auto first = field.find_first_not_of(" \t");
    if (first == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": blank value");
    }
    std::istringstream cell(field.substr(first));
    double v = 0.0;
    std::string rest;
    if (!(cell >> v) || (cell >> rest)) {
      if (line_no == 1) continue;  // header
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": non-numeric value '" + field + "'");
    }
    if (!std::isfinite(v)) throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": non-finite value");
    s.values.push_back(v);
  }
  if (s.values.size() < 2) throw std::invalid_argument(path + ": a series needs at least 2 values");
  return s;
}

}  // namespace tsscale::corpus
