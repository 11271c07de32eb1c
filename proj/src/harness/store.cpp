#include "tsscale/harness/store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "tsscale/harness/experiment.hpp"

namespace tsscale::harness {

namespace fs = std::filesystem;

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::missing:
      return "missing";
    case RunStatus::incomplete:
      return "incomplete";
    case RunStatus::complete:
      return "complete";
    case RunStatus::failed:
      return "failed";
  }
  return "missing";
}

namespace {

RunStatus parse_status(const std::string& s) {
  if (s == "incomplete") return RunStatus::incomplete;
  if (s == "complete") return RunStatus::complete;
  if (s == "failed") return RunStatus::failed;
  throw DataError("unknown run status '" + s + "'");
}

io::Json entry_json(const ManifestEntry& e) {
  io::Json j;
  j["run_id"] = e.run_id;
  j["model"] = e.model;
  j["fingerprint"] = e.fingerprint;
  j["N"] = e.N;
  j["D"] = e.D;
  j["seed"] = e.seed;
  j["status"] = to_string(e.status);
  j["steps"] = e.steps;
  j["tokens"] = e.tokens;
  if (!e.failure.empty()) j["failure"] = e.failure;
  return j;
}

ManifestEntry entry_from_json(const io::Json& j) {
  ManifestEntry e;
  io::ObjectReader rd(j, "manifest.runs[]");
  std::string status;
  rd.require("run_id", e.run_id);
  rd.get("model", e.model);
  rd.get("fingerprint", e.fingerprint);
  rd.require("N", e.N);
  rd.get("D", e.D);
  rd.get("seed", e.seed);
  rd.require("status", status);
  rd.get("steps", e.steps);
  rd.get("tokens", e.tokens);
  rd.get("failure", e.failure);
  rd.finish();
  e.status = parse_status(status);
  return e;
}

}  // namespace

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read '" + file.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw DataError("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, file);
}

std::vector<io::Json> read_json_lines(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read '" + file.string() + "'");
  std::vector<io::Json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(io::Json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

RunStore::RunStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "runs"); }

fs::path RunStore::run_dir(const std::string& run_id) const { return root_ / "runs" / run_id; }

fs::path RunStore::checkpoint_path(const std::string& run_id) const { return run_dir(run_id) / "checkpoint.json"; }

RunStatus RunStore::status(const std::string& run_id) const {
  const fs::path file = run_dir(run_id) / "status.json";
  if (!fs::exists(file)) return fs::exists(run_dir(run_id)) ? RunStatus::incomplete : RunStatus::missing;
  try {
    return parse_status(io::Json::parse(read_text(file)).at("status").get<std::string>());
  } catch (const nlohmann::json::exception&) {
    return RunStatus::incomplete;  // torn write
  }
}

void RunStore::begin_run(const std::string& run_id) {
  const auto s = status(run_id);
  if (s == RunStatus::complete || s == RunStatus::failed) {
    throw DataError("run '" + run_id + "' already finished; run ids are never reused");
  }
  fs::remove_all(run_dir(run_id));
  fs::create_directories(run_dir(run_id));
  write_text(run_dir(run_id) / "status.json", io::Json{{"status", "incomplete"}}.dump() + "\n");
}

void RunStore::append_line(const fs::path& file, const std::string& line) {
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot append to '" + file.string() + "'");
  out << line << '\n';
}

void RunStore::append_record(const std::string& run_id, const scaling::RunRecord& r) {
  append_line(run_dir(run_id) / "records.jsonl", io::to_json(r).dump());
}

void RunStore::append_event(const std::string& run_id, const trainer::TrainEvent& e) {
  append_line(run_dir(run_id) / "events.jsonl", io::to_json(e, false).dump());
  append_line(run_dir(run_id) / "timing.jsonl", io::Json{{"step", e.step}, {"wall_time", e.wall_time}}.dump());
}

void RunStore::finish_run(const ManifestEntry& entry) {
  std::lock_guard lock(mutex_);
  write_text(run_dir(entry.run_id) / "status.json", io::Json{{"status", to_string(entry.status)}}.dump() + "\n");
  auto entries = manifest();
  entries.erase(std::remove_if(entries.begin(), entries.end(),
                               [&](const ManifestEntry& e) { return e.run_id == entry.run_id; }),
                entries.end());
  entries.push_back(entry);
  write_manifest(entries);
}

void RunStore::write_manifest(const std::vector<ManifestEntry>& entries) const {
  auto sorted = entries;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.run_id < b.run_id; });
  io::Json j;
  j["version"] = 1;
  j["runs"] = io::Json::array();
  for (const auto& e : sorted) j["runs"].push_back(entry_json(e));
  write_text(root_ / "runs" / "manifest.json", j.dump(2) + "\n");
}

std::vector<ManifestEntry> RunStore::manifest() const {
  const fs::path file = root_ / "runs" / "manifest.json";
  if (!fs::exists(file)) return {};
  io::Json j;
  try {
    j = io::Json::parse(read_text(file));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + file.string() + "' is corrupt: " + e.what());
  }
  std::vector<ManifestEntry> out;
  try {
    for (const auto& r : j.at("runs")) out.push_back(entry_from_json(r));
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + file.string() + "' is corrupt: " + e.what());
  }
  return out;
}

std::vector<scaling::RunRecord> RunStore::records(const std::string& run_id) const {
  const fs::path file = run_dir(run_id) / "records.jsonl";
  std::vector<scaling::RunRecord> out;
  if (!fs::exists(file)) return out;
  for (const auto& j : read_json_lines(file)) {
    try {
      out.push_back(io::run_record_from_json(j));
    } catch (const std::invalid_argument& e) {
      throw DataError(file.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<trainer::TrainEvent> RunStore::events(const std::string& run_id) const {
  const fs::path file = run_dir(run_id) / "events.jsonl";
  std::vector<trainer::TrainEvent> out;
  if (!fs::exists(file)) return out;
  for (const auto& j : read_json_lines(file)) {
    trainer::TrainEvent e;
    e.step = j.at("step").get<std::size_t>();
    e.train_loss = j.at("train_loss").get<double>();
    e.lr = j.at("lr").get<double>();
    e.grad_norm = j.at("grad_norm").get<double>();
    e.tokens = j.at("tokens").get<std::size_t>();
    out.push_back(e);
  }
  return out;
}

std::vector<scaling::RunRecord> RunStore::all_records() const {
  std::vector<scaling::RunRecord> out;
  for (const auto& e : manifest()) {
    auto r = records(e.run_id);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace tsscale::harness
