#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tsscale/io/json_io.hpp"
#include "tsscale/scaling/scaling.hpp"
#include "tsscale/trainer/trainer.hpp"

namespace tsscale::harness {

enum class RunStatus { missing, incomplete, complete, failed };
std::string to_string(RunStatus s);

struct ManifestEntry {
  std::string run_id;
  std::string model;
  std::string fingerprint;
  std::size_t N = 0;
  std::size_t D = 0;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::complete;
  std::size_t steps = 0;
  std::size_t tokens = 0;
  std::string failure;
};

/// On-disk layout under <root>/runs:
///   manifest.json            finished runs sorted by id
///   <id>/status.json         incomplete | complete | failed
///   <id>/records.jsonl       RunRecords, appended as they are produced
///   <id>/events.jsonl        TrainEvents without wall time
///   <id>/timing.jsonl        step and wall time (not reproducible)
///   <id>/checkpoint.json     latest weights
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path run_dir(const std::string& run_id) const;
  std::filesystem::path checkpoint_path(const std::string& run_id) const;

  RunStatus status(const std::string& run_id) const;
  /// Starts (or restarts) a run: removes any files of an unfinished attempt
  /// and marks it incomplete. Refuses to touch a finished run.
  void begin_run(const std::string& run_id);
  void append_record(const std::string& run_id, const scaling::RunRecord& r);
  void append_event(const std::string& run_id, const trainer::TrainEvent& e);
  /// Marks the run finished and adds it to the manifest.
  void finish_run(const ManifestEntry& entry);

  std::vector<ManifestEntry> manifest() const;
  std::vector<scaling::RunRecord> records(const std::string& run_id) const;
  std::vector<trainer::TrainEvent> events(const std::string& run_id) const;
  /// Records of every run listed in the manifest, in manifest order.
  std::vector<scaling::RunRecord> all_records() const;

 private:
  void append_line(const std::filesystem::path& file, const std::string& line);
  void write_manifest(const std::vector<ManifestEntry>& entries) const;

  std::filesystem::path root_;
  mutable std::mutex mutex_;
};

/// Reads a JSON-lines file; throws DataError naming the file and line on bad rows.
std::vector<io::Json> read_json_lines(const std::filesystem::path& file);
/// Writes text to a file atomically (temporary file + rename).
void write_text(const std::filesystem::path& file, const std::string& text);
std::string read_text(const std::filesystem::path& file);

}  // namespace tsscale::harness
