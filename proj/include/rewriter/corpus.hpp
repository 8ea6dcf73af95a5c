#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace rewriter {

class Gateway;

/// One (x, y*) pair from an expert dataset.
struct ExpertSample {
  std::string id;
  std::string input_x;
  std::string expert_y;
  std::size_t token_count = 0;  // tokens(x) + tokens(y*)
  nlohmann::json meta;          // null when the source line had no "meta"
};

enum class Provenance { rewrite, fallback };

std::string_view to_string(Provenance p);

/// A row of the rewritten dataset.
///
/// `expert_y` and `gate_passed` are not serialized; they exist so the writer
/// can enforce the provenance invariants before anything reaches disk.
struct RewrittenRecord {
  std::string id;
  std::string input_x;
  std::string target_y;
  Provenance provenance = Provenance::fallback;
  std::optional<std::size_t> candidate_index;
  std::string expert_y;
  bool gate_passed = false;
  nlohmann::json meta;

  static RewrittenRecord fallback_for(const ExpertSample& sample);
  static RewrittenRecord rewrite_for(const ExpertSample& sample, std::string target,
                                     std::size_t candidate_index);
};

struct IngestReport {
  std::size_t read = 0;
  std::size_t admitted = 0;
  std::size_t rejected_overlong = 0;
  std::size_t rejected_malformed = 0;

  nlohmann::json to_json() const;
  bool operator==(const IngestReport&) const = default;
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Whitespace counting, or the gateway's tokenizer when it offers one.
TokenCounter token_counter_for(Gateway* gateway);

/// Streaming reader over a line-delimited record file.
///
/// Blank lines are ignored. Lines that fail to parse, lack a non-empty
/// "input"/"target", or carry wrongly typed fields are counted as malformed
/// and skipped. Samples without an "id" get "<file name>:<line number>".
class SampleReader {
 public:
  SampleReader(const std::filesystem::path& path, std::size_t max_tokens,
               TokenCounter counter = {});

  /// Next admitted sample in file order, or nullopt at end of file.
  std::optional<ExpertSample> next();
  const IngestReport& report() const { return report_; }

 private:
  std::ifstream in_;
  std::string file_name_;
  std::size_t max_tokens_;
  TokenCounter counter_;
  std::size_t line_number_ = 0;
  IngestReport report_;
};

struct IngestResult {
  std::vector<ExpertSample> samples;
  IngestReport report;
};

IngestResult ingest(const std::filesystem::path& path, std::size_t max_tokens,
                    TokenCounter counter = {});

/// Throws ValidationError when a record breaks its provenance invariants.
void validate(const RewrittenRecord& record);

nlohmann::json to_json(const RewrittenRecord& record);

/// Validates every record first, then writes one JSON object per line.
/// Returns the number of records written.
std::size_t write_dataset(std::span<const RewrittenRecord> records,
                          const std::filesystem::path& path);

struct Partition {
  std::vector<ExpertSample> train;
  std::vector<ExpertSample> heldout;
};

/// Seeded shuffle; the first floor(fraction * N) shuffled samples form the
/// training partition. Both partitions keep the input's relative order.
Partition split(std::span<const ExpertSample> samples, double fraction, std::uint64_t seed);

}  // namespace rewriter
