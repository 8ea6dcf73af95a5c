#include "rewriter/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "rewriter/error.hpp"
#include "rewriter/gateway.hpp"
#include "rewriter/random.hpp"

namespace rewriter {

using nlohmann::json;

std::string_view to_string(Provenance p) {
  return p == Provenance::rewrite ? "rewrite" : "fallback";
}

RewrittenRecord RewrittenRecord::fallback_for(const ExpertSample& sample) {
  RewrittenRecord r;
  r.id = sample.id;
  r.input_x = sample.input_x;
  r.target_y = sample.expert_y;
  r.provenance = Provenance::fallback;
  r.expert_y = sample.expert_y;
  r.meta = sample.meta;
  return r;
}

RewrittenRecord RewrittenRecord::rewrite_for(const ExpertSample& sample, std::string target,
                                             std::size_t candidate_index) {
  RewrittenRecord r;
  r.id = sample.id;
  r.input_x = sample.input_x;
  r.target_y = std::move(target);
  r.provenance = Provenance::rewrite;
  r.candidate_index = candidate_index;
  r.expert_y = sample.expert_y;
  r.gate_passed = true;
  r.meta = sample.meta;
  return r;
}

json IngestReport::to_json() const {
  return {{"read", read},
          {"admitted", admitted},
          {"rejected_overlong", rejected_overlong},
          {"rejected_malformed", rejected_malformed}};
}

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

TokenCounter token_counter_for(Gateway* gateway) {
  if (gateway != nullptr && gateway->supports(Capability::tokenize)) {
    return [gateway](std::string_view text) { return gateway->tokenize(text); };
  }
  return [](std::string_view text) { return whitespace_token_count(text); };
}

SampleReader::SampleReader(const std::filesystem::path& path, std::size_t max_tokens,
                           TokenCounter counter)
    : in_(path),
      file_name_(path.filename().string()),
      max_tokens_(max_tokens),
      counter_(counter ? std::move(counter) : token_counter_for(nullptr)) {
  if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
  if (!in_) throw IoError("cannot read '" + path.string() + "'");
}

std::optional<ExpertSample> SampleReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_number_;
    if (blank(line)) continue;
    ++report_.read;

    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    auto string_field = [&](const char* key) -> const std::string* {
      auto it = j.find(key);
      if (it == j.end() || !it->is_string()) return nullptr;
      return it->get_ptr<const std::string*>();
    };
    const std::string* input = j.is_object() ? string_field("input") : nullptr;
    const std::string* target = j.is_object() ? string_field("target") : nullptr;
    const bool id_ok = j.is_object() && (!j.contains("id") || j["id"].is_string());
    const bool meta_ok = j.is_object() && (!j.contains("meta") || j["meta"].is_object());
    if (input == nullptr || target == nullptr || blank(*input) || blank(*target) || !id_ok ||
        !meta_ok || (j.contains("id") && j["id"].get_ref<const std::string&>().empty())) {
      ++report_.rejected_malformed;
      continue;
    }

    ExpertSample sample;
    sample.id = j.contains("id") ? j["id"].get<std::string>()
                                 : file_name_ + ":" + std::to_string(line_number_);
    sample.input_x = *input;
    sample.expert_y = *target;
    sample.token_count = counter_(sample.input_x) + counter_(sample.expert_y);
    if (j.contains("meta")) sample.meta = j["meta"];
    if (sample.token_count > max_tokens_) {
      ++report_.rejected_overlong;
      continue;
    }
    ++report_.admitted;
    return sample;
  }
  if (in_.bad()) throw IoError("read error in '" + file_name_ + "'");
  return std::nullopt;
}

IngestResult ingest(const std::filesystem::path& path, std::size_t max_tokens,
                    TokenCounter counter) {
  SampleReader reader(path, max_tokens, std::move(counter));
  IngestResult result;
  while (auto sample = reader.next()) result.samples.push_back(std::move(*sample));
  result.report = reader.report();
  return result;
}

void validate(const RewrittenRecord& record) {
  const std::string where = "record '" + record.id + "': ";
  if (record.id.empty()) throw ValidationError("record with empty id");
  if (blank(record.input_x)) throw ValidationError(where + "empty input");
  if (blank(record.target_y)) throw ValidationError(where + "empty target");
  if (record.provenance == Provenance::fallback) {
    if (record.target_y != record.expert_y) {
      throw ValidationError(where + "fallback target differs from the expert demonstration");
    }
    if (record.candidate_index) {
      throw ValidationError(where + "fallback record carries a candidate index");
    }
  } else {
    if (!record.gate_passed) {
      throw ValidationError(where + "rewrite adopted without passing the task-consistency gate");
    }
    if (!record.candidate_index) {
      throw ValidationError(where + "rewrite record lacks a candidate index");
    }
  }
}

json to_json(const RewrittenRecord& record) {
  json j = {{"id", record.id},
            {"input", record.input_x},
            {"target", record.target_y},
            {"provenance", to_string(record.provenance)}};
  if (record.candidate_index) j["candidate_index"] = *record.candidate_index;
  if (!record.meta.is_null()) j["meta"] = record.meta;
  return j;
}

std::size_t write_dataset(std::span<const RewrittenRecord> records,
                          const std::filesystem::path& path) {
  for (const auto& r : records) validate(r);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  out.flush();
  if (!out) throw IoError("write error on '" + path.string() + "'");
  return records.size();
}

Partition split(std::span<const ExpertSample> samples, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("split fraction must lie in the open interval (0, 1)");
  }
  const std::size_t n = samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> held_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(held_idx.begin(), held_idx.end());

  Partition p;
  p.train.reserve(train_idx.size());
  p.heldout.reserve(held_idx.size());
  for (auto i : train_idx) p.train.push_back(samples[i]);
  for (auto i : held_idx) p.heldout.push_back(samples[i]);
  return p;
}

}  // namespace rewriter
