#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "rewriter/corpus.hpp"
#include "rewriter/error.hpp"
#include "support.hpp"

using namespace rewriter;
using testing_support::ScratchDir;
using testing_support::write_file;

TEST(Reader, AdmitsAndRejects) {
  ScratchDir dir("corpus");
  write_file(dir / "in.jsonl",
             "{\"id\":\"a\",\"input\":\"x one\",\"target\":\"y one\"}\n"
             "\n"
             "not json\n"
             "{\"input\":\"x two\",\"target\":\"y two\",\"meta\":{\"src\":1}}\n"
             "{\"input\":\"   \",\"target\":\"y\"}\n"
             "{\"input\":\"x\",\"target\":5}\n"
             "{\"id\":\"\",\"input\":\"x\",\"target\":\"y\"}\n"
             "{\"input\":\"x\",\"target\":\"y\",\"meta\":[1]}\n"
             "[1,2]\n"
             "{\"id\":\"long\",\"input\":\"a b c d\",\"target\":\"e f g\"}\n");
  const auto r = ingest(dir / "in.jsonl", 6);
  EXPECT_EQ(r.report.read, 9u);
  EXPECT_EQ(r.report.admitted, 2u);
  EXPECT_EQ(r.report.rejected_malformed, 6u);
  EXPECT_EQ(r.report.rejected_overlong, 1u);
  ASSERT_EQ(r.samples.size(), 2u);
  EXPECT_EQ(r.samples[0].id, "a");
  EXPECT_EQ(r.samples[0].token_count, 4u);
  EXPECT_EQ(r.samples[1].id, "in.jsonl:4");
  EXPECT_EQ(r.samples[1].meta["src"], 1);
}

TEST(Reader, LimitCountsInputPlusTarget) {
  ScratchDir dir("corpus");
  write_file(dir / "in.jsonl", "{\"input\":\"a b\",\"target\":\"c d\"}\n");
  EXPECT_EQ(ingest(dir / "in.jsonl", 4).report.admitted, 1u);
  EXPECT_EQ(ingest(dir / "in.jsonl", 3).report.rejected_overlong, 1u);
}

TEST(Reader, CustomCounter) {
  ScratchDir dir("corpus");
  write_file(dir / "in.jsonl", "{\"input\":\"abc\",\"target\":\"de\"}\n");
  const auto r = ingest(dir / "in.jsonl", 100, [](std::string_view s) { return s.size(); });
  EXPECT_EQ(r.samples.at(0).token_count, 5u);
}

TEST(Reader, MissingFileIsIoError) { EXPECT_THROW(ingest("/nonexistent/x.jsonl", 10), IoError); }

TEST(Reader, EmptyFile) {
  ScratchDir dir("corpus");
  write_file(dir / "in.jsonl", "");
  const auto r = ingest(dir / "in.jsonl", 10);
  EXPECT_TRUE(r.samples.empty());
  EXPECT_EQ(r.report, IngestReport{});
}

namespace {
ExpertSample sample(const std::string& id) {
  ExpertSample s;
  s.id = id;
  s.input_x = "question " + id;
  s.expert_y = "answer " + id;
  return s;
}
}  // namespace

TEST(Records, FallbackIdentity) {
  const auto s = sample("a");
  const auto r = RewrittenRecord::fallback_for(s);
  EXPECT_EQ(r.target_y, s.expert_y);
  EXPECT_EQ(r.provenance, Provenance::fallback);
  EXPECT_NO_THROW(validate(r));
  auto bad = r;
  bad.target_y = "something else";
  EXPECT_THROW(validate(bad), ValidationError);
  bad = r;
  bad.candidate_index = 0;
  EXPECT_THROW(validate(bad), ValidationError);
}

TEST(Records, RewriteNeedsGate) {
  auto r = RewrittenRecord::rewrite_for(sample("a"), "new text", 2);
  EXPECT_NO_THROW(validate(r));
  EXPECT_EQ(to_json(r)["candidate_index"], 2);
  EXPECT_EQ(to_json(r)["provenance"], "rewrite");
  r.gate_passed = false;
  EXPECT_THROW(validate(r), ValidationError);
}

TEST(Records, WriterIsAllOrNothing) {
  ScratchDir dir("corpus");
  std::vector<RewrittenRecord> recs = {RewrittenRecord::fallback_for(sample("a")),
                                       RewrittenRecord::fallback_for(sample("b"))};
  recs[1].target_y = "tampered";
  EXPECT_THROW(write_dataset(recs, dir / "out.jsonl"), ValidationError);
  EXPECT_FALSE(std::filesystem::exists(dir / "out.jsonl"));
  recs[1] = RewrittenRecord::fallback_for(sample("b"));
  EXPECT_EQ(write_dataset(recs, dir / "out.jsonl"), 2u);
  const auto lines = testing_support::read_jsonl(dir / "out.jsonl");
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[1]["target"], "answer b");
  EXPECT_FALSE(lines[1].contains("candidate_index"));
}

TEST(Split, SizesOrderAndDeterminism) {
  std::vector<ExpertSample> s;
  for (int i = 0; i < 37; ++i) s.push_back(sample(std::to_string(i)));
  const auto a = split(s, 0.7, 9);
  const auto b = split(s, 0.7, 9);
  EXPECT_EQ(a.train.size(), 25u);  // floor(0.7 * 37)
  EXPECT_EQ(a.heldout.size(), 12u);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.heldout}) {
    for (std::size_t i = 0; i < part->size(); ++i) {
      ids.insert((*part)[i].id);
      if (i > 0) EXPECT_LT(std::stoi((*part)[i - 1].id), std::stoi((*part)[i].id));
    }
  }
  EXPECT_EQ(ids.size(), 37u);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].id, b.train[i].id);
  const auto c = split(s, 0.7, 10);
  bool differs = false;
  for (std::size_t i = 0; i < c.train.size(); ++i) differs |= c.train[i].id != a.train[i].id;
  EXPECT_TRUE(differs);
}

TEST(Split, FractionBounds) {
  std::vector<ExpertSample> s = {sample("a")};
  EXPECT_THROW(split(s, 0.0, 1), ConfigError);
  EXPECT_THROW(split(s, 1.0, 1), ConfigError);
}
