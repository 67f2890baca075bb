#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "oracles.h"
#include "test_support.h"
#include "phishmetric/error.h"
#include "phishmetric/index.h"
#include "phishmetric/util.h"

namespace phishmetric {
namespace {

using testing_support::fresh_dir;
using testing_support::pool_records;
using testing_support::SyntheticImages;
using testing_support::tiny_config;

EmbeddingIndex index_of(const std::vector<oracle::Row>& rows, int dim) {
  EmbeddingIndex idx(dim, "fp");
  for (const auto& r : rows) idx.append(r.v, r.website, r.record_id);
  return idx;
}

TEST(Query, ExactHitFirst) {
  EmbeddingIndex idx(2, "fp");
  idx.append(std::vector<float>{0, 0}, "a", "r1");
  idx.append(std::vector<float>{3, 4}, "b", "r2");
  const auto m = query(idx, std::vector<float>{3, 4}, 5);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0], (Match{"b", "r2", 0.0}));
  EXPECT_DOUBLE_EQ(m[1].distance, 5.0);
}

TEST(Query, MatchesBruteForceOracle) {
  std::mt19937_64 rng(1);
  for (int seed = 0; seed < 100; ++seed) {
    const int n = std::uniform_int_distribution<int>(1, 200)(rng);
    const auto rows = oracle::random_rows(rng, n, 4, std::uniform_int_distribution<int>(1, 12)(rng));
    const auto idx = index_of(rows, 4);
    for (int q = 0; q < 20; ++q) {
      const auto v = oracle::random_vector(rng, 4);
      const int k = std::uniform_int_distribution<int>(1, 15)(rng);
      ASSERT_EQ(query(idx, v, k), oracle::query(rows, v, k)) << "seed " << seed;
    }
  }
}

TEST(Query, TieGoesToLowerRecordId) {
  EmbeddingIndex idx(1, "fp");
  idx.append(std::vector<float>{1}, "zeta", "r2");
  idx.append(std::vector<float>{-1}, "alpha", "r9");
  idx.append(std::vector<float>{-1}, "alpha", "r1");
  const auto m = query(idx, std::vector<float>{0}, 2);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].website_id, "alpha");
  EXPECT_EQ(m[0].record_id, "r1");
  EXPECT_EQ(m[1].website_id, "zeta");
}

TEST(Query, KBeyondWebsitesReturnsAll) {
  EmbeddingIndex idx(1, "fp");
  idx.append(std::vector<float>{1}, "a", "r1");
  idx.append(std::vector<float>{2}, "a", "r2");
  idx.append(std::vector<float>{3}, "b", "r3");
  EXPECT_EQ(query(idx, std::vector<float>{0}, 10).size(), 2u);
  EXPECT_THROW(query(idx, std::vector<float>{0}, 0), Error);
  EXPECT_THROW(query(idx, std::vector<float>{0, 0}, 1), Error);
}

TEST(Query, SquaringDistancesPreservesWebsiteOrder) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rows = oracle::random_rows(rng, 60, 3, 7, 5);
    const auto idx = index_of(rows, 3);
    const auto v = oracle::random_vector(rng, 3, 5);
    const auto m = query(idx, v, 7);
    // Rank by squared distance independently.
    std::map<std::string, std::pair<double, std::string>> best;
    for (const auto& r : rows) {
      const auto key = std::make_pair(squared_l2(v, r.v), r.record_id);
      auto it = best.find(r.website);
      if (it == best.end() || key < it->second) best[r.website] = key;
    }
    std::vector<std::pair<std::pair<double, std::string>, std::string>> ranked;
    for (const auto& [site, key] : best) ranked.push_back({key, site});
    std::sort(ranked.begin(), ranked.end());
    ASSERT_EQ(m.size(), ranked.size());
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m[i].website_id, ranked[i].second);
  }
}

TEST(Index, AppendValidates) {
  EmbeddingIndex idx(2, "fp");
  idx.append(std::vector<float>{0, 0}, "a", "r1");
  EXPECT_THROW(idx.append(std::vector<float>{1, 1}, "a", "r1"), Error);
  EXPECT_THROW(idx.append(std::vector<float>{1}, "a", "r2"), Error);
  EXPECT_THROW(idx.append(std::vector<float>{1, std::numeric_limits<float>::infinity()}, "a", "r3"), Error);
  EXPECT_EQ(idx.rows(), 1u);
  EXPECT_THROW(idx.set_threshold(0), Error);
  EXPECT_THROW(idx.set_threshold(std::nan("")), Error);
}

TEST(Classify, StrictThreshold) {
  EmbeddingIndex idx(1, "fp");
  idx.append(std::vector<float>{0}, "a", "r1");
  EXPECT_EQ(classify(idx, std::vector<float>{5}).verdict, Verdict::kNoThreshold);
  idx.set_threshold(8);
  EXPECT_EQ(classify(idx, std::vector<float>{5}).verdict, Verdict::kPhishing);
  EXPECT_EQ(classify(idx, std::vector<float>{12}).verdict, Verdict::kBenign);
  EXPECT_EQ(classify(idx, std::vector<float>{8}).verdict, Verdict::kBenign);
  const auto r = classify(idx, std::vector<float>{5}, 5, "q");
  EXPECT_EQ(r.query_record, "q");
  EXPECT_DOUBLE_EQ(r.min_distance, r.top_matches.front().distance);
}

TEST(Classify, VerdictMonotoneInThreshold) {
  std::mt19937_64 rng(3);
  const auto rows = oracle::random_rows(rng, 40, 3, 5, 6);
  auto idx = index_of(rows, 3);
  for (int q = 0; q < 50; ++q) {
    const auto v = oracle::random_vector(rng, 3, 6);
    bool phishing_seen = false;
    for (double tau = 0.25; tau < 12; tau += 0.25) {
      idx.set_threshold(tau);
      const bool p = classify(idx, v).verdict == Verdict::kPhishing;
      EXPECT_FALSE(phishing_seen && !p);
      phishing_seen = phishing_seen || p;
    }
  }
}

TEST(Threshold, PerfectlySeparated) {
  EXPECT_DOUBLE_EQ(select_threshold(std::vector<double>{1, 2}, std::vector<double>{10, 11}), 6.0);
}

TEST(Threshold, InterleavedExample) {
  EXPECT_DOUBLE_EQ(select_threshold(std::vector<double>{1, 3, 9}, std::vector<double>{2, 8, 10}), 5.5);
}

TEST(Threshold, DegenerateSingleValue) {
  const double t = select_threshold(std::vector<double>{4}, std::vector<double>{4});
  EXPECT_GT(t, 0.0);
  EXPECT_THROW(select_threshold(std::vector<double>{}, std::vector<double>{1}), Error);
}

TEST(Threshold, MatchesExhaustiveGrid) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const int np = std::uniform_int_distribution<int>(1, 30)(rng), nb = std::uniform_int_distribution<int>(1, 30)(rng);
    std::uniform_int_distribution<int> lattice(0, 20);
    std::vector<double> p, b;
    for (int i = 0; i < np; ++i) p.push_back(0.5 * lattice(rng));
    for (int i = 0; i < nb; ++i) b.push_back(0.5 * lattice(rng) + 2);
    ASSERT_EQ(select_threshold(p, b), oracle::eer_threshold(p, b)) << "trial " << trial;
  }
}

TEST(Index, PersistenceRoundTripBitExact) {
  std::mt19937_64 rng(5);
  const auto rows = oracle::random_rows(rng, 57, 16, 9, 1000);
  auto idx = index_of(rows, 16);
  idx.set_threshold(3.25);
  const auto dir = fresh_dir("index_rt");
  save_index(idx, dir / "a.idx");
  const auto back = load_index(dir / "a.idx");
  EXPECT_EQ(back, idx);
  save_index(back, dir / "b.idx");
  EXPECT_EQ(read_file_bytes(dir / "a.idx"), read_file_bytes(dir / "b.idx"));
}

TEST(Index, CorruptionDetected) {
  std::mt19937_64 rng(6);
  const auto idx = index_of(oracle::random_rows(rng, 20, 8, 4, 100), 8);
  const auto dir = fresh_dir("index_bad");
  save_index(idx, dir / "a.idx");
  const auto bytes = read_file_bytes(dir / "a.idx");

  auto truncated = bytes;
  truncated.resize(bytes.size() - 7);
  write_file_atomic(dir / "t.idx", truncated);
  EXPECT_THROW(load_index(dir / "t.idx"), Error);

  for (const std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 2}) {
    auto flipped = bytes;
    flipped[pos] ^= 0x40;
    write_file_atomic(dir / "f.idx", flipped);
    EXPECT_THROW(load_index(dir / "f.idx"), Error) << "byte " << pos;
  }
  auto magic = bytes;
  magic[0] = 'X';
  write_file_atomic(dir / "m.idx", magic);
  EXPECT_THROW(load_index(dir / "m.idx"), Error);
  EXPECT_THROW(load_index(dir / "missing.idx"), Error);
}

class ModelIndexFixture : public ::testing::Test {
 protected:
  ModelIndexFixture() : model_(build_model(tiny_config(), 2)), records_(pool_records({3, 2, 2})) {}
  ModelState model_;
  std::vector<Screenshot> records_;
  SyntheticImages images_;
};

TEST_F(ModelIndexFixture, BuildOneRowPerScreenshot) {
  const auto idx = build_index(model_, records_, images_);
  EXPECT_EQ(idx.rows(), records_.size());
  EXPECT_EQ(idx.dim(), model_.embedding_dim());
  EXPECT_EQ(idx.fingerprint(), model_fingerprint(model_));
  EXPECT_FALSE(idx.threshold().has_value());
  const auto again = build_index(model_, records_, images_, 3);
  ASSERT_EQ(again.vectors().size(), idx.vectors().size());
  for (std::size_t i = 0; i < idx.vectors().size(); ++i) EXPECT_NEAR(again.vectors()[i], idx.vectors()[i], 1e-5);
  EXPECT_THROW(build_index(model_, {}, images_), Error);
}

TEST_F(ModelIndexFixture, SingleRecordIndex) {
  const auto idx = build_index(model_, {records_[0]}, images_);
  std::mt19937_64 rng(1);
  const auto r = predict(idx, model_, oracle::random_image(rng));
  EXPECT_EQ(r.top_matches.size(), 1u);
  EXPECT_EQ(r.top_matches[0].website_id, "w0");
}

TEST_F(ModelIndexFixture, TrainingScreenshotIsPhishingSide) {
  auto idx = build_index(model_, records_, images_);
  idx.set_threshold(1.0);
  const auto r = predict(idx, model_, images_.load(records_[4]), 5, records_[4].record_id);
  EXPECT_EQ(r.min_distance, 0.0);
  EXPECT_EQ(r.top_matches[0].record_id, records_[4].record_id);
  EXPECT_EQ(r.verdict, Verdict::kPhishing);
}

TEST_F(ModelIndexFixture, FingerprintMismatchRejected) {
  const auto idx = build_index(model_, records_, images_);
  const auto other = build_model(tiny_config(), 3);
  std::mt19937_64 rng(1);
  try {
    predict(idx, other, oracle::random_image(rng));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kFingerprint);
  }
  EXPECT_THROW(add_website(idx, other, {}, images_), Error);
}

TEST_F(ModelIndexFixture, AddWebsite) {
  auto idx = build_index(model_, records_, images_);
  idx.set_threshold(2.5);
  EXPECT_EQ(add_website(idx, model_, {}, images_), idx);

  std::vector<Screenshot> added = {{"new_0", "x.png", "new", SourceClass::kTrusted, {}, {}},
                                   {"new_1", "x.png", "new", SourceClass::kTrusted, {}, {}}};
  const auto grown = add_website(idx, model_, added, images_);
  EXPECT_EQ(grown.rows(), idx.rows() + 2);
  EXPECT_EQ(grown.threshold(), idx.threshold());
  const auto r = predict(grown, model_, images_.load(added[1]));
  EXPECT_EQ(r.top_matches[0].website_id, "new");
  EXPECT_EQ(r.top_matches[0].distance, 0.0);

  EXPECT_THROW(add_website(grown, model_, {added[0]}, images_), Error);
}

TEST_F(ModelIndexFixture, SharedIndexConcurrentReadsAndAppend) {
  SharedIndex shared(build_index(model_, records_, images_));
  const auto probe = embed(model_, images_.load(records_[0]));
  std::vector<std::thread> readers;
  std::atomic<int> bad{0};
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&] {
      for (int i = 0; i < 200; ++i)
        if (shared.query(probe, 3).front().record_id != records_[0].record_id) ++bad;
    });
  }
  shared.add_website(model_, {{"z_0", "x.png", "z", SourceClass::kTrusted, {}, {}}}, images_);
  for (auto& t : readers) t.join();
  EXPECT_EQ(bad.load(), 0);
  EXPECT_EQ(shared.snapshot().rows(), records_.size() + 1);
}

}  // namespace
}  // namespace phishmetric
