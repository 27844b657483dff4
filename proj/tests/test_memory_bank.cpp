#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "gcm/memory_bank.hpp"
#include "test_util.hpp"

using namespace gcm;
using ad::Value;
using gcm::testing::normal_vector;

namespace {

std::vector<double> filled(std::size_t d, double v) { return std::vector<double>(d, v); }

struct LrciFixture : ::testing::Test {
  std::mt19937_64 rng{31};
  nn::ParameterStore store;
  nn::Mlp2 scorer{store, "lrci.or", 4, 4, 1, rng};
  nn::Mlp2 composer{store, "lrci.and", 8, 4, 4, rng};
};

}  // namespace

TEST(MemoryBank, ReadAfterWriteAndVersioning) {
  MemoryBank bank(3, 2);
  bank.write("v", 5, filled(3, 1.5));
  auto e = bank.lookup("v", 5);
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(e->map, filled(3, 1.5));
  EXPECT_EQ(e->version, 1u);
  bank.write("v", 5, filled(3, -2.0));
  e = bank.lookup("v", 5);
  EXPECT_EQ(e->map, filled(3, -2.0));
  EXPECT_EQ(e->version, 2u);
  EXPECT_FALSE(bank.lookup("v", 6).has_value());
  EXPECT_FALSE(bank.lookup("w", 5).has_value());
  EXPECT_EQ(bank.size(), 1u);
}

TEST(MemoryBank, WindowExcludesTheReadingClip) {
  MemoryBank bank(2, 3);
  bank.write("v", 10, filled(2, 7.0));
  const BankView view = bank.read_window("v", 10);
  ASSERT_EQ(view.slots.size(), 6u);
  for (const auto& s : view.slots) {
    EXPECT_NE(s.offset, 0);
    EXPECT_NE(s.timestamp, 10);
    EXPECT_FALSE(s.available);
  }
}

TEST(MemoryBank, EmptyBankGivesAllMaskedFullWindow) {
  MemoryBank bank(4, 30);
  const BankView view = bank.read_window("v", 100);
  ASSERT_EQ(view.slots.size(), 60u);
  EXPECT_EQ(view.available_count(), 0u);
  EXPECT_EQ(view.slots.front().offset, -30);
  EXPECT_EQ(view.slots.back().offset, 30);
  for (const auto& s : view.slots) EXPECT_EQ(s.map, filled(4, 0.0));
}

TEST(MemoryBank, WindowBoundsAndOrder) {
  MemoryBank bank(1, 2);
  for (std::int64_t t : {-3, -2, -1, 1, 3}) bank.write("v", t, filled(1, static_cast<double>(t)));
  bank.write("other", 1, filled(1, 99.0));
  const BankView view = bank.read_window("v", 0);
  ASSERT_EQ(view.slots.size(), 4u);
  EXPECT_EQ(view.available_count(), 3u);
  const std::int64_t expected_ts[] = {-2, -1, 1, 2};
  const bool expected_avail[] = {true, true, true, false};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(view.slots[i].timestamp, expected_ts[i]);
    EXPECT_EQ(view.slots[i].available, expected_avail[i]);
    if (expected_avail[i]) {
      EXPECT_EQ(view.slots[i].map[0], static_cast<double>(expected_ts[i]));
    }
  }
  MemoryBank none(1, 0);
  none.write("v", 1, filled(1, 1.0));
  EXPECT_TRUE(none.read_window("v", 0).slots.empty());
}

TEST(MemoryBank, ViewIsASnapshot) {
  MemoryBank bank(2, 1);
  bank.write("v", 1, filled(2, 1.0));
  const BankView before = bank.read_window("v", 0);
  bank.write("v", 1, filled(2, 5.0));
  bank.write("v", -1, filled(2, 3.0));
  EXPECT_EQ(before.slots[1].map, filled(2, 1.0));
  EXPECT_EQ(before.slots[1].version, 1u);
  EXPECT_FALSE(before.slots[0].available);
  const BankView after = bank.read_window("v", 0);
  EXPECT_EQ(after.slots[1].version, 2u);
  EXPECT_EQ(after.available_count(), 2u);
}

TEST(MemoryBank, WriteValidation) {
  MemoryBank bank(3, 2);
  EXPECT_THROW(bank.write("v", 0, filled(2, 0.0)), DimensionError);
  std::vector<double> bad = filled(3, 0.0);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(bank.write("v", 0, bad), NumericError);
  bad[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(bank.write("v", 0, bad), NumericError);
  EXPECT_EQ(bank.size(), 0u);
  EXPECT_THROW(MemoryBank(0, 2), ArgumentError);
  EXPECT_THROW(MemoryBank(3, -1), ArgumentError);
}

TEST(MemoryBank, ConcurrentWritersAndReaders) {
  MemoryBank bank(8, 4);
  std::vector<std::thread> pool;
  for (int w = 0; w < 4; ++w) {
    pool.emplace_back([&bank, w] {
      for (int t = 0; t < 200; ++t) {
        bank.write("v" + std::to_string(w), t, filled(8, static_cast<double>(t)));
        const BankView view = bank.read_window("v" + std::to_string(w), t);
        for (const auto& s : view.slots)
          if (s.available) {
            ASSERT_EQ(s.map, filled(8, static_cast<double>(s.timestamp)));
          }
      }
    });
  }
  for (auto& t : pool) t.join();
  EXPECT_EQ(bank.size(), 800u);
}

TEST(MemoryBank, SerializeRoundTripIsByteStable) {
  std::mt19937_64 rng(5);
  MemoryBank bank(5, 3);
  for (int v = 0; v < 3; ++v)
    for (std::int64_t t = 0; t < 7; ++t) bank.write("video" + std::to_string(v), t, normal_vector(5, rng));
  bank.write("video0", 2, normal_vector(5, rng));
  const std::string bytes = bank.serialize();
  const MemoryBank back = MemoryBank::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.d_map(), 5u);
  EXPECT_EQ(back.t_window(), 3);
  EXPECT_EQ(back.lookup("video0", 2)->version, 2u);
  EXPECT_EQ(back.lookup("video1", 4)->map, bank.lookup("video1", 4)->map);

  const auto path = std::filesystem::temp_directory_path() / "gcm_bank_roundtrip.bin";
  bank.save(path.string());
  EXPECT_EQ(MemoryBank::load(path.string()).serialize(), bytes);
  std::filesystem::remove(path);
}

TEST(MemoryBank, LoadErrors) {
  MemoryBank bank(2, 1);
  bank.write("v", 0, filled(2, 1.0));
  const std::string bytes = bank.serialize();
  EXPECT_THROW(MemoryBank::deserialize("NOTABANK" + bytes.substr(8)), ParseError);
  EXPECT_THROW(MemoryBank::deserialize(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(MemoryBank::deserialize(bytes + "x"), ParseError);
  EXPECT_THROW(MemoryBank::deserialize(""), ParseError);
  EXPECT_THROW(MemoryBank::load("/nonexistent/dir/bank.bin"), IoError);
}

TEST_F(LrciFixture, EmptyWindowGivesZeroContext) {
  const MemoryBank bank(4, 3);
  const Value current = Value::vector(normal_vector(4, rng));
  const LrciResult r = lrci_compose(current, bank.read_window("v", 0), scorer, composer);
  for (double v : r.context.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.record.argmax, -1);
  EXPECT_EQ(r.record.lambdas, std::vector<double>(6, 0.0));
  const Value expected = composer(ad::concat({current, Value::zeros({4})}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.output.at(i), expected.at(i));

  const MemoryBank no_window(4, 0);
  const LrciResult z = lrci_compose(current, no_window.read_window("v", 0), scorer, composer);
  for (double v : z.context.data()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(z.record.timestamps.empty());
}

TEST_F(LrciFixture, SingleAvailableSlotIsSelectedWithWeightOne) {
  MemoryBank bank(4, 3);
  const auto stored = normal_vector(4, rng);
  bank.write("v", 12, stored);
  const LrciResult r = lrci_compose(Value::vector(normal_vector(4, rng)), bank.read_window("v", 10), scorer, composer);
  EXPECT_EQ(r.record.timestamps, (std::vector<std::int64_t>{7, 8, 9, 11, 12, 13}));
  EXPECT_EQ(r.record.lambdas[4], 1.0);
  EXPECT_EQ(r.record.argmax, 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.context.at(i), stored[i]);
}

TEST_F(LrciFixture, NoGradientReachesTheBank) {
  MemoryBank bank(4, 2);
  for (std::int64_t t : {1, 3, 4}) bank.write("v", t, normal_vector(4, rng));
  const std::string before = bank.serialize();
  nn::ParameterStore cur;
  const Value current = gcm::testing::normal_param(cur, "current", {4}, rng);
  const BankView view = bank.read_window("v", 2);
  const LrciResult r = lrci_compose(current, view, scorer, composer);
  ad::backward(ad::sum(r.output));
  EXPECT_EQ(bank.serialize(), before);
  double norm = 0.0;
  for (double g : cur.at("current").grad()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
  // The context enters as a constant: its gradient w.r.t. current is zero
  // and the whole map matches finite differences over current alone.
  const Value w = Value::vector(normal_vector(4, rng));
  EXPECT_LT(gcm::testing::fd_error(cur, [&] { return ad::sum(ad::mul(lrci_compose(current, view, scorer, composer).output, w)); }),
            1e-6);
  EXPECT_LT(gcm::testing::fd_error(store, [&] { return ad::sum(ad::mul(lrci_compose(current, view, scorer, composer).output, w)); }),
            1e-5);
}

TEST_F(LrciFixture, WidthMismatchIsDimensionError) {
  const MemoryBank bank(5, 1);
  EXPECT_THROW(lrci_compose(Value::zeros({4}), bank.read_window("v", 0), scorer, composer), DimensionError);
}
