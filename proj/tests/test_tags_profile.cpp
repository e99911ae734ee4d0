#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "qkdsim/io.hpp"
#include "qkdsim/profile.hpp"
#include "qkdsim/tags.hpp"

using namespace qkdsim;

namespace {

TagStream random_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TagStream s;
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += rng() % 100000;
    s.push_back({t, static_cast<std::uint8_t>(rng() % 4)});
  }
  return s;
}

std::string binary_image(const TagStream& s) {
  std::ostringstream os(std::ios::binary);
  write_tags_binary(os, s);
  return os.str();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("qkdsim_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Channels, EncodeBasisAndOutcome) {
  for (int b = 0; b < 2; ++b) {
    for (int o = 0; o < 2; ++o) {
      const auto c = channel_of(b, o);
      EXPECT_LE(c, 3);
      EXPECT_EQ(basis_of(c), b);
      EXPECT_EQ(outcome_of(c), o);
    }
  }
}

TEST(BinaryTags, RoundTripAndLayout) {
  const auto s = random_stream(1000, 1);
  const auto img = binary_image(s);
  ASSERT_EQ(img.size(), kTagHeaderBytes + 1000 * kTagRecordBytes);
  EXPECT_EQ(img.substr(0, 4), "QTAG");
  EXPECT_EQ(static_cast<unsigned char>(img[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(img[5]), 0);
  // first record: little-endian time then channel
  std::uint64_t t = 0;
  for (int i = 7; i >= 0; --i) t = (t << 8) | static_cast<unsigned char>(img[16 + i]);
  EXPECT_EQ(t, s.times[0]);
  EXPECT_EQ(static_cast<unsigned char>(img[24]), s.channels[0]);
  const auto back = parse_tags_binary(reinterpret_cast<const unsigned char*>(img.data()), img.size());
  EXPECT_TRUE(back == s);
}

TEST(BinaryTags, RejectsCorruptInput) {
  const auto s = random_stream(10, 2);
  auto img = binary_image(s);
  auto parse = [](const std::string& x) {
    return parse_tags_binary(reinterpret_cast<const unsigned char*>(x.data()), x.size());
  };
  EXPECT_THROW(parse(img.substr(0, img.size() - 1)), FormatError);
  auto bad = img;
  bad[0] = 'X';
  EXPECT_THROW(parse(bad), FormatError);
  bad = img;
  bad[4] = 2;
  EXPECT_THROW(parse(bad), FormatError);
  bad = img;
  bad[16 + 8] = 7;
  EXPECT_THROW(parse(bad), FormatError);
  bad = img;
  bad[16 + kTagRecordBytes + 7] = 0;  // second time below the first
  bad[16 + 7] = static_cast<char>(0x7f);
  EXPECT_THROW(parse(bad), FormatError);
  EXPECT_NO_THROW(parse(img.substr(0, 16)));
}

TEST(CsvTags, RoundTripAndErrors) {
  const auto s = random_stream(500, 3);
  std::stringstream ss;
  write_tags_csv(ss, s);
  EXPECT_TRUE(read_tags_csv(ss) == s);
  std::istringstream bad_header("t,ch\n1,0\n");
  EXPECT_THROW(read_tags_csv(bad_header), FormatError);
  std::istringstream bad_channel("time_ps,channel\n1,4\n");
  EXPECT_THROW(read_tags_csv(bad_channel), FormatError);
  std::istringstream decreasing("time_ps,channel\n5,0\n4,1\n");
  EXPECT_THROW(read_tags_csv(decreasing), FormatError);
  std::istringstream junk("time_ps,channel\n5x,0\n");
  EXPECT_THROW(read_tags_csv(junk), FormatError);
}

TEST(TagFiles, FormatIsDetectedFromContent) {
  const auto s = random_stream(200, 4);
  const auto bin = temp_path("a.qtag"), csv = temp_path("a.csv");
  write_file_atomic(bin.string(), [&](std::ostream& os) { write_tags_binary(os, s); }, true);
  write_file_atomic(csv.string(), [&](std::ostream& os) { write_tags_csv(os, s); });
  EXPECT_TRUE(read_tags_file(bin.string()) == s);
  EXPECT_TRUE(read_tags_file(csv.string()) == s);
  EXPECT_FALSE(std::filesystem::exists(bin.string() + ".tmp"));
  std::filesystem::remove(bin);
  std::filesystem::remove(csv);
  EXPECT_THROW(read_tags_file("/nonexistent/file.qtag"), FormatError);
}

TEST(BinaryTags, ParsesAtLeastTenMillionTagsPerSecond) {
  const auto s = random_stream(5'000'000, 5);
  const auto img = binary_image(s);
  const auto* p = reinterpret_cast<const unsigned char*>(img.data());
  double best = 0.0;
  for (int rep = 0; rep < 3; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto back = parse_tags_binary(p, img.size());
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_EQ(back.size(), s.size());
    best = std::max(best, static_cast<double>(s.size()) / dt);
  }
  EXPECT_GE(best, 1e7) << best << " tags/s";
}

TEST(Profiles, TemplatesSpanRequestedRange) {
  const auto tri = triangular_profile(80.0, 60.0, 300.0, 1.0);
  ASSERT_EQ(tri.bins.size(), 300u);
  double lo = 1e9, hi = 0;
  for (const auto& b : tri.bins) {
    lo = std::min(lo, b.loss_db);
    hi = std::max(hi, b.loss_db);
  }
  EXPECT_NEAR(lo, 60.0, 0.2);
  EXPECT_NEAR(hi, 80.0, 0.2);
  EXPECT_NEAR(tri.bins.front().loss_db, tri.bins.back().loss_db, 1e-9);
  const auto el = elevation_profile(60.0, 80.0, 100.0, 1.0);
  EXPECT_GT(el.bins.front().loss_db, el.bins[50].loss_db);
  EXPECT_NEAR(el.bins[50].loss_db, 60.0, 0.01);
  const auto c = constant_profile(40.0, 1.0, 0.1);
  EXPECT_EQ(c.bins.size(), 10u);
  EXPECT_NEAR(c.end_time(), 1.0, 1e-12);
  const auto joined = concatenate(c, c);
  EXPECT_NEAR(joined.end_time(), 2.0, 1e-12);
  EXPECT_NO_THROW(joined.validate());
}

TEST(Profiles, CoverageErrors) {
  PassProfile p;
  p.bin_width_s = 1.0;
  p.bins = {{0.0, 40.0}, {1.0, 41.0}, {3.0, 42.0}};
  EXPECT_THROW(p.require_coverage(0.0, 4.0), CoverageError);  // gap between 2 and 3
  EXPECT_NO_THROW(p.require_coverage(0.0, 1.5));
  EXPECT_THROW(p.require_coverage(-1.0, 1.0), CoverageError);
  p.bins = {{0.0, 40.0}, {1.0, 41.0}};
  EXPECT_THROW(p.require_coverage(0.0, 2.5), CoverageError);
  p.bins = {{0.0, 40.0}, {0.0, 41.0}};
  EXPECT_THROW(p.validate(), FormatError);
  p.bins = {{0.0, -1.0}};
  EXPECT_THROW(p.validate(), FormatError);
}

TEST(Profiles, CsvParsing) {
  std::istringstream ok("t_s,loss_db,background_cps\n0,60,100\n0.5,61,200\n1.0,62,300\n");
  const auto p = read_profile_csv(ok);
  ASSERT_EQ(p.bins.size(), 3u);
  EXPECT_NEAR(p.bin_width_s, 0.5, 1e-12);
  EXPECT_EQ(p.bins[2].background_cps, 300.0);
  std::istringstream two("t_s,loss_db\n0,60\n1,61\n");
  EXPECT_TRUE(std::isnan(read_profile_csv(two).bins[0].background_cps));
  std::istringstream header("time,loss\n0,60\n");
  EXPECT_THROW(read_profile_csv(header), FormatError);
  std::istringstream empty("");
  EXPECT_THROW(read_profile_csv(empty), FormatError);
  std::istringstream nonnum("t_s,loss_db\n0,abc\n");
  EXPECT_THROW(read_profile_csv(nonnum), FormatError);
  std::istringstream fields("t_s,loss_db\n0,60,3\n");
  EXPECT_THROW(read_profile_csv(fields), FormatError);
}

TEST(NoiseProfiles, ParsingAndSampleAndHold) {
  std::istringstream ok("t_s,counts_per_s\n0,100\n10,500\n");
  const auto n = read_noise_profile_csv(ok);
  EXPECT_EQ(n.at(-5.0), 100.0);
  EXPECT_EQ(n.at(9.99), 100.0);
  EXPECT_EQ(n.at(10.0), 500.0);
  EXPECT_EQ(n.at(1e6), 500.0);
  std::istringstream empty("");
  EXPECT_THROW(read_noise_profile_csv(empty), FormatError);
  std::istringstream no_rows("t_s,counts_per_s\n");
  EXPECT_THROW(read_noise_profile_csv(no_rows), FormatError);
  std::istringstream back("t_s,counts_per_s\n1,1\n1,2\n");
  EXPECT_THROW(read_noise_profile_csv(back), FormatError);
  std::istringstream neg("t_s,counts_per_s\n1,-1\n");
  EXPECT_THROW(read_noise_profile_csv(neg), FormatError);
  const auto p = with_background(constant_profile(50.0, 20.0, 5.0), n);
  EXPECT_EQ(p.bins[0].background_cps, 100.0);
  EXPECT_EQ(p.bins[2].background_cps, 500.0);
}
