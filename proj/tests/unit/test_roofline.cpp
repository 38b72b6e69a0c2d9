// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "qtk/error.hpp"
#include "qtk/roofline.hpp"

namespace qtk {
namespace {

TEST(Roofline, PrecisionNames) {
  const PrecisionConfig c = PrecisionConfig::parse("W4A8KV4");
  EXPECT_EQ(c.weight_bits, 4);
  EXPECT_EQ(c.act_bits, 8);
  EXPECT_EQ(c.kv_bits, 4);
  EXPECT_EQ(c.compute, ComputeClass::kInt8);
  EXPECT_EQ(c.name(), "W4A8KV4");
  EXPECT_EQ(PrecisionConfig::parse("W4A16").compute, ComputeClass::kFp16);
  EXPECT_EQ(PrecisionConfig::parse("W4A16").name(), "W4A16");
  for (const char* bad : {"", "W4", "W4A8x", "w4a8", "W4A8KV", "W4A8KV4 "})
    EXPECT_THROW(PrecisionConfig::parse(bad), Error) << bad;
}

TEST(Roofline, A100Preset) {
  const HardwareSpec hw = HardwareSpec::a100();
  EXPECT_DOUBLE_EQ(hw.peak(ComputeClass::kFp16), 312e12);
  EXPECT_DOUBLE_EQ(hw.peak(ComputeClass::kInt8), 624e12);
  EXPECT_DOUBLE_EQ(hw.mem_bandwidth, 2e12);
  EXPECT_NO_THROW(hw.validate());
}

TEST(Roofline, IntensityAndBounds) {
  const HardwareSpec hw = HardwareSpec::a100();
  const PrecisionConfig w4a16 = PrecisionConfig::parse("W4A16");
  EXPECT_DOUBLE_EQ(gemm_intensity(1, w4a16), 4.0);
  EXPECT_DOUBLE_EQ(gemm_intensity(1, PrecisionConfig::parse("W8A8")), 2.0);
  EXPECT_TRUE(gemm_is_memory_bound(1, w4a16, hw));
  EXPECT_FALSE(gemm_is_memory_bound(1024, w4a16, hw));
  EXPECT_DOUBLE_EQ(gemm_attainable(1024, w4a16, hw), 312e12);
}

TEST(Roofline, Crossovers) {
  const HardwareSpec hw = HardwareSpec::a100();
  const auto p = [](const char* n) { return PrecisionConfig::parse(n); };
  EXPECT_EQ(crossover(p("W4A16"), p("W8A8"), hw, 1, 1024), 78u);
  EXPECT_EQ(crossover(p("W8A8"), p("W4A16"), hw, 1, 1024), std::nullopt);
  for (std::size_t m = 1; m <= 1024; ++m) {
    const double w4a8 = gemm_attainable(m, p("W4A8"), hw);
    ASSERT_GE(w4a8, gemm_attainable(m, p("W4A16"), hw));
    ASSERT_GE(w4a8, gemm_attainable(m, p("W8A8"), hw));
  }
}

TEST(Roofline, AttentionTurningPoint) {
  const HardwareSpec hw = HardwareSpec::a100();
  const AttentionBound fp32 = attention_bound(4, 5, Accumulation::kFp32, hw);
  EXPECT_NEAR(fp32.turning_point, 9.8, 0.2);
  const AttentionBound fp16 = attention_bound(4, 5, Accumulation::kFp16, hw);
  EXPECT_NEAR(fp16.turning_point, 19.6, 0.2);
  EXPECT_DOUBLE_EQ(attention_bound(4, 2, Accumulation::kFp32, hw).intensity, 8.0);
  EXPECT_EQ(attention_bound(4, 2, Accumulation::kFp32, hw).bound, Bound::kMemoryBound);
  EXPECT_EQ(fp32.bound, Bound::kComputeBound);
  EXPECT_EQ(attention_bound(16, 0, Accumulation::kFp32, hw).bound, Bound::kMemoryBound);
}

TEST(Roofline, ParsesHardwareFiles) {
  const HardwareSpec hw = HardwareSpec::parse(
      "# toy device\nname = toy\nmem_bandwidth = 1e12\npeak.fp16 = 1e14\npeak.int8 = 2e14\n"
      "peak.int4 = 4e14\npeak.fp32_cuda = 1e13\n");
  EXPECT_EQ(hw.name, "toy");
  EXPECT_DOUBLE_EQ(hw.peak(ComputeClass::kFp16Cuda), 2e13);
  EXPECT_THROW(HardwareSpec::parse("name = x\nbogus = 1\n"), Error);
  EXPECT_THROW(HardwareSpec::parse("name = x\nmem_bandwidth = -1\n"), Error);
  EXPECT_THROW(HardwareSpec::load("/nonexistent/hw.txt"), Error);
}

TEST(Roofline, SweepAndExports) {
  const auto pts = roofline_sweep({PrecisionConfig::parse("W4A16"), PrecisionConfig::parse("W8A8")},
                                  HardwareSpec::a100(), 1, 4);
  ASSERT_EQ(pts.size(), 8u);
  const std::string csv = roofline_csv(pts);
  EXPECT_EQ(csv.rfind("m,config,ops_per_s,bound\n", 0), 0u);
  EXPECT_NE(csv.find("1,W4A16,8000000000000,memory"), std::string::npos);
  const std::string svg = roofline_svg(pts, "t");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_THROW(roofline_sweep({PrecisionConfig::parse("W8A8")}, HardwareSpec::a100(), 5, 4), Error);
}

}  // namespace
}  // namespace qtk
