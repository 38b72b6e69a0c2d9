// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/roofline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "qtk/error.hpp"

namespace qtk {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const std::map<std::string, ComputeClass>& peak_keys() {
  static const std::map<std::string, ComputeClass> keys = {
      {"peak.fp16", ComputeClass::kFp16},         {"peak.int8", ComputeClass::kInt8},
      {"peak.int4", ComputeClass::kInt4},         {"peak.fp32_cuda", ComputeClass::kFp32Cuda},
      {"peak.fp16_cuda", ComputeClass::kFp16Cuda}};
  return keys;
}

}  // namespace

std::string to_string(ComputeClass c) {
  switch (c) {
    case ComputeClass::kFp16: return "fp16";
    case ComputeClass::kInt8: return "int8";
    case ComputeClass::kInt4: return "int4";
    case ComputeClass::kFp32Cuda: return "fp32_cuda";
    case ComputeClass::kFp16Cuda: return "fp16_cuda";
  }
  return "unknown";
}

double HardwareSpec::peak(ComputeClass c) const {
  const auto it = peak_ops.find(c);
  if (it == peak_ops.end()) {
    // CUDA-core fp16 runs at twice the fp32 rate when not given explicitly.
    if (c == ComputeClass::kFp16Cuda && peak_ops.count(ComputeClass::kFp32Cuda))
      return 2.0 * peak_ops.at(ComputeClass::kFp32Cuda);
    fail(ErrorKind::kInvalidConfig, "hardware '" + name + "' has no peak for " + to_string(c));
  }
  return it->second;
}

void HardwareSpec::validate() const {
  require(mem_bandwidth > 0.0 && std::isfinite(mem_bandwidth), ErrorKind::kInvalidConfig,
          "hardware bandwidth must be positive");
  for (const auto& [c, v] : peak_ops)
    require(v > 0.0 && std::isfinite(v), ErrorKind::kInvalidConfig,
            "peak for " + to_string(c) + " must be positive");
}

HardwareSpec HardwareSpec::a100() {
  HardwareSpec hw;
  hw.name = "A100";
  hw.peak_ops = {{ComputeClass::kFp16, 312e12},
                 {ComputeClass::kInt8, 624e12},
                 {ComputeClass::kInt4, 1248e12},
                 {ComputeClass::kFp32Cuda, 19.6e12},
                 {ComputeClass::kFp16Cuda, 39.2e12}};
  hw.mem_bandwidth = 2e12;
  return hw;
}

HardwareSpec HardwareSpec::parse(const std::string& text) {
  HardwareSpec hw;
  hw.name = "custom";
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kInvalidConfig,
            "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "name") {
      hw.name = value;
      continue;
    }
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(value, &used);
      require(used == value.size(), ErrorKind::kInvalidConfig, "trailing characters");
    } catch (const std::logic_error&) {
      fail(ErrorKind::kInvalidConfig, "line " + std::to_string(lineno) + ": bad number '" + value + "'");
    }
    if (key == "mem_bandwidth") {
      hw.mem_bandwidth = v;
    } else if (const auto it = peak_keys().find(key); it != peak_keys().end()) {
      hw.peak_ops[it->second] = v;
    } else {
      fail(ErrorKind::kInvalidConfig, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  hw.validate();
  return hw;
}

HardwareSpec HardwareSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string PrecisionConfig::name() const {
  std::string s = "W" + std::to_string(weight_bits) + "A" + std::to_string(act_bits);
  if (kv_bits != 16) s += "KV" + std::to_string(kv_bits);
  return s;
}

PrecisionConfig PrecisionConfig::parse(const std::string& name) {
  PrecisionConfig cfg;
  int w = 0, a = 0, kv = 16;
  char tail[8] = {};
  const int n = std::sscanf(name.c_str(), "W%dA%dKV%d%7s", &w, &a, &kv, tail);
  require(n == 2 || n == 3, ErrorKind::kInvalidConfig, "cannot parse precision '" + name + "'");
  auto valid = [](int b) { return b == 4 || b == 8 || b == 16; };
  require(valid(w) && valid(a) && valid(kv), ErrorKind::kInvalidConfig,
          "unsupported bit widths in '" + name + "'");
  cfg.weight_bits = w;
  cfg.act_bits = a;
  cfg.kv_bits = kv;
  cfg.compute = a == 16 ? ComputeClass::kFp16 : a == 8 ? ComputeClass::kInt8 : ComputeClass::kInt4;
  require(cfg.name() == name || cfg.name() + "KV16" == name, ErrorKind::kInvalidConfig,
          "cannot parse precision '" + name + "'");
  require(w <= a || a == 4, ErrorKind::kInvalidConfig,
          "weights wider than activations are not modeled: '" + name + "'");
  return cfg;
}

double gemm_intensity(std::size_t m, const PrecisionConfig& cfg) {
  require(m >= 1, ErrorKind::kInvalidInput, "gemm_intensity: m must be >= 1");
  return 2.0 * static_cast<double>(m) * (8.0 / cfg.weight_bits);
}

double gemm_attainable(std::size_t m, const PrecisionConfig& cfg, const HardwareSpec& hw) {
  return std::min(hw.peak(cfg.compute), gemm_intensity(m, cfg) * hw.mem_bandwidth);
}

bool gemm_is_memory_bound(std::size_t m, const PrecisionConfig& cfg, const HardwareSpec& hw) {
  return gemm_intensity(m, cfg) * hw.mem_bandwidth < hw.peak(cfg.compute);
}

AttentionBound attention_bound(int kv_bits, int dequant_ops_per_elem, Accumulation accum,
                               const HardwareSpec& hw) {
  require(kv_bits > 0 && dequant_ops_per_elem >= 0, ErrorKind::kInvalidInput,
          "attention_bound: inputs must be positive");
  const double elems_per_byte = 8.0 / kv_bits;
  AttentionBound out;
  out.intensity = 2.0 * elems_per_byte + dequant_ops_per_elem * elems_per_byte;
  const ComputeClass cuda = accum == Accumulation::kFp32 ? ComputeClass::kFp32Cuda
                                                         : ComputeClass::kFp16Cuda;
  out.turning_point = hw.peak(cuda) / hw.mem_bandwidth;
  out.margin = out.intensity / out.turning_point;
  out.bound = out.intensity > out.turning_point ? Bound::kComputeBound : Bound::kMemoryBound;
  return out;
}

std::optional<std::size_t> crossover(const PrecisionConfig& a, const PrecisionConfig& b,
                                     const HardwareSpec& hw, std::size_t m_min, std::size_t m_max) {
  require(m_min >= 1 && m_min <= m_max, ErrorKind::kInvalidInput, "crossover: empty m range");
  bool a_ahead = false;
  for (std::size_t m = m_min; m <= m_max; ++m) {
    const double pa = gemm_attainable(m, a, hw);
    const double pb = gemm_attainable(m, b, hw);
    if (pa > pb) {
      a_ahead = true;
    } else if (a_ahead) {
      return m;
    }
  }
  return std::nullopt;
}

std::vector<RooflinePoint> roofline_sweep(const std::vector<PrecisionConfig>& configs,
                                          const HardwareSpec& hw, std::size_t m_min,
                                          std::size_t m_max) {
  require(m_min >= 1 && m_min <= m_max, ErrorKind::kInvalidInput, "roofline: empty m range");
  std::vector<RooflinePoint> pts;
  for (std::size_t m = m_min; m <= m_max; ++m)
    for (const auto& cfg : configs)
      pts.push_back({m, cfg.name(), gemm_attainable(m, cfg, hw),
                     gemm_is_memory_bound(m, cfg, hw) ? Bound::kMemoryBound : Bound::kComputeBound});
  return pts;
}

std::string roofline_csv(const std::vector<RooflinePoint>& points) {
  std::ostringstream out;
  out << "m,config,ops_per_s,bound\n";
  out << std::setprecision(17);
  for (const auto& p : points)
    out << p.m << ',' << p.config << ',' << p.ops_per_s << ','
        << (p.bound == Bound::kMemoryBound ? "memory" : "compute") << '\n';
  return out.str();
}

std::string roofline_svg(const std::vector<RooflinePoint>& points, const std::string& title) {
  constexpr double kW = 720, kH = 440, kL = 70, kR = 130, kT = 40, kB = 50;
  std::map<std::string, std::vector<const RooflinePoint*>> series;
  std::vector<std::string> order;
  double m_lo = 1e300, m_hi = 0, y_hi = 0;
  for (const auto& p : points) {
    if (!series.count(p.config)) order.push_back(p.config);
    series[p.config].push_back(&p);
    m_lo = std::min(m_lo, static_cast<double>(p.m));
    m_hi = std::max(m_hi, static_cast<double>(p.m));
    y_hi = std::max(y_hi, p.ops_per_s);
  }
  if (points.empty()) m_lo = m_hi = 1, y_hi = 1;
  const double lx0 = std::log10(m_lo), lx1 = std::max(std::log10(m_hi), lx0 + 1e-9);
  auto sx = [&](double m) { return kL + (std::log10(m) - lx0) / (lx1 - lx0) * (kW - kL - kR); };
  auto sy = [&](double y) { return kH - kB - y / y_hi * (kH - kT - kB); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
  out << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
      << kH - kB << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\">batch tokens m (log)</text>\n";
  out << "<text x=\"14\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 14 " << kH / 2
      << ")\" text-anchor=\"middle\">attainable TOPS</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = y_hi * i / 4;
    out << "<text x=\"" << kL - 6 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\">"
        << std::setprecision(0) << y / 1e12 << std::setprecision(2) << "</text>\n";
  }
  for (double m = std::pow(10.0, std::ceil(lx0)); m <= m_hi; m *= 10)
    out << "<text x=\"" << sx(m) << "\" y=\"" << kH - kB + 16 << "\" text-anchor=\"middle\">"
        << std::setprecision(0) << m << std::setprecision(2) << "</text>\n";
  std::size_t ci = 0;
  for (const auto& name : order) {
    const char* color = kColors[ci % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const RooflinePoint* p : series[name]) out << sx(static_cast<double>(p->m)) << ',' << sy(p->ops_per_s) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << kW - kR + 10 << "\" y=\"" << kT + 18 * (ci + 1) << "\" fill=\"" << color
        << "\">" << name << "</text>\n";
    ++ci;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace qtk
