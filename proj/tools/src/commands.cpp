// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "qtk/block_io.hpp"
#include "qtk/container.hpp"
#include "qtk/error.hpp"
#include "qtk/kv_cache.hpp"
#include "qtk/pipeline.hpp"
#include "qtk/roofline.hpp"
#include "qtk_cli/cli.hpp"

namespace qtk::cli {
namespace {

using nlohmann::ordered_json;

// Thrown for bad flag values detected after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr std::uint64_t kCalibSeedOffset = 1000;
constexpr std::uint64_t kEvalSeedOffset = 2000;

struct RecipeFlags {
  std::size_t group_size = 64;
  std::string alpha_smooth = "0.5";
  std::string alpha_output = "0.1";
  std::string clip_grid = "default";
  bool no_rotate = false;
  bool no_reorder = false;
  bool per_channel = false;
  int weight_bits = 4;
  int act_bits = 8;
  int kv_bits = 4;

  void add_to(CLI::App& app) {
    app.add_option("--group-size", group_size, "Weight group size g")->capture_default_str();
    app.add_option("--alpha-smooth", alpha_smooth, "SmoothAttention exponent, or 'off'")
        ->capture_default_str();
    app.add_option("--alpha-output", alpha_output, "Output-module smoothing exponent, or 'off'")
        ->capture_default_str();
    app.add_option("--clip-grid", clip_grid, "'default', 'off' or comma-separated ratios")
        ->capture_default_str();
    app.add_flag("--no-rotate", no_rotate, "Skip the Hadamard rotation");
    app.add_flag("--no-reorder", no_reorder, "Skip input-channel reordering");
    app.add_flag("--per-channel", per_channel, "Per-channel instead of per-group weights");
    app.add_option("--weight-bits", weight_bits, "4 or 16")->capture_default_str();
    app.add_option("--act-bits", act_bits, "8 or 16")->capture_default_str();
    app.add_option("--kv-bits", kv_bits, "4, 8 or 16")->capture_default_str();
  }

  static double number(const std::string& s, const char* flag) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError(std::string(flag) + ": not a number: '" + s + "'");
  }

  static std::optional<double> alpha(const std::string& s, const char* flag) {
    if (s == "off") return std::nullopt;
    return number(s, flag);
  }

  QuantRecipe recipe() const {
    QuantRecipe r;
    r.rotate = !no_rotate;
    r.reorder = !no_reorder;
    r.smooth_attention_alpha = alpha(alpha_smooth, "--alpha-smooth");
    r.output_smooth_alpha = alpha(alpha_output, "--alpha-output");
    if (clip_grid == "off") {
      r.clip_grid.clear();
    } else if (clip_grid != "default") {
      r.clip_grid.clear();
      std::istringstream in(clip_grid);
      std::string item;
      while (std::getline(in, item, ',')) r.clip_grid.push_back(number(item, "--clip-grid"));
    }
    r.weight_mode = per_channel ? WeightMode::kPerChannel : WeightMode::kPerGroup;
    r.group_size = group_size;
    r.weight_bits = weight_bits;
    r.act_bits = act_bits;
    r.kv_bits = kv_bits;
    return r;
  }
};

struct Inputs {
  std::string path;
  std::size_t tokens = 64;

  void add_to(CLI::App& app, const char* what) {
    app.add_option("--inputs", path, std::string("Container with tensor 'x' used as ") + what);
    app.add_option("--tokens", tokens, "Synthetic token count when --inputs is absent")
        ->capture_default_str();
  }

  Matrix load(std::size_t hidden, std::uint64_t seed) const {
    if (path.empty()) return make_synthetic_inputs(tokens, hidden, seed);
    return TensorContainer::load(path).get_matrix("x");
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIoError, "cannot write " + path);
  out << text;
  require(static_cast<bool>(out), ErrorKind::kIoError, "write failed for " + path);
}

ordered_json report_json(const FidelityReport& rep) {
  ordered_json j;
  j["tokens"] = rep.tokens;
  j["mse"] = rep.mse;
  j["max_error"] = rep.max_error;
  j["relative_error"] = rep.relative_error;
  j["layers"] = ordered_json::array();
  for (const auto& l : rep.layers)
    j["layers"].push_back({{"name", l.name}, {"mse", l.mse}, {"max_error", l.max_error}});
  return j;
}

std::vector<PrecisionConfig> parse_configs(const std::string& list) {
  std::vector<PrecisionConfig> out;
  std::istringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(PrecisionConfig::parse(item));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) throw UsageError("--configs: no precision configurations given");
  return out;
}

Matrix random_heavy(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::student_t_distribution<double> t(5.0);
  Matrix m(r, c);
  for (double& v : m.data()) v = t(rng);
  return m;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"qtk: W4A8KV4 quantization toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::uint64_t seed = 0;

  // make-block
  auto* make = app.add_subcommand("make-block", "Write a synthetic heavy-tailed block");
  BlockDims dims;
  std::string make_out, make_inputs;
  std::size_t make_tokens = 64;
  make->add_option("--seed", seed, "Generator seed")->capture_default_str();
  make->add_option("--out", make_out, "Output container")->required();
  make->add_option("--heads", dims.heads)->capture_default_str();
  make->add_option("--kv-heads", dims.kv_heads)->capture_default_str();
  make->add_option("--head-dim", dims.head_dim)->capture_default_str();
  make->add_option("--hidden", dims.hidden)->capture_default_str();
  make->add_option("--ffn", dims.ffn)->capture_default_str();
  make->add_option("--inputs", make_inputs, "Also write synthetic inputs (tensor 'x') here");
  make->add_option("--tokens", make_tokens, "Token count for --inputs")->capture_default_str();

  // quantize
  auto* quant = app.add_subcommand("quantize", "Apply the quantization recipe to a block");
  std::string quant_in, quant_out;
  RecipeFlags flags;
  Inputs calib;
  quant->add_option("input", quant_in, "Block container")->required();
  quant->add_option("--out", quant_out, "Quantized block container")->required();
  quant->add_option("--seed", seed, "Seed for synthetic calibration inputs")->capture_default_str();
  flags.add_to(*quant);
  calib.add_to(*quant, "calibration data");

  // eval
  auto* eval = app.add_subcommand("eval", "Fidelity of a quantized block against its float block");
  std::string eval_block, eval_qblock, eval_out;
  Inputs eval_inputs;
  eval->add_option("block", eval_block, "Float block container")->required();
  eval->add_option("quantized", eval_qblock, "Quantized block container")->required();
  eval->add_option("--seed", seed, "Seed for synthetic evaluation inputs")->capture_default_str();
  eval->add_option("--out", eval_out, "Write the JSON report here instead of stdout");
  eval_inputs.add_to(*eval, "evaluation data");

  // check
  auto* check = app.add_subcommand("check", "Run a self-test suite");
  std::string suite;
  check->add_option("suite", suite, "protective | lanes | gemm | kv")
      ->required()
      ->check(CLI::IsMember({"protective", "lanes", "gemm", "kv"}));
  check->add_option("--seed", seed, "Seed for randomized suites")->capture_default_str();

  // roofline
  auto* roof = app.add_subcommand("roofline", "Attainable throughput versus batch size");
  std::string hw_path, configs = "W4A16,W8A8,W4A8", roof_out = "roofline";
  long long m_min = 1, m_max = 1024;
  roof->add_option("--hw", hw_path, "Hardware key=value file (default: A100 preset)");
  roof->add_option("--configs", configs, "Comma-separated precisions")->capture_default_str();
  roof->add_option("--m-min", m_min)->capture_default_str();
  roof->add_option("--m-max", m_max)->capture_default_str();
  roof->add_option("--out", roof_out, "Output prefix for .csv and .svg")->capture_default_str();

  // kv-sim
  auto* kvsim = app.add_subcommand("kv-sim", "Decode a synthetic trace through the paged KV cache");
  std::size_t kv_heads = 2, q_heads = 4, head_dim = 64, kv_tokens = 200, page_size = kDefaultPageSize;
  int kv_bits = 4;
  kvsim->add_option("--kv-heads", kv_heads)->capture_default_str();
  kvsim->add_option("--heads", q_heads)->capture_default_str();
  kvsim->add_option("--head-dim", head_dim)->capture_default_str();
  kvsim->add_option("--tokens", kv_tokens)->capture_default_str();
  kvsim->add_option("--page-size", page_size)->capture_default_str();
  kvsim->add_option("--kv-bits", kv_bits)->capture_default_str();
  kvsim->add_option("--seed", seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*make) {
      dims.validate();
      const ToyBlock block = make_synthetic_block(dims, seed);
      block_to_container(block).save(make_out);
      if (!make_inputs.empty()) {
        TensorContainer c;
        c.set_meta("kind", "inputs");
        c.put_f64("x", make_synthetic_inputs(make_tokens, dims.hidden, seed + kEvalSeedOffset));
        c.save(make_inputs);
      }
      out << "wrote " << make_out << "\n";
      return kExitOk;
    }

    if (*quant) {
      const QuantRecipe recipe = flags.recipe();
      const ToyBlock block = block_from_container(TensorContainer::load(quant_in));
      try {
        recipe.validate(block.dims);
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      const Matrix x = calib.load(block.dims.hidden, seed + kCalibSeedOffset);
      const QuantizedBlock qb = apply_qoq(block, recipe, x);
      TensorContainer c = quantized_to_container(qb);
      c.set_meta("calibration.tokens", std::to_string(x.rows()));
      c.set_meta("calibration.source", calib.path.empty() ? "synthetic seed " + std::to_string(seed + kCalibSeedOffset)
                                                          : std::string("file"));
      c.save(quant_out);
      out << "wrote " << quant_out << "\n";
      return kExitOk;
    }

    if (*eval) {
      const ToyBlock block = block_from_container(TensorContainer::load(eval_block));
      const QuantizedBlock qb = quantized_from_container(TensorContainer::load(eval_qblock));
      const Matrix x = eval_inputs.load(block.dims.hidden, seed + kEvalSeedOffset);
      const std::string text = report_json(evaluate_fidelity(block, qb, x)).dump(2) + "\n";
      if (eval_out.empty()) out << text;
      else write_text(eval_out, text);
      return kExitOk;
    }

    if (*check) {
      const CheckResult r = run_check(suite, seed);
      out << suite << ": " << (r.ok ? "PASS" : "FAIL") << " - " << r.summary << "\n";
      return r.ok ? kExitOk : kExitFailure;
    }

    if (*roof) {
      if (m_min < 1 || m_max < m_min) throw UsageError("empty m range [" + std::to_string(m_min) + ", " + std::to_string(m_max) + "]");
      const std::vector<PrecisionConfig> cfgs = parse_configs(configs);
      const HardwareSpec hw = hw_path.empty() ? HardwareSpec::a100() : HardwareSpec::load(hw_path);
      const auto lo = static_cast<std::size_t>(m_min), hi = static_cast<std::size_t>(m_max);
      const auto pts = roofline_sweep(cfgs, hw, lo, hi);
      write_text(roof_out + ".csv", roofline_csv(pts));
      write_text(roof_out + ".svg", roofline_svg(pts, hw.name + " roofline"));
      out << "hardware " << hw.name << "\n";
      for (std::size_t i = 0; i < cfgs.size(); ++i)
        for (std::size_t j = 0; j < cfgs.size(); ++j) {
          if (i == j) continue;
          if (const auto m = crossover(cfgs[i], cfgs[j], hw, lo, hi))
            out << "crossover " << cfgs[i].name() << " -> " << cfgs[j].name() << " at m = " << *m << "\n";
        }
      out << "wrote " << roof_out << ".csv and " << roof_out << ".svg\n";
      return kExitOk;
    }

    if (*kvsim) {
      const KvConfig cfg{kv_heads, head_dim, page_size, kv_bits};
      try {
        cfg.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      if (kv_heads == 0 || q_heads % kv_heads != 0) throw UsageError("--heads must be a multiple of --kv-heads");
      std::mt19937_64 rng(seed);
      const std::size_t width = kv_heads * head_dim;
      const Matrix keys = random_heavy(kv_tokens, width, rng);
      const Matrix values = random_heavy(kv_tokens, width, rng);
      KvPageStore store(cfg);
      double max_err = 0.0, sum_err = 0.0, path_diff = 0.0;
      std::size_t count = 0;
      for (std::size_t t = 0; t < kv_tokens; ++t) {
        Matrix k(kv_heads, head_dim, std::vector<double>(keys.row(t).begin(), keys.row(t).end()));
        Matrix v(kv_heads, head_dim, std::vector<double>(values.row(t).begin(), values.row(t).end()));
        store.append_token(k, v);
        const DecodeQuery dq{random_heavy(q_heads, head_dim, rng), q_heads / kv_heads};
        Matrix kp(t + 1, width), vp(t + 1, width);
        for (std::size_t r = 0; r <= t; ++r)
          for (std::size_t c = 0; c < width; ++c) kp(r, c) = keys(r, c), vp(r, c) = values(r, c);
        const Matrix exact = attention_exact(kp, vp, dq, head_dim);
        const Matrix got = attention_decode(store, dq);
        const Matrix ref = attention_decode(store, dq, nullptr, KvReadPath::kReference);
        path_diff = std::max(path_diff, max_abs_error(got, ref));
        for (std::size_t i = 0; i < got.size(); ++i) {
          const double e = std::abs(got.data()[i] - exact.data()[i]);
          max_err = std::max(max_err, e);
          sum_err += e;
          ++count;
        }
      }
      ordered_json j;
      j["tokens"] = kv_tokens;
      j["kv_bits"] = kv_bits;
      j["pages"] = store.pages();
      j["page_bytes"] = cfg.page_bytes();
      j["cache_bytes"] = store.pages() * cfg.page_bytes();
      j["fp16_cache_bytes"] = kv_tokens * width * 2 * 2;
      j["attention_max_abs_error"] = max_err;
      j["attention_mean_abs_error"] = count ? sum_err / static_cast<double>(count) : 0.0;
      j["trick_vs_reference_max_diff"] = path_diff;
      j["dequant_ops_trick"] = dequant_ops_count(DequantPath::kTrick);
      j["dequant_ops_naive"] = dequant_ops_count(DequantPath::kNaive);
      out << j.dump(2) << "\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace qtk::cli
