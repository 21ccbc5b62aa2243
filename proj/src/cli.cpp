/*
 * Copyright 2026 The spa-kernels Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "spa/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "spa/error.hpp"
#include "spa/kernel_families.hpp"
#include "spa/matrix_io.hpp"
#include "spa/schedules.hpp"
#include "spa/validation.hpp"

namespace spa {

namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

const std::vector<std::string> kMetricColumns{"mean_offdiag_cosine", "min_offdiag_cosine", "max_diag", "min_diag",
                                              "collapse_distance"};

[[noreturn]] void config_error(const std::string& message) { throw Error(ErrorCode::kInvalidConfig, message); }

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    out.push_back(item.substr(first, item.find_last_not_of(" \t") - first + 1));
  }
  return out;
}

Index parse_index(std::string_view key, std::string_view text) {
  Index value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
    config_error(std::string(key) + " must be an integer, got '" + std::string(text) + "'");
  return value;
}

double parse_real(std::string_view key, std::string_view text) {
  try {
    return parse_double(text);
  } catch (const Error&) {
    config_error(std::string(key) + " must be a number, got '" + std::string(text) + "'");
  }
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  config_error(std::string(key) + " must be true or false, got '" + std::string(text) + "'");
}

template <typename Handler>
void for_each_key(const std::string& section, const pt::ptree& tree, const std::set<std::string>& allowed,
                  Handler handle) {
  for (const auto& [key, node] : tree) {
    if (!allowed.contains(key)) config_error("unknown key '" + key + "' in [" + section + "]");
    handle(key, node.data());
  }
}

void parse_block_section(const std::string& section, const pt::ptree& tree, BlockSpec& block) {
  static const std::set<std::string> keys{"method",          "heads",          "shortcut_weight",
                                          "residual_weight", "norm_placement", "normalised_skip"};
  for_each_key(section, tree, keys, [&](const std::string& key, const std::string& value) {
    if (key == "method") block.method = parse_attention_method(value);
    else if (key == "heads") block.heads = parse_index(key, value);
    else if (key == "shortcut_weight") block.shortcut_weight = parse_real(key, value);
    else if (key == "residual_weight") block.residual_weight = parse_real(key, value);
    else if (key == "norm_placement") block.norm_placement = parse_norm_placement(value);
    else block.normalised_skip = parse_bool(key, value);
  });
}

json block_to_json(const BlockSpec& b) {
  return {{"method", std::string(to_string(b.method))},
          {"heads", b.heads},
          {"shortcut_weight", b.shortcut_weight},
          {"residual_weight", b.residual_weight},
          {"norm_placement", std::string(to_string(b.norm_placement))},
          {"normalised_skip", b.normalised_skip}};
}

json evolve_to_json(const EvolveConfig& c) {
  const StackConfig& s = c.stack;
  json overrides = json::object();
  for (const auto& [l, b] : s.block_overrides) overrides[std::to_string(l)] = block_to_json(b);
  return {{"stack",
           {{"depth", s.depth},
            {"seq_len", s.seq_len},
            {"gamma_final", s.gamma_final},
            {"rho_final", s.rho_final},
            {"repeated_fraction", s.repeated_fraction},
            {"correct_repeated_tokens", s.correct_repeated_tokens},
            {"mlp_blocks", s.mlp_blocks},
            {"neg_bias", s.neg_bias},
            {"seed", s.seed},
            {"input_kernel", c.input_kernel}}},
          {"block", block_to_json(s.block)},
          {"block_overrides", overrides},
          {"output", {{"dump_blocks", c.output.dump_blocks}, {"metrics", c.output.metrics}}}};
}

// Shared state for one invocation: output location and the manifest that is
// written on every exit path.
struct Run {
  std::string command;
  fs::path out_dir = ".";
  OutputFormat format = OutputFormat::kCsv;
  std::optional<std::uint64_t> seed;
  json config = json::object();
  json timings = json::object();

  fs::path file(const std::string& stem) const { return out_dir / (stem + std::string(extension(format))); }

  void write_manifest(const std::string& status, const std::optional<Error>& error) const {
    json manifest = {{"version", std::string(kVersion)},
                     {"command", command},
                     {"config", config},
                     {"seed", seed ? json(*seed) : json(nullptr)},
                     {"status", status},
                     {"timings", timings}};
    if (error) {
      manifest["error"] = {{"code", std::string(to_string(error->code()))}, {"message", error->what()}};
      if (error->block()) manifest["error"]["block"] = *error->block();
    }
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  }
};

void write_vector(const Run& run, const std::string& stem, const Vector& v) {
  write_matrix(run.file(stem), Matrix(v), run.format);
}

// A table written as CSV (header then rows) or as a JSON array of objects.
// Cells are pre-formatted strings; empty cells become JSON null.
void write_table(const Run& run, const std::string& stem, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  if (run.format == OutputFormat::kCsv) {
    std::string text;
    for (std::size_t j = 0; j < header.size(); ++j) text += (j ? "," : "") + header[j];
    text += '\n';
    for (const auto& row : rows) {
      for (std::size_t j = 0; j < row.size(); ++j) text += (j ? "," : "") + row[j];
      text += '\n';
    }
    write_text(run.file(stem), text);
    return;
  }
  json doc = json::array();
  for (const auto& row : rows) {
    json obj = json::object();
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j].empty()) obj[header[j]] = nullptr;
      else if (row[j] == "inf" || row[j] == "-inf" || row[j] == "nan") obj[header[j]] = row[j];
      else obj[header[j]] = json::parse(row[j]);
    }
    doc.push_back(std::move(obj));
  }
  write_text(run.file(stem), doc.dump(2) + "\n");
}

// ---- attn-matrix ----

struct AttnArgs {
  std::string method = "espa";
  Index size = 0;
  std::string gamma_in = "inf";
  std::string gamma_out;
  double rho_in = 0.0;
  double rho_out = 0.0;
  double neg_bias = kDefaultNegBias;
};

void cmd_attn_matrix(Run& run, const AttnArgs& args) {
  run.config = {{"method", args.method}, {"T", args.size}, {"neg_bias", args.neg_bias}};
  if (args.size < 1) config_error("T must be at least 1");
  AttentionOperator op;
  if (args.method == "espa") {
    if (args.gamma_out.empty()) config_error("--gamma-out is required for espa");
    const DecayRate in = DecayRate::parse(args.gamma_in);
    const DecayRate out = DecayRate::parse(args.gamma_out);
    run.config["gamma_in"] = in.to_string();
    run.config["gamma_out"] = out.to_string();
    op = espa_attention_analytic(args.size, in, out, args.neg_bias);
  } else {
    run.config["rho_in"] = args.rho_in;
    run.config["rho_out"] = args.rho_out;
    op = uspa_attention(args.size, args.rho_in, args.rho_out, args.neg_bias);
  }
  write_matrix(run.file("A"), op.matrix, run.format);
  write_vector(run, "D", op.rescale);
  write_matrix(run.file("P"), op.stochastic, run.format);
  write_matrix(run.file("B"), op.bias, run.format);
}

// ---- schedule ----

struct ScheduleArgs {
  bool espa = false;
  bool uspa = false;
  Index depth = 0;
  double gamma_final = kDefaultGammaFinal;
  double rho_final = kDefaultRhoFinal;
  double repeated_fraction = 0.0;
};

void cmd_schedule(Run& run, const ScheduleArgs& args) {
  if (args.espa == args.uspa) config_error("exactly one of --espa or --uspa is required");
  std::vector<std::vector<std::string>> rows;
  if (args.espa) {
    run.config = {{"family", "espa"}, {"L", args.depth}, {"gamma_L", args.gamma_final}};
    const DecaySchedule s = espa_schedule(args.depth, args.gamma_final);
    for (Index l = 0; l <= s.depth; ++l) {
      const std::string ratio = l == 0 ? "" : format_double(s.helper[l] / s.helper[l - 1]);
      rows.push_back({std::to_string(l), s.gammas[l].to_string(), format_double(s.helper[l]), ratio});
    }
    write_table(run, "schedule", {"l", "gamma", "a", "ratio"}, rows);
  } else {
    run.config = {{"family", "uspa"}, {"L", args.depth}, {"rho_L", args.rho_final}, {"r", args.repeated_fraction}};
    const UniformSchedule s = uspa_schedule(args.depth, args.rho_final, args.repeated_fraction);
    for (Index l = 0; l <= s.depth; ++l) rows.push_back({std::to_string(l), format_double(s.rhos[l])});
    write_table(run, "schedule", {"l", "rho"}, rows);
  }
}

// ---- kernel-evolve ----

std::optional<Matrix> resolve_input_kernel(const EvolveConfig& c, const fs::path& config_dir) {
  const Index t = c.stack.seq_len;
  if (c.input_kernel == "sampled") return std::nullopt;
  if (c.input_kernel == "identity") return Matrix::Identity(t, t);
  if (c.input_kernel == "expected") return expected_input_kernel(t, c.stack.repeated_fraction).matrix();
  fs::path path = c.input_kernel;
  if (path.is_relative()) path = config_dir / path;
  const OutputFormat format = path.extension() == ".json" ? OutputFormat::kJson : OutputFormat::kCsv;
  Matrix m = read_matrix(path, format);
  if (m.rows() != t || m.cols() != t) config_error("input_kernel must be seq_len x seq_len");
  return m;
}

double metric_value(const CollapseMetrics& m, const std::string& name) {
  if (name == "mean_offdiag_cosine") return m.mean_offdiag_cosine;
  if (name == "min_offdiag_cosine") return m.min_offdiag_cosine;
  if (name == "max_diag") return m.max_diag;
  if (name == "min_diag") return m.min_diag;
  return m.collapse_distance;
}

void cmd_kernel_evolve(Run& run, const fs::path& config_path) {
  EvolveConfig config = parse_evolve_config(read_text(config_path));
  if (run.seed) config.stack.seed = *run.seed;
  run.seed = config.stack.seed;
  run.config = evolve_to_json(config);
  config.stack.input_kernel = resolve_input_kernel(config, config_path.parent_path());
  config.stack.validate();

  const auto start = Clock::now();
  const PropagationTrace trace = run_stack(config.stack);
  run.timings["propagation_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();

  for (Index l : config.output.dump_blocks) {
    write_matrix(run.file("kernel_" + std::to_string(l)), trace.kernels[l].matrix(), run.format);
    write_matrix(run.file("normalized_" + std::to_string(l)), trace.normalized[l].matrix(), run.format);
  }
  std::vector<std::string> header{"block"};
  header.insert(header.end(), config.output.metrics.begin(), config.output.metrics.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t l = 0; l < trace.metrics.size(); ++l) {
    std::vector<std::string> row{std::to_string(l)};
    for (const std::string& name : config.output.metrics) row.push_back(format_double(metric_value(trace.metrics[l], name)));
    rows.push_back(std::move(row));
  }
  write_table(run, "metrics", header, rows);
}

// ---- validate ----

bool cmd_validate(Run& run, const std::string& suite, std::ostream& out) {
  run.config = {{"suite", suite}};
  const auto start = Clock::now();
  const std::vector<CheckResult> results = run_validation_suite(suite);
  run.timings["validation_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  std::size_t width = 5;
  for (const CheckResult& r : results) width = std::max(width, r.name.size());
  bool all_passed = true;
  json table = json::array();
  for (const CheckResult& r : results) {
    out << (r.passed ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ') << r.detail
        << '\n';
    all_passed = all_passed && r.passed;
    table.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  }
  run.config["results"] = table;
  return all_passed;
}

}  // namespace

EvolveConfig parse_evolve_config(std::string_view text) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    config_error(std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  EvolveConfig c;
  std::string dump_blocks = "0,last";
  std::string metrics = "all";
  static const std::set<std::string> stack_keys{"depth",      "seq_len", "gamma_final",  "rho_final",
                                                "repeated_fraction", "correct_repeated_tokens", "mlp_blocks",
                                                "neg_bias",   "seed",    "input_kernel"};
  static const std::set<std::string> output_keys{"dump_blocks", "metrics"};

  for (const auto& [section, node] : tree) {
    if (node.empty() && !node.data().empty()) config_error("key '" + section + "' must be inside a section");
    if (section == "stack") {
      for_each_key(section, node, stack_keys, [&](const std::string& key, const std::string& value) {
        StackConfig& s = c.stack;
        if (key == "depth") s.depth = parse_index(key, value);
        else if (key == "seq_len") s.seq_len = parse_index(key, value);
        else if (key == "gamma_final") s.gamma_final = parse_real(key, value);
        else if (key == "rho_final") s.rho_final = parse_real(key, value);
        else if (key == "repeated_fraction") s.repeated_fraction = parse_real(key, value);
        else if (key == "correct_repeated_tokens") s.correct_repeated_tokens = parse_bool(key, value);
        else if (key == "mlp_blocks") s.mlp_blocks = parse_bool(key, value);
        else if (key == "neg_bias") s.neg_bias = parse_real(key, value);
        else if (key == "seed") s.seed = static_cast<std::uint64_t>(parse_index(key, value));
        else c.input_kernel = value;
      });
    } else if (section == "block") {
      parse_block_section(section, node, c.stack.block);
    } else if (section.starts_with("block.")) {
      const Index l = parse_index("block section index", std::string_view(section).substr(6));
      BlockSpec spec = c.stack.block;
      c.stack.block_overrides[l] = spec;
    } else if (section == "output") {
      for_each_key(section, node, output_keys, [&](const std::string& key, const std::string& value) {
        if (key == "dump_blocks") dump_blocks = value;
        else metrics = value;
      });
    } else {
      config_error("unknown section [" + section + "]");
    }
  }
  // Overrides start from the final [block] spec regardless of section order.
  for (auto& [l, spec] : c.stack.block_overrides) {
    spec = c.stack.block;
    parse_block_section("block." + std::to_string(l), tree.get_child(pt::ptree::path_type("block." + std::to_string(l), '\0')), spec);
  }

  if (dump_blocks != "none") {
    for (const std::string& item : split_list(dump_blocks == "all" ? std::string() : dump_blocks)) {
      const Index l = item == "last" ? c.stack.depth : parse_index("dump_blocks", item);
      if (l < 0 || l > c.stack.depth) config_error("dump_blocks entry " + item + " is outside 0..depth");
      c.output.dump_blocks.push_back(l);
    }
    if (dump_blocks == "all")
      for (Index l = 0; l <= c.stack.depth; ++l) c.output.dump_blocks.push_back(l);
  }
  std::sort(c.output.dump_blocks.begin(), c.output.dump_blocks.end());
  c.output.dump_blocks.erase(std::unique(c.output.dump_blocks.begin(), c.output.dump_blocks.end()),
                             c.output.dump_blocks.end());

  if (metrics == "all") {
    c.output.metrics = kMetricColumns;
  } else {
    for (const std::string& name : split_list(metrics)) {
      if (std::find(kMetricColumns.begin(), kMetricColumns.end(), name) == kMetricColumns.end())
        config_error("unknown metric '" + name + "'");
      c.output.metrics.push_back(name);
    }
  }
  c.stack.validate();
  return c;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Signal preserving attention kernels", "spa"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kVersion));

  Run run;
  std::string out_dir = ".";
  std::string format = "csv";
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));

  AttnArgs attn;
  auto* attn_cmd = app.add_subcommand("attn-matrix", "Write A, D, P and B for one attention operator");
  attn_cmd->add_option("--method", attn.method)->check(CLI::IsMember({"espa", "uspa"}));
  attn_cmd->add_option("--T", attn.size, "Sequence length")->required();
  attn_cmd->add_option("--gamma-in", attn.gamma_in, "Incoming decay rate (or inf)");
  attn_cmd->add_option("--gamma-out", attn.gamma_out, "Outgoing decay rate");
  attn_cmd->add_option("--rho-in", attn.rho_in);
  attn_cmd->add_option("--rho-out", attn.rho_out);
  attn_cmd->add_option("--neg-bias", attn.neg_bias);

  std::string config_path;
  auto* evolve_cmd = app.add_subcommand("kernel-evolve", "Propagate kernels through a configured stack");
  evolve_cmd->add_option("config", config_path, "INI config file")->required();

  ScheduleArgs sched;
  auto* sched_cmd = app.add_subcommand("schedule", "Write a per-block parameter schedule");
  auto* espa_flag = sched_cmd->add_flag("--espa", sched.espa);
  auto* uspa_flag = sched_cmd->add_flag("--uspa", sched.uspa);
  espa_flag->excludes(uspa_flag);
  sched_cmd->add_option("--L", sched.depth, "Depth")->required();
  sched_cmd->add_option("--gamma-L", sched.gamma_final);
  sched_cmd->add_option("--rho-L", sched.rho_final);
  sched_cmd->add_option("--r", sched.repeated_fraction);

  std::string suite;
  auto* validate_cmd = app.add_subcommand("validate", "Run an invariant suite");
  validate_cmd->add_option("suite", suite)->required()->check(
      CLI::IsMember({"analytic", "nonneg", "telescope", "exactness", "corrections", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }

  run.out_dir = out_dir;
  if (*seed_opt) run.seed = seed;
  const auto start = Clock::now();
  std::string status = "ok";
  std::optional<Error> failure;
  int code = kExitOk;
  try {
    run.format = parse_output_format(format);
    fs::create_directories(run.out_dir);
    if (*attn_cmd) {
      run.command = "attn-matrix";
      cmd_attn_matrix(run, attn);
    } else if (*evolve_cmd) {
      run.command = "kernel-evolve";
      cmd_kernel_evolve(run, config_path);
    } else if (*sched_cmd) {
      run.command = "schedule";
      cmd_schedule(run, sched);
    } else {
      run.command = "validate";
      if (!cmd_validate(run, suite, out)) {
        status = "validation_failed";
        code = kExitValidationFailed;
      }
    }
  } catch (const Error& e) {
    failure = e;
    const bool config = is_config_error(e.code());
    status = config ? "config_error" : "numeric_failure";
    code = config ? kExitConfigError : kExitNumericFailure;
    err << "error: " << e.what();
    if (e.block()) err << " (block " << *e.block() << ")";
    err << '\n';
  } catch (const fs::filesystem_error& e) {
    failure = Error(ErrorCode::kInvalidConfig, e.what());
    status = "config_error";
    code = kExitConfigError;
    err << "error: " << e.what() << '\n';
  }
  run.timings["total_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  try {
    run.write_manifest(status, failure);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    if (code == kExitOk) code = kExitConfigError;
  }
  return code;
}

int run_cli(int argc, const char* const* argv) { return run_cli(argc, argv, std::cout, std::cerr); }

}  // namespace spa
