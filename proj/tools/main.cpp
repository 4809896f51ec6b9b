// Apache License, Version 2.0, refer to LICENSE.txt
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "checks.hpp"
#include "symconj/canonicalize.hpp"
#include "symconj/conjugacy.hpp"
#include "symconj/error.hpp"
#include "symconj/examples.hpp"
#include "symconj/inference.hpp"

namespace {

using namespace symconj;

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kNonTermination = 3 };

/// Usage mistakes detected after parsing (unknown model or variable).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Model {
  TermGraph log_joint;
  const ModelFixture* fixture = nullptr;
};

Model load_model(const std::string& spec) {
  for (const auto& f : fixtures()) {
    if (f.name == spec) return {f.log_joint, &f};
  }
  if (!std::filesystem::exists(spec)) throw UsageError("'" + spec + "' is neither a fixture nor a file");
  return {cli::read_model_file(spec).log_joint, nullptr};
}

std::string resolve_var(const TermGraph& g, const std::string& var) {
  const auto names = g.input_names();
  if (!var.empty() && std::all_of(var.begin(), var.end(), [](char c) { return std::isdigit(c); })) {
    const std::size_t i = std::stoul(var);
    if (i >= names.size()) throw UsageError("argument index " + var + " out of range");
    return names[i];
  }
  if (std::find(names.begin(), names.end(), var) == names.end()) throw UsageError("no input named '" + var + "'");
  return var;
}

// Each array starts with a "shape d1 d2 ..." line ("shape" alone for a
// scalar) followed by its numbers in row-major order.
std::vector<Tensor> read_argfile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  std::vector<Tensor> out;
  Shape shape;
  std::vector<double> values;
  bool open = false;
  int header_line = 0;
  auto close = [&] {
    if (!open) return;
    if (static_cast<std::int64_t>(values.size()) != num_elements(shape)) {
      throw ParseError(path + ": array has " + std::to_string(values.size()) + " values, shape " +
                           shape_to_string(shape) + " needs " + std::to_string(num_elements(shape)),
                       header_line);
    }
    out.emplace_back(shape, values);
    values.clear();
  };
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    std::istringstream words(line);
    std::string word;
    if (!(words >> word) || word[0] == '#') continue;
    if (word == "shape") {
      close();
      open = true;
      header_line = n;
      shape.clear();
      while (words >> word) {
        try {
          shape.push_back(std::stoll(word));
        } catch (const std::exception&) {
          throw ParseError(path + ": bad dimension '" + word + "'", n);
        }
      }
      continue;
    }
    if (!open) throw ParseError(path + ": numbers before a shape line", n);
    do {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(word, &used));
        if (used != word.size()) throw std::invalid_argument(word);
      } catch (const std::exception&) {
        throw ParseError(path + ": bad number '" + word + "'", n);
      }
    } while (words >> word);
  }
  close();
  return out;
}

void write_svg(const std::string& path, const std::vector<double>& trace, const std::string& title) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write '" + path + "'");
  const double w = 640, h = 360, pad = 50;
  double lo = trace.empty() ? 0 : *std::min_element(trace.begin(), trace.end());
  double hi = trace.empty() ? 1 : *std::max_element(trace.begin(), trace.end());
  if (hi == lo) hi = lo + 1;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << pad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  out << std::setprecision(6);
  out << "<text x=\"2\" y=\"" << pad << "\" font-size=\"10\">" << hi << "</text>\n";
  out << "<text x=\"2\" y=\"" << h - pad << "\" font-size=\"10\">" << lo << "</text>\n";
  out << "<text x=\"" << w - pad << "\" y=\"" << h - pad + 15 << "\" font-size=\"10\">" << trace.size()
      << "</text>\n";
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double x = pad + (w - 2 * pad) * (trace.size() == 1 ? 0.0 : static_cast<double>(i) / (trace.size() - 1));
    const double y = h - pad - (h - 2 * pad) * (trace[i] - lo) / (hi - lo);
    out << x << ',' << y << ' ';
  }
  out << "\"/>\n</svg>\n";
}

int cmd_canonicalize(const std::string& spec, bool dot, bool stats, int max_rules) {
  const Model model = load_model(spec);
  CanonicalizeOptions options;
  options.max_rule_applications = max_rules;
  const CanonicalForm cf = canonicalize(model.log_joint, options);
  if (stats) {
    std::cout << "nodes_before=" << model.log_joint.size() << '\n';
    std::cout << "nodes_after=" << cf.graph.size() << '\n';
    std::cout << "monomials=" << cf.monomials.size() << '\n';
    std::cout << "rule_applications=" << cf.rule_applications << '\n';
    std::cout << "is_canonical=" << (is_canonical(cf.graph, true) ? "true" : "false") << '\n';
    std::cout << "is_canonical_strict=" << (is_canonical(cf.graph) ? "true" : "false") << '\n';
    std::map<std::string, int> histogram;
    for (const auto& rule : cf.fired) ++histogram[rule];
    for (const auto& [rule, count] : histogram) std::cout << "rule " << rule << ' ' << count << '\n';
    return kOk;
  }
  std::cout << dump(cf.graph, dot ? DumpFormat::kDot : DumpFormat::kText);
  return kOk;
}

int cmd_conditional(const std::string& spec, const std::string& var_spec, const std::string& support_text,
                    const std::vector<std::string>& argfiles) {
  const Model model = load_model(spec);
  const std::string var = resolve_var(model.log_joint, var_spec);
  std::optional<SupportType> support;
  if (!support_text.empty()) {
    support = parse_support(support_text);
    if (!support) throw UsageError("unknown support '" + support_text + "'");
  }
  const auto factory = complete_conditional(model.log_joint, var, support);
  Distribution d;
  if (!argfiles.empty()) {
    std::vector<Tensor> args;
    for (const auto& path : argfiles) {
      for (auto& t : read_argfile(path)) args.push_back(std::move(t));
    }
    if (args.size() != factory.arguments().size()) {
      throw UsageError("conditional of '" + var + "' takes " + std::to_string(factory.arguments().size()) +
                       " arguments, the argfiles hold " + std::to_string(args.size()));
    }
    d = factory(args);
  } else {
    if (!model.fixture) throw UsageError("a model file needs --at argfiles");
    Env env = model.fixture->data;
    for (const auto& [name, value] : model.fixture->init) {
      if (name != var) env.insert_or_assign(name, value);
    }
    d = factory(env);
  }
  std::cout << describe(d) << '\n';
  return kOk;
}

int cmd_infer(const std::string& spec, const std::string& algo, std::int64_t iters, std::uint64_t seed,
              const std::string& trace_path, const std::string& plot_path) {
  const Model model = load_model(spec);
  if (!model.fixture) throw UsageError("infer runs bundled fixtures only");
  const ModelFixture& f = *model.fixture;
  std::ofstream trace_file;
  if (!trace_path.empty()) {
    trace_file.open(trace_path);
    if (!trace_file) throw UsageError("cannot write '" + trace_path + "'");
  }
  RunConfig config;
  config.max_iters = iters;
  config.trace = trace_path.empty() ? nullptr : &trace_file;
  const std::vector<std::optional<SupportType>> supports(f.supports.begin(), f.supports.end());
  std::vector<double> trace;
  std::string label;
  if (algo == "gibbs") {
    GibbsState s = make_gibbs_state(f.log_joint, f.latents, supports, f.data, f.init, seed);
    trace = run_gibbs(s, config);
    label = "log_joint";
  } else {
    MeanFieldState s = make_mean_field_state(f.log_joint, f.latents, supports, f.data, f.init);
    if (f.name == "logistic_jj") {
      trace = run_jaakkola_jordan(s, iters, config.trace);
    } else {
      // The trace is meant to show every sweep, so no early stop.
      config.tolerance = 0;
      trace = run_cavi(s, config);
    }
    label = "elbo";
  }
  if (!plot_path.empty()) write_svg(plot_path, trace, f.name + " " + algo + " " + label);
  std::cout << "fixture=" << f.name << " algo=" << algo << " iters=" << trace.size();
  if (!trace.empty()) std::cout << ' ' << label << '=' << std::setprecision(12) << trace.back();
  std::cout << '\n';
  return kOk;
}

int cmd_check(const std::vector<std::string>& suites, const std::vector<std::string>& model_paths) {
  if (suites.empty()) throw UsageError("no suite selected");
  std::vector<cli::ModelFile> extra;
  for (const auto& path : model_paths) extra.push_back(cli::read_model_file(path));
  const bool all = std::find(suites.begin(), suites.end(), "all") != suites.end();
  auto wanted = [&](const std::string& s) { return all || std::find(suites.begin(), suites.end(), s) != suites.end(); };
  std::vector<cli::CheckResult> results;
  auto append = [&](std::vector<cli::CheckResult> r) { results.insert(results.end(), r.begin(), r.end()); };
  if (wanted("rewrite")) append(cli::check_rewrite());
  if (wanted("expfam")) append(cli::check_expfam());
  if (wanted("conjugacy")) append(cli::check_conjugacy(extra));
  if (wanted("inference")) append(cli::check_inference());
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!r.passed) std::cout << ": " << r.detail;
    std::cout << '\n';
    failed += r.passed ? 0 : 1;
  }
  std::cout << results.size() - failed << " passed, " << failed << " failed\n";
  return failed ? kCheckFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symbolic conjugacy engine: canonical forms, conditionals, marginals and inference."};
  app.require_subcommand(1);

  std::string model, var, support, algo = "cavi", trace, plot;
  bool dot = false, text = false, stats = false;
  int max_rules = 10000;
  std::vector<std::string> argfiles, suites, model_files;
  std::int64_t iters = 100;
  std::uint64_t seed = 0;

  auto* canon = app.add_subcommand("canonicalize", "Rewrite a model into sum-of-einsums form");
  canon->add_option("model", model, "Fixture name or graph text file")->required();
  auto* dot_flag = canon->add_flag("--dot", dot, "Emit Graphviz DOT");
  canon->add_flag("--text", text, "Emit the graph text format (default)")->excludes(dot_flag);
  canon->add_flag("--stats", stats, "Print node counts, rule histogram and canonicity");
  canon->add_option("--max-rules", max_rules, "Rewrite budget")->check(CLI::PositiveNumber);

  auto* cond = app.add_subcommand("conditional", "Print the complete conditional of one input");
  cond->add_option("model", model, "Fixture name or graph text file")->required();
  cond->add_option("--var", var, "Input name or position")->required();
  cond->add_option("--support", support, "Support override, e.g. nonnegative or integer(3)");
  cond->add_option("--at", argfiles, "Argfiles with the remaining inputs, in order");

  auto* infer = app.add_subcommand("infer", "Run Gibbs or CAVI on a fixture");
  infer->add_option("model", model, "Fixture name")->required();
  infer->add_option("--algo", algo, "gibbs or cavi")->check(CLI::IsMember({"gibbs", "cavi"}));
  infer->add_option("--iters", iters, "Sweeps")->check(CLI::NonNegativeNumber);
  infer->add_option("--seed", seed, "Random seed");
  infer->add_option("--trace", trace, "Write iter<TAB>value lines here");
  infer->add_option("--plot", plot, "Write an SVG line chart of the trace here");

  auto* check = app.add_subcommand("check", "Run property suites");
  check->add_option("--suite", suites, "rewrite, expfam, conjugacy, inference or all")
      ->check(CLI::IsMember({"rewrite", "expfam", "conjugacy", "inference", "all"}));
  check->add_option("--model", model_files, "Extra model files with '# latent NAME FAMILY' lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*canon) return cmd_canonicalize(model, dot, stats, max_rules);
    if (*cond) return cmd_conditional(model, var, support, argfiles);
    if (*infer) return cmd_infer(model, algo, iters, seed, trace, plot);
    if (*check) return cmd_check(suites, model_files);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kUsage;
  } catch (const NonTerminationError& e) {
    std::cerr << "non-termination: " << e.what() << '\n';
    return kNonTermination;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
  return kUsage;
}
