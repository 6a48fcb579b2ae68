#include "actgraph/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "actgraph/archive.hpp"
#include "actgraph/error.hpp"
#include "actgraph/json_io.hpp"
#include "actgraph/matcher.hpp"
#include "actgraph/model_bundle.hpp"
#include "actgraph/planner.hpp"
#include "actgraph/service.hpp"
#include "actgraph/synthlab.hpp"

namespace actgraph::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kExitCodes =
    "Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid input),\n"
    "3 infeasible (recall target unreachable, oracle instance too large, placement impossible).";

// Shared defaults; every subcommand flag starts from these.
struct Defaults {
  double eta = RetrievalOptions{}.eta;
  std::size_t k = RetrievalOptions{}.k;
  int max_rounds = RetrievalOptions{}.max_rounds;
  double decay = RetrievalOptions{}.decay;
  std::size_t top_r = RetrievalOptions{}.top_r;
  std::uint64_t seed = 0;
  std::size_t freq_samples = kDefaultFrequencySamples;
  std::size_t count = 20;
  std::size_t clutter = 200;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t cache_size = 64;
};

struct Args {
  std::string input, archive, models, query, labels, result, truth, out;
  double eta = Defaults{}.eta;
  std::size_t k = Defaults{}.k;
  int max_rounds = Defaults{}.max_rounds;
  double decay = Defaults{}.decay;
  std::size_t top_r = Defaults{}.top_r;
  bool no_refine = false;
  bool no_reid = false;
  std::uint64_t seed = Defaults{}.seed;
  std::size_t freq_samples = Defaults{}.freq_samples;
  std::size_t pair_samples = CalibrationOptions{}.pair_samples;
  bool synthetic = false;
  std::vector<std::string> templates;
  std::size_t count = Defaults{}.count;
  std::size_t clutter = Defaults{}.clutter;
  double width = SynthConfig{}.width, height = SynthConfig{}.height, duration = SynthConfig{}.duration;
  double miss_rate = 0.0, break_rate = 0.0, margin_sigma = 0.0;
  std::vector<std::size_t> ks = kDefaultPrecisionKs;
  std::string host = Defaults{}.host;
  int port = Defaults{}.port;
  std::string static_dir, query_log;
  std::size_t cache_size = Defaults{}.cache_size;
};

// JSON goes to the file when one is given, else to out.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_text_file(path, text);
}

std::string pretty(const json& doc) { return doc.dump(2) + "\n"; }

json file_entry(const std::string& name, const std::string& text) {
  return json{{"path", name}, {"checksum", checksum_hex(text)}, {"bytes", text.size()}};
}

RetrievalOptions retrieval_options(const Args& a) {
  RetrievalOptions o;
  o.eta = a.eta;
  o.k = a.k;
  o.refinement = !a.no_refine;
  o.max_rounds = a.max_rounds;
  o.decay = a.decay;
  o.top_r = a.top_r;
  o.reid = !a.no_reid;
  return o;
}

RelFreqTable frequencies(const Args& a, const ArchiveStore& store, const ModelBundle& bundle) {
  const TrackFeatureTable tracks = build_track_features(store);
  return archive_frequencies(store, bundle.models, a.freq_samples, a.seed, EdgeContext{&tracks, true});
}

int cmd_ingest(const Args& a, std::ostream& out) {
  const std::string raw = read_text_file(a.input);
  const ArchiveStore store = ingest_observations(raw);
  const std::string normalized = export_observations(store);
  fs::create_directories(a.out);
  write_text_file((fs::path(a.out) / "archive.jsonl").string(), normalized);
  json manifest{{"source", a.input},
                {"source_checksum", checksum_hex(raw)},
                {"count", store.size()},
                {"tracklets", store.tracklets().size()},
                {"archive", file_entry("archive.jsonl", normalized)}};
  if (auto span = store.time_span())
    manifest["time_span"] = {span->first, span->second};
  else
    manifest["time_span"] = nullptr;
  write_text_file((fs::path(a.out) / "manifest.json").string(), pretty(manifest));
  out << "ingested " << store.size() << " observations in " << store.tracklets().size() << " tracklets -> "
      << a.out << "\n";
  return kExitOk;
}

int cmd_calibrate(const Args& a, std::ostream& out) {
  ModelBundle bundle;
  if (a.synthetic) {
    bundle = calibrate_synthetic(a.seed);
  } else {
    if (a.archive.empty() || a.labels.empty()) throw ConfigError("calibrate needs --archive and --labels, or --synthetic");
    const ArchiveStore store = load_archive(a.archive);
    const SynthLabels labels = parse_labels(read_text_file(a.labels));
    CalibrationOptions opts;
    opts.seed = a.seed;
    opts.pair_samples = a.pair_samples;
    bundle = calibrate_models(store, labels, opts);
  }
  emit(a.out, serialize_model_bundle(bundle), out);
  if (!a.out.empty())
    out << "calibrated " << bundle.models.class_models.size() << " class, " << bundle.models.attr_models.size()
        << " attribute and " << bundle.models.rel_models.size() << " relationship models -> " << a.out << "\n";
  return kExitOk;
}

int cmd_plan(const Args& a, std::ostream& out) {
  const ActivityGraph graph = parse_activity_graph(read_text_file(a.query));
  const ModelBundle bundle = load_model_bundle(a.models);
  const ArchiveStore store = load_archive(a.archive);
  const RelFreqTable freqs = frequencies(a, store, bundle);
  const SpanningTree tree = hpst(graph, freqs);
  const ThresholdAssignment taus = select_thresholds(graph, bundle.stats, a.eta);
  json doc{{"tree", to_json(tree, graph)}, {"thresholds", to_json(taus, graph)}, {"frequencies", to_json(freqs)}};
  emit(a.out, pretty(doc), out);
  if (!a.out.empty()) out << "tree rooted at " << tree.root << ", weight " << tree.total_weight << " -> " << a.out << "\n";
  return kExitOk;
}

int cmd_query(const Args& a, std::ostream& out) {
  const ActivityGraph graph = parse_activity_graph(read_text_file(a.query));
  const ModelBundle bundle = load_model_bundle(a.models);
  const ArchiveStore store = load_archive(a.archive);
  const RelFreqTable freqs = frequencies(a, store, bundle);
  const RetrievalResult result = retrieve(graph, store, bundle, freqs, retrieval_options(a));
  emit(a.out, pretty(to_json(result, graph)), out);
  if (!a.out.empty())
    out << result.ranked.size() << " groundings, " << result.refinement_rounds << " refinement rounds -> " << a.out
        << "\n";
  return kExitOk;
}

int cmd_generate(const Args& a, std::ostream& out) {
  SynthConfig config;
  config.width = a.width;
  config.height = a.height;
  config.duration = a.duration;
  config.n_clutter = a.clutter;
  for (const auto& t : a.templates) config.planted.push_back({t, a.count});
  config.noise = {a.miss_rate, a.break_rate, a.margin_sigma};
  config.seed = a.seed;
  const SynthArchive synth = generate_archive(config);

  const std::string archive_text = export_observations(synth.store);
  const std::string truth_text = pretty(truth_to_json(synth.truth, config));
  const std::string labels_text = export_labels(synth.labels);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  write_text_file((dir / "archive.jsonl").string(), archive_text);
  write_text_file((dir / "truth.json").string(), truth_text);
  write_text_file((dir / "labels.jsonl").string(), labels_text);
  json manifest{{"config", to_json(config)},
                {"seed", config.seed},
                {"observations", synth.store.size()},
                {"tracklets", synth.store.tracklets().size()},
                {"instances", synth.truth.size()},
                {"files",
                 {{"archive", file_entry("archive.jsonl", archive_text)},
                  {"truth", file_entry("truth.json", truth_text)},
                  {"labels", file_entry("labels.jsonl", labels_text)}}}};
  write_text_file((dir / "manifest.json").string(), pretty(manifest));
  out << "generated " << synth.store.size() << " observations, " << synth.truth.size() << " planted instances -> "
      << a.out << "\n";
  return kExitOk;
}

int cmd_eval(const Args& a, std::ostream& out) {
  const auto returns = ranked_returns_from_json(read_json_file(a.result));
  const auto truth = truth_from_json(read_json_file(a.truth));
  const EvalReport report = evaluate(returns, truth, a.ks);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text_file((fs::path(a.out) / "report.json").string(), pretty(to_json(report)));
    write_text_file((fs::path(a.out) / "pr.csv").string(), pr_points_csv(report));
  }
  out << format_report(report);
  return kExitOk;
}

int cmd_oracle(const Args& a, std::ostream& out) {
  const ActivityGraph graph = parse_activity_graph(read_text_file(a.query));
  const ModelBundle bundle = load_model_bundle(a.models);
  const ArchiveStore store = load_archive(a.archive);
  const TrackFeatureTable tracks = build_track_features(store);
  const Grounding g = brute_force_ground(graph, store, bundle.models, EdgeContext{&tracks, !a.no_reid});
  json mapping = json::object();
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) mapping[graph.nodes[i].id] = g.mapping[i];
  json doc{{"mapping", mapping}, {"full_log_score", g.full_log_score}, {"volume", to_json(g.volume)}};
  emit(a.out, pretty(doc), out);
  if (!a.out.empty()) out << "MAP grounding score " << g.full_log_score << " -> " << a.out << "\n";
  return kExitOk;
}

int cmd_serve(const Args& a, std::ostream& out, std::ostream& err) {
  std::optional<ArchiveStore> store;
  std::optional<ModelBundle> bundle;
  if (!a.archive.empty()) store = load_archive(a.archive);
  if (!a.models.empty()) bundle = load_model_bundle(a.models);
  ServiceOptions opts;
  opts.cache_size = a.cache_size;
  opts.frequency_samples = a.freq_samples;
  opts.frequency_seed = a.seed;
  opts.query_log_path = a.query_log;
  opts.static_dir = a.static_dir;
  Service service(std::move(store), std::move(bundle), opts);
  out << "listening on http://" << a.host << ":" << a.port << "\n" << std::flush;
  if (!service.serve(a.host, a.port)) {
    err << "error: cannot listen on " << a.host << ":" << a.port << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Activity-graph retrieval over tracked-object archives", "actgraph"};
  app.require_subcommand(1);
  app.footer(kExitCodes);
  app.option_defaults()->always_capture_default();

  Args a;
  auto sub = [&](const char* name, const char* description) {
    auto* s = app.add_subcommand(name, description);
    s->footer(kExitCodes);
    return s;
  };
  auto archive_opt = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--archive", a.archive, "Observation archive (JSONL)")->check(CLI::ExistingFile);
    if (required) o->required();
  };
  auto models_opt = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--models", a.models, "Model bundle (JSON)")->check(CLI::ExistingFile);
    if (required) o->required();
  };
  auto query_opt = [&](CLI::App* s) {
    s->add_option("--query", a.query, "Activity graph (JSON)")->check(CLI::ExistingFile)->required();
  };
  auto freq_opts = [&](CLI::App* s) {
    s->add_option("--freq-samples", a.freq_samples, "Observation pairs sampled for relationship frequencies")
        ->check(CLI::PositiveNumber);
    s->add_option("--seed", a.seed, "Seed for frequency sampling");
  };
  auto eta_opt = [&](CLI::App* s) {
    s->add_option("--eta", a.eta, "Target recall in (0, 1]")->check(CLI::Range(1e-12, 1.0));
  };

  auto* ingest = sub("ingest", "Validate an observation file and write a normalized archive plus manifest");
  ingest->add_option("--input", a.input, "Raw observations (JSONL)")->check(CLI::ExistingFile)->required();
  ingest->add_option("--out", a.out, "Output directory")->required();

  auto* calibrate = sub("calibrate", "Fit concept models and threshold statistics");
  archive_opt(calibrate, false);
  calibrate->add_option("--labels", a.labels, "Per-observation labels (JSONL)")->check(CLI::ExistingFile);
  calibrate->add_flag("--synthetic", a.synthetic, "Train on a generated labelled archive instead");
  calibrate->add_option("--seed", a.seed, "Seed for sampling and synthetic data");
  calibrate->add_option("--pair-samples", a.pair_samples, "Random pairs drawn for relationship statistics")
      ->check(CLI::PositiveNumber);
  calibrate->add_option("--out", a.out, "Model bundle path (stdout when omitted)");

  auto* plan = sub("plan", "Print the spanning tree and thresholds chosen for a query");
  query_opt(plan);
  models_opt(plan, true);
  archive_opt(plan, true);
  eta_opt(plan);
  freq_opts(plan);
  plan->add_option("--out", a.out, "Plan path (stdout when omitted)");

  auto* query = sub("query", "Retrieve ranked groundings of a query");
  query_opt(query);
  models_opt(query, true);
  archive_opt(query, true);
  eta_opt(query);
  query->add_option("--k", a.k, "Number of groundings returned")->check(CLI::PositiveNumber);
  query->add_option("--rounds", a.max_rounds, "Maximum refinement rounds")->check(CLI::NonNegativeNumber);
  query->add_option("--decay", a.decay, "Threshold factor per refinement round, in (0, 1)")
      ->check(CLI::Range(1e-12, 1.0 - 1e-12));
  query->add_option("--top-r", a.top_r, "Tree groundings kept per root assignment")->check(CLI::PositiveNumber);
  query->add_flag("--no-refine", a.no_refine, "Disable successive refinement");
  query->add_flag("--no-reid", a.no_reid, "Score same_entity across tracklets as impossible");
  freq_opts(query);
  query->add_option("--out", a.out, "Result path (stdout when omitted)");

  auto* generate = sub("generate", "Write a synthetic archive with planted activities");
  generate->add_option("--template", a.templates, "Activity template, repeatable")
      ->check(CLI::IsMember(template_names()));
  generate->add_option("--count", a.count, "Instances planted per template");
  generate->add_option("--clutter", a.clutter, "Clutter tracklets");
  generate->add_option("--seed", a.seed, "Generator seed");
  generate->add_option("--width", a.width, "Scene width (px)")->check(CLI::PositiveNumber);
  generate->add_option("--height", a.height, "Scene height (px)")->check(CLI::PositiveNumber);
  generate->add_option("--duration", a.duration, "Archive duration (s)")->check(CLI::PositiveNumber);
  generate->add_option("--miss-rate", a.miss_rate, "Fraction of observations dropped")->check(CLI::Range(0.0, 1.0));
  generate->add_option("--break-rate", a.break_rate, "Fraction of tracklets split")->check(CLI::Range(0.0, 1.0));
  generate->add_option("--margin-sigma", a.margin_sigma, "Gaussian margin noise")->check(CLI::NonNegativeNumber);
  generate->add_option("--out", a.out, "Output directory")->required();

  auto* eval = sub("eval", "Score a result against planted ground truth");
  eval->add_option("--result", a.result, "Result JSON from query")->check(CLI::ExistingFile)->required();
  eval->add_option("--truth", a.truth, "Ground truth JSON from generate")->check(CLI::ExistingFile)->required();
  eval->add_option("--k", a.ks, "Cutoffs for precision@k")->check(CLI::PositiveNumber);
  eval->add_option("--out", a.out, "Directory for report.json and pr.csv");

  auto* oracle = sub("oracle", "Exhaustive MAP grounding (small archives only)");
  query_opt(oracle);
  models_opt(oracle, true);
  archive_opt(oracle, true);
  oracle->add_flag("--no-reid", a.no_reid, "Score same_entity across tracklets as impossible");
  oracle->add_option("--out", a.out, "Grounding path (stdout when omitted)");

  auto* serve = sub("serve", "Serve the HTTP API");
  archive_opt(serve, false);
  models_opt(serve, false);
  serve->add_option("--host", a.host, "Bind address");
  serve->add_option("--port", a.port, "Port")->check(CLI::Range(1, 65535));
  serve->add_option("--static", a.static_dir, "Directory served under /")->check(CLI::ExistingDirectory);
  serve->add_option("--query-log", a.query_log, "Append each query to this JSONL file");
  serve->add_option("--cache-size", a.cache_size, "Results kept for detail requests")->check(CLI::PositiveNumber);
  freq_opts(serve);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(a, out);
    if (calibrate->parsed()) {
      if (!a.synthetic && (a.archive.empty() || a.labels.empty())) {
        err << "error: calibrate needs --archive and --labels, or --synthetic\n";
        return kExitUsage;
      }
      return cmd_calibrate(a, out);
    }
    if (plan->parsed()) return cmd_plan(a, out);
    if (query->parsed()) return cmd_query(a, out);
    if (generate->parsed()) {
      if (a.templates.empty() && a.clutter == 0) {
        err << "error: generate needs --template or --clutter\n";
        return kExitUsage;
      }
      return cmd_generate(a, out);
    }
    if (eval->parsed()) return cmd_eval(a, out);
    if (oracle->parsed()) return cmd_oracle(a, out);
    if (serve->parsed()) return cmd_serve(a, out, err);
  } catch (const InfeasibleError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const RefusalError& e) {
    err << "refused: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const ValidationError& e) {
    err << "invalid query:\n";
    for (const auto& v : e.violations()) err << "  " << v << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace actgraph::cli
