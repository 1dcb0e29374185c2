#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xprompt/checkpoint.hpp"
#include "xprompt/corpus.hpp"
#include "xprompt/error.hpp"
#include "xprompt/evaluation.hpp"
#include "xprompt/syntax.hpp"
#include "xprompt/training.hpp"

namespace xprompt::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Bad flags or configuration discovered after parsing; maps to exit 1.
struct UsageError : Error {
  using Error::Error;
};

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// TrainConfig flags. Values given on the command line override the
/// --config file, which overrides the built-in defaults.
class TrainFlags {
 public:
  void attach(CLI::App& app) {
    config_opt_ = app.add_option("--config", config_path_, "JSON file with TrainConfig fields")
                      ->check(CLI::ExistingFile);
    add(app, "--alpha", &TrainConfig::alpha, "1.0", "weight of the aspect (prompt) loss");
    add(app, "--beta", &TrainConfig::beta, "0.5", "weight of the masked POS (syntax) loss");
    add(app, "--mask-rate", &TrainConfig::mask_rate, "0.25", "fraction of POS tags masked");
    add(app, "-m,--m", &TrainConfig::m, "3", "prompt token length");
    add(app, "--lr,--learning-rate", &TrainConfig::learning_rate, "2e-3", "Adam learning rate");
    add(app, "--epochs", &TrainConfig::epochs, "20", "training epochs");
    add(app, "--batch-size", &TrainConfig::batch_size, "16", "sentences per optimizer step");
    add(app, "--seed", &TrainConfig::seed, "13", "base seed for init, masking and shuffling");
    add(app, "--min-count", &TrainConfig::min_count, "2",
        "minimum occurrences per source domain for a pivot candidate");
    add(app, "--max-steps", &TrainConfig::max_steps, "0", "stop after this many steps (0 = no cap)");
    add(app, "--prompt-pool", &TrainConfig::prompt_pool, "0",
        "bank rows for per_input prompt selection (0 = 2m)");

    flag(app, "--freeze-backbone,!--no-freeze-backbone", &TrainConfig::freeze_backbone, "true",
         "keep encoder weights fixed");
    flag(app, "--target-syntax-loss", &TrainConfig::target_syntax_loss, "false",
         "add the masked POS loss on unlabelled target sentences");
    flag(app, "--mask-at-inference", &TrainConfig::mask_at_inference, "false",
         "mask POS tags at prediction time too");
    flag(app, "--record-wall-time", &TrainConfig::record_wall_time, "false",
         "write epoch wall time to the log (breaks byte-identical logs)");

    auto* ab = app.add_option("--ablation", ablation_, "feature streams to drop")
                   ->default_str("full")
                   ->check(CLI::IsMember({"full", "no_syntax", "no_prompts", "backbone_only"}));
    overrides_.push_back({ab, [this](TrainConfig& c) { c.ablation = parse_ablation(ablation_); }});
    auto* red = app.add_option("--reduction", reduction_, "per-batch loss reduction")
                    ->default_str("mean")
                    ->check(CLI::IsMember({"mean", "sum"}));
    overrides_.push_back({red, [this](TrainConfig& c) {
                            c.reduction = reduction_ == "sum" ? Reduction::sum : Reduction::mean;
                          }});
    auto* sel = app.add_option("--prompt-selection", selection_, "one shared prompt bank, or nearest rows per sentence")
                    ->default_str("global")
                    ->check(CLI::IsMember({"global", "per_input"}));
    overrides_.push_back({sel, [this](TrainConfig& c) {
                            c.prompt_selection = selection_ == "per_input" ? PromptSelection::per_input
                                                                           : PromptSelection::global;
                          }});
  }

  TrainConfig resolve() const {
    TrainConfig c = config_opt_->count() ? load_train_config(config_path_) : TrainConfig{};
    for (const auto& o : overrides_) {
      if (o.option->count() > 0) o.apply(c);
    }
    c.validate();
    return c;
  }

 private:
  struct Override {
    CLI::Option* option;
    std::function<void(TrainConfig&)> apply;
  };

  template <typename T>
  void add(CLI::App& app, const std::string& name, T TrainConfig::*field, const std::string& def,
           const std::string& help) {
    auto* opt = app.add_option(name, values_.*field, help)->default_str(def);
    overrides_.push_back({opt, [this, field](TrainConfig& c) { c.*field = values_.*field; }});
  }

  void flag(CLI::App& app, const std::string& name, bool TrainConfig::*field, const std::string& def,
            const std::string& help) {
    auto* opt = app.add_flag(name, values_.*field, help)->default_str(def);
    overrides_.push_back({opt, [this, field](TrainConfig& c) { c.*field = values_.*field; }});
  }

  TrainConfig values_;
  std::string config_path_, ablation_ = "full", reduction_ = "mean", selection_ = "global";
  CLI::Option* config_opt_ = nullptr;
  std::vector<Override> overrides_;
};

/// Encoder shape, optional pretrained backbone and corpus location.
struct ModelFlags {
  EncoderConfig encoder;
  std::string backbone;
  std::string data_dir = ".";

  void attach(CLI::App& app) {
    app.add_option("--data-dir", data_dir, "directory holding <DOMAIN>.tsv corpora")->default_str(".");
    app.add_option("--backbone", backbone,
                   "backbone checkpoint directory (also looked up under $XPROMPT_CACHE_DIR); "
                   "the seeded tiny encoder when omitted");
    app.add_option("--hidden-width", encoder.hidden_width, "tiny encoder width d")->default_str("16");
    app.add_option("--layers", encoder.num_layers, "tiny encoder layers")->default_str("2");
    app.add_option("--heads", encoder.num_heads, "attention heads")->default_str("2");
    app.add_option("--ffn-width", encoder.ffn_width, "feed-forward width")->default_str("64");
    app.add_option("--max-length", encoder.max_length, "maximum positions per pass")->default_str("256");
  }

  std::optional<fs::path> backbone_dir() const {
    if (backbone.empty()) return std::nullopt;
    const fs::path direct(backbone);
    if (fs::is_directory(direct)) return direct;
    if (const char* cache = std::getenv("XPROMPT_CACHE_DIR")) {
      const auto cached = fs::path(cache) / backbone;
      if (fs::is_directory(cached)) return cached;
    }
    throw UsageError("backbone '" + backbone + "' not found (also checked $XPROMPT_CACHE_DIR)");
  }

  Backbone make_backbone(std::uint64_t seed) const {
    if (auto dir = backbone_dir()) return load_backbone(*dir);
    return make_tiny_backbone(encoder, seed);
  }

  DomainCorpus load(const std::string& name) const {
    return load_corpus(fs::path(data_dir) / (name + ".tsv"), name);
  }

  CorpusRegistry registry(const std::vector<TransferPair>& pairs) const {
    CorpusRegistry r;
    for (const auto& p : pairs) {
      auto names = p.sources;
      names.push_back(p.target);
      for (const auto& n : names) {
        if (!r.count(n)) r[n] = load(n);
      }
    }
    return r;
  }
};

struct ReportFlags {
  std::string csv_path, json_path;
  bool details = false;

  void attach(CLI::App& app) {
    app.add_option("--csv", csv_path, "write the report table as CSV");
    app.add_option("--report", json_path, "write the full report as JSON");
    app.add_flag("--details", details, "include per-sentence spans in the JSON report");
  }

  void write(const std::vector<EvalReport>& reports) const {
    if (!csv_path.empty()) write_file_atomic(csv_path, reports_csv(reports));
    if (!json_path.empty()) write_file_atomic(json_path, reports_json(reports).dump(2) + "\n");
  }
};

SyntheticSpec load_synthetic_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  static const std::set<std::string> keys{"domain_name",      "train_sentences", "test_sentences",
                                          "lexicon",          "aspect_terms",    "aspect_templates",
                                          "plain_templates",  "aspect_pos",      "unlabelled_train"};
  for (const auto& item : j.items()) {
    if (!keys.count(item.key())) throw UsageError("unknown synthetic spec key '" + item.key() + "'");
  }
  SyntheticSpec s;
  s.domain_name = j.value("domain_name", s.domain_name);
  s.train_sentences = j.value("train_sentences", s.train_sentences);
  s.test_sentences = j.value("test_sentences", s.test_sentences);
  s.aspect_pos = j.value("aspect_pos", s.aspect_pos);
  s.unlabelled_train = j.value("unlabelled_train", s.unlabelled_train);
  if (j.contains("lexicon")) j.at("lexicon").get_to(s.lexicon);
  if (j.contains("aspect_terms")) j.at("aspect_terms").get_to(s.aspect_terms);
  if (j.contains("aspect_templates")) j.at("aspect_templates").get_to(s.aspect_templates);
  if (j.contains("plain_templates")) j.at("plain_templates").get_to(s.plain_templates);
  return s;
}

std::vector<TransferPair> parse_pairs(const std::vector<std::string>& pairs,
                                      const std::vector<std::string>& domains) {
  if (!pairs.empty() && !domains.empty()) throw UsageError("give either --pairs or --domains");
  if (!domains.empty()) return all_pairs(domains);
  std::vector<TransferPair> out;
  for (const auto& p : pairs) out.push_back(parse_pair(p));
  if (out.empty()) throw UsageError("no transfer pairs (use --pairs or --domains)");
  return out;
}

std::string summarize(const std::vector<EvalReport>& reports) {
  std::ostringstream s;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (i > 0) s << "; ";
    TransferPair p{r.source_domains, r.target_domain};
    s << pair_label(p);
    if (r.ablation != Ablation::full || reports.size() > 1) s << " [" << ablation_label(r.ablation) << "]";
    s << " P=" << fixed(r.precision) << " R=" << fixed(r.recall) << " F1=" << fixed(r.f1);
    if (r.f1_stddev) s << "±" << fixed(*r.f1_stddev);
  }
  return s.str();
}

json bank_json(const PromptBank<float>& bank, const std::vector<std::string>& sources) {
  json prompts = json::array();
  for (int i = 0; i < bank.rows(); ++i) {
    const auto& c = bank.provenance[static_cast<std::size_t>(i)];
    std::vector<float> v;
    for (Eigen::Index k = 0; k < bank.vectors.cols(); ++k) v.push_back(bank.vectors(i, k));
    prompts.push_back({{"token", c.token},
                       {"mi_score", c.mi_score},
                       {"mean_aspect_distance", c.mean_aspect_distance},
                       {"domain_counts", c.domain_counts},
                       {"vector", v}});
  }
  return json{{"sources", sources}, {"m", bank.m}, {"d", bank.width()}, {"prompts", prompts}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Soft-prompt guided joint learning for cross-domain aspect term extraction", "xprompt"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "validate, (re)tag or synthesize a domain corpus");
  std::string prep_input, prep_synthetic, prep_name, prep_output, prep_lexicon, prep_command;
  std::uint64_t prep_seed = 13;
  auto* in_opt = prep->add_option("--input", prep_input, "CoNLL-style TSV corpus")->check(CLI::ExistingFile);
  auto* syn_opt = prep->add_option("--synthetic", prep_synthetic, "JSON template spec for a synthetic corpus")
                      ->check(CLI::ExistingFile);
  in_opt->excludes(syn_opt);
  prep->add_option("--name", prep_name, "domain name (defaults to the input stem or spec name)");
  prep->add_option("--output", prep_output, "output TSV path")->required();
  auto* lex_opt = prep->add_option("--lexicon", prep_lexicon, "word<TAB>tag file for dictionary tagging")
                      ->check(CLI::ExistingFile);
  auto* cmd_opt = prep->add_option("--tagger-command", prep_command,
                                   "external tagger: tokens on stdin, one tag per line on stdout");
  lex_opt->excludes(cmd_opt);
  prep->add_option("--seed", prep_seed, "seed for synthetic generation")->default_str("13");

  // select-prompts
  auto* sel = app.add_subcommand("select-prompts", "rank pivot candidates and build the prompt bank");
  TrainFlags sel_train;
  ModelFlags sel_model;
  std::vector<std::string> sel_sources;
  std::string sel_output;
  sel->add_option("--sources", sel_sources, "source domains")->required()->delimiter(',');
  sel->add_option("--output", sel_output, "prompt bank JSON")->required();
  sel_train.attach(*sel);
  sel_model.attach(*sel);

  // train
  auto* tr = app.add_subcommand("train", "joint training on source domains");
  TrainFlags tr_train;
  ModelFlags tr_model;
  std::vector<std::string> tr_sources;
  std::string tr_target, tr_out;
  tr->add_option("--sources", tr_sources, "labelled source domains")->required()->delimiter(',');
  tr->add_option("--target", tr_target, "target domain (POS vocabulary, optional syntax loss)")->required();
  tr->add_option("--out-dir", tr_out, "writes checkpoint/ and train_log.jsonl here")->required();
  tr_train.attach(*tr);
  tr_model.attach(*tr);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint, or train and score transfer pairs");
  TrainFlags ev_train;
  ModelFlags ev_model;
  ReportFlags ev_report;
  std::string ev_checkpoint, ev_target;
  std::vector<std::string> ev_pairs, ev_domains;
  int ev_reps = 1;
  ev->add_option("--checkpoint", ev_checkpoint, "trained checkpoint directory")->check(CLI::ExistingDirectory);
  ev->add_option("--target", ev_target, "target domain for --checkpoint");
  ev->add_option("--pairs", ev_pairs, "transfer pairs SRC:TGT or SRC+SRC:TGT")->delimiter(',');
  ev->add_option("--domains", ev_domains, "run every ordered pair of these domains")->delimiter(',');
  ev->add_option("--repetitions", ev_reps, "runs per pair (seeds seed, seed+1, ...)")->default_str("1");
  ev_train.attach(*ev);
  ev_model.attach(*ev);
  ev_report.attach(*ev);

  // ablate
  auto* ab = app.add_subcommand("ablate", "four-row ablation table per transfer pair");
  TrainFlags ab_train;
  ModelFlags ab_model;
  ReportFlags ab_report;
  std::vector<std::string> ab_pairs, ab_domains;
  int ab_reps = 1;
  ab->add_option("--pairs", ab_pairs, "transfer pairs SRC:TGT")->delimiter(',');
  ab->add_option("--domains", ab_domains, "run every ordered pair of these domains")->delimiter(',');
  ab->add_option("--repetitions", ab_reps, "runs per row")->default_str("1");
  ab_train.attach(*ab);
  ab_model.attach(*ab);
  ab_report.attach(*ab);

  // sweep
  auto* sw = app.add_subcommand("sweep", "F1 as a function of prompt length");
  TrainFlags sw_train;
  ModelFlags sw_model;
  std::string sw_pair, sw_output;
  std::vector<int> sw_lengths;
  int sw_reps = 1;
  sw->add_option("--pair", sw_pair, "transfer pair SRC:TGT")->required();
  sw->add_option("--lengths", sw_lengths, "prompt lengths, e.g. 1,2,3,4,5")->required()->delimiter(',');
  sw->add_option("--output", sw_output, "curve CSV (length,f1,seed)");
  sw->add_option("--repetitions", sw_reps, "runs per length")->default_str("1");
  sw_train.attach(*sw);
  sw_model.attach(*sw);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  // Each subcommand resolves its inputs (usage errors) and returns the work to run.
  std::function<std::string()> action;
  try {
    if (prep->parsed()) {
      if (prep_input.empty() && prep_synthetic.empty()) throw UsageError("give --input or --synthetic");
      action = [&]() -> std::string {
        DomainCorpus corpus;
        if (!prep_synthetic.empty()) {
          auto spec = load_synthetic_spec(prep_synthetic);
          if (!prep_name.empty()) spec.domain_name = prep_name;
          corpus = generate_synthetic_corpus(prep_seed, spec);
        } else {
          const auto name = prep_name.empty() ? fs::path(prep_input).stem().string() : prep_name;
          corpus = load_corpus(prep_input, name);
        }
        std::unique_ptr<PosTagger> tagger;
        if (!prep_lexicon.empty()) tagger = std::make_unique<DictionaryTagger>(DictionaryTagger::load(prep_lexicon));
        if (!prep_command.empty()) tagger = std::make_unique<CommandTagger>(prep_command);
        PosVocabulary vocab;
        if (tagger) {
          for (auto* split : {&corpus.train, &corpus.test}) {
            for (auto& s : *split) s.pos_tags = tag_pos(s.tokens, *tagger, vocab);
          }
        } else {
          vocab.add_corpus(corpus);
        }
        write_corpus(corpus, prep_output);
        return "prepared " + corpus.domain_name + ": " + std::to_string(corpus.train.size()) +
               " train / " + std::to_string(corpus.test.size()) + " test sentences, " +
               std::to_string(vocab.size() - 1) + " POS tags -> " + prep_output;
      };
    } else if (sel->parsed()) {
      const auto config = sel_train.resolve();
      sel_model.encoder.validate();
      sel_model.backbone_dir();
      action = [&, config]() -> std::string {
        std::vector<DomainCorpus> sources;
        for (const auto& s : sel_sources) sources.push_back(sel_model.load(s));
        const auto backbone = sel_model.make_backbone(config.seed);
        const auto bank = select_prompts(sources, backbone, config);
        write_file_atomic(sel_output, bank_json(bank, sel_sources).dump(2) + "\n");
        std::string tokens;
        for (const auto& c : bank.provenance) tokens += (tokens.empty() ? "" : ", ") + c.token;
        return "selected " + std::to_string(bank.rows()) + " prompts (" + tokens + ") -> " + sel_output;
      };
    } else if (tr->parsed()) {
      const auto config = tr_train.resolve();
      tr_model.encoder.validate();
      tr_model.backbone_dir();
      for (const auto& s : tr_sources) {
        if (s == tr_target) throw UsageError("source equals target: " + s);
      }
      action = [&, config]() -> std::string {
        std::vector<DomainCorpus> sources;
        for (const auto& s : tr_sources) sources.push_back(tr_model.load(s));
        const auto target = tr_model.load(tr_target);
        const auto backbone = tr_model.make_backbone(config.seed);
        PromptBank<float> bank;
        if (config.streams().prompts) bank = select_prompts(sources, backbone, config);
        fs::create_directories(tr_out);
        const fs::path dir(tr_out);
        const auto result = train(config, sources, target, backbone, bank,
                                  {dir / "checkpoint", dir / "train_log.jsonl"});
        TransferPair p{tr_sources, tr_target};
        return "trained " + pair_label(p) + ": " + std::to_string(result.steps) + " steps, final loss " +
               fixed(result.epochs.back().loss.total) + " -> " + (dir / "checkpoint").string();
      };
    } else if (ev->parsed()) {
      if (!ev_checkpoint.empty()) {
        if (ev_target.empty()) throw UsageError("--checkpoint needs --target");
        if (!ev_pairs.empty() || !ev_domains.empty()) {
          throw UsageError("--checkpoint cannot be combined with --pairs/--domains");
        }
        action = [&]() -> std::string {
          const auto model = load_checkpoint(ev_checkpoint);
          auto report = evaluate(model, ev_model.load(ev_target), ev_report.details);
          ev_report.write({report});
          return "evaluated " + ev_checkpoint + " on " + ev_target + ": P=" + fixed(report.precision) +
                 " R=" + fixed(report.recall) + " F1=" + fixed(report.f1);
        };
      } else {
        ExperimentSpec spec;
        spec.pairs = parse_pairs(ev_pairs, ev_domains);
        spec.config = ev_train.resolve();
        spec.encoder = ev_model.encoder;
        spec.backbone_dir = ev_model.backbone_dir();
        spec.repetitions = ev_reps;
        spec.keep_details = ev_report.details;
        spec.validate();
        action = [&, spec]() -> std::string {
          const auto reports = run_experiment(spec, ev_model.registry(spec.pairs));
          ev_report.write(reports);
          return summarize(reports);
        };
      }
    } else if (ab->parsed()) {
      ExperimentSpec spec;
      spec.pairs = parse_pairs(ab_pairs, ab_domains);
      spec.config = ab_train.resolve();
      spec.encoder = ab_model.encoder;
      spec.backbone_dir = ab_model.backbone_dir();
      spec.repetitions = ab_reps;
      spec.keep_details = ab_report.details;
      spec.validate();
      action = [&, spec]() -> std::string {
        const auto reports = ablate(spec, ab_model.registry(spec.pairs));
        ab_report.write(reports);
        return summarize(reports);
      };
    } else if (sw->parsed()) {
      ExperimentSpec spec;
      spec.pairs = {parse_pair(sw_pair)};
      spec.config = sw_train.resolve();
      spec.encoder = sw_model.encoder;
      spec.backbone_dir = sw_model.backbone_dir();
      spec.repetitions = sw_reps;
      spec.validate();
      if (sw_lengths.empty()) throw UsageError("--lengths is empty");
      for (int l : sw_lengths) {
        if (l < 1) throw UsageError("prompt lengths must be ≥ 1");
      }
      action = [&, spec]() -> std::string {
        const auto sweep = sweep_prompt_length(spec, sw_model.registry(spec.pairs), sw_lengths);
        for (const auto& w : sweep.warnings) err << "warning: " << w << '\n';
        if (!sw_output.empty()) write_file_atomic(sw_output, sweep_csv(sweep));
        std::string s = "sweep " + pair_label(spec.pairs.front()) + ":";
        for (const auto& p : sweep.points) s += " m=" + std::to_string(p.length) + " F1=" + fixed(p.f1);
        return s;
      };
    }
  } catch (const Error& e) {
    // Configuration and flag problems detected before any work starts.
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    out << action() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace xprompt::cli
