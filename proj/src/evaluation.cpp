#include "xprompt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "xprompt/checkpoint.hpp"
#include "xprompt/error.hpp"
#include "xprompt/random.hpp"

namespace xprompt {

using nlohmann::json;

PRF span_prf(const std::vector<SpanSet>& predicted, const std::vector<SpanSet>& gold) {
  if (predicted.size() != gold.size()) {
    throw ValidationError("span_prf: " + std::to_string(predicted.size()) +
                          " predicted sentences vs " + std::to_string(gold.size()) + " gold");
  }
  PRF out;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const std::set<AspectSpan> g(gold[s].begin(), gold[s].end());
    const std::set<AspectSpan> p(predicted[s].begin(), predicted[s].end());
    out.gold += static_cast<long>(g.size());
    out.predicted += static_cast<long>(p.size());
    for (const auto& span : p) out.matched += static_cast<long>(g.count(span));
  }
  out.precision = out.predicted > 0 ? static_cast<double>(out.matched) / out.predicted : 0.0;
  out.recall = out.gold > 0 ? static_cast<double>(out.matched) / out.gold : 0.0;
  const double sum = out.precision + out.recall;
  out.f1 = sum > 0.0 ? 2.0 * out.precision * out.recall / sum : 0.0;
  return out;
}

TransferPair parse_pair(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || text.find(':', colon + 1) != std::string::npos) {
    throw ValidationError("transfer pair '" + text + "' must look like SOURCE:TARGET");
  }
  TransferPair pair;
  std::string sources = text.substr(0, colon);
  pair.target = text.substr(colon + 1);
  std::size_t start = 0;
  while (start <= sources.size()) {
    auto plus = sources.find('+', start);
    if (plus == std::string::npos) plus = sources.size();
    pair.sources.push_back(sources.substr(start, plus - start));
    start = plus + 1;
  }
  for (const auto& s : pair.sources) {
    if (s.empty()) throw ValidationError("empty source domain in '" + text + "'");
  }
  if (pair.target.empty()) throw ValidationError("empty target domain in '" + text + "'");
  return pair;
}

std::string pair_label(const TransferPair& pair) {
  std::string out;
  for (std::size_t i = 0; i < pair.sources.size(); ++i) out += (i ? "+" : "") + pair.sources[i];
  return out + "->" + pair.target;
}

std::vector<TransferPair> all_pairs(const std::vector<std::string>& domains) {
  std::vector<TransferPair> pairs;
  for (const auto& s : domains) {
    for (const auto& t : domains) {
      if (s != t) pairs.push_back({{s}, t});
    }
  }
  return pairs;
}

void ExperimentSpec::validate() const {
  if (pairs.empty()) throw ValidationError("experiment has no transfer pairs");
  if (repetitions < 1) throw ValidationError("repetitions must be ≥ 1");
  config.validate();
  encoder.validate();
  for (const auto& p : pairs) {
    if (p.sources.empty()) throw ValidationError("transfer pair without sources");
    for (const auto& s : p.sources) {
      if (s == p.target) throw ValidationError("source equals target in pair " + pair_label(p));
    }
  }
}

EvalReport evaluate(const TrainedModel& model, const DomainCorpus& target, bool keep_details) {
  if (target.test.empty()) throw ValidationError("target " + target.domain_name + " has no test split");
  for (const auto& s : target.test) {
    if (!s.labelled) {
      throw ValidationError("target " + target.domain_name + " test split is unlabelled");
    }
  }
  const auto predictions = predict(model, target.test);
  std::vector<SpanSet> pred, gold;
  EvalReport report;
  for (std::size_t i = 0; i < target.test.size(); ++i) {
    pred.push_back(spans_from_bio(predictions[i]));
    gold.push_back(spans_from_bio(target.test[i].bio_labels));
    if (keep_details) report.per_sentence.push_back({target.test[i].sentence_id, pred.back(), gold.back()});
  }
  const auto prf = span_prf(pred, gold);
  report.target_domain = target.domain_name;
  report.ablation = model.config.ablation;
  report.prompt_length = model.m;
  report.precision = prf.precision;
  report.recall = prf.recall;
  report.f1 = prf.f1;
  report.run_f1 = {prf.f1};
  report.seeds = {model.config.seed};
  report.config_fingerprint = fingerprint(model);
  return report;
}

namespace {

void check_registry(const ExperimentSpec& spec, const CorpusRegistry& corpora) {
  for (const auto& p : spec.pairs) {
    std::vector<std::string> names = p.sources;
    names.push_back(p.target);
    for (const auto& n : names) {
      if (!corpora.count(n)) throw ValidationError("corpus '" + n + "' is not loaded");
    }
    for (const auto& s : p.sources) {
      if (!corpora.at(s).labelled) throw ValidationError("source corpus " + s + " is unlabelled");
    }
    const auto& target = corpora.at(p.target);
    if (target.test.empty() ||
        std::any_of(target.test.begin(), target.test.end(), [](const auto& s) { return !s.labelled; })) {
      throw ValidationError("target " + p.target + " needs a labelled test split");
    }
  }
}

Backbone backbone_for(const ExperimentSpec& spec, std::uint64_t seed) {
  if (spec.backbone_dir) return load_backbone(*spec.backbone_dir);
  return make_tiny_backbone(spec.encoder, seed);
}

EvalReport run_pair(const ExperimentSpec& spec, const CorpusRegistry& corpora, const TransferPair& pair,
                    const TrainConfig& config) {
  std::vector<DomainCorpus> sources;
  for (const auto& s : pair.sources) sources.push_back(corpora.at(s));
  const auto& target = corpora.at(pair.target);

  EvalReport agg;
  std::vector<EvalReport> runs;
  std::string fingerprints;
  for (int r = 0; r < spec.repetitions; ++r) {
    auto cfg = config;
    cfg.seed = config.seed + static_cast<std::uint64_t>(r);
    const auto backbone = backbone_for(spec, cfg.seed);
    PromptBank<float> bank;
    if (cfg.streams().prompts) bank = select_prompts(sources, backbone, cfg);
    const auto result = train(cfg, sources, target, backbone, bank);
    runs.push_back(evaluate(result.model, target, spec.keep_details && r == 0));
    fingerprints += runs.back().config_fingerprint;
  }
  agg = runs.front();
  agg.source_domains = pair.sources;
  agg.run_f1.clear();
  agg.seeds.clear();
  double p = 0, rc = 0, f = 0;
  for (const auto& run : runs) {
    p += run.precision;
    rc += run.recall;
    f += run.f1;
    agg.run_f1.push_back(run.f1);
    agg.seeds.push_back(run.seeds.front());
  }
  const double n = static_cast<double>(runs.size());
  agg.precision = p / n;
  agg.recall = rc / n;
  agg.f1 = f / n;
  if (runs.size() > 1) {
    double ss = 0;
    for (const auto& run : runs) ss += (run.f1 - agg.f1) * (run.f1 - agg.f1);
    agg.f1_stddev = std::sqrt(ss / (n - 1.0));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(hash_string(fingerprints)));
    agg.config_fingerprint = buf;
  }
  return agg;
}

}  // namespace

std::vector<EvalReport> run_experiment(const ExperimentSpec& spec, const CorpusRegistry& corpora) {
  spec.validate();
  check_registry(spec, corpora);
  std::vector<EvalReport> reports;
  for (const auto& pair : spec.pairs) reports.push_back(run_pair(spec, corpora, pair, spec.config));
  return reports;
}

const std::vector<Ablation>& ablation_rows() {
  static const std::vector<Ablation> rows{Ablation::no_syntax, Ablation::no_prompts,
                                          Ablation::backbone_only, Ablation::full};
  return rows;
}

std::string ablation_label(Ablation a) {
  switch (a) {
    case Ablation::no_syntax: return "-w/o Syntax";
    case Ablation::no_prompts: return "-w/o Prompts";
    case Ablation::backbone_only: return "only backbone";
    case Ablation::full: return "full";
  }
  return "?";
}

std::vector<EvalReport> ablate(const ExperimentSpec& spec, const CorpusRegistry& corpora) {
  spec.validate();
  check_registry(spec, corpora);
  std::vector<EvalReport> reports;
  for (const auto& pair : spec.pairs) {
    for (auto a : ablation_rows()) {
      auto cfg = spec.config;
      cfg.ablation = a;
      reports.push_back(run_pair(spec, corpora, pair, cfg));
    }
  }
  return reports;
}

SweepResult sweep_prompt_length(const ExperimentSpec& spec, const CorpusRegistry& corpora,
                                std::vector<int> lengths) {
  if (lengths.empty()) throw ValidationError("sweep needs at least one prompt length");
  for (int l : lengths) {
    if (l < 1) throw ValidationError("prompt lengths must be ≥ 1");
  }
  if (spec.pairs.size() != 1) throw ValidationError("sweep runs on exactly one transfer pair");
  spec.validate();
  check_registry(spec, corpora);
  SweepResult result;
  std::vector<int> unique;
  for (int l : lengths) {
    if (std::find(unique.begin(), unique.end(), l) != unique.end()) {
      result.warnings.push_back("duplicate prompt length " + std::to_string(l) + " ignored");
    } else {
      unique.push_back(l);
    }
  }
  for (int l : unique) {
    auto cfg = spec.config;
    cfg.m = l;
    cfg.ablation = Ablation::full;
    const auto report = run_pair(spec, corpora, spec.pairs.front(), cfg);
    result.points.push_back({l, report.f1, cfg.seed});
  }
  return result;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string join_sources(const std::vector<std::string>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "+" : "") + s[i];
  return out;
}

json spans_json(const SpanSet& spans) {
  json out = json::array();
  for (const auto& s : spans) out.push_back({s.start, s.end});
  return out;
}

}  // namespace

std::string reports_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "sources,target,ablation,prompt_length,precision,recall,f1,f1_stddev,repetitions,config_fingerprint\n";
  for (const auto& r : reports) {
    out << join_sources(r.source_domains) << ',' << r.target_domain << ',' << ablation_label(r.ablation)
        << ',' << r.prompt_length << ',' << fixed(r.precision) << ',' << fixed(r.recall) << ','
        << fixed(r.f1) << ',' << (r.f1_stddev ? fixed(*r.f1_stddev) : "") << ',' << r.run_f1.size()
        << ',' << r.config_fingerprint << '\n';
  }
  return out.str();
}

json reports_json(const std::vector<EvalReport>& reports) {
  json out = json::array();
  for (const auto& r : reports) {
    json row{{"source_domains", r.source_domains},
             {"target_domain", r.target_domain},
             {"ablation", to_string(r.ablation)},
             {"ablation_label", ablation_label(r.ablation)},
             {"prompt_length", r.prompt_length},
             {"precision", r.precision},
             {"recall", r.recall},
             {"f1", r.f1},
             {"f1_stddev", r.f1_stddev ? json(*r.f1_stddev) : json(nullptr)},
             {"run_f1", r.run_f1},
             {"seeds", r.seeds},
             {"config_fingerprint", r.config_fingerprint}};
    if (!r.per_sentence.empty()) {
      json detail = json::array();
      for (const auto& d : r.per_sentence) {
        detail.push_back({{"sentence_id", d.sentence_id},
                          {"predicted", spans_json(d.predicted)},
                          {"gold", spans_json(d.gold)}});
      }
      row["per_sentence"] = detail;
    }
    out.push_back(row);
  }
  return out;
}

std::string sweep_csv(const SweepResult& sweep) {
  std::ostringstream out;
  out << "length,f1,seed\n";
  for (const auto& p : sweep.points) out << p.length << ',' << fixed(p.f1) << ',' << p.seed << '\n';
  return out.str();
}

}  // namespace xprompt
