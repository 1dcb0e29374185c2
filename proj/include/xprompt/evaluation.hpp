#ifndef XPROMPT_EVALUATION_HPP
#define XPROMPT_EVALUATION_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xprompt/corpus.hpp"
#include "xprompt/training.hpp"

namespace xprompt {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long matched = 0, predicted = 0, gold = 0;
};

/// Exact-match micro-averaged span precision/recall/F1.
PRF span_prf(const std::vector<SpanSet>& predicted, const std::vector<SpanSet>& gold);

struct SentenceDetail {
  std::string sentence_id;
  SpanSet predicted;
  SpanSet gold;
};

struct EvalReport {
  std::vector<std::string> source_domains;
  std::string target_domain;
  Ablation ablation = Ablation::full;
  int prompt_length = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::optional<double> f1_stddev;  // only with repetitions > 1
  std::vector<double> run_f1;
  std::vector<std::uint64_t> seeds;
  std::vector<SentenceDetail> per_sentence;
  std::string config_fingerprint;
};

struct TransferPair {
  std::vector<std::string> sources;
  std::string target;
};

/// "R:L" or "R+L:D" (multi-source).
TransferPair parse_pair(const std::string& text);
std::string pair_label(const TransferPair& pair);
/// Every ordered pair of distinct domains.
std::vector<TransferPair> all_pairs(const std::vector<std::string>& domains);

struct ExperimentSpec {
  std::vector<TransferPair> pairs;
  TrainConfig config;
  EncoderConfig encoder;
  /// Pretrained backbone checkpoint; the seeded tiny encoder when absent.
  std::optional<std::filesystem::path> backbone_dir;
  int repetitions = 1;
  bool keep_details = false;

  void validate() const;
};

using CorpusRegistry = std::map<std::string, DomainCorpus>;

/// Scores a trained model on the target test split.
EvalReport evaluate(const TrainedModel& model, const DomainCorpus& target, bool keep_details = false);

/// Train on each pair's sources, test on its target; F1 averaged over
/// repetitions (seed, seed+1, ...).
std::vector<EvalReport> run_experiment(const ExperimentSpec& spec, const CorpusRegistry& corpora);

/// Row order of the ablation table.
const std::vector<Ablation>& ablation_rows();
std::string ablation_label(Ablation a);

/// Four rows per pair, same seeds in every row.
std::vector<EvalReport> ablate(const ExperimentSpec& spec, const CorpusRegistry& corpora);

struct SweepPoint {
  int length;
  double f1;
  std::uint64_t seed;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<std::string> warnings;
};

SweepResult sweep_prompt_length(const ExperimentSpec& spec, const CorpusRegistry& corpora,
                                std::vector<int> lengths);

std::string reports_csv(const std::vector<EvalReport>& reports);
nlohmann::json reports_json(const std::vector<EvalReport>& reports);
std::string sweep_csv(const SweepResult& sweep);

}  // namespace xprompt

#endif  // XPROMPT_EVALUATION_HPP
