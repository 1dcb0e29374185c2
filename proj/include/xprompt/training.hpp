#ifndef XPROMPT_TRAINING_HPP
#define XPROMPT_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xprompt/corpus.hpp"
#include "xprompt/model.hpp"
#include "xprompt/objective.hpp"
#include "xprompt/prompts.hpp"
#include "xprompt/syntax.hpp"
#include "xprompt/vocab.hpp"

namespace xprompt {

enum class Ablation { full, no_syntax, no_prompts, backbone_only };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& name);

enum class PromptSelection { global, per_input };

struct TrainConfig {
  double alpha = 1.0;
  double beta = 0.5;
  double mask_rate = 0.25;
  int m = 3;
  double learning_rate = 2e-3;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 13;
  bool freeze_backbone = true;
  Ablation ablation = Ablation::full;

  int min_count = 2;
  /// 0 means no cap; otherwise training stops after this many optimizer steps.
  int max_steps = 0;
  Reduction reduction = Reduction::mean;
  PromptSelection prompt_selection = PromptSelection::global;
  /// Bank rows for per-input selection (0 = 2m).
  int prompt_pool = 0;
  bool target_syntax_loss = false;
  bool mask_at_inference = false;
  bool record_wall_time = false;

  void validate() const;
  /// Switches and effective beta implied by the ablation setting.
  StreamSwitches streams() const;
  double effective_beta() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);
/// Flat JSON mirroring the fields above; missing keys keep their defaults,
/// unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path);

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// Shared encoder plus its input vocabulary. Only the backbone tensors of
/// `weights` are meaningful.
struct Backbone {
  EncoderConfig config;
  SubwordVocab vocab;
  ModelParams<float> weights;
};

/// Seeded tiny encoder over a character vocabulary.
Backbone make_tiny_backbone(const EncoderConfig& config, std::uint64_t seed);
/// Backbone tensors and vocabulary from a checkpoint directory.
Backbone load_backbone(const std::filesystem::path& dir);

/// Everything needed to run the trained model.
struct TrainedModel {
  EncoderConfig encoder;
  TrainConfig config;
  SubwordVocab vocab;
  PosVocabulary pos_vocab;
  ModelParams<float> params;
  std::vector<PromptCandidate> provenance;
  int m = 0;
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown loss;
  int steps = 0;
  std::optional<double> wall_time_s;
};

struct TrainResult {
  TrainedModel model;
  std::vector<EpochLog> epochs;
  int steps = 0;
};

/// Candidate extraction, ranking and bank construction for the given sources.
PromptBank<float> select_prompts(const std::vector<DomainCorpus>& sources, const Backbone& backbone,
                                 const TrainConfig& config);

/// Adaptive-moment optimizer over the trainable parameter groups.
class Adam {
 public:
  Adam(const ModelParams<float>& shape, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step(ModelParams<float>& params, ModelParams<float>& grad,
            const std::vector<ParamGroup>& trainable);
  long steps() const { return t_; }

 private:
  ModelParams<float> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> log_path;
};

/// Joint training on the source corpora. Deterministic for a fixed seed.
/// On a non-finite loss the last finite state is written (when a
/// checkpoint directory is given) and DivergenceError is thrown.
TrainResult train(const TrainConfig& config, const std::vector<DomainCorpus>& sources,
                  const DomainCorpus& target, const Backbone& backbone,
                  const PromptBank<float>& bank, const TrainOutputs& outputs = {});

nlohmann::json log_header(const TrainConfig& config, const EncoderConfig& encoder);
std::string format_log(const TrainConfig& config, const EncoderConfig& encoder,
                       const std::vector<EpochLog>& epochs);

/// Prompt rows a sentence uses under the model's selection mode.
std::vector<int> prompt_rows_for(const TrainedModel& model, const std::vector<std::string>& tokens);

/// Argmax BIO labels (repaired) per sentence; masking only if configured.
std::vector<BioSequence> predict(const TrainedModel& model,
                                 const std::vector<TaggedSentence>& sentences);

}  // namespace xprompt

#endif  // XPROMPT_TRAINING_HPP
