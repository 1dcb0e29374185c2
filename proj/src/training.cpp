#include "xprompt/training.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>

#include "xprompt/checkpoint.hpp"
#include "xprompt/error.hpp"
#include "xprompt/random.hpp"

namespace xprompt {

using nlohmann::json;

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_syntax: return "no_syntax";
    case Ablation::no_prompts: return "no_prompts";
    case Ablation::backbone_only: return "backbone_only";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  for (auto a : {Ablation::full, Ablation::no_syntax, Ablation::no_prompts, Ablation::backbone_only}) {
    if (to_string(a) == name) return a;
  }
  throw ValidationError("unknown ablation '" + name +
                        "' (expected full, no_syntax, no_prompts or backbone_only)");
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw ValidationError("alpha must be ≥ 0");
  if (!(beta >= 0.0)) throw ValidationError("beta must be ≥ 0");
  if (alpha == 0.0 && beta == 0.0) throw ValidationError("alpha and beta cannot both be 0");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ValidationError("mask-rate must lie in [0, 1]");
  if (m < 1) throw ValidationError("m must be ≥ 1");
  if (!(learning_rate > 0.0)) throw ValidationError("lr must be > 0");
  if (epochs < 1) throw ValidationError("epochs must be ≥ 1");
  if (batch_size < 1) throw ValidationError("batch-size must be ≥ 1");
  if (min_count < 1) throw ValidationError("min-count must be ≥ 1");
  if (max_steps < 0) throw ValidationError("max-steps must be ≥ 0");
  if (prompt_pool != 0 && prompt_pool < m) throw ValidationError("prompt-pool must be ≥ m");
}

StreamSwitches TrainConfig::streams() const {
  StreamSwitches s;
  s.prompts = ablation == Ablation::full || ablation == Ablation::no_syntax;
  s.pos = ablation == Ablation::full || ablation == Ablation::no_prompts;
  return s;
}

double TrainConfig::effective_beta() const { return streams().pos ? beta : 0.0; }

json to_json(const TrainConfig& c) {
  return json{{"alpha", c.alpha},
              {"beta", c.beta},
              {"mask_rate", c.mask_rate},
              {"m", c.m},
              {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"freeze_backbone", c.freeze_backbone},
              {"ablation", to_string(c.ablation)},
              {"min_count", c.min_count},
              {"max_steps", c.max_steps},
              {"reduction", c.reduction == Reduction::mean ? "mean" : "sum"},
              {"prompt_selection", c.prompt_selection == PromptSelection::global ? "global" : "per_input"},
              {"prompt_pool", c.prompt_pool},
              {"target_syntax_loss", c.target_syntax_loss},
              {"mask_at_inference", c.mask_at_inference},
              {"record_wall_time", c.record_wall_time}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "alpha") c.alpha = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "mask_rate") c.mask_rate = value.get<double>();
      else if (key == "m") c.m = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "freeze_backbone") c.freeze_backbone = value.get<bool>();
      else if (key == "ablation") c.ablation = parse_ablation(value.get<std::string>());
      else if (key == "min_count") c.min_count = value.get<int>();
      else if (key == "max_steps") c.max_steps = value.get<int>();
      else if (key == "reduction") {
        const auto r = value.get<std::string>();
        if (r != "mean" && r != "sum") throw ValidationError("reduction must be mean or sum");
        c.reduction = r == "mean" ? Reduction::mean : Reduction::sum;
      } else if (key == "prompt_selection") {
        const auto r = value.get<std::string>();
        if (r != "global" && r != "per_input") {
          throw ValidationError("prompt_selection must be global or per_input");
        }
        c.prompt_selection = r == "global" ? PromptSelection::global : PromptSelection::per_input;
      } else if (key == "prompt_pool") c.prompt_pool = value.get<int>();
      else if (key == "target_syntax_loss") c.target_syntax_loss = value.get<bool>();
      else if (key == "mask_at_inference") c.mask_at_inference = value.get<bool>();
      else if (key == "record_wall_time") c.record_wall_time = value.get<bool>();
      else throw ValidationError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

json to_json(const EncoderConfig& c) {
  return json{{"hidden_width", c.hidden_width}, {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},       {"ffn_width", c.ffn_width},
              {"max_length", c.max_length},     {"pretrained", c.pretrained}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  try {
    c.hidden_width = j.at("hidden_width").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.ffn_width = j.at("ffn_width").get<int>();
    c.max_length = j.at("max_length").get<int>();
    c.pretrained = j.at("pretrained").get<bool>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

Backbone make_tiny_backbone(const EncoderConfig& config, std::uint64_t seed) {
  Backbone b;
  b.config = config;
  b.config.pretrained = false;
  b.vocab = SubwordVocab::characters();
  b.weights = init_model<float>(b.config, b.vocab.size(), 1, 0, seed);
  return b;
}

Backbone load_backbone(const std::filesystem::path& dir) {
  auto model = load_checkpoint(dir);
  Backbone b;
  b.config = model.encoder;
  b.config.pretrained = true;
  b.vocab = std::move(model.vocab);
  b.weights = std::move(model.params);
  return b;
}

PromptBank<float> select_prompts(const std::vector<DomainCorpus>& sources, const Backbone& backbone,
                                 const TrainConfig& config) {
  auto candidates = extract_pivot_candidates(sources, config.min_count);
  if (candidates.empty()) {
    throw ValidationError("no token reaches min_count=" + std::to_string(config.min_count) +
                          " in every source domain; lower min_count");
  }
  const StaticEmbedder embedder(backbone.weights.token_embedding, backbone.vocab);
  const auto ranked = rank_candidates(std::move(candidates), embedder, collect_aspect_tokens(sources));
  int rows = config.m;
  if (config.prompt_selection == PromptSelection::per_input) {
    rows = config.prompt_pool > 0 ? config.prompt_pool : 2 * config.m;
    rows = std::min<int>(rows, static_cast<int>(ranked.size()));
  }
  return build_prompt_bank(ranked, config.m, embedder, rows);
}

Adam::Adam(const ModelParams<float>& shape, double learning_rate, double beta1, double beta2,
           double eps)
    : m_(shape.zeros_like()), v_(shape.zeros_like()), lr_(learning_rate), beta1_(beta1),
      beta2_(beta2), eps_(eps) {}

void Adam::step(ModelParams<float>& params, ModelParams<float>& grad,
                const std::vector<ParamGroup>& trainable) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float step = static_cast<float>(lr_ / c1);
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  auto P = params.tensors();
  auto G = grad.tensors();
  auto M = m_.tensors();
  auto V = v_.tensors();
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (std::find(trainable.begin(), trainable.end(), P[i].group) == trainable.end()) continue;
    auto g = G[i].value->array();
    auto m = M[i].value->array();
    auto v = V[i].value->array();
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    P[i].value->array() -= step * m / ((v * inv_c2).sqrt() + eps);
  }
}

namespace {

struct SourceItem {
  const TaggedSentence* sentence;
  bool labelled;
};

RowVec<double> sentence_mean(const StaticEmbedder& embedder, const std::vector<std::string>& tokens) {
  RowVec<double> sum = RowVec<double>::Zero(embedder.width());
  for (const auto& t : tokens) sum += embedder.embed(t);
  return sum / static_cast<double>(tokens.size());
}

std::vector<int> rows_for(const Mat<float>& bank, PromptSelection mode, int m,
                          const StaticEmbedder& embedder, const std::vector<std::string>& tokens) {
  if (mode == PromptSelection::per_input) {
    return select_prompt_rows(bank, sentence_mean(embedder, tokens), m);
  }
  std::vector<int> rows(static_cast<std::size_t>(m));
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

std::vector<ParamGroup> trainable_groups(const TrainConfig& c) {
  std::vector<ParamGroup> groups{ParamGroup::heads};
  if (c.streams().prompts) groups.push_back(ParamGroup::prompts);
  if (!c.freeze_backbone) groups.push_back(ParamGroup::backbone);
  return groups;
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.prompt_loss) && std::isfinite(l.syntax_loss) && std::isfinite(l.total);
}

}  // namespace

json log_header(const TrainConfig& config, const EncoderConfig& encoder) {
  return json{{"header",
               {{"config", to_json(config)},
                {"encoder", to_json(encoder)},
                {"optimizer", "adam"},
                {"math_mode", "single-threaded"}}}};
}

std::string format_log(const TrainConfig& config, const EncoderConfig& encoder,
                       const std::vector<EpochLog>& epochs) {
  std::ostringstream out;
  out << log_header(config, encoder).dump() << '\n';
  const bool syntax = config.effective_beta() > 0.0;
  for (const auto& e : epochs) {
    // ordered_json keeps the documented key order.
    nlohmann::ordered_json row;
    row["epoch"] = e.epoch;
    row["prompt_loss"] = e.loss.prompt_loss;
    if (syntax) row["syntax_loss"] = e.loss.syntax_loss;
    row["total"] = e.loss.total;
    row["masked_token_count"] = e.loss.masked_token_count;
    row["steps"] = e.steps;
    row["wall_time_s"] = e.wall_time_s ? json(*e.wall_time_s) : json(nullptr);
    out << row.dump() << '\n';
  }
  return out.str();
}

TrainResult train(const TrainConfig& requested, const std::vector<DomainCorpus>& sources,
                  const DomainCorpus& target, const Backbone& backbone,
                  const PromptBank<float>& bank, const TrainOutputs& outputs) {
  requested.validate();
  // Ablations without the syntax stream run (and log) with beta = 0.
  TrainConfig config = requested;
  config.beta = requested.effective_beta();
  config.validate();
  backbone.config.validate();
  if (sources.empty()) throw ValidationError("need at least one source corpus");
  for (const auto& s : sources) {
    if (!s.labelled) throw ValidationError("source corpus " + s.domain_name + " is unlabelled");
    if (s.domain_name == target.domain_name) {
      throw ValidationError("source and target domain are both " + s.domain_name);
    }
  }
  const auto streams = config.streams();
  const double beta = config.effective_beta();
  if (streams.prompts) {
    if (bank.m != config.m) throw ValidationError("prompt bank m differs from config m");
    if (bank.width() != backbone.config.hidden_width) {
      throw ValidationError("prompt bank width differs from encoder width");
    }
  }

  TrainResult result;
  auto& model = result.model;
  model.encoder = backbone.config;
  model.config = config;
  model.vocab = backbone.vocab;
  for (const auto& s : sources) model.pos_vocab.add_corpus(s);
  model.pos_vocab.add_corpus(target);
  model.params = backbone.weights;
  if (streams.prompts) {
    model.params.prompts = bank.vectors;
    model.provenance = bank.provenance;
    model.m = bank.m;
  } else {
    model.params.prompts = Mat<float>::Zero(0, backbone.config.hidden_width);
    model.m = 0;
  }
  init_heads(model.params, model.pos_vocab.size(), config.seed);

  std::vector<SourceItem> items;
  for (const auto& corpus : sources) {
    for (const auto& s : corpus.train) items.push_back({&s, true});
  }
  if (config.target_syntax_loss && streams.pos) {
    for (const auto& s : target.train) items.push_back({&s, false});
  }
  if (items.empty()) throw ValidationError("source corpora have no training sentences");

  std::vector<std::vector<int>> gold_pos(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (const auto& t : items[i].sentence->pos_tags) gold_pos[i].push_back(model.pos_vocab.id(t));
  }

  ObjectiveOptions opt;
  opt.alpha = config.alpha;
  opt.beta = beta;
  opt.reduction = config.reduction;
  opt.streams = streams;
  opt.train_backbone = !config.freeze_backbone;
  const auto groups = trainable_groups(config);

  Adam adam(model.params, config.learning_rate);
  auto grad = model.params.zeros_like();
  ModelParams<float> last_finite = model.params;
  const StaticEmbedder embedder(backbone.weights.token_embedding, backbone.vocab);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto finish = [&] {
    if (outputs.checkpoint_dir) save_checkpoint(model, *outputs.checkpoint_dir);
    if (outputs.log_path) {
      write_file_atomic(*outputs.log_path, format_log(config, model.encoder, result.epochs));
    }
  };

  bool stop = false;
  for (int epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    Rng shuffle(derive_seed(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.uniform_index(i)]);
    }

    std::vector<TrainingExample> examples(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& s = *items[i].sentence;
      auto& ex = examples[i];
      std::vector<std::string> pos_stream = s.pos_tags;
      if (streams.pos) {
        auto [masked, plan] =
            apply_pos_mask(s.pos_tags, config.mask_rate,
                           mask_seed(config.seed, static_cast<std::uint64_t>(epoch), s.sentence_id));
        pos_stream = std::move(masked);
        ex.plan = std::move(plan);
      } else {
        ex.plan = empty_mask_plan(s.size());
      }
      const auto rows = streams.prompts ? rows_for(model.params.prompts, config.prompt_selection,
                                                   config.m, embedder, s.tokens)
                                        : std::vector<int>{};
      ex.input = make_input(s.sentence_id, s.tokens, pos_stream, model.vocab, rows,
                            model.encoder.max_length);
      if (items[i].labelled) ex.gold_bio = s.bio_labels;
      ex.gold_pos = gold_pos[i];
    }

    EpochLog log;
    log.epoch = epoch;
    double sum_lp = 0.0, sum_ls = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const TrainingExample*> batch;
      for (auto k = start; k < end; ++k) batch.push_back(&examples[order[k]]);
      for (auto& t : grad.tensors()) t.value->setZero();
      const auto loss = joint_objective(model.params, model.encoder, batch, opt, &grad);
      if (!finite(loss)) {
        bool params_finite = true;
        for (auto& t : model.params.tensors()) params_finite = params_finite && t.value->allFinite();
        if (!params_finite) model.params = last_finite;
        result.epochs.push_back(log);
        finish();
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(result.steps + 1) +
                              "; last finite state saved");
      }
      last_finite = model.params;
      adam.step(model.params, grad, groups);
      ++result.steps;
      ++log.steps;
      ++batches;
      sum_lp += loss.prompt_loss;
      sum_ls += loss.syntax_loss;
      log.loss.masked_token_count += loss.masked_token_count;
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        stop = true;
        break;
      }
    }
    const auto masked = log.loss.masked_token_count;
    log.loss = joint_loss(sum_lp / batches, sum_ls / batches, config.alpha, beta);
    log.loss.masked_token_count = masked;
    if (config.record_wall_time) {
      log.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    result.epochs.push_back(log);
  }
  finish();
  return result;
}

std::vector<int> prompt_rows_for(const TrainedModel& model, const std::vector<std::string>& tokens) {
  if (!model.config.streams().prompts || model.m == 0) return {};
  const StaticEmbedder embedder(model.params.token_embedding, model.vocab);
  return rows_for(model.params.prompts, model.config.prompt_selection, model.m, embedder, tokens);
}

std::vector<BioSequence> predict(const TrainedModel& model,
                                 const std::vector<TaggedSentence>& sentences) {
  const auto streams = model.config.streams();
  std::vector<BioSequence> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    auto pos_stream = s.pos_tags;
    if (streams.pos && model.config.mask_at_inference) {
      pos_stream = apply_pos_mask(s.pos_tags, model.config.mask_rate,
                                  mask_seed(model.config.seed, 0, s.sentence_id))
                       .first;
    }
    const auto input = make_input(s.sentence_id, s.tokens, pos_stream, model.vocab,
                                  prompt_rows_for(model, s.tokens), model.encoder.max_length);
    const auto features = encode_inputs(model.params, model.encoder, input, streams);
    const Mat<float> probs = classify_aspect(features, model.params.aspect);
    BioSequence labels(s.size());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      Eigen::Index best = 0;
      probs.row(i).maxCoeff(&best);
      labels[static_cast<std::size_t>(i)] = class_bio(static_cast<int>(best));
    }
    out.push_back(repair_bio(std::move(labels)));
  }
  return out;
}

}  // namespace xprompt
