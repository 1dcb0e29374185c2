#ifndef XPROMPT_OBJECTIVE_HPP
#define XPROMPT_OBJECTIVE_HPP

#include <cmath>
#include <optional>
#include <vector>

#include "xprompt/corpus.hpp"
#include "xprompt/error.hpp"
#include "xprompt/model.hpp"
#include "xprompt/syntax.hpp"

namespace xprompt {

inline int bio_class(Bio label) { return static_cast<int>(label); }
inline Bio class_bio(int cls) { return static_cast<Bio>(cls); }

struct LossBreakdown {
  double prompt_loss = 0.0;
  double syntax_loss = 0.0;
  double total = 0.0;
  long masked_token_count = 0;
};

/// Sum over tokens of -ln p(gold).
template <typename Scalar>
double prompt_loss(const Mat<Scalar>& predictions, const BioSequence& gold) {
  if (static_cast<std::size_t>(predictions.rows()) != gold.size()) {
    throw ValidationError("prompt_loss: " + std::to_string(predictions.rows()) +
                          " predictions for " + std::to_string(gold.size()) + " labels");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    loss -= std::log(static_cast<double>(predictions(static_cast<Eigen::Index>(i), bio_class(gold[i]))));
  }
  return loss;
}

/// Sum over masked positions of -ln p(gold tag); unmasked positions add 0.
template <typename Scalar>
double syntax_loss(const Mat<Scalar>& predictions, const std::vector<int>& gold_pos,
                   const MaskPlan& plan) {
  if (static_cast<std::size_t>(predictions.rows()) != plan.indicator.size() ||
      gold_pos.size() != plan.indicator.size()) {
    throw ValidationError("syntax_loss: indicator, predictions and gold lengths differ");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < gold_pos.size(); ++i) {
    if (plan.indicator[i] == 0) continue;
    loss -= std::log(static_cast<double>(predictions(static_cast<Eigen::Index>(i), gold_pos[i])));
  }
  return loss;
}

inline LossBreakdown joint_loss(double lp, double ls, double alpha, double beta) {
  if (!(lp >= 0.0) || !(ls >= 0.0)) throw ValidationError("losses must be nonnegative");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ValidationError("alpha and beta must be >= 0");
  LossBreakdown out;
  out.prompt_loss = lp;
  out.syntax_loss = ls;
  out.total = alpha * lp + beta * ls;
  return out;
}

enum class Reduction { mean, sum };

/// One sentence prepared for the objective.
struct TrainingExample {
  SentenceInput input;
  std::optional<BioSequence> gold_bio;  // absent for unlabelled target data
  std::vector<int> gold_pos;
  MaskPlan plan;
};

struct ObjectiveOptions {
  double alpha = 1.0;
  double beta = 0.5;
  Reduction reduction = Reduction::mean;
  StreamSwitches streams;
  bool train_backbone = false;
};

/// Joint loss of a batch and, when `grad` is given, its gradient w.r.t.
/// every parameter reachable from the loss (accumulated into `grad`).
///
/// Mean reduction divides the prompt term by the labelled token count and
/// the syntax term by the masked token count of the batch.
template <typename Scalar>
LossBreakdown joint_objective(const ModelParams<Scalar>& p, const EncoderConfig& cfg,
                              const std::vector<const TrainingExample*>& batch,
                              const ObjectiveOptions& opt, ModelParams<Scalar>* grad) {
  long labelled_tokens = 0, masked_tokens = 0;
  for (const auto* ex : batch) {
    if (ex->gold_bio) labelled_tokens += static_cast<long>(ex->gold_bio->size());
    for (auto flag : ex->plan.indicator) masked_tokens += flag;
  }
  const bool use_syntax = opt.beta > 0.0 && opt.streams.pos;
  const double prompt_norm =
      opt.reduction == Reduction::mean && labelled_tokens > 0 ? 1.0 / labelled_tokens : 1.0;
  const double syntax_norm =
      opt.reduction == Reduction::mean && masked_tokens > 0 ? 1.0 / masked_tokens : 1.0;

  double lp = 0.0, ls = 0.0;
  long counted_masked = 0;
  for (const auto* ex : batch) {
    ForwardCache<Scalar> cache;
    const auto features = encode_inputs(p, cfg, ex->input, opt.streams, cache);
    const auto n = features.fused.rows();
    Mat<Scalar> d_fused = Mat<Scalar>::Zero(n, features.fused.cols());

    if (ex->gold_bio) {
      const Mat<Scalar> probs = classify_aspect(features, p.aspect);
      lp += prompt_loss(probs, *ex->gold_bio);
      if (grad != nullptr) {
        Mat<Scalar> d_logits = probs;
        for (Eigen::Index i = 0; i < n; ++i) d_logits(i, bio_class((*ex->gold_bio)[i])) -= Scalar(1);
        d_logits *= static_cast<Scalar>(opt.alpha * prompt_norm);
        grad->aspect.weight += features.fused.transpose() * d_logits;
        grad->aspect.bias += d_logits.colwise().sum();
        d_fused += d_logits * p.aspect.weight.transpose();
      }
    }
    if (use_syntax) {
      const Mat<Scalar> probs = classify_pos(features, p.syntax);
      ls += syntax_loss(probs, ex->gold_pos, ex->plan);
      for (auto flag : ex->plan.indicator) counted_masked += flag;
      if (grad != nullptr) {
        Mat<Scalar> d_logits = probs;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (ex->plan.indicator[static_cast<std::size_t>(i)] == 0) {
            d_logits.row(i).setZero();
          } else {
            d_logits(i, ex->gold_pos[static_cast<std::size_t>(i)]) -= Scalar(1);
          }
        }
        d_logits *= static_cast<Scalar>(opt.beta * syntax_norm);
        grad->syntax.weight += features.fused.transpose() * d_logits;
        grad->syntax.bias += d_logits.colwise().sum();
        d_fused += d_logits * p.syntax.weight.transpose();
      }
    }
    if (grad != nullptr) {
      fused_backward(p, cfg, ex->input, opt.streams, cache, d_fused, *grad, opt.train_backbone);
    }
  }
  auto out = joint_loss(lp * prompt_norm, use_syntax ? ls * syntax_norm : 0.0, opt.alpha,
                        use_syntax ? opt.beta : 0.0);
  out.masked_token_count = use_syntax ? counted_masked : 0;
  return out;
}

}  // namespace xprompt

#endif  // XPROMPT_OBJECTIVE_HPP
