#pragma once

// LSTM backbone over attributed event sequences.
//
// An event is embedded as
//   x = E_type[type] + sum_c E_cat[c] + P * value_n
// and the episode is read by a standard LSTM (gates i, f, g, o). The
// probability of death is sigmoid(w . h_T + b).
//
// Parameter layout, in order (rows x cols):
//   type_embedding         event_types x d
//   categorical_embedding  categorical_values x d
//   numeric_projection     d x numeric_dims
//   lstm_input_weights     4h x d
//   lstm_recurrent_weights 4h x h
//   lstm_bias              4h x 1
//   output_weights         h x 1
//   output_bias            1 x 1
// so L = (event_types + categorical_values) d + d numeric_dims + 4h (d + h + 1) + h + 1.

#include "adasit/data.hpp"
#include "adasit/objective.hpp"
#include "adasit/params.hpp"

#include <cstdint>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

namespace adasit {

struct ModelConfig {
  std::size_t event_types = 1;
  std::size_t categorical_values = 0;
  std::size_t numeric_dims = 0;
  std::size_t embed_dim = 8;
  std::size_t hidden_dim = 8;
  double init_scale = 0.1;
  double forget_bias = 1.0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& config);
std::uint64_t config_hash(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);
/// Model config sized to a dataset's vocabulary.
ModelConfig model_config_for(const Vocabulary& vocab, std::size_t embed_dim = 8, std::size_t hidden_dim = 8);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig defaults = {});

/// CE with the probability clamped to [1e-7, 1 - 1e-7].
double cross_entropy(double p, int label) noexcept;

class Backbone final : public Objective {
 public:
  static constexpr double kProbClamp = 1e-7;

  explicit Backbone(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const std::shared_ptr<const ParamLayout>& layout() const noexcept { return layout_; }

  /// Uniform in [-init_scale, init_scale]; forget-gate bias shifted by forget_bias.
  ParamVector init_params(std::uint64_t seed) const;
  ParamVector zeros() const { return ParamVector(layout_); }

  std::vector<double> embed_event(const ParamVector& params, const EventRecord& event) const;
  double forward(const ParamVector& params, const EpisodeSample& sample) const;

  double predict(const ParamVector& params, const EpisodeSample& sample) const override {
    return forward(params, sample);
  }
  /// Sum of cross-entropies over the batch.
  double loss(const ParamVector& params, SampleBatch batch) const override;
  /// Backpropagation through time; throws naming the block if a gradient is non-finite.
  double loss_grad(const ParamVector& params, SampleBatch batch, ParamVector& grad) const override;

 private:
  struct Blocks {
    ParamBlock type_emb, cat_emb, num_proj, w_in, w_rec, bias, w_out, b_out;
  };

  void check_params(const ParamVector& params) const;
  void check_event(const EventRecord& event) const;
  void embed_into(const ParamVector& params, const EventRecord& event, std::span<double> x) const;
  /// Accumulates d(loss)/d(params) into grad for one sample, returns its loss.
  double accumulate_sample(const ParamVector& params, const EpisodeSample& sample, ParamVector& grad) const;

  ModelConfig config_;
  std::shared_ptr<const ParamLayout> layout_;
  Blocks blocks_;
};

}  // namespace adasit
