#pragma once

#include "dcfuse/datasynth.hpp"
#include "dcfuse/focusdet.hpp"
#include "dcfuse/fusenet.hpp"
#include "dcfuse/losses.hpp"
#include "dcfuse/manifest.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dcfuse {

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
    double decay_rate = 0.9;
    int decay_every = 5;
    int batch_size = 16;
    int epochs = 120;
    std::uint64_t seed = 0;
    losses::LossWeights weights;
    bool use_dfpp = true;     // fusion only
    int checkpoint_every = 0; // epochs; 0 disables periodic checkpoints
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are an error.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

// lr0 * decay_rate^floor(epoch / decay_every), epochs counted from 0.
double learning_rate_at(const TrainConfig& cfg, int epoch);

struct AdamState {
    std::int64_t step = 0;
    std::vector<torch::Tensor> m, v;
};

// One bias-corrected Adam update in place. Undefined gradients count as zero.
void adam_step(std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& grads, AdamState& state,
               const TrainConfig& cfg, double lr);

// Samples with their manifest ids, split into training and validation by
// stable_hash64(id) % 10 == 0.
struct TrainingData {
    std::vector<MultiFocusSample> samples;
    std::vector<std::string> ids;
    std::vector<std::size_t> train, validation;
};
bool is_validation_id(const std::string& id);
TrainingData make_training_data(std::vector<MultiFocusSample> samples, std::vector<std::string> ids);
TrainingData load_training_data(const DatasetManifest& manifest);

// Epoch order over `count` items; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    losses::LossBreakdown train;                     // detector: only total is used
    std::optional<losses::LossBreakdown> validation; // mean over the validation split
    std::optional<double> validation_miou;           // detector only
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::string kind; // "fusion" or "detector"
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    // Deterministic part; wall times go to a separate "timing" block.
    nlohmann::ordered_json to_json() const;
};

struct TrainHooks {
    std::filesystem::path checkpoint_dir; // periodic and best checkpoints; empty disables
    std::filesystem::path nan_dump_dir;   // where the offending batch is written; empty: current dir
    std::function<void(const EpochRecord&)> on_epoch;
};

// Fresh, seeded initial weights.
FusionNet init_fusion_net(const FusionNetConfig& cfg, std::uint64_t seed);
FocusDetector init_detector(const FocusDetectorConfig& cfg, std::uint64_t seed);

// Trains in place. Best model: highest validation MIoU (lowest training loss
// without a validation split); its weights are loaded before returning.
TrainLog train_detector(FocusDetector& det, const TrainingData& data, const TrainConfig& cfg,
                        const TrainHooks& hooks = {});

// Trains in place. Best model: lowest validation total loss (training loss
// without a validation split). The detector's checksum is verified before and
// after training. Aborts with Error("nan") after dumping the batch when the
// loss is not finite.
TrainLog train_fusion(FusionNet& model, std::shared_ptr<const FrozenDetector> detector,
                      std::shared_ptr<const losses::FeatureBackbone> backbone, const TrainingData& data,
                      const TrainConfig& cfg, const TrainHooks& hooks = {});

// Mean loss breakdown over `indices` in eval mode.
losses::LossBreakdown evaluate_loss(FusionNet& model, const losses::LossContext& ctx,
                                    const std::vector<MultiFocusSample>& samples,
                                    const std::vector<std::size_t>& indices, int batch_size);

// Mean MIoU of predict(S1, S2) against the focus maps over `indices`.
double evaluate_miou(FocusDetector& det, const std::vector<MultiFocusSample>& samples,
                     const std::vector<std::size_t>& indices, int batch_size);

} // namespace dcfuse
