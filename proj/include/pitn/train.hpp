#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pitn/adversarial.hpp"
#include "pitn/diagnostics.hpp"
#include "pitn/losses.hpp"
#include "pitn/model.hpp"
#include "pitn/signal.hpp"
#include "pitn/standardize.hpp"

namespace pitn {

enum class Augmentation { Pgd, Flip };

std::string to_string(Augmentation a);
Augmentation parse_augmentation(const std::string& text);

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 200;
    std::size_t patience = 30;  // epochs without improvement before the plateau warning
    bool early_stop = false;    // also stop training at the plateau
    double gamma = 1.0;
    double y_shift = 2.0;  // mmHg
    double tau = 0.07;
    bool normalize_embeddings = true;
    bool detach_grad_u = false;
    bool adversarial = true;  // generate augmented samples and train the auxiliary route
    bool contrastive = true;
    Augmentation augmentation = Augmentation::Pgd;
    PgdConfig pgd;
    ModelHyper model;  // seq_len, channels and n_features are taken from the data
    std::uint64_t seed = 0;
    BpType bp_type = BpType::Sbp;

    /// Throws ConfigError on out-of-range values.
    void validate() const;
    /// Same config with physics, augmentation and contrastive terms disabled.
    TrainConfig base() const;
};

struct EpochLog {
    std::size_t epoch = 0;
    LossBreakdown loss;
    double wall_ms = 0.0;
};

struct TrainResult {
    ModelState model;
    Standardizer standardizer;
    std::vector<EpochLog> log;
    bool early_stopped = false;
};

/// Full-batch training on the split's training beats, ordered by beat index.
TrainResult train_subject(std::span<const BeatRecord> beats, const SplitPlan& split, const TrainConfig& cfg,
                          Diagnostics* diag = nullptr);

/// Predictions in mmHg under the primary route.
std::vector<double> predict(std::span<const BeatRecord> beats, const ModelState& model, const Standardizer& scaler);

/// One JSON object per epoch, without a trailing newline.
std::string to_json_line(const EpochLog& log);

}  // namespace pitn
