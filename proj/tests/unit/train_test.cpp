#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "pitn/synth.hpp"
#include "pitn/train.hpp"

using namespace pitn;

namespace {

struct Subject {
    std::vector<BeatRecord> beats;
    SplitPlan split;
};

const Subject& linear_subject()
{
    static const Subject s = [] {
        SynthConfig cfg;
        cfg.n_beats = 120;
        cfg.bp_map = BpMap{}.affine();
        cfg.seed = 3;
        Subject out;
        out.beats = preprocess_recording(generate(cfg).recording, SegmentConfig{});
        out.split = minimal_split(out.beats, BpType::Sbp, 0.5, 0);
        return out;
    }();
    return s;
}

TrainConfig small_config(std::size_t epochs)
{
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.model.d_model = 8;
    cfg.model.num_blocks = 1;
    return cfg;
}

}  // namespace

TEST(Train, DegenerateConfigIsPlainMseAndDecreases)
{
    TrainConfig cfg = small_config(10);
    cfg.gamma = 0.0;
    cfg.pgd.epsilon = 0.0;
    cfg.y_shift = 0.0;
    cfg.learning_rate = 3e-3;
    const TrainResult r = train_subject(linear_subject().beats, linear_subject().split, cfg);
    ASSERT_EQ(r.log.size(), 10u);
    for (std::size_t e = 0; e < r.log.size(); ++e) {
        const LossBreakdown& l = r.log[e].loss;
        EXPECT_EQ(l.l_con, 0.0);
        EXPECT_EQ(l.l_total, l.l_clean + l.l_adv);
        if (e > 0)
            EXPECT_LT(l.l_total, r.log[e - 1].loss.l_total) << "epoch " << e;
    }
}

TEST(Train, SingleTrainingBeatSkipsPhysics)
{
    SplitPlan split = linear_subject().split;
    split.train.resize(1);
    Diagnostics diag;
    const TrainResult r = train_subject(linear_subject().beats, split, small_config(3), &diag);
    ASSERT_EQ(r.log.size(), 3u);
    for (const EpochLog& e : r.log)
        EXPECT_EQ(e.loss.l_physics, 0.0);
    EXPECT_FALSE(diag.empty());
}

TEST(Train, SameSeedIsBitIdentical)
{
    const TrainConfig cfg = small_config(3);
    const TrainResult a = train_subject(linear_subject().beats, linear_subject().split, cfg);
    const TrainResult b = train_subject(linear_subject().beats, linear_subject().split, cfg);
    const auto pa = a.model.parameters();
    const auto pb = b.model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        EXPECT_EQ(*pa[i], *pb[i]);
    EXPECT_EQ(a.standardizer, b.standardizer);
    for (std::size_t e = 0; e < a.log.size(); ++e)
        EXPECT_EQ(a.log[e].loss.l_total, b.log[e].loss.l_total);

    TrainConfig other = cfg;
    other.seed = 1;
    const TrainResult c = train_subject(linear_subject().beats, linear_subject().split, other);
    EXPECT_NE(*c.model.parameters()[0], *pa[0]);
}

TEST(Train, AuxiliaryRouteOnlyLearnsFromAdversarialSamples)
{
    const TrainConfig full = small_config(2);
    const TrainResult r = train_subject(linear_subject().beats, linear_subject().split, full);
    const ModelState init = init_model(r.model.hyper, full.seed);
    EXPECT_NE(r.model.blocks[0].auxiliary.gain, init.blocks[0].auxiliary.gain);

    const TrainResult base = train_subject(linear_subject().beats, linear_subject().split, full.base());
    EXPECT_EQ(base.model.blocks[0].auxiliary.gain, init.blocks[0].auxiliary.gain);
    EXPECT_EQ(base.model.blocks[0].auxiliary.bias, init.blocks[0].auxiliary.bias);
    EXPECT_NE(base.model.blocks[0].primary.gain, init.blocks[0].primary.gain);
    for (const EpochLog& e : base.log) {
        EXPECT_EQ(e.loss.l_adv, 0.0);
        EXPECT_EQ(e.loss.l_con, 0.0);
        EXPECT_EQ(e.loss.gamma, 0.0);
    }
}

TEST(Train, PredictionNeverReadsAuxiliaryParameters)
{
    const Subject& s = linear_subject();
    const TrainResult r = train_subject(s.beats, s.split, small_config(2));
    EXPECT_EQ(r.model.aux_reads.load(), 0u);
    const auto pred = predict(s.beats, r.model, r.standardizer);
    EXPECT_EQ(pred.size(), s.beats.size());
    EXPECT_EQ(r.model.aux_reads.load(), 0u);
}

TEST(Train, FlipAugmentationRuns)
{
    TrainConfig cfg = small_config(2);
    cfg.augmentation = Augmentation::Flip;
    const TrainResult r = train_subject(linear_subject().beats, linear_subject().split, cfg);
    EXPECT_GT(r.log.back().loss.l_adv, 0.0);
}

TEST(Train, DivergenceNamesTheFailingStage)
{
    const auto message = [](const TrainConfig& cfg) -> std::string {
        try {
            (void)train_subject(linear_subject().beats, linear_subject().split, cfg);
        } catch (const NonFiniteError& e) {
            return e.what();
        }
        return "";
    };
    TrainConfig cfg = small_config(50);
    cfg.learning_rate = 1e200;
    EXPECT_NE(message(cfg).find("adversarial generation"), std::string::npos) << message(cfg);
    cfg.adversarial = false;
    EXPECT_NE(message(cfg).find("loss term l_clean"), std::string::npos) << message(cfg);
}

TEST(Train, PlateauWarnsAndOptionallyStops)
{
    TrainConfig cfg = small_config(6);
    cfg.patience = 2;
    cfg.adversarial = false;
    cfg.gamma = 0.0;
    Diagnostics diag;
    const Subject& s = linear_subject();
    SplitPlan split = s.split;
    split.train.resize(4);
    // Updates vanish below rounding, so the loss never strictly improves.
    cfg.learning_rate = 1e-300;
    TrainResult r = train_subject(s.beats, split, cfg, &diag);
    EXPECT_EQ(r.log.size(), 6u);
    EXPECT_FALSE(r.early_stopped);
    EXPECT_FALSE(diag.empty());

    cfg.early_stop = true;
    r = train_subject(s.beats, split, cfg);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_LT(r.log.size(), 6u);
}

TEST(Train, EpochLogIsOneJsonObject)
{
    EpochLog log;
    log.epoch = 4;
    log.loss.l_clean = 0.5;
    log.loss.l_total = 0.75;
    log.wall_ms = 12.0;
    const std::string line = to_json_line(log);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch"), 4);
    EXPECT_EQ(j.at("l_clean"), 0.5);
    EXPECT_EQ(j.at("l_total"), 0.75);
    for (const char* key : {"l_adv", "l_con", "l_physics", "gamma", "y_shift", "tau", "wall_ms"})
        EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Train, InvalidInputsAreRejected)
{
    TrainConfig cfg = small_config(1);
    cfg.tau = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config(0);
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config(1);
    cfg.gamma = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    SplitPlan bad = linear_subject().split;
    bad.train.push_back(100000);
    EXPECT_THROW(train_subject(linear_subject().beats, bad, small_config(1)), std::invalid_argument);
    bad.train.clear();
    EXPECT_THROW(train_subject(linear_subject().beats, bad, small_config(1)), std::invalid_argument);
    EXPECT_THROW(parse_augmentation("mixup"), ConfigError);
}
