#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "semivox/phantom.hpp"
#include "semivox/trainer.hpp"
#include "testutil.hpp"

using namespace semivox;

namespace {

Dataset tiny_dataset(std::uint64_t seed = 100, int labeled = 3, int unlabeled = 3,
                     int validation = 1, int test = 1) {
    PhantomSpec spec;
    spec.dims = {8, 16, 16};
    spec.num_foreground_classes = 2;
    spec.volume_fractions = {0.08, 0.01};
    spec.contrasts = {0.35, 0.7};
    spec.noise_amplitude = 0.04;
    Dataset ds;
    ds.num_classes = 3;
    std::uint64_t s = seed;
    auto emit = [&](std::vector<Case>& out, int n) {
        for (int i = 0; i < n; ++i) {
            auto [v, l] = generate_phantom(s++, spec);
            l.num_classes = 3;
            out.push_back(Case{std::move(v), std::move(l), "case" + std::to_string(s)});
        }
    };
    emit(ds.labeled, labeled);
    emit(ds.unlabeled, unlabeled);
    emit(ds.validation, validation);
    emit(ds.test, test);
    return ds;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.seed = 11;
    cfg.crop_d = cfg.crop_h = cfg.crop_w = 8;
    cfg.base_channels = 2;
    cfg.stages = 2;
    cfg.e_max = 2;
    cfg.steps_per_epoch = 3;
    cfg.batch_labeled = 2;
    cfg.batch_unlabeled = 2;
    cfg.fixture_channels = 6;
    cfg.fixture_input = 16;
    cfg.fixture_cell = 4;
    cfg.val_stride_d = cfg.val_stride_h = cfg.val_stride_w = 8;
    return cfg;
}

std::vector<const Case*> labeled_batch(const Dataset& ds) {
    return {&ds.labeled[0], &ds.labeled[1]};
}

std::vector<const Volume*> unlabeled_batch(const Dataset& ds) {
    return {&ds.unlabeled[0].image, &ds.unlabeled[1].image};
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(LrSchedule, PolynomialDecay) {
    TrainConfig cfg;
    EXPECT_DOUBLE_EQ(lr_at(cfg, 0, 1000), 0.1);
    EXPECT_DOUBLE_EQ(lr_at(cfg, 1000, 1000), 0.0);
    EXPECT_NEAR(lr_at(cfg, 500, 1000), 0.053589, 1e-6);
    EXPECT_THROW(lr_at(cfg, 5, 4), std::invalid_argument);
}

TEST(TrainStep, ZeroLearningRateLeavesStudentBitIdentical) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config();
    cfg.lr0 = 0.0;
    TrainerState st = init_trainer(cfg, ds);
    const std::uint64_t before = st.student.param_digest();
    train_step(st, labeled_batch(ds), unlabeled_batch(ds));
    EXPECT_EQ(st.student.param_digest(), before);
}

TEST(TrainStep, DeterministicGivenIdenticalStateAndBatches) {
    Dataset ds = tiny_dataset();
    const TrainConfig cfg = tiny_config();
    TrainerState a = init_trainer(cfg, ds);
    TrainerState b = init_trainer(cfg, ds);
    const LossBreakdown ba = train_step(a, labeled_batch(ds), unlabeled_batch(ds));
    const LossBreakdown bb = train_step(b, labeled_batch(ds), unlabeled_batch(ds));
    EXPECT_EQ(ba.total, bb.total);
    EXPECT_EQ(ba.sup, bb.sup);
    EXPECT_EQ(ba.distill, bb.distill);
    EXPECT_EQ(a.student.param_digest(), b.student.param_digest());
    EXPECT_EQ(a.teacher.param_digest(), b.teacher.param_digest());
}

TEST(TrainStep, FirstStepBreakdownFiniteAndPositive) {
    Dataset ds = tiny_dataset();
    TrainerState st = init_trainer(tiny_config(), ds);
    const LossBreakdown b = train_step(st, labeled_batch(ds), unlabeled_batch(ds));
    for (double v : {b.sup, b.sup_aux, b.unsup, b.unsup_aux, b.distill, b.total}) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GT(v, 0.0);
    }
    EXPECT_NEAR(b.total, b.sup + b.sup_aux + b.distill + 0.5 * (b.unsup + b.unsup_aux), 1e-9);
    EXPECT_EQ(st.step, 1u);
}

TEST(TrainStep, TeacherOnlyChangesThroughEmaUpdate) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config();
    cfg.ema_m = 1.0;  // EMA becomes the identity, so the whole step must keep the teacher
    TrainerState st = init_trainer(cfg, ds);
    const std::uint64_t before = st.teacher.param_digest();
    train_step(st, labeled_batch(ds), unlabeled_batch(ds));
    EXPECT_EQ(st.teacher.param_digest(), before);
    EXPECT_NE(st.student.param_digest(), before);
}

TEST(TrainStep, BaselineDegenerationStaysFinite) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config();
    cfg.fkd_enabled = false;
    cfg.aux_enabled = false;
    cfg.eta = 0.0;  // uniform sampling from epoch 0
    TrainerState st = init_trainer(cfg, ds);
    for (int i = 0; i < 4; ++i) {
        const LossBreakdown b = train_step(st, labeled_batch(ds), unlabeled_batch(ds));
        EXPECT_TRUE(std::isfinite(b.total));
        EXPECT_EQ(b.distill, 0.0);
        EXPECT_EQ(b.sup_aux, 0.0);
        EXPECT_EQ(b.unsup_aux, 0.0);
        EXPECT_GT(b.sup, 0.0);
    }
}

TEST(TrainStep, ConfidenceThresholdMasksUnsupVoxels) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config();
    cfg.tau = 1.0;  // keep only the pasted box (confidence < 1 almost surely)
    TrainerState st = init_trainer(cfg, ds);
    const LossBreakdown b = train_step(st, labeled_batch(ds), unlabeled_batch(ds));
    EXPECT_TRUE(std::isfinite(b.unsup));

    TrainConfig open = tiny_config();
    TrainerState st2 = init_trainer(open, ds);
    const LossBreakdown b2 = train_step(st2, labeled_batch(ds), unlabeled_batch(ds));
    EXPECT_NE(b.unsup, b2.unsup);
}

TEST(Sgd, WeightDecayScalesParametersWithZeroGradients) {
    std::vector<float> value{1.0f, -2.0f, 0.5f};
    std::vector<float> grad{0.0f, 0.0f, 0.0f};
    std::vector<ParamRef> params{{"p", &value, &grad}};
    std::vector<std::vector<float>> velocity{{0.0f, 0.0f, 0.0f}};
    const double lr = 0.1, wd = 3e-5;
    const std::vector<float> before = value;
    detail::sgd_step(params, velocity, lr, 0.9, wd);
    for (std::size_t i = 0; i < value.size(); ++i)
        EXPECT_NEAR(value[i], before[i] * (1.0 - lr * wd), 1e-6);  // float arithmetic
}

TEST(Checkpoint, SaveLoadRoundTrip) {
    const std::string dir = testutil::scratch_dir("ckpt");
    Dataset ds = tiny_dataset();
    TrainerState st = init_trainer(tiny_config(), ds);
    train_step(st, labeled_batch(ds), unlabeled_batch(ds));
    const std::string path = dir + "/state.ckpt";
    save_checkpoint(st, path);
    TrainerState back = load_checkpoint(path);
    EXPECT_EQ(back.step, st.step);
    EXPECT_EQ(back.student.param_digest(), st.student.param_digest());
    EXPECT_EQ(back.teacher.param_digest(), st.teacher.param_digest());
    EXPECT_EQ(back.velocity.size(), st.velocity.size());
    for (std::size_t i = 0; i < st.velocity.size(); ++i)
        EXPECT_EQ(back.velocity[i], st.velocity[i]);
    EXPECT_EQ(serialize_engine(back.rngs.data), serialize_engine(st.rngs.data));
    EXPECT_EQ(serialize_engine(back.rngs.augment), serialize_engine(st.rngs.augment));
    EXPECT_EQ(dump_config(back.cfg), dump_config(st.cfg));
}

TEST(Checkpoint, TruncatedFileRejectedWithoutPartialState) {
    const std::string dir = testutil::scratch_dir("ckpt_trunc");
    Dataset ds = tiny_dataset();
    TrainerState st = init_trainer(tiny_config(), ds);
    const std::string path = dir + "/state.ckpt";
    save_checkpoint(st, path);
    std::string bytes = slurp(path);
    bytes.resize(bytes.size() / 2);
    {
        std::ofstream f(dir + "/bad.ckpt", std::ios::binary);
        f << bytes;
    }
    EXPECT_THROW(load_checkpoint(dir + "/bad.ckpt"), std::runtime_error);
    {
        std::ofstream f(dir + "/junk.ckpt", std::ios::binary);
        f << "not a checkpoint";
    }
    EXPECT_THROW(load_checkpoint(dir + "/junk.ckpt"), std::runtime_error);
}

TEST(Checkpoint, DigestMismatchWarnsAndProceeds) {
    const std::string dir = testutil::scratch_dir("ckpt_digest");
    Dataset ds = tiny_dataset();
    TrainerState st = init_trainer(tiny_config(), ds);
    const std::string path = dir + "/state.ckpt";
    save_checkpoint(st, path);
    TrainConfig edited = st.cfg;
    edited.lr0 = 0.123;  // non-structural edit
    testing::internal::CaptureStderr();
    TrainerState back = load_checkpoint(path, edited);
    const std::string err = testing::internal::GetCapturedStderr();
    EXPECT_NE(err.find("config digest mismatch"), std::string::npos);
    EXPECT_DOUBLE_EQ(back.cfg.lr0, 0.123);
    EXPECT_EQ(back.student.param_digest(), st.student.param_digest());
}

TEST(RunTraining, LogsRunDirAndRowCounts) {
    const std::string dir = testutil::scratch_dir("run_logs");
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config();
    RunResult res = run_training(cfg, ds, dir + "/run");
    EXPECT_TRUE(std::filesystem::exists(dir + "/run/config.txt"));
    EXPECT_TRUE(std::filesystem::exists(res.training_log_path));
    EXPECT_TRUE(std::filesystem::exists(res.validation_log_path));
    EXPECT_TRUE(std::filesystem::exists(res.final_checkpoint_path));

    std::istringstream tlog(slurp(res.training_log_path));
    std::string line;
    std::getline(tlog, line);
    EXPECT_EQ(line, "step,epoch,lr,sup,sup_aux,unsup,unsup_aux,distill,total");
    int rows = 0;
    while (std::getline(tlog, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, cfg.e_max * cfg.steps_per_epoch);

    std::istringstream vlog(slurp(res.validation_log_path));
    std::getline(vlog, line);  // header
    int vrows = 0;
    while (std::getline(vlog, line))
        if (!line.empty()) ++vrows;
    EXPECT_EQ(vrows, cfg.e_max);  // one row per epoch

    // the config echo reparses to the identical resolved config
    TrainConfig echoed = parse_config(dir + "/run/config.txt");
    EXPECT_EQ(config_digest(echoed), config_digest(res.state.cfg));
}

TEST(RunTraining, IdenticalSeedGivesBitIdenticalLogs) {
    const std::string dir = testutil::scratch_dir("run_det");
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config();
    RunResult a = run_training(cfg, ds, dir + "/a");
    RunResult b = run_training(cfg, ds, dir + "/b");
    EXPECT_EQ(slurp(a.training_log_path), slurp(b.training_log_path));
    EXPECT_EQ(slurp(a.validation_log_path), slurp(b.validation_log_path));
    EXPECT_EQ(slurp(a.final_checkpoint_path), slurp(b.final_checkpoint_path));
}

TEST(RunTraining, ResumeReproducesUninterruptedRun) {
    const std::string dir = testutil::scratch_dir("run_resume");
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config();
    cfg.checkpoint_interval = 1;  // checkpoint after every epoch
    RunResult full = run_training(cfg, ds, dir + "/full");

    const std::string mid = dir + "/full/checkpoint_epoch1.ckpt";
    ASSERT_TRUE(std::filesystem::exists(mid));
    RunResult resumed = run_training(cfg, ds, dir + "/resumed", mid);

    // rows for the steps after the checkpoint must match byte for byte
    std::istringstream flog(slurp(full.training_log_path));
    std::istringstream rlog(slurp(resumed.training_log_path));
    std::string fline, rline;
    std::getline(flog, fline);
    std::getline(rlog, rline);
    EXPECT_EQ(fline, rline);  // headers
    std::vector<std::string> frows, rrows;
    while (std::getline(flog, fline))
        if (!fline.empty()) frows.push_back(fline);
    while (std::getline(rlog, rline))
        if (!rline.empty()) rrows.push_back(rline);
    ASSERT_EQ(frows.size(), 6u);
    ASSERT_EQ(rrows.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(rrows[i], frows[3 + i]);
    EXPECT_EQ(resumed.state.student.param_digest(), full.state.student.param_digest());
    EXPECT_EQ(slurp(resumed.final_checkpoint_path), slurp(full.final_checkpoint_path));
}

TEST(RunTraining, SmokeDescentOverTwentyEpochs) {
    Dataset ds = tiny_dataset(500, 4, 4, 1, 1);
    TrainConfig cfg = tiny_config();
    cfg.e_max = 20;
    cfg.steps_per_epoch = 10;
    const std::string dir = testutil::scratch_dir("run_descent");
    RunResult res = run_training(cfg, ds, dir + "/run");

    std::istringstream tlog(slurp(res.training_log_path));
    std::string line;
    std::getline(tlog, line);
    std::vector<double> totals;
    while (std::getline(tlog, line)) {
        if (line.empty()) continue;
        const auto pos = line.rfind(',');
        totals.push_back(std::stod(line.substr(pos + 1)));
    }
    ASSERT_EQ(totals.size(), 200u);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) first += totals[i];
    for (int i = 190; i < 200; ++i) last += totals[i];
    EXPECT_LT(last, first);
}

TEST(InitTrainer, ValidatesDatasetAndClasses) {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config();
    cfg.num_classes = 2;  // below the dataset's 3
    EXPECT_THROW(init_trainer(cfg, ds), std::runtime_error);

    Dataset no_unlab = tiny_dataset();
    no_unlab.unlabeled.clear();
    EXPECT_THROW(init_trainer(tiny_config(), no_unlab), std::runtime_error);
}
