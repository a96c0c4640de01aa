#pragma once

// End-to-end optimization loop: weak/strong views, teacher pseudo-labels,
// curriculum-driven patch mixing, feature distillation, combined losses, SGD
// with momentum and weight decay, EMA teacher updates, per-step logging, and
// exact-resume checkpointing.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semivox/augment.hpp"
#include "semivox/config.hpp"
#include "semivox/dataset.hpp"
#include "semivox/distill.hpp"
#include "semivox/losses.hpp"
#include "semivox/metrics.hpp"
#include "semivox/model.hpp"
#include "semivox/sampling.hpp"

namespace semivox {

struct TrainerState {
    TrainConfig cfg;  // fully resolved (num_classes filled in)
    SegNet student;
    SegNet teacher;
    Projector projector;
    std::shared_ptr<FoundationTeacher> foundation;
    std::vector<std::vector<float>> velocity;  // one buffer per trainable parameter
    RngPool rngs;
    std::uint64_t step = 0;

    // cached labeled-split statistics (computed once per run)
    ClassStats labeled_stats;
    ImbalanceRatios ratios;
    SamplingDistribution balanced;

    std::vector<ParamRef> trainable_params() {
        std::vector<ParamRef> out = student.parameters();
        if (cfg.fkd_enabled)
            for (auto& p : projector.parameters()) out.push_back(std::move(p));
        return out;
    }

    MixSchedule mix_schedule() const { return MixSchedule{cfg.gamma, cfg.eta, cfg.e_max}; }
    int epoch() const { return static_cast<int>(step / cfg.steps_per_epoch); }
    std::uint64_t total_steps() const {
        return static_cast<std::uint64_t>(cfg.e_max) * cfg.steps_per_epoch;
    }
};

inline std::shared_ptr<FoundationTeacher> make_foundation_teacher(const TrainConfig& cfg) {
    if (cfg.fkd_teacher == "vit") return std::make_shared<PretrainedVitAdapter>(cfg.fkd_weights);
    return std::make_shared<FixtureTeacher>(cfg.fixture_channels, cfg.fixture_input,
                                            cfg.fixture_cell);
}

// Resolves num_classes against the dataset, builds networks, and caches the
// labeled-split class statistics that drive the curriculum and the auxiliary
// masks.
inline TrainerState init_trainer(const TrainConfig& config, const Dataset& dataset) {
    TrainerState st;
    st.cfg = config;
    if (st.cfg.num_classes == 0) st.cfg.num_classes = dataset.num_classes;
    if (st.cfg.num_classes < dataset.num_classes)
        throw std::runtime_error("trainer: config num_classes " +
                                 std::to_string(st.cfg.num_classes) +
                                 " below dataset classes " + std::to_string(dataset.num_classes));
    if (st.cfg.num_classes < 2) throw std::runtime_error("trainer: need at least 2 classes");
    if (dataset.labeled.empty() || dataset.unlabeled.empty())
        throw std::runtime_error("trainer: dataset must provide labeled and unlabeled cases");

    NetConfig nc;
    nc.base_channels = st.cfg.base_channels;
    nc.stages = st.cfg.stages;
    nc.num_classes = st.cfg.num_classes;
    st.student = SegNet(nc);
    st.rngs = RngPool::from_seed(st.cfg.seed);
    st.student.init(st.rngs.init);
    st.teacher = st.student;  // teacher starts as a copy of the student

    if (st.cfg.fkd_enabled) {
        st.foundation = make_foundation_teacher(st.cfg);
        st.projector = Projector(st.cfg.projector == "conv" ? ProjectorKind::ConvStack
                                                            : ProjectorKind::Linear,
                                 nc.deep_channels(), st.foundation->channels());
        st.projector.init(st.rngs.init);
    }

    std::vector<LabelMap> labeled_maps;
    for (const Case& c : dataset.labeled) labeled_maps.push_back(c.labels);
    st.labeled_stats =
        compute_class_stats(std::span<const LabelMap>(labeled_maps), st.cfg.num_classes);
    st.ratios = imbalance_ratios(st.labeled_stats);
    st.balanced = balanced_distribution(st.ratios, st.cfg.gamma);

    for (auto& p : st.trainable_params())
        st.velocity.emplace_back(p.value->size(), 0.0f);
    return st;
}

// Polynomial decay, power 0.9: lr0 * (1 - step/total)^0.9.
inline double lr_at(const TrainConfig& cfg, std::uint64_t step, std::uint64_t total_steps) {
    if (total_steps == 0 || step > total_steps)
        throw std::invalid_argument("lr_at: need 0 <= step <= total_steps, total >= 1");
    return cfg.lr0 * std::pow(1.0 - static_cast<double>(step) / total_steps, 0.9);
}

namespace detail {

inline void scale_tensor(Tensor4& t, double s) {
    for (float& x : t.v) x = static_cast<float>(x * s);
}

inline void sgd_step(std::vector<ParamRef>& params, std::vector<std::vector<float>>& velocity,
                     double lr, double momentum, double weight_decay) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        float* p = params[i].value->data();
        const float* g = params[i].grad->data();
        float* v = velocity[i].data();
        const float mu = static_cast<float>(momentum);
        const float wd = static_cast<float>(weight_decay);
        const float lrf = static_cast<float>(lr);
        for (std::size_t j = 0; j < params[i].value->size(); ++j) {
            const float grad = g[j] + wd * p[j];
            v[j] = mu * v[j] + grad;
            p[j] -= lrf * v[j];
        }
    }
}

}  // namespace detail

// One optimization step over one labeled and one unlabeled batch. Randomness
// is drawn from the state's named streams in a fixed order (augment: one weak
// seed per labeled case, then weak+strong seeds per unlabeled case; mix: one
// center per unlabeled case; auxmask: one mask per aux loss evaluation).
inline LossBreakdown train_step(TrainerState& st, std::span<const Case* const> labeled,
                                std::span<const Volume* const> unlabeled) {
    if (labeled.empty() || unlabeled.empty())
        throw std::invalid_argument("train_step: batches must be non-empty");
    const TrainConfig& cfg = st.cfg;
    const Dims3 crop = cfg.crop_dims();
    const PatchSpec patch{cfg.patch_dims()};
    const WeakAugOptions weak_opts{cfg.flip_enabled};
    const std::pair<double, double> gamma_range{cfg.gamma_aug_min, cfg.gamma_aug_max};

    // weak labeled views
    std::vector<WeakView> lab_views;
    for (const Case* c : labeled)
        lab_views.push_back(apply_weak(c->image, &c->labels, st.rngs.augment(), crop, weak_opts));

    // weak + strong unlabeled views, teacher pseudo-labels on the weak view
    std::vector<WeakView> unlab_weak;
    std::vector<StrongView> unlab_strong;
    std::vector<PseudoLabel> pseudo;
    for (const Volume* v : unlabeled) {
        const std::uint64_t weak_seed = st.rngs.augment();
        const std::uint64_t strong_seed = st.rngs.augment();
        WeakView wv = apply_weak(*v, nullptr, weak_seed, crop, weak_opts);
        unlab_strong.push_back(apply_strong(wv.image, strong_seed, gamma_range, &wv.record));
        pseudo.push_back(teacher_pseudo_label(st.teacher, wv.image));
        unlab_weak.push_back(std::move(wv));
    }

    // curriculum-driven patch mixing
    const SamplingDistribution p_epoch =
        progressive_distribution(st.balanced, st.epoch(), st.mix_schedule());
    std::vector<MixResult> mixes;
    for (std::size_t j = 0; j < unlab_strong.size(); ++j) {
        const WeakView& partner = lab_views[j % lab_views.size()];
        const CenterSample center = sample_center(p_epoch, *partner.labels, st.rngs.mix);
        mixes.push_back(cutmix_paste(partner.image, *partner.labels, unlab_strong[j].image,
                                     pseudo[j].labels, center.voxel, patch));
    }

    st.student.zero_grad();
    if (cfg.fkd_enabled) st.projector.zero_grad();

    // supervised pass
    double sup = 0, sup_aux = 0;
    const double lab_scale = 1.0 / labeled.size();
    for (const WeakView& view : lab_views) {
        ForwardCache cache;
        StudentOutput out = st.student.forward(view.image, &cache);
        Tensor4 gmain, gaux;
        sup += seg_loss(out.main_logits, *view.labels, {}, &gmain) * lab_scale;
        detail::scale_tensor(gmain, lab_scale);
        const Tensor4* gaux_ptr = nullptr;
        if (cfg.aux_enabled) {
            const auto mask = aux_keep_mask(*view.labels, st.ratios, st.rngs.auxmask);
            sup_aux += seg_loss(out.aux_logits, *view.labels, mask, &gaux) * lab_scale;
            detail::scale_tensor(gaux, lab_scale);
            gaux_ptr = &gaux;
        }
        st.student.backward(cache, &gmain, gaux_ptr, nullptr);
    }

    // unsupervised pass on the mixed images (+ distillation)
    double unsup = 0, unsup_aux = 0, distill = 0;
    const double unlab_scale = 1.0 / unlabeled.size();
    for (std::size_t j = 0; j < mixes.size(); ++j) {
        const MixResult& mix = mixes[j];
        ForwardCache cache;
        StudentOutput out = st.student.forward(mix.image, &cache);

        // keep-mask from the confidence threshold, ground-truth box always kept
        std::vector<std::uint8_t> tau_keep;
        if (cfg.tau > 0) {
            tau_keep.resize(mix.mask.size());
            for (std::size_t i = 0; i < tau_keep.size(); ++i)
                tau_keep[i] = mix.mask[i] || pseudo[j].confidence[i] >= cfg.tau ? 1 : 0;
        }
        Tensor4 gmain, gaux;
        unsup += seg_loss(out.main_logits, mix.target, tau_keep, &gmain) * unlab_scale;
        detail::scale_tensor(gmain, cfg.lambda_unsup * unlab_scale);
        const Tensor4* gaux_ptr = nullptr;
        if (cfg.aux_enabled) {
            auto mask = aux_keep_mask(mix.target, st.ratios, st.rngs.auxmask);
            if (!tau_keep.empty())
                for (std::size_t i = 0; i < mask.size(); ++i) mask[i] &= tau_keep[i];
            unsup_aux += seg_loss(out.aux_logits, mix.target, mask, &gaux) * unlab_scale;
            detail::scale_tensor(gaux, cfg.lambda_unsup * unlab_scale);
            gaux_ptr = &gaux;
        }

        Tensor4 d_deep;
        const Tensor4* d_deep_ptr = nullptr;
        if (cfg.fkd_enabled && cfg.fkd_distill_input == "mix") {
            const Tensor4 teacher_feats =
                extract_teacher_features(*st.foundation, mix.image, out.deep.sp);
            ProjectorCache pcache;
            const Tensor4 projected = st.projector.forward(out.deep, &pcache);
            Tensor4 gproj;
            distill += distillation_loss(projected, teacher_feats, &gproj) * unlab_scale;
            detail::scale_tensor(gproj, unlab_scale);
            d_deep = st.projector.backward(pcache, gproj);
            d_deep_ptr = &d_deep;
        }
        st.student.backward(cache, &gmain, gaux_ptr, d_deep_ptr);
    }

    // distillation on the raw unlabeled weak views instead of the mixes
    if (cfg.fkd_enabled && cfg.fkd_distill_input == "unlabeled") {
        for (const WeakView& view : unlab_weak) {
            ForwardCache cache;
            StudentOutput out = st.student.forward(view.image, &cache);
            const Tensor4 teacher_feats =
                extract_teacher_features(*st.foundation, view.image, out.deep.sp);
            ProjectorCache pcache;
            const Tensor4 projected = st.projector.forward(out.deep, &pcache);
            Tensor4 gproj;
            distill += distillation_loss(projected, teacher_feats, &gproj) * unlab_scale;
            detail::scale_tensor(gproj, unlab_scale);
            Tensor4 d_deep = st.projector.backward(pcache, gproj);
            st.student.backward(cache, nullptr, nullptr, &d_deep);
        }
    }

    LossBreakdown breakdown;
    try {
        breakdown = make_breakdown(sup, sup_aux, unsup, unsup_aux, distill, cfg.lambda_unsup);
    } catch (const std::exception& e) {
        throw std::runtime_error("train_step: aborting at step " + std::to_string(st.step) +
                                 ": " + e.what());
    }

    const double lr = lr_at(cfg, st.step, st.total_steps());
    auto params = st.trainable_params();
    detail::sgd_step(params, st.velocity, lr, cfg.momentum, cfg.weight_decay);
    ema_update(st.teacher, st.student, cfg.ema_m);
    ++st.step;
    return breakdown;
}

// ---------------------------------------------------------------------------
// Checkpointing. Binary layout: magic "SVCK", u8 version, u64 config digest,
// the resolved config text, step counter, the five rng stream states, then
// named parameter blobs (student, teacher, projector, velocity). Everything
// little-endian; a truncated or malformed file fails before any state is
// touched.

namespace detail {

struct ByteWriter {
    std::string out;
    void u8(std::uint8_t v) { out.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out += s;
    }
    void floats(const std::vector<float>& v) {
        u64(v.size());
        for (float x : v) u32(std::bit_cast<std::uint32_t>(x));
    }
};

struct ByteReader {
    const unsigned char* p;
    std::size_t n, off = 0;
    explicit ByteReader(const std::string& s)
        : p(reinterpret_cast<const unsigned char*>(s.data())), n(s.size()) {}
    void need(std::size_t k) const {
        if (off + k > n) throw std::runtime_error("checkpoint: truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return p[off++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    std::string str() {
        const std::uint32_t k = u32();
        need(k);
        std::string s(reinterpret_cast<const char*>(p + off), k);
        off += k;
        return s;
    }
    std::vector<float> floats() {
        const std::uint64_t k = u64();
        need(k * 4);
        std::vector<float> v(k);
        for (std::uint64_t i = 0; i < k; ++i) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= std::uint32_t(p[off + 4 * i + b]) << (8 * b);
            v[i] = std::bit_cast<float>(u);
        }
        off += k * 4;
        return v;
    }
};

inline void write_blobs(ByteWriter& w, const std::string& tag, std::vector<ParamRef> params) {
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (auto& p : params) {
        w.str(tag + p.name);
        w.floats(*p.value);
    }
}

inline void read_blobs(ByteReader& r, const std::string& tag, std::vector<ParamRef> params) {
    const std::uint32_t count = r.u32();
    if (count != params.size())
        throw std::runtime_error("checkpoint: parameter count mismatch for " + tag);
    for (auto& p : params) {
        const std::string name = r.str();
        if (name != tag + p.name)
            throw std::runtime_error("checkpoint: expected blob " + tag + p.name + ", found " +
                                     name);
        std::vector<float> v = r.floats();
        if (v.size() != p.value->size())
            throw std::runtime_error("checkpoint: size mismatch for blob " + name);
        *p.value = std::move(v);
    }
}

}  // namespace detail

inline void save_checkpoint(TrainerState& st, const std::string& path) {
    detail::ByteWriter w;
    w.out = "SVCK";
    w.u8(1);
    const std::string cfg_text = dump_config(st.cfg);
    w.u64(config_digest(st.cfg));
    w.str(cfg_text);
    w.u64(st.step);
    w.u32(5);
    for (const RngEngine* eng : {&st.rngs.data, &st.rngs.augment, &st.rngs.mix, &st.rngs.init,
                                 &st.rngs.auxmask})
        w.str(serialize_engine(*eng));
    detail::write_blobs(w, "s:", st.student.parameters());
    detail::write_blobs(w, "t:", st.teacher.parameters());
    detail::write_blobs(w, "p:", st.cfg.fkd_enabled ? st.projector.parameters()
                                                    : std::vector<ParamRef>{});
    auto trainable = st.trainable_params();
    w.u32(static_cast<std::uint32_t>(st.velocity.size()));
    for (std::size_t i = 0; i < st.velocity.size(); ++i) {
        w.str("m:" + trainable[i].name);
        w.floats(st.velocity[i]);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(w.out.data(), static_cast<std::streamsize>(w.out.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed on " + path);
}

// Rebuilds the whole trainer from the file. Structure comes from the current
// config when one is supplied (so a schedule can be extended), otherwise from
// the config text embedded in the checkpoint; a digest mismatch between the
// two emits a warning with both digests and loading proceeds.
inline TrainerState load_checkpoint(const std::string& path,
                                    std::optional<TrainConfig> current = std::nullopt) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 5 || bytes.compare(0, 4, "SVCK") != 0)
        throw std::runtime_error("checkpoint: unrecognized file " + path);
    detail::ByteReader r(bytes);
    r.off = 4;
    if (r.u8() != 1) throw std::runtime_error("checkpoint: unsupported version");
    const std::uint64_t digest = r.u64();
    const std::string cfg_text = r.str();

    if (current && config_digest(*current) != digest) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "warning: config digest mismatch (checkpoint %016" PRIx64
                      ", current %016" PRIx64 "); proceeding with the current config\n",
                      digest, config_digest(*current));
        std::fputs(buf, stderr);
    }

    TrainerState st;
    st.cfg = current ? *current : parse_config_text(cfg_text, path + " (embedded config)");
    if (st.cfg.num_classes < 2)
        throw std::runtime_error("checkpoint: config lacks a resolved num_classes");
    NetConfig nc;
    nc.base_channels = st.cfg.base_channels;
    nc.stages = st.cfg.stages;
    nc.num_classes = st.cfg.num_classes;
    st.student = SegNet(nc);
    st.teacher = SegNet(nc);
    if (st.cfg.fkd_enabled) {
        st.foundation = make_foundation_teacher(st.cfg);
        st.projector = Projector(st.cfg.projector == "conv" ? ProjectorKind::ConvStack
                                                            : ProjectorKind::Linear,
                                 nc.deep_channels(), st.foundation->channels());
    }

    st.step = r.u64();
    if (r.u32() != 5) throw std::runtime_error("checkpoint: unexpected rng stream count");
    st.rngs.data = deserialize_engine(r.str());
    st.rngs.augment = deserialize_engine(r.str());
    st.rngs.mix = deserialize_engine(r.str());
    st.rngs.init = deserialize_engine(r.str());
    st.rngs.auxmask = deserialize_engine(r.str());
    detail::read_blobs(r, "s:", st.student.parameters());
    detail::read_blobs(r, "t:", st.teacher.parameters());
    detail::read_blobs(r, "p:", st.cfg.fkd_enabled ? st.projector.parameters()
                                                   : std::vector<ParamRef>{});
    auto trainable = st.trainable_params();
    const std::uint32_t vel_count = r.u32();
    if (vel_count != trainable.size())
        throw std::runtime_error("checkpoint: velocity buffer count mismatch");
    st.velocity.clear();
    for (std::size_t i = 0; i < vel_count; ++i) {
        const std::string name = r.str();
        if (name != "m:" + trainable[i].name)
            throw std::runtime_error("checkpoint: unexpected velocity blob " + name);
        std::vector<float> v = r.floats();
        if (v.size() != trainable[i].value->size())
            throw std::runtime_error("checkpoint: velocity size mismatch for " + name);
        st.velocity.push_back(std::move(v));
    }
    if (r.off != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
    return st;
}

// Attaches the dataset-derived statistics a freshly loaded state lacks.
inline void attach_dataset_stats(TrainerState& st, const Dataset& dataset) {
    std::vector<LabelMap> labeled_maps;
    for (const Case& c : dataset.labeled) labeled_maps.push_back(c.labels);
    st.labeled_stats =
        compute_class_stats(std::span<const LabelMap>(labeled_maps), st.cfg.num_classes);
    st.ratios = imbalance_ratios(st.labeled_stats);
    st.balanced = balanced_distribution(st.ratios, st.cfg.gamma);
}

struct RunResult {
    TrainerState state;
    std::string run_dir;
    std::string training_log_path;
    std::string validation_log_path;
    std::string final_checkpoint_path;
};

// Runs (the remainder of) a training schedule, logging one CSV row per step
// and one validation row per epoch, and writing periodic plus final
// checkpoints into run_dir.
inline RunResult run_training(const TrainConfig& config, const Dataset& dataset,
                              const std::string& run_dir,
                              const std::optional<std::string>& resume_path = std::nullopt) {
    std::filesystem::create_directories(run_dir);
    TrainerState st;
    if (resume_path) {
        TrainConfig resolved = config;
        if (resolved.num_classes == 0) resolved.num_classes = dataset.num_classes;
        st = load_checkpoint(*resume_path, resolved);
        attach_dataset_stats(st, dataset);
    } else {
        st = init_trainer(config, dataset);
    }
    const std::string cfg_echo_path = run_dir + "/config.txt";
    {
        std::ofstream f(cfg_echo_path, std::ios::trunc);
        f << dump_config(st.cfg);
        if (!f) throw std::runtime_error("run_training: cannot write " + cfg_echo_path);
    }

    RunResult result;
    result.run_dir = run_dir;
    result.training_log_path = run_dir + "/training_log.csv";
    result.validation_log_path = run_dir + "/validation_log.csv";
    result.final_checkpoint_path = run_dir + "/checkpoint_final.ckpt";

    std::ofstream train_log(result.training_log_path, std::ios::trunc);
    std::ofstream val_log(result.validation_log_path, std::ios::trunc);
    if (!train_log || !val_log)
        throw std::runtime_error("run_training: cannot open logs in " + run_dir);
    train_log << "step,epoch,lr,sup,sup_aux,unsup,unsup_aux,distill,total\n";
    val_log << "epoch,mean_dice";
    for (int c = 1; c < st.cfg.num_classes; ++c) val_log << ",dice_c" << c;
    val_log << "\n";

    const SlidingWindowSpec val_spec{st.cfg.val_window(), st.cfg.val_stride()};
    char buf[64];
    const std::uint64_t total = st.total_steps();
    while (st.step < total) {
        const double lr = lr_at(st.cfg, st.step, total);
        std::vector<const Case*> labeled;
        for (int i = 0; i < st.cfg.batch_labeled; ++i)
            labeled.push_back(&dataset.labeled[rng_index(st.rngs.data, dataset.labeled.size())]);
        std::vector<const Volume*> unlabeled;
        for (int i = 0; i < st.cfg.batch_unlabeled; ++i)
            unlabeled.push_back(
                &dataset.unlabeled[rng_index(st.rngs.data, dataset.unlabeled.size())].image);

        const std::uint64_t step_index = st.step;
        const int epoch = st.epoch();
        const LossBreakdown b = train_step(st, labeled, unlabeled);

        train_log << step_index << "," << epoch;
        for (double v : {lr, b.sup, b.sup_aux, b.unsup, b.unsup_aux, b.distill, b.total}) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            train_log << buf;
        }
        train_log << "\n";

        if (st.step % st.cfg.steps_per_epoch == 0) {  // epoch boundary
            val_log << epoch;
            if (!dataset.validation.empty()) {
                const MetricsReport rep = evaluate(st.student, dataset.validation, val_spec);
                auto cell = [&](const std::optional<double>& v) {
                    if (!v) return std::string("nan");
                    std::snprintf(buf, sizeof buf, "%.9g", *v);
                    return std::string(buf);
                };
                val_log << "," << cell(rep.avg_dice);
                for (int c = 1; c < st.cfg.num_classes; ++c) val_log << "," << cell(rep.mean_dice[c]);
            } else {
                for (int c = 0; c < st.cfg.num_classes; ++c) val_log << ",nan";
            }
            val_log << "\n";
            val_log.flush();

            if (st.cfg.checkpoint_interval > 0 && (epoch + 1) % st.cfg.checkpoint_interval == 0 &&
                st.step < total)
                save_checkpoint(st, run_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) +
                                        ".ckpt");
        }
        train_log.flush();
    }
    save_checkpoint(st, result.final_checkpoint_path);
    if (!train_log || !val_log) throw std::runtime_error("run_training: log write failure");
    result.state = std::move(st);
    return result;
}

}  // namespace semivox
