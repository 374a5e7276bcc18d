#include "lcmae/trainkit.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

#include "lcmae/altdecoders.hpp"

namespace fs = std::filesystem;

namespace lcmae {

double lr_at(int64_t step, const ScheduleParams& sched) {
    if (step < 0) throw ConfigError("lr_at: negative step");
    const double eff = sched.effective_lr();
    if (sched.warmup_steps > 0 && step < sched.warmup_steps)
        return eff * static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
    if (step >= sched.total_steps) return 0.0;
    const double span = static_cast<double>(sched.total_steps - sched.warmup_steps);
    const double t = static_cast<double>(step - sched.warmup_steps) / span;
    return eff * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---- AdamW ----

template <typename T>
void AdamW<T>::step(Graph<T>& g, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const std::string& name : g.param_names()) {
        Array<T>& p = g.param_value(name);
        const Array<T>& grad = g.grad_of(name);
        const bool has_grad = grad.shape == p.shape && grad.data.size() == p.data.size();
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(static_cast<size_t>(p.size()), 0.0);
            v.assign(static_cast<size_t>(p.size()), 0.0);
        }
        const bool decay = cfg_.weight_decay > 0.0 && p.rank() >= 2;
        for (int64_t i = 0; i < p.size(); ++i) {
            const double gi = has_grad ? static_cast<double>(grad[i]) : 0.0;
            m[static_cast<size_t>(i)] = cfg_.beta1 * m[static_cast<size_t>(i)] + (1.0 - cfg_.beta1) * gi;
            v[static_cast<size_t>(i)] = cfg_.beta2 * v[static_cast<size_t>(i)] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[static_cast<size_t>(i)] / bc1;
            const double vhat = v[static_cast<size_t>(i)] / bc2;
            double upd = mhat / (std::sqrt(vhat) + cfg_.eps);
            if (decay) upd += cfg_.weight_decay * static_cast<double>(p[i]);
            p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * upd);
        }
    }
}

template class AdamW<float>;
template class AdamW<double>;

// ---- metrics log ----

void MetricsLog::append(MetricsRow r) {
    if (!rows.empty() && r.step < rows.back().step)
        throw ConfigError("metrics log steps must be monotone");
    rows.push_back(std::move(r));
}

namespace {
std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }
std::optional<double> opt_parse(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}
}  // namespace

CsvTable MetricsLog::to_csv() const {
    CsvTable t;
    t.header = {"step", "l_mae", "l_cross", "l_in", "total", "lr", "collapse", "wall_s"};
    for (const auto& r : rows)
        t.rows.push_back({std::to_string(r.step), opt_str(r.mae), opt_str(r.cross), opt_str(r.in),
                          format_double(r.total), format_double(r.lr), opt_str(r.collapse),
                          format_double(r.wall_s)});
    return t;
}

MetricsLog MetricsLog::from_csv(const CsvTable& t) {
    MetricsLog log;
    for (const auto& row : t.rows) {
        if (row.size() != 8) throw IoError("metrics csv row width mismatch");
        MetricsRow r;
        r.step = std::stoll(row[0]);
        r.mae = opt_parse(row[1]);
        r.cross = opt_parse(row[2]);
        r.in = opt_parse(row[3]);
        r.total = std::stod(row[4]);
        r.lr = std::stod(row[5]);
        r.collapse = opt_parse(row[6]);
        r.wall_s = std::stod(row[7]);
        log.append(std::move(r));
    }
    return log;
}

std::string MetricsLog::replay_fingerprint() const {
    std::string out;
    for (const auto& r : rows) {
        out += std::to_string(r.step) + "|" + opt_str(r.mae) + "|" + opt_str(r.cross) + "|" + opt_str(r.in) +
               "|" + format_double(r.total) + "|" + format_double(r.lr) + "|" + opt_str(r.collapse) + "\n";
    }
    return out;
}

// ---- datasets ----

namespace {
Dataset dataset_from_records(const std::vector<RawImage>& records) {
    // same pipeline as the cifar loader: write-free path for synthetic data
    Dataset ds;
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    for (const auto& r : records) {
        Array<float> img({3, 32, 32});
        for (int64_t i = 0; i < img.size(); ++i)
            img[i] = static_cast<float>(r.planes[static_cast<size_t>(i)]) / 255.0f;
        ds.images.push_back(std::move(img));
        ds.labels.push_back(r.label);
    }
    const int64_t c = ds.channels, hw = ds.height * ds.width;
    ds.channel_mean.assign(3, 0.0);
    ds.channel_std.assign(3, 0.0);
    const double count = static_cast<double>(ds.size() * hw);
    for (const auto& img : ds.images)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < hw; ++i)
                ds.channel_mean[static_cast<size_t>(ch)] +=
                    static_cast<double>(img.data[static_cast<size_t>(ch * hw + i)]);
    for (auto& m : ds.channel_mean) m /= count;
    for (const auto& img : ds.images)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < hw; ++i) {
                const double d = static_cast<double>(img.data[static_cast<size_t>(ch * hw + i)]) -
                                 ds.channel_mean[static_cast<size_t>(ch)];
                ds.channel_std[static_cast<size_t>(ch)] += d * d;
            }
    for (auto& s : ds.channel_std) s = std::sqrt(s / count + 1e-8);
    for (auto& img : ds.images)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t i = 0; i < hw; ++i) {
                float& v = img.data[static_cast<size_t>(ch * hw + i)];
                v = static_cast<float>((static_cast<double>(v) - ds.channel_mean[static_cast<size_t>(ch)]) /
                                       ds.channel_std[static_cast<size_t>(ch)]);
            }
    return ds;
}
}  // namespace

Dataset synthetic_dataset(int64_t count, uint64_t seed) {
    return dataset_from_records(make_synthetic_images(count, seed));
}

Dataset open_dataset(const DataRef& ref) {
    if (!ref.path.empty()) return load_dataset(ref.path, data_format_from_string(ref.format));
    if (ref.synth_count <= 0) throw ConfigError("data: provide a path or a positive synth_count");
    return synthetic_dataset(ref.synth_count, ref.synth_seed);
}

// ---- checkpointing ----

void save_params(const ParamStore<float>& params, const std::string& path) {
    Checkpoint ck;
    for (const auto& [name, a] : params.values) ck.put_f32(name, a);
    ck.save(path);
}

ParamStore<float> load_params(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    ParamStore<float> ps;
    for (const auto& [name, e] : ck.entries) ps.values[name] = ck.get_f32(name);
    return ps;
}

// ---- trainer ----

namespace {

template <typename T>
ParamStore<T> params_from_graph(Graph<T>& g) {
    ParamStore<T> ps;
    for (const std::string& name : g.param_names()) ps.values[name] = g.param_value(name);
    return ps;
}

struct BatchSampler {
    int64_t size;
    int64_t batch;
    Rng rng;
    std::vector<int64_t> order;
    int64_t cursor = 0;

    BatchSampler(int64_t size_, int64_t batch_, uint64_t seed)
        : size(size_), batch(batch_), rng(seed, 0xBA7C4) {
        order.resize(static_cast<size_t>(size));
        for (int64_t i = 0; i < size; ++i) order[static_cast<size_t>(i)] = i;
        rng.shuffle(order);
    }

    std::vector<int64_t> next() {
        std::vector<int64_t> out;
        out.reserve(static_cast<size_t>(batch));
        for (int64_t i = 0; i < batch; ++i) {
            if (cursor == size) {
                rng.shuffle(order);
                cursor = 0;
            }
            out.push_back(order[static_cast<size_t>(cursor++)]);
        }
        return out;
    }
};

}  // namespace

TrainOutcome train(const ExperimentPreset& preset, const std::string& out_dir) {
    preset.validate();
    const ModelConfig& cfg = preset.model;
    const Dataset ds = open_dataset(preset.data);
    if (ds.height != cfg.img_size || ds.width != cfg.img_size || ds.channels != cfg.channels)
        throw ConfigError("dataset geometry does not match the model config");

    const int64_t n = cfg.n_patches();
    const int64_t patch_dim = cfg.patch_dim();
    const LossFlags flags = preset.flags();
    const bool ae_mode = preset.decoder == "ae_block";
    const bool two_view = flags.cross;
    const TargetMode tmode = ae_mode ? TargetMode::Raw : target_mode_from_string(preset.target_mode);
    const DecoderKind kind = decoder_kind_from_string(preset.decoder);
    const int64_t out_dim = ae_mode ? preset.ae_block * preset.ae_block * cfg.channels : patch_dim;
    const int64_t batch = preset.batch;
    const int64_t n_mask = mask_count(n, preset.mask_ratio);
    const int64_t n_vis = n - n_mask;

    // cache patchified images (standardized pixel space)
    std::vector<Array<float>> patches;
    patches.reserve(static_cast<size_t>(ds.size()));
    for (const auto& img : ds.images) patches.push_back(patchify(img, cfg.patch));
    std::vector<Array<float>> std_patches;  // per-patch standardized targets
    if (tmode == TargetMode::PatchStandardized) {
        std_patches.reserve(patches.size());
        for (const auto& p : patches) std_patches.push_back(standardize_patches(p));
    }
    // AE targets
    std::vector<Array<float>> ae_targets, ae_valid;
    if (ae_mode) {
        for (const auto& img : ds.images) {
            const BlockTargets bt = ae_block_targets(img, BlockTargetSpec{preset.ae_block, cfg.patch});
            ae_targets.push_back(bt.values.astype<float>());
            ae_valid.push_back(bt.valid.astype<float>());
        }
    }

    ParamStore<float> params = init_params<float>(cfg, kind, out_dim, preset.seed);
    ForwardOptions fopts;
    fopts.two_view = two_view;
    fopts.with_projector = true;
    fopts.projector_input = preset.projector_input == "pixel_output" ? ProjectorInput::PixelOutput
                                                                     : ProjectorInput::DecoderTokens;
    MaeForward<float> mf = build_mae_forward(cfg, params, kind, out_dim, batch, n_vis, fopts);
    Graph<float>& g = mf.g;
    const int n_views = two_view ? 2 : 1;
    const RowLayout lay = mf.view[0].layout(batch);

    // loss nodes
    std::vector<MaeLossHandles<float>> mae_h;
    std::vector<InLossHandles<float>> in_h;
    CrossLossHandles<float> cross_h;
    std::vector<Var> terms;
    Var mae_node, cross_node, in_node;
    if (flags.mae) {
        for (int v = 0; v < n_views; ++v)
            mae_h.push_back(append_loss_mae(g, mf.view[v].pred, lay, out_dim, tmode,
                                            "loss.mae" + std::to_string(v) + "."));
        mae_node = n_views == 2 ? g.mul_scalar(g.add(mae_h[0].loss, mae_h[1].loss), 0.5) : mae_h[0].loss;
        g.rename(mae_node, "loss.mae");
        terms.push_back(mae_node);
    }
    if (flags.cross) {
        cross_h = append_loss_cross(g, mf.view[0].proj, mf.view[1].proj, lay, "loss.cross.");
        cross_node = cross_h.loss;
        g.rename(cross_node, "loss.cross");
        terms.push_back(cross_node);
    }
    if (flags.in) {
        for (int v = 0; v < n_views; ++v)
            in_h.push_back(append_loss_in(g, mf.view[v].proj, lay, "loss.in" + std::to_string(v) + "."));
        in_node = n_views == 2 ? g.mul_scalar(g.add(in_h[0].loss, in_h[1].loss), 0.5) : in_h[0].loss;
        g.rename(in_node, "loss.in");
        terms.push_back(in_node);
    }
    Var total = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
    g.rename(total, "loss.total");

    // per-view binding for one batch
    auto bind_batch = [&](const std::vector<int64_t>& idx, const std::vector<std::vector<Mask>>& masks) {
        std::vector<Array<float>> seqs;
        seqs.reserve(idx.size());
        for (int64_t i : idx) seqs.push_back(patches[static_cast<size_t>(i)]);
        for (int v = 0; v < n_views; ++v) {
            mf.bind_view(v, seqs, masks[static_cast<size_t>(v)]);
            if (flags.mae) {
                if (ae_mode) {
                    std::vector<Array<float>> t, va;
                    for (int64_t i : idx) {
                        t.push_back(ae_targets[static_cast<size_t>(i)]);
                        va.push_back(ae_valid[static_cast<size_t>(i)]);
                    }
                    bind_loss_ae(g, mae_h[static_cast<size_t>(v)], lay, out_dim, t, va);
                } else {
                    std::vector<Array<float>> t;
                    for (int64_t i : idx)
                        t.push_back(tmode == TargetMode::PatchStandardized
                                        ? std_patches[static_cast<size_t>(i)]
                                        : patches[static_cast<size_t>(i)]);
                    bind_loss_mae(g, mae_h[static_cast<size_t>(v)], lay, out_dim, t,
                                  masks[static_cast<size_t>(v)], tmode, preset.normalized_losses);
                }
            }
            if (flags.in) {
                std::vector<Array<float>> xs;
                for (int64_t i : idx)
                    xs.push_back(preset.lin_standardized_patches
                                     ? standardize_patches(patches[static_cast<size_t>(i)])
                                     : patches[static_cast<size_t>(i)]);
                bind_loss_in(g, in_h[static_cast<size_t>(v)], lay, xs, masks[static_cast<size_t>(v)],
                             preset.normalized_losses);
            }
        }
        if (flags.cross)
            bind_loss_cross(g, cross_h, lay, masks[0], masks[1], preset.normalized_losses);
    };

    // fixed evaluation batch for the collapse metric
    const bool track_collapse = ds.size() >= 8 && batch >= 8 && !ae_mode;
    std::vector<int64_t> eval_idx;
    std::vector<std::vector<Mask>> eval_masks(static_cast<size_t>(n_views));
    if (track_collapse) {
        Rng eval_rng(preset.seed, 0xE7A1);
        for (int64_t i = 0; i < batch; ++i) eval_idx.push_back(i % ds.size());
        for (int v = 0; v < n_views; ++v)
            for (int64_t i = 0; i < batch; ++i)
                eval_masks[static_cast<size_t>(v)].push_back(sample_mask(n, preset.mask_ratio, eval_rng));
    }
    auto collapse_now = [&]() {
        bind_batch(eval_idx, eval_masks);
        g.forward();
        std::vector<Array<double>> vs;
        for (int64_t i = 0; i < batch; ++i) vs.push_back(mf.projected(0, i).template astype<double>());
        return collapse_metric(vs).aggregate;
    };

    TrainOutcome out;
    AdamW<float> opt(preset.optim);
    const ScheduleParams sched = preset.schedule();
    Rng mask_rng(preset.seed, 0x3A5F);
    BatchSampler sampler(ds.size(), batch, preset.seed);
    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    if (!out_dir.empty()) fs::create_directories(out_dir);
    const std::string ckpt_path = out_dir.empty() ? "" : out_dir + "/checkpoint.bin";

    if (track_collapse) out.init_collapse = collapse_now();

    for (int64_t step = 0; step < preset.steps; ++step) {
        const std::vector<int64_t> idx = sampler.next();
        std::vector<std::vector<Mask>> masks(static_cast<size_t>(n_views));
        for (int v = 0; v < n_views; ++v)
            for (int64_t i = 0; i < batch; ++i)
                masks[static_cast<size_t>(v)].push_back(sample_mask(n, preset.mask_ratio, mask_rng));
        bind_batch(idx, masks);
        MetricsRow row;
        row.step = step;
        try {
            g.forward();
            if (flags.mae) row.mae = static_cast<double>(g.value(mae_node).data[0]);
            if (flags.cross) row.cross = static_cast<double>(g.value(cross_node).data[0]);
            if (flags.in) row.in = static_cast<double>(g.value(in_node).data[0]);
            row.total = static_cast<double>(g.value(total).data[0]);
            g.backward(total);
        } catch (const NumericError&) {
            out.diverged = true;
            break;
        }
        const double lr = lr_at(step, sched);
        opt.step(g, lr);
        row.lr = lr;
        if (flags.mae) {
            if (!out.first_mae) out.first_mae = row.mae;
            out.last_mae = row.mae;
        }
        const bool log_now = preset.log_every > 0 && (step % preset.log_every == 0 || step == preset.steps - 1);
        bool collapse_now_flag = track_collapse && preset.collapse_every > 0 &&
                                 (step % preset.collapse_every == preset.collapse_every - 1);
        if (collapse_now_flag) {
            const double agg = collapse_now();
            out.last_collapse = agg;
            row.collapse = agg;
            if (!out.collapsed && collapse_declared(agg, out.init_collapse)) {
                out.collapsed = true;
                out.collapse_step = step;
            }
        }
        if (log_now || collapse_now_flag) {
            row.wall_s = wall();
            out.log.append(row);
        }
        if (!out_dir.empty() && preset.ckpt_every > 0 && (step + 1) % preset.ckpt_every == 0) {
            save_params(params_from_graph(g), ckpt_path);
        }
    }

    out.params = params_from_graph(g);
    if (!out_dir.empty()) {
        save_params(out.params, ckpt_path);
        out.checkpoint_path = ckpt_path;
        write_csv(out_dir + "/metrics.csv", out.log.to_csv());
        save_preset(preset, out_dir + "/preset.json");
    }
    return out;
}

}  // namespace lcmae
