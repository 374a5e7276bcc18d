#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "lcmae/altdecoders.hpp"
#include "lcmae/trainkit.hpp"

namespace fs = std::filesystem;

namespace lcmae {

namespace {

std::string head_str(int64_t h) { return h < 0 ? std::string("all") : std::to_string(h); }

void push_metric(CsvTable& t, const std::string& experiment, int64_t layer, const std::string& head,
                 const std::string& metric, double value, uint64_t seed) {
    t.rows.push_back({experiment, std::to_string(layer), head, metric, format_double(value),
                      std::to_string(seed)});
}

// Forward a batch of images under one shared mask and hand back the records.
template <typename T>
struct AnalysisForward {
    MaeForward<T> mf;
    Mask mask;
    int64_t images = 0;
};

AnalysisForward<double> analysis_forward(const ExperimentPreset& preset, const ParamStore<float>& params,
                                         const Dataset& ds, int64_t images) {
    const ModelConfig& cfg = preset.model;
    const int64_t n = cfg.n_patches();
    const int64_t k = mask_count(n, preset.mask_ratio);
    const int64_t n_vis = n - k;
    const DecoderKind kind = decoder_kind_from_string(preset.decoder);
    const int64_t out_dim = preset.decoder == "ae_block"
                                ? preset.ae_block * preset.ae_block * cfg.channels
                                : cfg.patch_dim();
    const int64_t count = std::min<int64_t>(images, ds.size());
    if (count < 1) throw ConfigError("analysis needs at least one image");
    ForwardOptions fopts;
    fopts.with_projector = true;
    fopts.projector_input = preset.projector_input == "pixel_output" ? ProjectorInput::PixelOutput
                                                                     : ProjectorInput::DecoderTokens;
    const ParamStore<double> p64 = params.astype<double>();
    AnalysisForward<double> af{build_mae_forward(cfg, p64, kind, out_dim, count, n_vis, fopts), {}, count};
    Rng mask_rng(preset.analysis_mask_seed, 0xA11);
    af.mask = sample_mask(n, preset.mask_ratio, mask_rng);  // identical across all images
    std::vector<Array<double>> seqs;
    std::vector<Mask> masks;
    for (int64_t i = 0; i < count; ++i) {
        seqs.push_back(patchify(ds.images[static_cast<size_t>(i)], cfg.patch).astype<double>());
        masks.push_back(af.mask);
    }
    af.mf.bind_view(0, seqs, masks);
    af.mf.g.forward();
    return af;
}

}  // namespace

ReferenceFeatures load_reference_features(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    ReferenceFeatures rf;
    rf.provenance = "file:" + path;
    for (int64_t i = 0;; ++i) {
        const std::string key = "img" + std::to_string(i);
        if (!ck.has(key)) break;
        rf.per_image.push_back(ck.get_f64(key));
    }
    if (rf.per_image.empty()) throw IoError("reference feature file '" + path + "' has no img<i> entries");
    return rf;
}

ReferenceFeatures train_reference_features(const Dataset& ds, const ModelConfig& cfg,
                                           const std::vector<int64_t>& image_indices, uint64_t seed,
                                           int64_t steps) {
    int n_classes = 0;
    for (int l : ds.labels) n_classes = std::max(n_classes, l + 1);
    if (n_classes < 2)
        throw ConfigError("reference provider (supervised probe) needs labeled data; supply a feature file");

    const int64_t n = cfg.n_patches();
    const int64_t batch = std::min<int64_t>(8, ds.size());
    ParamStore<float> params = init_params<float>(cfg, DecoderKind::Transformer, cfg.patch_dim(), seed);
    ForwardOptions fopts;  // unmasked single view; decoder present but unused by the probe loss
    MaeForward<float> mf = build_mae_forward(cfg, params, DecoderKind::Transformer, cfg.patch_dim(), batch, n,
                                             fopts);
    Graph<float>& g = mf.g;
    const ViewHandles<float>& vh = mf.view[0];

    // mean-pooled encoder tokens -> linear head -> MSE against one-hot labels
    std::vector<Var> pooled;
    for (int64_t i = 0; i < batch; ++i) {
        Var rows = g.slice_rows(vh.enc_out, i * vh.rows_enc + vh.cls_enc, n);
        pooled.push_back(g.reshape(g.mean_axis(rows, 0), {1, cfg.enc_dim}));
    }
    Var feats = batch > 1 ? g.concat_rows(pooled) : pooled[0];
    Rng hr(seed, 0x4EAD);
    Array<float> hw({cfg.enc_dim, n_classes});
    for (auto& v : hw.data) v = static_cast<float>(hr.normal() * 0.02);
    Var head = g.add(g.matmul(feats, g.param("refhead.w", hw)),
                     g.param("refhead.b", Array<float>::zeros({n_classes})));
    Var target = g.input("refhead.target", {batch, n_classes});
    Var diff = g.sub(head, target);
    Var loss = g.mean_all(g.mul(diff, diff));

    std::vector<Mask> no_mask(static_cast<size_t>(batch), [&] {
        Mask m;
        m.n = n;
        m.bits.assign(static_cast<size_t>(n), 0);
        m.ratio = 0.0;
        return m;
    }());
    std::vector<Array<float>> all_patches;
    for (const auto& img : ds.images) all_patches.push_back(patchify(img, cfg.patch));

    AdamW<float> opt(AdamWConfig{0.9, 0.95, 1e-8, 0.0});
    Rng order_rng(seed, 0x0BDE);
    std::vector<int64_t> order(static_cast<size_t>(ds.size()));
    for (int64_t i = 0; i < ds.size(); ++i) order[static_cast<size_t>(i)] = i;
    int64_t cursor = 0;
    for (int64_t step = 0; step < steps; ++step) {
        std::vector<int64_t> idx;
        for (int64_t i = 0; i < batch; ++i) {
            if (cursor == ds.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            idx.push_back(order[static_cast<size_t>(cursor++)]);
        }
        std::vector<Array<float>> seqs;
        Array<float> tgt({batch, n_classes});
        for (int64_t i = 0; i < batch; ++i) {
            seqs.push_back(all_patches[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
            tgt.at(i, ds.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])]) = 1.0f;
        }
        mf.bind_view(0, seqs, no_mask);
        g.bind(target, std::move(tgt));
        g.forward();
        g.backward(loss);
        opt.step(g, 1e-3);
    }

    // feature extraction for the requested images, batched
    ReferenceFeatures rf;
    rf.provenance = "supervised-tiny(seed=" + std::to_string(seed) + ",steps=" + std::to_string(steps) + ")";
    for (size_t base = 0; base < image_indices.size(); base += static_cast<size_t>(batch)) {
        std::vector<Array<float>> seqs;
        for (int64_t i = 0; i < batch; ++i) {
            const size_t k = std::min(base + static_cast<size_t>(i), image_indices.size() - 1);
            seqs.push_back(all_patches[static_cast<size_t>(image_indices[k])]);
        }
        Array<float> tgt({batch, n_classes});
        mf.bind_view(0, seqs, no_mask);
        g.bind(target, std::move(tgt));
        g.forward();
        const Array<float>& enc = g.value(vh.enc_out);
        for (int64_t i = 0; i < batch && base + static_cast<size_t>(i) < image_indices.size(); ++i) {
            Array<double> f({n, cfg.enc_dim});
            for (int64_t j = 0; j < n; ++j) {
                const int64_t r = i * vh.rows_enc + vh.cls_enc + j;
                for (int64_t d = 0; d < cfg.enc_dim; ++d)
                    f.at(j, d) = static_cast<double>(enc.at(r, d));
            }
            rf.per_image.push_back(std::move(f));
        }
    }
    return rf;
}

CsvTable analyze_model(const ExperimentPreset& preset, const ParamStore<float>& params, const Dataset& ds,
                       const AnalysisOptions& opts, const std::string& out_dir) {
    if (!out_dir.empty()) fs::create_directories(out_dir);
    CsvTable t;
    t.header = {"experiment", "layer", "head", "metric", "value", "seed"};
    const uint64_t seed = preset.analysis_mask_seed;
    const std::string& exp = preset.name;
    const ModelConfig& cfg = preset.model;

    AnalysisForward<double> af = analysis_forward(preset, params, ds, opts.images);
    const int64_t count = af.images;
    const bool transformer_dec = decoder_kind_from_string(preset.decoder) == DecoderKind::Transformer;
    const bool has_masks = af.mask.popcount() > 0;

    // per-image records
    std::vector<std::vector<AttentionRecord>> enc_recs, dec_recs;
    for (int64_t i = 0; i < count; ++i) {
        enc_recs.push_back(af.mf.attention_records(0, i, false, af.mask));
        if (transformer_dec) dec_recs.push_back(af.mf.attention_records(0, i, true, af.mask));
    }

    // S^attn per decoder layer (needs mask-token queries and >= 2 images)
    if (transformer_dec && has_masks && count >= 2) {
        for (int64_t l = 0; l < cfg.dec_depth; ++l) {
            std::vector<AttentionRecord> layer;
            for (int64_t i = 0; i < count; ++i) layer.push_back(dec_recs[static_cast<size_t>(i)][static_cast<size_t>(l)]);
            push_metric(t, exp, l, "all", "s_attn", attn_similarity(layer, false), seed);
            push_metric(t, exp, l, "mean", "s_attn_perhead", attn_similarity(layer, true), seed);
        }
    }

    // S^sim per decoder layer against the reference features
    if (transformer_dec) {
        ReferenceFeatures ref;
        bool have_ref = false;
        if (!opts.ref_features_path.empty()) {
            ref = load_reference_features(opts.ref_features_path);
            have_ref = true;
        } else if (opts.train_reference) {
            try {
                std::vector<int64_t> idx;
                for (int64_t i = 0; i < count; ++i) idx.push_back(i);
                ref = train_reference_features(ds, cfg, idx, preset.seed + 17, opts.reference_steps);
                have_ref = true;
            } catch (const ConfigError&) {
                have_ref = false;  // unlabeled data and no feature file
            }
        }
        if (have_ref) {
            if (static_cast<int64_t>(ref.per_image.size()) < count)
                throw ConfigError("reference features cover fewer images than analyzed");
            std::vector<Array<double>> w_ref;
            for (int64_t i = 0; i < count; ++i)
                w_ref.push_back(feature_sim_weights(ref.per_image[static_cast<size_t>(i)]));
            for (int64_t l = 0; l < cfg.dec_depth; ++l) {
                std::vector<Array<double>> w_dec;
                for (int64_t i = 0; i < count; ++i) {
                    const auto toks = af.mf.decoder_layer_tokens(0, i);
                    w_dec.push_back(feature_sim_weights(toks[static_cast<size_t>(l)]));
                }
                push_metric(t, exp, l, "all", "s_sim", reference_similarity(w_ref, w_dec), seed);
            }
        }
    }

    // attention distance per layer / head / query group
    auto dist_rows = [&](const std::vector<std::vector<AttentionRecord>>& recs, const std::string& which,
                         QueryGroup group, const std::string& gname) {
        if (recs.empty()) return;
        const int64_t layers = static_cast<int64_t>(recs[0].size());
        for (int64_t l = 0; l < layers; ++l) {
            std::vector<double> head_acc;
            bool ok = true;
            for (int64_t i = 0; i < count && ok; ++i) {
                try {
                    const AttentionDistance d =
                        attention_distance(recs[static_cast<size_t>(i)][static_cast<size_t>(l)], cfg.grid(),
                                           cfg.patch, group);
                    if (head_acc.empty()) head_acc.assign(d.per_head.size(), 0.0);
                    for (size_t h = 0; h < d.per_head.size(); ++h) head_acc[h] += d.per_head[h];
                } catch (const ConfigError&) {
                    ok = false;  // empty query group for this configuration
                }
            }
            if (!ok || head_acc.empty()) continue;
            double mean = 0.0;
            for (size_t h = 0; h < head_acc.size(); ++h) {
                const double v = head_acc[h] / static_cast<double>(count);
                push_metric(t, exp, l, head_str(static_cast<int64_t>(h)),
                            "attn_dist_" + which + "_" + gname, v, seed);
                mean += v;
            }
            push_metric(t, exp, l, "mean", "attn_dist_" + which + "_" + gname,
                        mean / static_cast<double>(head_acc.size()), seed);
        }
    };
    dist_rows(enc_recs, "enc", QueryGroup::All, "all");
    dist_rows(enc_recs, "enc", QueryGroup::VisibleOnly, "visible");
    if (transformer_dec) {
        dist_rows(dec_recs, "dec", QueryGroup::All, "all");
        dist_rows(dec_recs, "dec", QueryGroup::VisibleOnly, "visible");
        if (has_masks) dist_rows(dec_recs, "dec", QueryGroup::MaskOnly, "mask");
    }

    // collapse metric over projected tokens
    if (count >= 8) {
        std::vector<Array<double>> vs;
        for (int64_t i = 0; i < count; ++i) vs.push_back(af.mf.projected(0, i));
        push_metric(t, exp, -1, "all", "collapse", collapse_metric(vs).aggregate, seed);
    }

    // attention-map dumps for the first image's first mask-token queries
    if (!out_dir.empty() && transformer_dec && has_masks && opts.dumps > 0) {
        const auto& recs = dec_recs[0];
        for (size_t l = 0; l < recs.size(); ++l) {
            int64_t dumped = 0;
            for (int64_t q = 0; q < recs[l].queries && dumped < opts.dumps; ++q) {
                if (recs[l].roles[static_cast<size_t>(q)] != TokenRole::MaskTok) continue;
                dump_attention(recs[l], q, cfg.grid(),
                               out_dir + "/attn_l" + std::to_string(l) + "_q" + std::to_string(q) + ".pgm");
                ++dumped;
            }
        }
    }

    if (!out_dir.empty()) write_csv(out_dir + "/analysis.csv", t);
    return t;
}

// ---- sweeps ----

std::vector<std::string> sweep_kinds() {
    return {"ablation", "mask-ratio", "decoder-variant", "ae-blocks", "single-image"};
}

namespace {

// Mean over heads+queries+images of the last encoder layer's attention
// distance under the shared analysis mask.
double last_encoder_distance(const ExperimentPreset& preset, const ParamStore<float>& params,
                             const Dataset& ds, int64_t images) {
    AnalysisForward<double> af = analysis_forward(preset, params, ds, images);
    double acc = 0.0;
    for (int64_t i = 0; i < af.images; ++i) {
        const auto recs = af.mf.attention_records(0, i, false, af.mask);
        acc += attention_distance(recs.back(), preset.model.grid(), preset.model.patch, QueryGroup::All).mean;
    }
    return acc / static_cast<double>(af.images);
}

}  // namespace

int run_sweep(const std::string& kind, const ExperimentPreset& base, const std::string& out_dir) {
    fs::create_directories(out_dir);
    CsvTable summary;
    summary.header = {"point", "metric", "value", "seed"};
    const Dataset ds = open_dataset(base.data);
    int failures = 0;

    auto run_point = [&](const ExperimentPreset& p, const std::string& label,
                         const std::vector<std::pair<std::string, double>>& extra) {
        const std::string dir = out_dir + "/" + label;
        try {
            const TrainOutcome o = train(p, dir);
            if (o.diverged) throw NumericError("training diverged");
            if (o.last_mae)
                summary.rows.push_back({label, "final_l_mae", format_double(*o.last_mae),
                                        std::to_string(p.seed)});
            if (o.last_collapse >= 0.0)
                summary.rows.push_back({label, "collapse_aggregate", format_double(o.last_collapse),
                                        std::to_string(p.seed)});
            summary.rows.push_back({label, "collapsed", o.collapsed ? "1" : "0", std::to_string(p.seed)});
            const double dist = last_encoder_distance(p, o.params, ds, 16);
            summary.rows.push_back({label, "enc_last_attn_dist", format_double(dist), std::to_string(p.seed)});
            for (const auto& [k, v] : extra)
                summary.rows.push_back({label, k, format_double(v), std::to_string(p.seed)});
            return dist;
        } catch (const std::exception& e) {
            ++failures;
            summary.rows.push_back({label, "failed", "1", std::to_string(p.seed)});
            std::cerr << "sweep point '" << label << "' failed: " << e.what() << "\n";
            return std::nan("");
        }
    };

    if (kind == "ablation") {
        for (char c = 'a'; c <= 'g'; ++c) {
            ExperimentPreset p = base;
            p.name = base.name + "-" + c;
            p.losses = std::string(1, c);
            run_point(p, std::string("setting-") + c, {});
        }
    } else if (kind == "mask-ratio") {
        const std::vector<double> ratios = {0.3, 0.45, 0.6, 0.75, 0.9};
        std::vector<double> dists;
        std::vector<double> used;
        for (double r : ratios) {
            ExperimentPreset p = base;
            p.name = base.name + "-r" + std::to_string(r);
            p.mask_ratio = r;
            const double d = run_point(p, "ratio-" + format_double(r), {{"mask_ratio", r}});
            if (!std::isnan(d)) {
                dists.push_back(d);
                used.push_back(r);
            }
        }
        if (used.size() >= 3) {
            const double rho = spearman(used, dists);
            summary.rows.push_back({"summary", "spearman_ratio_vs_attn_dist", format_double(rho),
                                    std::to_string(base.seed)});
            SvgSeries s{"attn distance", used, dists};
            write_svg_lineplot(out_dir + "/mask_ratio.svg", "mask ratio vs last-layer attention distance", {s});
        }
    } else if (kind == "decoder-variant") {
        for (const std::string d : {"transformer", "weighted_avg", "conv"}) {
            ExperimentPreset p = base;
            p.name = base.name + "-" + d;
            p.decoder = d;
            run_point(p, "decoder-" + d, {});
        }
    } else if (kind == "ae-blocks") {
        std::vector<double> bs, dists;
        for (int64_t b : default_block_grid(base.model.img_size, base.model.patch)) {
            ExperimentPreset p = base;
            p.name = base.name + "-ae" + std::to_string(b);
            p.decoder = "ae_block";
            p.ae_block = b;
            p.mask_ratio = 0.0;
            p.losses = "b";
            const double d = run_point(p, "ae-" + std::to_string(b),
                                       {{"block", static_cast<double>(b)}});
            if (!std::isnan(d)) {
                bs.push_back(static_cast<double>(b));
                dists.push_back(d);
            }
        }
        if (bs.size() >= 2) {
            SvgSeries s{"attn distance", bs, dists};
            write_svg_lineplot(out_dir + "/ae_blocks.svg", "block size vs attention distance", {s});
        }
    } else if (kind == "single-image") {
        run_point(base, "multi-image", {});
        ExperimentPreset p = base;
        p.name = base.name + "-single";
        p.data.path.clear();
        p.data.synth_count = 1;
        p.data.synth_seed = base.data.synth_seed;
        run_point(p, "single-image", {});
    } else {
        throw ConfigError("unknown sweep kind '" + kind + "'");
    }

    write_csv(out_dir + "/summary.csv", summary);
    return failures;
}

void emit_report(const std::string& metrics_dir, const std::string& out_dir) {
    fs::create_directories(out_dir);
    for (const auto& e : fs::recursive_directory_iterator(metrics_dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
        const CsvTable t = read_csv(e.path().string());
        const std::string stem = e.path().stem().string();
        const std::string tag = fs::relative(e.path().parent_path(), metrics_dir).string();
        const std::string base = out_dir + "/" + (tag == "." ? "" : tag + "_") + stem;
        if (stem == "metrics" && t.header.size() == 8) {
            std::vector<SvgSeries> series;
            const char* cols[] = {"l_mae", "l_cross", "l_in", "total"};
            for (int c = 1; c <= 4; ++c) {
                SvgSeries s;
                s.name = cols[c - 1];
                for (const auto& row : t.rows) {
                    if (row[static_cast<size_t>(c)].empty()) continue;
                    s.xs.push_back(std::stod(row[0]));
                    s.ys.push_back(std::stod(row[static_cast<size_t>(c)]));
                }
                if (!s.xs.empty()) series.push_back(std::move(s));
            }
            if (!series.empty()) write_svg_lineplot(base + ".svg", "training losses", series);
        } else if (stem == "analysis" && t.header.size() == 6) {
            for (const std::string metric : {"s_attn", "s_sim"}) {
                SvgSeries s;
                s.name = metric;
                for (const auto& row : t.rows)
                    if (row[3] == metric) {
                        s.xs.push_back(std::stod(row[1]));
                        s.ys.push_back(std::stod(row[4]));
                    }
                if (!s.xs.empty())
                    write_svg_lineplot(base + "_" + metric + ".svg", metric + " per decoder layer", {s});
            }
        }
    }
}

}  // namespace lcmae
