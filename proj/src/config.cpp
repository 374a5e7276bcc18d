#include <json.hpp>

#include "lcmae/trainkit.hpp"

namespace lcmae {

using json = nlohmann::json;

namespace {

json model_to_json(const ModelConfig& m) {
    return json{{"img_size", m.img_size}, {"patch", m.patch},         {"channels", m.channels},
                {"enc_depth", m.enc_depth}, {"enc_dim", m.enc_dim},   {"enc_heads", m.enc_heads},
                {"dec_depth", m.dec_depth}, {"dec_dim", m.dec_dim},   {"dec_heads", m.dec_heads},
                {"use_cls", m.use_cls},     {"proj_dim", m.proj_dim}, {"mlp_ratio", m.mlp_ratio},
                {"init_std", m.init_std}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.img_size = j.value("img_size", m.img_size);
    m.patch = j.value("patch", m.patch);
    m.channels = j.value("channels", m.channels);
    m.enc_depth = j.value("enc_depth", m.enc_depth);
    m.enc_dim = j.value("enc_dim", m.enc_dim);
    m.enc_heads = j.value("enc_heads", m.enc_heads);
    m.dec_depth = j.value("dec_depth", m.dec_depth);
    m.dec_dim = j.value("dec_dim", m.dec_dim);
    m.dec_heads = j.value("dec_heads", m.dec_heads);
    m.use_cls = j.value("use_cls", m.use_cls);
    m.proj_dim = j.value("proj_dim", m.proj_dim);
    m.mlp_ratio = j.value("mlp_ratio", m.mlp_ratio);
    m.init_std = j.value("init_std", m.init_std);
    return m;
}

}  // namespace

std::string preset_to_json(const ExperimentPreset& p) {
    json j;
    j["name"] = p.name;
    j["model"] = model_to_json(p.model);
    j["losses"] = p.losses;
    j["mask_ratio"] = p.mask_ratio;
    j["decoder"] = p.decoder;
    j["ae_block"] = p.ae_block;
    j["data"] = json{{"path", p.data.path},
                     {"format", p.data.format},
                     {"synth_count", p.data.synth_count},
                     {"synth_seed", p.data.synth_seed}};
    j["steps"] = p.steps;
    j["warmup_frac"] = p.warmup_frac;
    j["batch"] = p.batch;
    j["base_lr"] = p.base_lr;
    j["seed"] = p.seed;
    j["target_mode"] = p.target_mode;
    j["normalized_losses"] = p.normalized_losses;
    j["projector_input"] = p.projector_input;
    j["lin_standardized_patches"] = p.lin_standardized_patches;
    j["log_every"] = p.log_every;
    j["collapse_every"] = p.collapse_every;
    j["ckpt_every"] = p.ckpt_every;
    j["analysis_mask_seed"] = p.analysis_mask_seed;
    j["optim"] = json{{"beta1", p.optim.beta1},
                      {"beta2", p.optim.beta2},
                      {"eps", p.optim.eps},
                      {"weight_decay", p.optim.weight_decay}};
    if (!p.paper_scale_note.empty()) j["paper_scale_note"] = p.paper_scale_note;
    return j.dump(2) + "\n";
}

ExperimentPreset preset_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    ExperimentPreset p;
    try {
        p.name = j.value("name", p.name);
        if (j.contains("model")) p.model = model_from_json(j["model"]);
        p.losses = j.value("losses", p.losses);
        p.mask_ratio = j.value("mask_ratio", p.mask_ratio);
        p.decoder = j.value("decoder", p.decoder);
        p.ae_block = j.value("ae_block", p.ae_block);
        if (j.contains("data")) {
            const json& d = j["data"];
            p.data.path = d.value("path", p.data.path);
            p.data.format = d.value("format", p.data.format);
            p.data.synth_count = d.value("synth_count", p.data.synth_count);
            p.data.synth_seed = d.value("synth_seed", p.data.synth_seed);
        }
        p.steps = j.value("steps", p.steps);
        p.warmup_frac = j.value("warmup_frac", p.warmup_frac);
        p.batch = j.value("batch", p.batch);
        p.base_lr = j.value("base_lr", p.base_lr);
        p.seed = j.value("seed", p.seed);
        p.target_mode = j.value("target_mode", p.target_mode);
        p.normalized_losses = j.value("normalized_losses", p.normalized_losses);
        p.projector_input = j.value("projector_input", p.projector_input);
        p.lin_standardized_patches = j.value("lin_standardized_patches", p.lin_standardized_patches);
        p.log_every = j.value("log_every", p.log_every);
        p.collapse_every = j.value("collapse_every", p.collapse_every);
        p.ckpt_every = j.value("ckpt_every", p.ckpt_every);
        p.analysis_mask_seed = j.value("analysis_mask_seed", p.analysis_mask_seed);
        if (j.contains("optim")) {
            const json& o = j["optim"];
            p.optim.beta1 = o.value("beta1", p.optim.beta1);
            p.optim.beta2 = o.value("beta2", p.optim.beta2);
            p.optim.eps = o.value("eps", p.optim.eps);
            p.optim.weight_decay = o.value("weight_decay", p.optim.weight_decay);
        }
        p.paper_scale_note = j.value("paper_scale_note", p.paper_scale_note);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
    p.validate();
    return p;
}

ExperimentPreset load_preset(const std::string& path) { return preset_from_json(read_text_file(path)); }

void save_preset(const ExperimentPreset& p, const std::string& path) { write_text_file(path, preset_to_json(p)); }

void ExperimentPreset::validate() const {
    model.validate();
    if (losses.size() != 1 || losses[0] < 'a' || losses[0] > 'g')
        throw ConfigError("losses must be a single letter a..g, got '" + losses + "'");
    if (mask_ratio < 0.0 || mask_ratio > 1.0) throw ConfigError("mask_ratio must be in [0,1]");
    if (decoder != "transformer" && decoder != "weighted_avg" && decoder != "conv" && decoder != "ae_block")
        throw ConfigError("decoder must be transformer | weighted_avg | conv | ae_block");
    if (decoder == "ae_block") {
        if (mask_ratio != 0.0) throw ConfigError("ae_block runs unmasked: set mask_ratio to 0");
        if (losses != "b") throw ConfigError("ae_block trains with the reconstruction loss only (losses = b)");
        if (ae_block < model.patch) throw ConfigError("ae_block must be >= patch size");
    }
    if (steps < 1 || batch < 1) throw ConfigError("steps and batch must be positive");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0) throw ConfigError("warmup_frac must be in [0,1)");
    if (target_mode != "raw" && target_mode != "patch_standardized" && target_mode != "pred_l2")
        throw ConfigError("target_mode must be raw | patch_standardized | pred_l2");
    if (projector_input != "decoder_tokens" && projector_input != "pixel_output")
        throw ConfigError("projector_input must be decoder_tokens | pixel_output");
    if (data.path.empty() && data.synth_count <= 0)
        throw ConfigError("data: provide a path or a positive synth_count");
    const int64_t n = model.n_patches();
    if (n - mask_count(n, mask_ratio) < 1)
        throw ConfigError("mask_ratio leaves no visible patches for the encoder");
}

LossFlags ExperimentPreset::flags() const { return flags_for_setting(losses[0]); }

ScheduleParams ExperimentPreset::schedule() const {
    ScheduleParams s;
    s.base_lr = base_lr;
    s.batch_size = batch;
    s.total_steps = steps;
    s.warmup_steps = static_cast<int64_t>(warmup_frac * static_cast<double>(steps));
    return s;
}

std::vector<ExperimentPreset> builtin_presets() {
    std::vector<ExperimentPreset> out;
    // Desk-scale defaults: 32x32x3, p=4 (n=64), encoder 6x192/3 heads.
    ExperimentPreset base;
    base.model = ModelConfig{};
    base.data.synth_count = 512;
    base.batch = 8;
    base.steps = 2000;
    base.paper_scale_note =
        "paper scale: ImageNet-1K, ViT-B/16, batch 1024, base_lr 1.5e-4, 100 epochs, 20-epoch warmup";

    ExperimentPreset mae = base;
    mae.name = "mae-default";
    mae.losses = "b";
    mae.mask_ratio = 0.75;
    out.push_back(mae);

    ExperimentPreset lc = base;
    lc.name = "lcmae-default";
    lc.losses = "a";
    lc.model.dec_depth = 2;   // shallower decoder for the two-view runs
    lc.base_lr = 6e-4;        // scaled analog of the LC-MAE base lr
    lc.paper_scale_note =
        "paper scale: LC-MAE uses decoder depth 2 and base_lr 6e-4; projector dim 1024";
    out.push_back(lc);

    for (char c = 'a'; c <= 'g'; ++c) {
        ExperimentPreset p = lc;
        p.name = std::string("table1-") + c;
        p.losses = std::string(1, c);
        out.push_back(p);
    }

    ExperimentPreset single = mae;
    single.name = "single-image";
    single.data.synth_count = 1;
    single.steps = 1000;
    out.push_back(single);

    return out;
}

}  // namespace lcmae
