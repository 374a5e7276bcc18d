#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lcmae/altdecoders.hpp"
#include "lcmae/analysis.hpp"
#include "lcmae/objectives.hpp"
#include "lcmae/trainkit.hpp"

namespace py = pybind11;
using namespace lcmae;

namespace {

Array<double> from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Array<double> out;
    out.shape.assign(a.shape(), a.shape() + a.ndim());
    out.data.assign(a.data(), a.data() + a.size());
    return out;
}

py::array_t<double> to_numpy(const Array<double>& a) {
    py::array_t<double> out(a.shape);
    std::copy(a.data.begin(), a.data.end(), out.mutable_data());
    return out;
}

Mask mask_from_bits(const std::vector<uint8_t>& bits) {
    Mask m;
    m.n = static_cast<int64_t>(bits.size());
    m.bits = bits;
    m.ratio = m.n ? static_cast<double>(m.popcount()) / static_cast<double>(m.n) : 0.0;
    return m;
}

// One full forward of a float model in double precision, exposing the pieces
// the python side needs: predictions, projected tokens, attention records.
struct ForwardResult {
    std::vector<Array<double>> preds;
    std::vector<Array<double>> projected;
    std::vector<std::vector<AttentionRecord>> enc_attn;  // [image][layer]
    std::vector<std::vector<AttentionRecord>> dec_attn;
};

class Model {
public:
    Model(const std::string& preset_json) : preset_(preset_from_json(preset_json)) {
        const int64_t out_dim = preset_.decoder == "ae_block"
                                    ? preset_.ae_block * preset_.ae_block * preset_.model.channels
                                    : preset_.model.patch_dim();
        out_dim_ = out_dim;
        params_ = init_params<float>(preset_.model, decoder_kind_from_string(preset_.decoder), out_dim,
                                     preset_.seed);
    }

    void load_checkpoint(const std::string& path) { params_ = load_params(path); }
    void save_checkpoint(const std::string& path) const { save_params(params_, path); }

    ForwardResult forward(const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& images,
                          const std::vector<std::vector<uint8_t>>& mask_bits) {
        if (images.empty() || images.size() != mask_bits.size())
            throw ConfigError("forward: need equally many images and masks");
        const ModelConfig& cfg = preset_.model;
        const int64_t n = cfg.n_patches();
        std::vector<Array<double>> seqs;
        std::vector<Mask> masks;
        for (size_t i = 0; i < images.size(); ++i) {
            seqs.push_back(patchify(from_numpy(images[i]), cfg.patch));
            masks.push_back(mask_from_bits(mask_bits[i]));
        }
        const int64_t n_vis = n - masks[0].popcount();
        for (const auto& m : masks)
            if (n - m.popcount() != n_vis) throw ConfigError("forward: masks must share one popcount");
        ForwardOptions opts;
        opts.with_projector = true;
        MaeForward<double> mf =
            build_mae_forward(cfg, params_.astype<double>(), decoder_kind_from_string(preset_.decoder),
                              out_dim_, static_cast<int64_t>(images.size()), n_vis, opts);
        mf.bind_view(0, seqs, masks);
        mf.g.forward();
        ForwardResult r;
        const bool dec = decoder_kind_from_string(preset_.decoder) == DecoderKind::Transformer;
        for (size_t i = 0; i < images.size(); ++i) {
            r.preds.push_back(mf.prediction(0, static_cast<int64_t>(i)));
            r.projected.push_back(mf.projected(0, static_cast<int64_t>(i)));
            r.enc_attn.push_back(mf.attention_records(0, static_cast<int64_t>(i), false, masks[i]));
            if (dec) r.dec_attn.push_back(mf.attention_records(0, static_cast<int64_t>(i), true, masks[i]));
        }
        return r;
    }

    const ExperimentPreset& preset() const { return preset_; }

private:
    ExperimentPreset preset_;
    ParamStore<float> params_;
    int64_t out_dim_ = 0;
};

}  // namespace

PYBIND11_MODULE(_lcmae, m) {
    m.doc() = "desk-scale MAE / LC-MAE laboratory (C++ core)";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<NumericError>(m, "NumericError");
    py::register_exception<GraphError>(m, "GraphError");
    py::register_exception<IoError>(m, "IoError");

    // masking
    py::class_<Mask>(m, "Mask")
        .def_readonly("n", &Mask::n)
        .def_readonly("bits", &Mask::bits)
        .def_readonly("ratio", &Mask::ratio)
        .def("popcount", &Mask::popcount)
        .def("masked_indices", &Mask::masked_indices)
        .def("visible_indices", &Mask::visible_indices);

    m.def(
        "sample_mask",
        [](int64_t n, double ratio, uint64_t seed, uint64_t stream) {
            Rng rng(seed, stream);
            return sample_mask(n, ratio, rng);
        },
        py::arg("n"), py::arg("ratio"), py::arg("seed"), py::arg("stream") = 0);
    m.def(
        "sample_mask_pair",
        [](int64_t n, double ratio, uint64_t seed, uint64_t stream) {
            Rng rng(seed, stream);
            return sample_mask_pair(n, ratio, rng);
        },
        py::arg("n"), py::arg("ratio"), py::arg("seed"), py::arg("stream") = 0);
    m.def("intersect", &intersect);

    // patches and embeddings
    m.def(
        "patchify",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, int64_t p) {
            return to_numpy(patchify(from_numpy(img), p));
        },
        py::arg("image"), py::arg("patch"));
    m.def(
        "unpatchify",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& patches, int64_t p,
           int64_t channels, int64_t h, int64_t w) {
            return to_numpy(unpatchify(from_numpy(patches), p, channels, h, w));
        },
        py::arg("patches"), py::arg("patch"), py::arg("channels"), py::arg("height"), py::arg("width"));
    m.def("posembed_sincos_2d",
          [](int64_t gh, int64_t gw, int64_t dim) { return to_numpy(posembed_sincos_2d(gh, gw, dim)); });
    m.def("gaussian_kernel", [](int64_t size, double sigma) {
        return to_numpy(gaussian_kernel(size, sigma).weights);
    });
    m.def("weighted_avg_mixing", [](int64_t grid, int64_t size, double sigma) {
        return to_numpy(weighted_avg_mixing(grid, gaussian_kernel(size, sigma)));
    });

    // metrics
    py::class_<AttentionRecord>(m, "AttentionRecord")
        .def_readonly("layer", &AttentionRecord::layer)
        .def_readonly("heads", &AttentionRecord::heads)
        .def_readonly("queries", &AttentionRecord::queries)
        .def_readonly("keys", &AttentionRecord::keys)
        .def_readonly("weights", &AttentionRecord::weights)
        .def_readonly("patch_index", &AttentionRecord::patch_index)
        .def("roles", [](const AttentionRecord& r) {
            std::vector<int> out;
            for (TokenRole t : r.roles) out.push_back(static_cast<int>(t));
            return out;
        });

    m.def("attn_similarity", &attn_similarity, py::arg("records"), py::arg("per_head") = false);
    m.def("feature_sim_weights", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& f) {
        return to_numpy(feature_sim_weights(from_numpy(f)));
    });
    m.def("reference_similarity",
          [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& a,
             const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& b) {
              std::vector<Array<double>> wa, wb;
              for (const auto& x : a) wa.push_back(from_numpy(x));
              for (const auto& x : b) wb.push_back(from_numpy(x));
              return reference_similarity(wa, wb);
          });
    m.def(
        "attention_distance",
        [](const AttentionRecord& rec, int64_t grid, int64_t patch, const std::string& group) {
            QueryGroup g = QueryGroup::All;
            if (group == "mask") g = QueryGroup::MaskOnly;
            else if (group == "visible") g = QueryGroup::VisibleOnly;
            else if (group != "all") throw ConfigError("group must be all | mask | visible");
            const AttentionDistance d = attention_distance(rec, grid, patch, g);
            return py::make_tuple(d.per_head, d.mean);
        },
        py::arg("record"), py::arg("grid"), py::arg("patch"), py::arg("group") = "all");
    m.def("collapse_metric", [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& vs) {
        std::vector<Array<double>> arrays;
        for (const auto& v : vs) arrays.push_back(from_numpy(v));
        const CollapseReport r = collapse_metric(arrays);
        return py::make_tuple(r.per_position, r.aggregate);
    });
    m.def("collapse_declared", &collapse_declared);
    m.def("spearman", &spearman);

    // losses on plain arrays (double graphs under the hood)
    m.def("cosine_mse_gap", [](const std::vector<double>& u, const std::vector<double>& v) {
        if (u.size() != v.size() || u.empty()) throw ShapeError("vectors must match");
        double nu = 0, nv = 0, dot = 0;
        for (size_t i = 0; i < u.size(); ++i) {
            nu += u[i] * u[i];
            nv += v[i] * v[i];
            dot += u[i] * v[i];
        }
        if (nu == 0 || nv == 0) throw NumericError("zero-norm vector");
        nu = std::sqrt(nu);
        nv = std::sqrt(nv);
        const double cos = dot / (nu * nv);
        double mse = 0;
        for (size_t i = 0; i < u.size(); ++i) {
            const double d = u[i] / nu - v[i] / nv;
            mse += d * d;
        }
        return py::make_tuple(1.0 - cos, 0.5 * mse);
    });

    m.def("lr_at", [](int64_t step, double base_lr, int64_t batch, int64_t warmup, int64_t total) {
        return lr_at(step, ScheduleParams{base_lr, batch, warmup, total});
    });

    // gradcheck entry: a small random MLP loss in float64
    m.def("gradcheck_linear", [](uint64_t seed, double step) {
        Rng rng(seed, 9);
        Graph<double> g;
        Array<double> w({4, 3}), b({3}), x({2, 4});
        for (auto& v : w.data) v = rng.normal();
        for (auto& v : b.data) v = rng.normal();
        for (auto& v : x.data) v = rng.normal();
        Var xi = g.input("x", {2, 4}, true);
        Var y = g.add(g.matmul(xi, g.param("w", w)), g.param("b", b));
        Var loss = g.sum_all(g.mul(g.gelu(y), y));
        g.bind("x", x);
        return gradcheck(g, loss, {"w", "b", "x"}, step);
    });

    // model
    py::class_<ForwardResult>(m, "ForwardResult")
        .def_property_readonly("preds",
                               [](const ForwardResult& r) {
                                   std::vector<py::array_t<double>> out;
                                   for (const auto& p : r.preds) out.push_back(to_numpy(p));
                                   return out;
                               })
        .def_property_readonly("projected",
                               [](const ForwardResult& r) {
                                   std::vector<py::array_t<double>> out;
                                   for (const auto& p : r.projected) out.push_back(to_numpy(p));
                                   return out;
                               })
        .def_readonly("enc_attn", &ForwardResult::enc_attn)
        .def_readonly("dec_attn", &ForwardResult::dec_attn);

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("preset_json"))
        .def("forward", &Model::forward, py::arg("images"), py::arg("masks"))
        .def("load_checkpoint", &Model::load_checkpoint)
        .def("save_checkpoint", &Model::save_checkpoint);

    // training
    m.def(
        "train_preset",
        [](const std::string& preset_json, const std::string& out_dir) {
            const TrainOutcome o = train(preset_from_json(preset_json), out_dir);
            py::dict d;
            d["collapsed"] = o.collapsed;
            d["collapse_step"] = o.collapse_step;
            d["diverged"] = o.diverged;
            if (o.first_mae) d["first_mae"] = *o.first_mae;
            if (o.last_mae) d["last_mae"] = *o.last_mae;
            d["init_collapse"] = o.init_collapse;
            d["last_collapse"] = o.last_collapse;
            d["checkpoint"] = o.checkpoint_path;
            return d;
        },
        py::arg("preset_json"), py::arg("out_dir") = "");
    m.def("builtin_presets", []() {
        std::vector<std::string> out;
        for (const auto& p : builtin_presets()) out.push_back(preset_to_json(p));
        return out;
    });
    m.def("preset_defaults", []() {
        ExperimentPreset p;
        p.data.synth_count = 64;
        return preset_to_json(p);
    });
}
