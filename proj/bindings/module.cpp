#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <set>

#include "mamere/complexity.hpp"
#include "mamere/errors.hpp"
#include "mamere/merge.hpp"
#include "mamere/restore.hpp"
#include "mamere/tokenio.hpp"
#include "mamere/transformer.hpp"

namespace py = pybind11;
using namespace mamere;

namespace {

TokenMatrix tensor_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> arr,
                              index_t l_spec) {
    if (arr.ndim() != 3) {
        throw std::invalid_argument("token array must have shape (B, L, d)");
    }
    TokenMatrix t(arr.shape(0), arr.shape(1), arr.shape(2), l_spec);
    std::copy_n(arr.data(), t.data.size(), t.data.data());
    t.validate();
    return t;
}

py::array_t<double> tensor_to_array(const TokenMatrix& t) {
    py::array_t<double> arr({t.batch, t.length, t.dim});
    std::copy_n(t.data.data(), t.data.size(), arr.mutable_data());
    return arr;
}

py::array_t<double> weights_to_array(const FusionState& st) {
    py::array_t<double> arr({st.batch, st.M, st.N});
    std::copy_n(st.weights.data(), st.weights.size(), arr.mutable_data());
    return arr;
}

MergeConfig make_config(double tau, const std::string& sim, double epsilon, bool refine,
                        bool causal, const std::string& metric) {
    MergeConfig cfg;
    cfg.tau = tau;
    cfg.function = mame::similarity_from_name(sim);
    cfg.epsilon = epsilon;
    cfg.refine = refine;
    cfg.causal = causal;
    cfg.metric_source = metric == "hidden"          ? MetricSource::hidden
                        : metric == "keys"          ? MetricSource::keys
                        : metric == "keys-head-mean"
                            ? MetricSource::keys_head_mean
                            : throw std::invalid_argument("unknown metric '" + metric + "'");
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Matrix-based token merging (MaMe) and restoration (MaRe)";

    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<StateError>(m, "StateError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<TokenMatrix>(m, "TokenMatrix")
        .def(py::init(&tensor_from_array), py::arg("array"), py::arg("l_spec") = 0)
        .def_readonly("B", &TokenMatrix::batch)
        .def_readonly("L", &TokenMatrix::length)
        .def_readonly("d", &TokenMatrix::dim)
        .def_readonly("l_spec", &TokenMatrix::l_spec)
        .def("numpy", &tensor_to_array)
        .def("__repr__", [](const TokenMatrix& t) {
            return "TokenMatrix(B=" + std::to_string(t.batch) + ", L=" + std::to_string(t.length) +
                   ", d=" + std::to_string(t.dim) + ", l_spec=" + std::to_string(t.l_spec) + ")";
        });

    py::class_<PartitionPlan>(m, "PartitionPlan")
        .def_readonly("dst_index", &PartitionPlan::dst_index)
        .def_readonly("src_index", &PartitionPlan::src_index)
        .def_readonly("l_spec", &PartitionPlan::l_spec)
        .def_property_readonly("M", &PartitionPlan::M)
        .def_property_readonly("N", &PartitionPlan::N);

    py::class_<FusionState>(m, "FusionState")
        .def_readonly("M", &FusionState::M)
        .def_readonly("N", &FusionState::N)
        .def_readonly("l_spec", &FusionState::l_spec)
        .def_readonly("dst_index", &FusionState::dst_index)
        .def_readonly("src_index", &FusionState::src_index)
        .def_readonly("preserved_mask", &FusionState::preserved_mask)
        .def_readonly("layout_order", &FusionState::layout_order)
        .def_property_readonly("preserved_count", &FusionState::preserved_count)
        .def("weights", &weights_to_array);

    py::class_<MergeStats>(m, "MergeStats")
        .def_readonly("sim_flops", &MergeStats::sim_flops)
        .def_readonly("refine_flops", &MergeStats::refine_flops)
        .def_readonly("aggregate_flops", &MergeStats::aggregate_flops)
        .def_readonly("preserve_flops", &MergeStats::preserve_flops);

    py::class_<MergedSequence>(m, "MergedSequence")
        .def_readonly("tokens", &MergedSequence::tokens)
        .def_readonly("state", &MergedSequence::state)
        .def_readonly("stats", &MergedSequence::stats)
        .def_property_readonly("L_prime",
                               [](const MergedSequence& s) { return s.tokens.length; });

    py::class_<FlopReport>(m, "FlopReport")
        .def_readonly("alpha", &FlopReport::alpha)
        .def_readonly("beta", &FlopReport::beta)
        .def_readonly("sim_flops", &FlopReport::sim_flops)
        .def_readonly("refine_flops", &FlopReport::refine_flops)
        .def_readonly("aggregate_flops", &FlopReport::aggregate_flops)
        .def_readonly("preserve_flops", &FlopReport::preserve_flops)
        .def_readonly("attention_flops_baseline", &FlopReport::attention_flops_baseline)
        .def_readonly("attention_flops_merged", &FlopReport::attention_flops_merged)
        .def_readonly("efficient", &FlopReport::efficient)
        .def("overhead", &FlopReport::overhead);

    m.def(
        "gen_synthetic",
        [](index_t B, index_t L, index_t d, index_t l_spec, std::uint64_t seed,
           const std::string& pattern, index_t clusters, double noise_scale) {
            tokenio::GenSpec spec;
            if (pattern == "gaussian") {
                spec.pattern = tokenio::Pattern::gaussian;
            } else if (pattern == "clustered") {
                spec.pattern = tokenio::Pattern::clustered;
                spec.clusters = clusters;
                spec.noise_scale = noise_scale;
            } else {
                throw std::invalid_argument("pattern must be 'gaussian' or 'clustered'");
            }
            return tokenio::gen_synthetic(B, L, d, l_spec, seed, spec);
        },
        py::arg("B"), py::arg("L"), py::arg("d"), py::arg("l_spec") = 0, py::arg("seed") = 0,
        py::arg("pattern") = "gaussian", py::arg("clusters") = 1, py::arg("noise_scale") = 0.0);

    m.def(
        "write_tokens",
        [](const TokenMatrix& t, const std::string& path, const std::string& dtype) {
            tokenio::write_tokens(t, path, dtype == "f32" ? Dtype::f32 : Dtype::f64);
        },
        py::arg("tokens"), py::arg("path"), py::arg("dtype") = "f64");
    m.def("read_tokens", &tokenio::read_tokens, py::arg("path"));

    m.def(
        "make_plan",
        [](index_t L, index_t l_spec, const std::string& style, double ratio_src,
           std::uint64_t seed) {
            return partition::make_plan(L, l_spec, partition::style_from_name(style), ratio_src,
                                        seed);
        },
        py::arg("L"), py::arg("l_spec") = 0, py::arg("style") = "alternating",
        py::arg("ratio_src") = 0.5, py::arg("seed") = 0);

    m.def(
        "merge",
        [](const TokenMatrix& t, const PartitionPlan* plan, double tau, const std::string& sim,
           double epsilon, bool refine, bool causal, const std::string& partition_style,
           double ratio_src, std::uint64_t seed) {
            MergeConfig cfg = make_config(tau, sim, epsilon, refine, causal, "hidden");
            PartitionPlan p =
                plan ? *plan
                     : partition::make_plan(
                           t.length, t.l_spec,
                           causal ? PartitionStyle::causal
                                  : partition::style_from_name(partition_style),
                           ratio_src, seed);
            return mame::merge(t, p, cfg);
        },
        py::arg("tokens"), py::arg("plan") = nullptr, py::arg("tau") = 0.8,
        py::arg("sim") = "cosine", py::arg("epsilon") = 1e-12, py::arg("refine") = true,
        py::arg("causal") = false, py::arg("partition") = "alternating",
        py::arg("ratio_src") = 0.5, py::arg("seed") = 0);

    m.def("restore", [](const MergedSequence& merged) { return mare::restore(merged); },
          py::arg("merged"));

    m.def(
        "write_fusion_state",
        [](const FusionState& st, const std::string& path) {
            tokenio::write_fusion_state(st.to_file(), path);
        },
        py::arg("state"), py::arg("path"));
    m.def(
        "restore_from_files",
        [](const std::string& tokens_path, const std::string& state_path) {
            return mare::restore(tokenio::read_tokens(tokens_path),
                                 tokenio::read_fusion_state(state_path));
        },
        py::arg("tokens_path"), py::arg("state_path"));

    m.def("flop_report", &complexity::flop_report, py::arg("L"), py::arg("d"), py::arg("M"),
          py::arg("N"), py::arg("L_prime"));
    m.def("efficiency_condition", &complexity::efficiency_condition, py::arg("alpha"),
          py::arg("beta"));
    m.def("condition_integral", &complexity::condition_integral, py::arg("grid") = 10000);
    m.def("condition_probability", &complexity::condition_probability,
          py::arg("samples") = 1000000, py::arg("seed") = 0);

    m.def(
        "run_stack",
        [](const TokenMatrix& x, index_t depth, const std::vector<index_t>& layers,
           const std::string& mode, index_t heads, index_t mlp_ratio, std::uint64_t seed,
           double tau, const std::string& sim, double epsilon, const std::string& metric,
           const std::string& partition_style, double ratio_src) {
            BlockConfig cfg;
            cfg.d_model = x.dim;
            cfg.heads = heads;
            cfg.mlp_ratio = mlp_ratio;
            cfg.seed = seed;
            cfg.mode = mode == "synthesis" ? BlockMode::synthesis : BlockMode::perception;
            cfg.merge_cfg = make_config(tau, sim, epsilon, true, false, metric);
            cfg.plan_style = partition::style_from_name(partition_style);
            cfg.ratio_src = ratio_src;
            std::set<index_t> merge_layers(layers.begin(), layers.end());
            transformer::StackResult r = transformer::run_stack(x, depth, merge_layers, cfg);
            return py::make_tuple(r.tokens, r.lengths);
        },
        py::arg("tokens"), py::arg("depth"), py::arg("layers"), py::arg("mode") = "perception",
        py::arg("heads") = 4, py::arg("mlp_ratio") = 4, py::arg("seed") = 0,
        py::arg("tau") = 0.5, py::arg("sim") = "cosine", py::arg("epsilon") = 1e-12,
        py::arg("metric") = "hidden", py::arg("partition") = "alternating",
        py::arg("ratio_src") = 0.5);
}
