#pragma once

// Command-line frontend. `run` parses argv, dispatches to a subcommand and
// returns the process exit code: 0 on success, 1 for data errors, 2 for
// usage errors.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "psc/calibration.hpp"
#include "psc/core.hpp"
#include "psc/ensemble.hpp"
#include "psc/error.hpp"
#include "psc/io.hpp"
#include "psc/losses.hpp"
#include "psc/masks.hpp"
#include "psc/panoptic_metrics.hpp"
#include "psc/pruning.hpp"
#include "psc/pseudo_labels.hpp"
#include "psc/synthetic.hpp"

namespace psc::cli {

namespace fs = std::filesystem;

/// Bad flags or flag combinations detected after parsing.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string fixed6(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// Ordered key/value report. The flat form has one `name=value` per line.
class Report {
public:
    void add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }
    void add(const std::string& key, const char* value) { entries_.emplace_back(key, value); }
    void add(const std::string& key, double value) { entries_.emplace_back(key, fixed6(value)); }
    void add(const std::string& key, std::size_t value) { entries_.emplace_back(key, std::to_string(value)); }
    void add(const std::string& key, const std::optional<double>& value) {
        entries_.emplace_back(key, value ? fixed6(*value) : "n/a");
    }

    [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }

    [[nodiscard]] std::string flat() const {
        std::string out;
        for (const auto& [k, v] : entries_) {
            out += k + "=" + v + "\n";
        }
        return out;
    }

    /// Aligned `key  value` lines, config echo first.
    [[nodiscard]] std::string text() const {
        std::size_t width = 0;
        for (const auto& e : entries_) {
            width = std::max(width, e.first.size());
        }
        std::ostringstream os;
        for (const auto& [k, v] : entries_) {
            os << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
        }
        return os.str();
    }

    void write(const fs::path& path) const {
        const std::string s = flat();
        detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// ---------------------------------------------------------------------------
// Options per subcommand

struct EnsembleOptions {
    std::vector<std::string> inputs;
    std::string out;
    std::string cost = "soft";
    double hard_threshold = 0.5;
};

struct AssemblyOptions {
    double overlap_keep = 0.8;
    std::size_t min_mask_voxels = 1;
    double mask_threshold = 0.5;

    [[nodiscard]] AssemblyParams params() const { return {overlap_keep, min_mask_voxels, mask_threshold}; }
};

struct EvalPscOptions {
    std::string pred;
    std::string gt;
    std::string taxonomy;
    AssemblyOptions assembly;
    bool all_classes = false;
};

struct EvalUncOptions {
    std::string pred_probs;
    std::string pred_masks;
    std::string gt;
    std::string taxonomy;
    std::size_t bins = 15;
    AssemblyOptions assembly;
};

struct GenLabelsOptions {
    std::string semantic;
    std::string taxonomy;
    std::string out;
    double eps = 1.0;
    std::size_t min_pts = 8;
    std::string eps_units = "meters";
};

struct PruneSimOptions {
    std::string stack;
    std::string mode = "semantic";
    double threshold = 0.5;
    std::string out;
    std::string grids_out;
};

struct LossEvalOptions {
    std::string pred;
    std::string gt;
    std::string taxonomy;
    LossWeights weights;
    std::string sem_probs;
    int sem_scale = 1;
};

struct SynthOptions {
    std::string out_dir;
    std::string taxonomy;
    std::int32_t size = 64;
    std::size_t subnets = 3;
    std::size_t queries = 20;
    std::uint64_t seed = 7;
};

// ---------------------------------------------------------------------------
// Subcommands. Each returns its report; `threads` never changes results
// and is left out of the config echo.

namespace detail {

inline void echo_assembly(Report& r, const AssemblyOptions& a) {
    r.add("config.overlap_keep", a.overlap_keep);
    r.add("config.min_mask_voxels", a.min_mask_voxels);
    r.add("config.mask_threshold", a.mask_threshold);
}

inline std::string magic_of(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    char m[4] = {};
    in.read(m, 4);
    return in.gcount() == 4 ? std::string(m, 4) : std::string{};
}

/// A panoptic grid, or a mask set assembled into one.
inline PanopticGrid load_panoptic_prediction(const fs::path& path, const ClassTaxonomy& tax, const AssemblyOptions& a) {
    if (magic_of(path) == "PSCM") {
        return assemble_panoptic(read_maskset(path), tax, a.params());
    }
    return read_panoptic(path, LabelCodes::of(tax));
}

inline void add_quality(Report& r, const std::string& prefix, const QualityAggregate& q) {
    r.add(prefix + ".pq", q.pq);
    r.add(prefix + ".sq", q.sq);
    r.add(prefix + ".rq", q.rq);
    r.add(prefix + ".classes", q.classes);
}

} // namespace detail

inline Report cmd_ensemble(const EnsembleOptions& o, unsigned threads) {
    if (o.cost != "soft" && o.cost != "hard") {
        throw UsageError("--cost must be soft or hard");
    }
    std::vector<MaskSet> sets;
    sets.reserve(o.inputs.size());
    std::size_t k_max = 0;
    for (const auto& p : o.inputs) {
        sets.push_back(read_maskset(p));
        k_max = std::max(k_max, sets.back().queries);
    }
    for (auto& s : sets) {
        if (s.queries < k_max) {
            s = pad_to(s, k_max);
        }
    }
    const EnsembleConfig cfg{o.cost == "soft" ? CostMode::soft : CostMode::hard, o.hard_threshold, threads};
    const MaskSet out = ensemble(sets, cfg);
    write_maskset(out, o.out);

    Report r;
    r.add("command", "ensemble");
    for (std::size_t i = 0; i < o.inputs.size(); ++i) {
        r.add("config.input." + std::to_string(i), o.inputs[i]);
    }
    r.add("config.out", o.out);
    r.add("config.cost", o.cost);
    r.add("config.hard_threshold", o.hard_threshold);
    r.add("subnets", sets.size());
    r.add("queries", out.queries);
    r.add("classes", out.classes);
    r.add("sites", out.sites.size());
    return r;
}

inline Report cmd_eval_psc(const EvalPscOptions& o) {
    const auto tax = read_taxonomy(o.taxonomy);
    const auto pred = detail::load_panoptic_prediction(o.pred, tax, o.assembly);
    const auto gt = read_panoptic(o.gt, LabelCodes::of(tax));
    const AggregateOptions agg{!o.all_classes};
    const auto pq = panoptic_quality(pred, gt, tax, agg);
    const auto dagger = pq_dagger(pred, gt, tax, agg);
    const auto ssc = ssc_metrics(semantic_of(pred), semantic_of(gt), tax, agg);

    Report r;
    r.add("command", "eval-psc");
    r.add("config.pred", o.pred);
    r.add("config.gt", o.gt);
    r.add("config.taxonomy", o.taxonomy);
    detail::echo_assembly(r, o.assembly);
    r.add("config.all_classes", o.all_classes ? "true" : "false");
    detail::add_quality(r, "all", pq.all);
    detail::add_quality(r, "thing", pq.thing);
    detail::add_quality(r, "stuff", pq.stuff);
    r.add("all.pq_dagger", dagger.all.pq);
    r.add("thing.pq_dagger", dagger.thing.pq);
    r.add("stuff.pq_dagger", dagger.stuff.pq);
    r.add("ssc.miou", ssc.miou);
    r.add("ssc.completion_iou", ssc.completion_iou);
    for (const auto& c : tax.classes()) {
        if (c.id == tax.empty_class_id()) {
            continue;
        }
        const std::string prefix = "class." + c.name + ".";
        const auto& t = pq.tallies[c.id];
        const bool counted = o.all_classes || t.present();
        const auto opt = [counted](double v) { return counted ? std::optional<double>(v) : std::nullopt; };
        r.add(prefix + "pq", opt(pq.per_class[c.id].pq));
        r.add(prefix + "sq", opt(pq.per_class[c.id].sq));
        r.add(prefix + "rq", opt(pq.per_class[c.id].rq));
        r.add(prefix + "pq_dagger", dagger.per_class[c.id]);
        r.add(prefix + "iou", ssc.class_iou[c.id]);
        r.add(prefix + "tp", t.tp);
        r.add(prefix + "fp", t.fp);
        r.add(prefix + "fn", t.fn);
    }
    return r;
}

inline Report cmd_eval_unc(const EvalUncOptions& o) {
    if (o.bins == 0) {
        throw UsageError("--bins must be >= 1");
    }
    const auto tax = read_taxonomy(o.taxonomy);
    const auto gt = read_panoptic(o.gt, LabelCodes::of(tax));
    const auto probs = voxel_probs_from_masks(read_maskset(o.pred_probs), tax);
    const auto vox = voxel_uncertainty(probs, semantic_of(gt), tax, o.bins);
    const auto ins = instance_uncertainty(read_maskset(o.pred_masks), gt, tax, o.assembly.params(), o.bins);

    Report r;
    r.add("command", "eval-unc");
    r.add("config.pred_probs", o.pred_probs);
    r.add("config.pred_masks", o.pred_masks);
    r.add("config.gt", o.gt);
    r.add("config.taxonomy", o.taxonomy);
    r.add("config.bins", o.bins);
    detail::echo_assembly(r, o.assembly);
    r.add("ins_ece", ins.ece);
    r.add("ins_nll", ins.nll);
    r.add("ins_segments", ins.segments);
    r.add("voxel_ece", vox.ece);
    r.add("voxel_nll", vox.nll);
    r.add("voxel_ece_empty", vox.ece_empty);
    r.add("voxel_ece_nonempty", vox.ece_nonempty);
    r.add("voxel_nll_empty", vox.nll_empty);
    r.add("voxel_nll_nonempty", vox.nll_nonempty);
    return r;
}

inline Report cmd_gen_labels(const GenLabelsOptions& o, unsigned threads) {
    if (o.eps_units != "meters" && o.eps_units != "voxels") {
        throw UsageError("--eps-units must be meters or voxels");
    }
    const auto tax = read_taxonomy(o.taxonomy);
    const auto codes = LabelCodes::of(tax);
    const auto semantic = read_sparse_grid(o.semantic, codes);
    const DbscanParams params{o.eps, o.min_pts, o.eps_units == "meters" ? EpsilonUnits::meters : EpsilonUnits::voxels};
    const auto labels = generate_panoptic_labels(semantic, tax, params, threads);
    write_panoptic(labels, o.out, codes);

    std::map<ClassId, InstanceId> instances;
    std::map<ClassId, std::size_t> noise;
    for (const auto& s : labels.sites) {
        if (!tax.is_thing(s.label)) {
            continue;
        }
        if (s.instance == 0) {
            ++noise[s.label];
        } else {
            instances[s.label] = std::max(instances[s.label], s.instance);
        }
    }
    Report r;
    r.add("command", "gen-labels");
    r.add("config.semantic", o.semantic);
    r.add("config.taxonomy", o.taxonomy);
    r.add("config.out", o.out);
    r.add("config.eps", o.eps);
    r.add("config.eps_units", o.eps_units);
    r.add("config.min_pts", o.min_pts);
    // Instance ids run consecutively across classes in id order.
    InstanceId prev = 0;
    std::size_t total = 0;
    for (const auto& c : tax.classes()) {
        if (c.kind != ClassKind::thing) {
            continue;
        }
        const auto it = instances.find(c.id);
        const InstanceId last = it == instances.end() ? prev : it->second;
        r.add("class." + c.name + ".instances", static_cast<std::size_t>(last - prev));
        r.add("class." + c.name + ".noise_voxels", noise[c.id]);
        total += last - prev;
        prev = last;
    }
    r.add("instances", total);
    return r;
}

namespace detail {

struct StackFile {
    int factor = 0;
    std::size_t subnet = 0;
    fs::path path;
};

// Files named scale<F>_sub<I>.pscg (semantic) or .pscm (occupancy, K = 1).
inline std::vector<StackFile> scan_stack(const fs::path& dir) {
    static const std::regex pattern(R"(scale(\d+)_sub(\d+)\.(pscg|pscm))");
    std::vector<StackFile> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && std::regex_match(name, m, pattern)) {
            files.push_back({std::stoi(m[1].str()), std::stoul(m[2].str()), entry.path()});
        }
    }
    if (files.empty()) {
        throw InvalidArgument("prune-sim: no scale<F>_sub<I>.pscg/.pscm files in " + dir.string());
    }
    std::ranges::sort(files, [](const StackFile& a, const StackFile& b) {
        return a.factor != b.factor ? a.factor > b.factor : (a.subnet != b.subnet ? a.subnet < b.subnet : a.path < b.path);
    });
    for (std::size_t i = 1; i < files.size(); ++i) {
        if (files[i].factor == files[i - 1].factor && files[i].subnet == files[i - 1].subnet) {
            throw InvalidArgument("prune-sim: two files for scale " + std::to_string(files[i].factor) + " subnet " +
                                  std::to_string(files[i].subnet));
        }
    }
    return files;
}

inline OccupancyGrid occupancy_from_file(const fs::path& path) {
    if (path.extension() == ".pscg") {
        return to_occupancy(read_sparse_grid(path));
    }
    const auto ms = read_maskset(path);
    if (ms.queries != 1) {
        throw InvalidArgument("prune-sim: occupancy file " + path.string() + " must hold exactly one query");
    }
    return {ms.dims, ms.voxel_size, ms.sites, ms.mask_scores};
}

template <class Grid, class Load>
BasicScaleStack<Grid> build_stack(const std::vector<StackFile>& files, Load&& load) {
    BasicScaleStack<Grid> stack;
    for (const auto& f : files) {
        if (stack.levels.empty() || stack.levels.back().factor != f.factor) {
            stack.levels.push_back({f.factor, {}});
        }
        stack.levels.back().subnets.push_back(load(f.path));
    }
    return stack;
}

// Survivors as a one-query occupancy mask set with unit scores.
inline MaskSet survivors_as_maskset(const CoordSet& survivors, const Dims& dims, float voxel_size) {
    MaskSet ms{dims, voxel_size, survivors, 1, 1, {1.0, 0.0}, {}};
    ms.mask_scores.assign(survivors.size(), 1.0);
    return ms;
}

} // namespace detail

inline Report cmd_prune_sim(const PruneSimOptions& o) {
    if (o.mode != "semantic" && o.mode != "binary") {
        throw UsageError("--mode must be semantic or binary");
    }
    const auto files = detail::scan_stack(o.stack);
    CascadeResult result;
    float voxel_size = 0.2F;
    if (o.mode == "semantic") {
        for (const auto& f : files) {
            if (f.path.extension() != ".pscg") {
                throw InvalidArgument("prune-sim: semantic mode needs .pscg files, got " + f.path.filename().string());
            }
        }
        const auto stack = detail::build_stack<SparseVoxelGrid>(files, [](const fs::path& p) { return read_sparse_grid(p); });
        voxel_size = stack.levels.front().subnets.front().voxel_size;
        result = cascade(stack);
    } else {
        const auto stack = detail::build_stack<OccupancyGrid>(files, detail::occupancy_from_file);
        voxel_size = stack.levels.front().subnets.front().voxel_size;
        result = cascade(stack, o.threshold);
    }

    nlohmann::ordered_json j;
    j["command"] = "prune-sim";
    j["config"] = {{"stack", o.stack}, {"mode", o.mode}, {"threshold", o.threshold}};
    j["scales"] = nlohmann::ordered_json::array();

    Report r;
    r.add("command", "prune-sim");
    r.add("config.stack", o.stack);
    r.add("config.mode", o.mode);
    r.add("config.threshold", o.threshold);
    r.add("config.out", o.out);
    if (!o.grids_out.empty()) {
        r.add("config.grids_out", o.grids_out);
        fs::create_directories(o.grids_out);
    }
    float vs = voxel_size;
    for (std::size_t l = 0; l < result.stats.size(); ++l) {
        const auto& s = result.stats[l];
        const std::string prefix = "scale." + std::to_string(s.factor) + ".";
        r.add(prefix + "dims", to_string(s.dims));
        r.add(prefix + "candidates", s.candidates);
        r.add(prefix + "survivors", s.survivors);
        r.add(prefix + "fraction", s.fraction);
        j["scales"].push_back({{"factor", s.factor},
                               {"dims", {s.dims.x, s.dims.y, s.dims.z}},
                               {"candidates", s.candidates},
                               {"survivors", s.survivors},
                               {"fraction", s.fraction}});
        if (!o.grids_out.empty()) {
            write_maskset(detail::survivors_as_maskset(result.survivors[l], s.dims, vs),
                          fs::path(o.grids_out) / ("survivors_scale" + std::to_string(s.factor) + ".pscm"));
        }
        vs /= 2.0F;
    }
    if (!o.out.empty()) {
        const std::string text = j.dump(2) + "\n";
        psc::detail::write_file(o.out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }
    return r;
}

inline Report cmd_loss_eval(const LossEvalOptions& o) {
    const auto tax = read_taxonomy(o.taxonomy);
    const auto ms = read_maskset(o.pred);
    const auto gt = read_panoptic(o.gt, LabelCodes::of(tax));
    const auto& w = o.weights;
    const auto vq = voxel_query_semantic_loss(ms, semantic_of(gt), tax, w);
    const auto mm = mask_matching_loss(ms, gt, tax, w);

    Report r;
    r.add("command", "loss-eval");
    r.add("config.pred", o.pred);
    r.add("config.gt", o.gt);
    r.add("config.taxonomy", o.taxonomy);
    r.add("config.lambda1", w.lambda1);
    r.add("config.lambda_dice", w.lambda_dice);
    r.add("config.lambda_bce", w.lambda_bce);
    r.add("config.lambda_null", w.lambda_null);
    r.add("config.lambda_ce", w.lambda_ce);
    if (!o.sem_probs.empty()) {
        r.add("config.sem_probs", o.sem_probs);
        r.add("config.sem_scale", static_cast<std::size_t>(o.sem_scale));
    }
    r.add("voxel_query.ce", vq.ce);
    r.add("voxel_query.lovasz", vq.lovasz);
    r.add("voxel_query.total", vq.total);
    r.add("mask.matched", mm.matched);
    r.add("mask.unmatched", mm.unmatched);
    r.add("mask.total", mm.total);
    r.add("mask.segments", mm.segments.size());
    double total = vq.total + mm.total;
    if (!o.sem_probs.empty()) {
        const auto sem = semantic_loss(voxel_probs_from_masks(read_maskset(o.sem_probs), tax), semantic_of(gt),
                                       o.sem_scale, tax, w);
        r.add("semantic.ce", sem.ce);
        r.add("semantic.lovasz", sem.lovasz);
        r.add("semantic.total", sem.total);
        total += sem.total;
    }
    r.add("total", total);
    return r;
}

inline Report cmd_synth_scene(const SynthOptions& o) {
    const auto tax = read_taxonomy(o.taxonomy);
    const auto scene = make_synthetic_scene(tax, {o.size, o.subnets, o.queries, o.seed, 0.2F});
    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    const auto codes = LabelCodes::of(tax);
    write_sparse_grid(scene.semantic, dir / "semantic.pscg", codes);
    write_panoptic(scene.panoptic, dir / "instances.pscp", codes);
    for (std::size_t i = 0; i < scene.subnets.size(); ++i) {
        write_maskset(scene.subnets[i], dir / ("subnet" + std::to_string(i) + ".pscm"));
    }
    Report r;
    r.add("command", "synth-scene");
    r.add("config.out_dir", o.out_dir);
    r.add("config.taxonomy", o.taxonomy);
    r.add("config.size", static_cast<std::size_t>(o.size));
    r.add("config.subnets", o.subnets);
    r.add("config.queries", o.queries);
    r.add("config.seed", static_cast<std::size_t>(o.seed));
    r.add("labeled_voxels", scene.semantic.sites.size());
    r.add("invalid_voxels", scene.semantic.invalid.size());
    r.add("support_sites", scene.subnets.front().sites.size());
    return r;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Panoptic scene completion evaluation toolkit", "psc"};
    app.require_subcommand(1);
    app.fallthrough();
    unsigned threads = 1;
    std::string report_path;
    app.add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
    app.add_option("--report", report_path, "Also write the flat name=value report here");

    const auto existing = CLI::ExistingFile;
    const auto unit_interval = CLI::Range(0.0, 1.0);

    EnsembleOptions ens;
    auto* c_ens = app.add_subcommand("ensemble", "Align and average mask sets from several subnets");
    c_ens->add_option("--inputs", ens.inputs, "Input mask sets (.pscm)")->required()->check(existing);
    c_ens->add_option("--out", ens.out, "Output mask set")->required();
    c_ens->add_option("--cost", ens.cost, "Matching cost: soft or hard")->capture_default_str();
    c_ens->add_option("--hard-threshold", ens.hard_threshold, "Binarization threshold for the hard cost")
        ->check(unit_interval)
        ->capture_default_str();

    const auto add_assembly = [&](CLI::App* c, AssemblyOptions& a) {
        c->add_option("--overlap-keep", a.overlap_keep, "Keep a mask if it wins this fraction of its voxels")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        c->add_option("--min-mask-voxels", a.min_mask_voxels, "Drop masks claiming fewer voxels")->capture_default_str();
        c->add_option("--mask-threshold", a.mask_threshold, "Foreground threshold on mask scores")
            ->check(unit_interval)
            ->capture_default_str();
    };

    EvalPscOptions psc_opts;
    auto* c_psc = app.add_subcommand("eval-psc", "PQ, SQ, RQ, PQ-dagger and mIoU of a prediction");
    c_psc->add_option("--pred", psc_opts.pred, "Predicted panoptic grid (.pscp) or mask set (.pscm)")
        ->required()
        ->check(existing);
    c_psc->add_option("--gt", psc_opts.gt, "Ground-truth panoptic grid (.pscp)")->required()->check(existing);
    c_psc->add_option("--taxonomy", psc_opts.taxonomy, "Taxonomy file")->required()->check(existing);
    c_psc->add_flag("--all-classes", psc_opts.all_classes, "Average over every class, not only present ones");
    add_assembly(c_psc, psc_opts.assembly);

    EvalUncOptions unc;
    auto* c_unc = app.add_subcommand("eval-unc", "Voxel and instance calibration (ECE, NLL)");
    c_unc->add_option("--pred-probs", unc.pred_probs, "Mask set giving voxel class distributions")
        ->required()
        ->check(existing);
    c_unc->add_option("--pred-masks", unc.pred_masks, "Mask set to assemble into instances")->required()->check(existing);
    c_unc->add_option("--gt", unc.gt, "Ground-truth panoptic grid (.pscp)")->required()->check(existing);
    c_unc->add_option("--taxonomy", unc.taxonomy, "Taxonomy file")->required()->check(existing);
    c_unc->add_option("--bins", unc.bins, "ECE bins")->check(CLI::PositiveNumber)->capture_default_str();
    add_assembly(c_unc, unc.assembly);

    GenLabelsOptions gen;
    auto* c_gen = app.add_subcommand("gen-labels", "Pseudo panoptic labels from a semantic grid via DBSCAN");
    c_gen->add_option("--semantic", gen.semantic, "Semantic grid (.pscg)")->required()->check(existing);
    c_gen->add_option("--taxonomy", gen.taxonomy, "Taxonomy file")->required()->check(existing);
    c_gen->add_option("--out", gen.out, "Output panoptic grid (.pscp)")->required();
    c_gen->add_option("--eps", gen.eps, "Neighborhood radius")->check(CLI::PositiveNumber)->capture_default_str();
    c_gen->add_option("--min-pts", gen.min_pts, "Core point threshold, self included")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c_gen->add_option("--eps-units", gen.eps_units, "meters or voxels")->capture_default_str();

    PruneSimOptions prune;
    auto* c_prune = app.add_subcommand("prune-sim", "Multi-scale pruning cascade over per-scale predictions");
    c_prune->add_option("--stack", prune.stack, "Directory of scale<F>_sub<I>.pscg/.pscm files")
        ->required()
        ->check(CLI::ExistingDirectory);
    c_prune->add_option("--mode", prune.mode, "semantic or binary")->capture_default_str();
    c_prune->add_option("--threshold", prune.threshold, "Occupancy threshold in binary mode")
        ->check(unit_interval)
        ->capture_default_str();
    c_prune->add_option("--out", prune.out, "Retention statistics (JSON)")->required();
    c_prune->add_option("--grids-out", prune.grids_out, "Directory for survivor sets");

    LossEvalOptions loss;
    auto* c_loss = app.add_subcommand("loss-eval", "Training losses of a mask set against ground truth");
    c_loss->add_option("--pred", loss.pred, "Predicted mask set (.pscm)")->required()->check(existing);
    c_loss->add_option("--gt", loss.gt, "Ground-truth panoptic grid (.pscp)")->required()->check(existing);
    c_loss->add_option("--taxonomy", loss.taxonomy, "Taxonomy file")->required()->check(existing);
    c_loss->add_option("--lambda1", loss.weights.lambda1, "Lovasz weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    c_loss->add_option("--lambda-dice", loss.weights.lambda_dice, "Dice weight")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    c_loss->add_option("--lambda-bce", loss.weights.lambda_bce, "BCE weight")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    c_loss->add_option("--lambda-null", loss.weights.lambda_null, "No-object CE weight")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    c_loss->add_option("--lambda-ce", loss.weights.lambda_ce, "Matched-class CE weight")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    c_loss->add_option("--sem-probs", loss.sem_probs, "Semantic-head output as a mask set, at --sem-scale")
        ->check(existing);
    c_loss->add_option("--sem-scale", loss.sem_scale, "Downsampling factor of --sem-probs")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    SynthOptions synth;
    auto* c_synth = app.add_subcommand("synth-scene", "Write the synthetic demo scene and subnet predictions");
    c_synth->add_option("--out-dir", synth.out_dir, "Output directory")->required();
    c_synth->add_option("--taxonomy", synth.taxonomy, "Taxonomy file")->required()->check(existing);
    c_synth->add_option("--size", synth.size, "Grid edge length")->capture_default_str();
    c_synth->add_option("--subnets", synth.subnets, "Number of subnets")->check(CLI::PositiveNumber)->capture_default_str();
    c_synth->add_option("--queries", synth.queries, "Queries per subnet")->capture_default_str();
    c_synth->add_option("--seed", synth.seed, "Random seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    const unsigned workers = psc::detail::resolve_threads(threads);
    try {
        Report report;
        if (*c_ens) {
            report = cmd_ensemble(ens, workers);
        } else if (*c_psc) {
            report = cmd_eval_psc(psc_opts);
        } else if (*c_unc) {
            report = cmd_eval_unc(unc);
        } else if (*c_gen) {
            report = cmd_gen_labels(gen, workers);
        } else if (*c_prune) {
            report = cmd_prune_sim(prune);
        } else if (*c_loss) {
            report = cmd_loss_eval(loss);
        } else {
            report = cmd_synth_scene(synth);
        }
        out << report.text();
        if (!report_path.empty()) {
            report.write(report_path);
        }
        return 0;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace psc::cli
